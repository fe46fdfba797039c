//! Small dense linear algebra kernels.
//!
//! The chains this crate targets have at most a few hundred states, so a
//! plain row-major `LU` with partial pivoting covers every linear solve in
//! the crate (Poisson equations, absorbed-chain systems, policy evaluations).
//! Writing it in-house keeps the kernels generic over the scalar type; the
//! BLAS-backed alternatives are fixed to `f32`/`f64` and would pin the whole
//! crate to one width.

use crate::scalar::{lit, Scalar};
use crate::{Error, Result};

/// `y = A x` for a row-major square matrix.
pub fn mat_vec<T: Scalar>(a: &[T], n: usize, x: &[T], y: &mut [T]) {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(x.len(), n);
    debug_assert_eq!(y.len(), n);
    for i in 0..n {
        let row = &a[i * n..(i + 1) * n];
        let mut acc = T::zero();
        for (aij, xj) in row.iter().zip(x) {
            acc += *aij * *xj;
        }
        y[i] = acc;
    }
}

/// `y = Aᵀ x` for a row-major square matrix.
pub fn mat_tvec<T: Scalar>(a: &[T], n: usize, x: &[T], y: &mut [T]) {
    for yi in y.iter_mut() {
        *yi = T::zero();
    }
    for i in 0..n {
        let row = &a[i * n..(i + 1) * n];
        let xi = x[i];
        for (yj, aij) in y.iter_mut().zip(row) {
            *yj += *aij * xi;
        }
    }
}

/// Maximum column absolute sum (the matrix 1-norm).
pub fn norm_1<T: Scalar>(a: &[T], n: usize) -> T {
    let mut best = T::zero();
    for j in 0..n {
        let mut s = T::zero();
        for i in 0..n {
            s += a[i * n + j].abs();
        }
        best = best.max(s);
    }
    best
}

/// LU factorization with partial pivoting of a row-major square matrix.
pub struct Lu<T> {
    n: usize,
    lu: Vec<T>,
    piv: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    /// Factors `a` (unchanged; a working copy is taken).
    ///
    /// Fails with [`Error::Singular`] when a pivot falls below a scale-aware
    /// threshold.  That failure is meaningful to callers: absorbed-chain
    /// systems become exactly singular when the absorbing set is unreachable.
    pub fn factor(a: &[T], n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n, "matrix shape mismatch");
        let mut lu = a.to_vec();
        let mut piv: Vec<usize> = (0..n).collect();
        let amax = lu.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
        let tol = amax * T::epsilon() * lit::<T>(n as f64) * lit::<T>(16.0)
            + T::min_positive_value();
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for i in (k + 1)..n {
                let v = lu[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= tol {
                return Err(Error::Singular(format!(
                    "pivot {best:.3e} below threshold {tol:.3e} at column {k}"
                )));
            }
            if p != k {
                piv.swap(p, k);
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
            }
            let pivot = lu[k * n + k];
            for i in (k + 1)..n {
                let m = lu[i * n + k] / pivot;
                lu[i * n + k] = m;
                for j in (k + 1)..n {
                    let u = lu[k * n + j];
                    lu[i * n + j] -= m * u;
                }
            }
        }
        Ok(Lu { n, lu, piv })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        let mut x = vec![T::zero(); n];
        for i in 0..n {
            x[i] = b[self.piv[i]];
        }
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc / self.lu[i * n + i];
        }
        b.copy_from_slice(&x);
    }

    /// Solves `Aᵀ x = b` in place.
    pub fn solve_transpose_in_place(&self, b: &mut [T]) {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        // Uᵀ is lower triangular with the U diagonal.
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[j * n + i] * x[j];
            }
            x[i] = acc / self.lu[i * n + i];
        }
        // Lᵀ is unit upper triangular.
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc -= self.lu[j * n + i] * x[j];
            }
            x[i] = acc;
        }
        // Undo the row permutation: Pᵀ applied on the way out.
        for i in 0..n {
            b[self.piv[i]] = x[i];
        }
    }

    /// Solves `A x = b` and applies `passes` rounds of iterative refinement
    /// against the original matrix.
    pub fn solve_refined(&self, a: &[T], b: &[T], passes: usize) -> Vec<T> {
        let n = self.n;
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        let mut r = vec![T::zero(); n];
        for _ in 0..passes {
            mat_vec(a, n, &x, &mut r);
            for i in 0..n {
                r[i] = b[i] - r[i];
            }
            self.solve_in_place(&mut r);
            for i in 0..n {
                x[i] += r[i];
            }
        }
        x
    }

    /// Hager-style estimate of the 1-norm condition number `‖A‖₁·‖A⁻¹‖₁`.
    pub fn cond_1_estimate(&self, a: &[T]) -> f64 {
        let n = self.n;
        let mut x = vec![T::one() / lit::<T>(n as f64); n];
        let mut inv_norm = T::zero();
        for _ in 0..5 {
            let mut y = x.clone();
            self.solve_in_place(&mut y);
            inv_norm = y.iter().fold(T::zero(), |s, &v| s + v.abs());
            let mut xi: Vec<T> = y
                .iter()
                .map(|&v| if v >= T::zero() { T::one() } else { -T::one() })
                .collect();
            self.solve_transpose_in_place(&mut xi);
            let (mut jmax, mut zmax) = (0usize, T::zero());
            let mut ztx = T::zero();
            for (j, (&zj, &xj)) in xi.iter().zip(&x).enumerate() {
                ztx += zj * xj;
                if zj.abs() > zmax {
                    zmax = zj.abs();
                    jmax = j;
                }
            }
            if zmax <= ztx {
                break;
            }
            for v in x.iter_mut() {
                *v = T::zero();
            }
            x[jmax] = T::one();
        }
        let cond = norm_1(a, n) * inv_norm;
        cond.to_f64().unwrap_or(f64::INFINITY)
    }
}

/// Solves the one-row-bordered system
/// `[A  d; rᵀ  0] [x; s] = [b; g]`, i.e. `A x + s·d = b` subject to the
/// normalization `r·x = g`.
///
/// Policy evaluations with a pinned reference value, the centered Poisson
/// equation, and the stationary-distribution system all take this shape.
/// Returns `(x, s)`.
pub fn solve_bordered<T: Scalar>(
    a: &[T],
    n: usize,
    d: &[T],
    norm_row: &[T],
    b: &[T],
    g: T,
) -> Result<(Vec<T>, T)> {
    let m = n + 1;
    let mut big = vec![T::zero(); m * m];
    for i in 0..n {
        big[i * m..i * m + n].copy_from_slice(&a[i * n..(i + 1) * n]);
        big[i * m + n] = d[i];
    }
    big[n * m..n * m + n].copy_from_slice(norm_row);
    let mut rhs = vec![T::zero(); m];
    rhs[..n].copy_from_slice(b);
    rhs[n] = g;
    let lu = Lu::factor(&big, m)?;
    let x = lu.solve_refined(&big, &rhs, 2);
    let s = x[n];
    Ok((x[..n].to_vec(), s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves_a_small_system_exactly() {
        let a = [4.0f64, 1.0, 0.5, 1.0, 3.0, -1.0, 0.5, -1.0, 2.0];
        let lu = Lu::factor(&a, 3).unwrap();
        let mut b = [1.0f64, 2.0, 3.0];
        lu.solve_in_place(&mut b);
        let mut check = [0.0f64; 3];
        mat_vec(&a, 3, &b, &mut check);
        for (c, e) in check.iter().zip([1.0, 2.0, 3.0]) {
            assert!((c - e).abs() < 1e-13, "residual too large: {c} vs {e}");
        }
    }

    #[test]
    fn transpose_solve_matches_explicit_transpose() {
        let a = [2.0f64, 1.0, -1.0, 0.0, 3.0, 0.5, 1.0, -2.0, 4.0];
        let mut at = [0.0f64; 9];
        for i in 0..3 {
            for j in 0..3 {
                at[j * 3 + i] = a[i * 3 + j];
            }
        }
        let lu = Lu::factor(&a, 3).unwrap();
        let lut = Lu::factor(&at, 3).unwrap();
        let mut b1 = [1.0f64, -2.0, 0.5];
        let mut b2 = b1;
        lu.solve_transpose_in_place(&mut b1);
        lut.solve_in_place(&mut b2);
        for (x, y) in b1.iter().zip(&b2) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = [1.0f64, 2.0, 2.0, 4.0];
        assert!(matches!(Lu::factor(&a, 2), Err(Error::Singular(_))));
    }

    #[test]
    fn condition_estimate_is_sane_for_identity() {
        let a = [1.0f64, 0.0, 0.0, 1.0];
        let lu = Lu::factor(&a, 2).unwrap();
        let c = lu.cond_1_estimate(&a);
        assert!((1.0..1.5).contains(&c), "identity condition estimate {c}");
    }

    #[test]
    fn bordered_solve_pins_the_requested_entry() {
        // A = I - P for a 2-state chain with uniform rows is singular; the
        // border makes the system solvable with x[0] pinned to zero.
        let a = [0.5f64, -0.5, -0.5, 0.5];
        let d = [1.0f64, 1.0];
        let pin = [1.0f64, 0.0];
        let b = [0.25f64, -0.25];
        let (x, s) = solve_bordered(&a, 2, &d, &pin, &b, 0.0).unwrap();
        assert!(x[0].abs() < 1e-14);
        // Row equations: 0.5(x0-x1) + s = 0.25 and 0.5(x1-x0) + s = -0.25.
        assert!((0.5 * (x[0] - x[1]) + s - 0.25).abs() < 1e-13);
        assert!((0.5 * (x[1] - x[0]) + s + 0.25).abs() < 1e-13);
    }
}
