//! Impulse cost structures.
//!
//! An impulse from state `x` to a target `xi` in the relocation window costs
//! `c(x, xi) <= c_max < 0` (costs are rewards with a negative sign, so every
//! impulse hurts).  Costs must satisfy the chaining inequality
//! `c(x, z) >= c(x, z') + c(z', z)`: relocating directly is never worse than
//! bouncing through an intermediate target.  That rules out profitable
//! impulse bursts and is what lets the solvers consider one impulse per step.

use crate::scalar::{lit, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    /// Arbitrary table `c(x, xi)`.
    General,
    /// `c(x, xi) = d(x) + e(xi)` with both parts given.
    Separated,
    /// One value for every pair.
    Constant,
}

#[derive(Debug, Clone)]
pub struct CostSpec<T> {
    kind: CostKind,
    n: usize,
    u_indices: Vec<usize>,
    /// Row-major `n x m` table, column `k` meaning target `u_indices[k]`.
    matrix: Vec<T>,
    /// `(d, e)` when the cost is separated.
    parts: Option<(Vec<T>, Vec<T>)>,
    c_max: T,
}

impl<T: Scalar> CostSpec<T> {
    /// Arbitrary cost table.  `matrix` has one row per state and one column
    /// per relocation target; `u_indices` gives the global state index of
    /// each column.
    pub fn general(matrix: Vec<T>, n: usize, u_indices: Vec<usize>) -> Result<Self> {
        let spec = Self::assemble(CostKind::General, matrix, n, u_indices, None)?;
        spec.check_chaining()?;
        Ok(spec)
    }

    /// Separated cost `c(x, xi) = d(x) + e(xi)`.  The chaining inequality
    /// reduces to `d + e <= 0` on the window, which negativity already
    /// gives, so no exhaustive check is needed.
    pub fn separated(d: Vec<T>, e: Vec<T>, n: usize, u_indices: Vec<usize>) -> Result<Self> {
        if d.len() != n || e.len() != u_indices.len() {
            return Err(Error::InvalidInput("separated cost parts have wrong lengths".into()));
        }
        let m = u_indices.len();
        let mut matrix = vec![T::zero(); n * m];
        for x in 0..n {
            for k in 0..m {
                matrix[x * m + k] = d[x] + e[k];
            }
        }
        Self::assemble(CostKind::Separated, matrix, n, u_indices, Some((d, e)))
    }

    /// Constant cost for every impulse.
    pub fn constant(value: T, n: usize, u_indices: Vec<usize>) -> Result<Self> {
        let m = u_indices.len();
        let matrix = vec![value; n * m];
        Self::assemble(CostKind::Constant, matrix, n, u_indices, None)
    }

    fn assemble(
        kind: CostKind,
        matrix: Vec<T>,
        n: usize,
        u_indices: Vec<usize>,
        parts: Option<(Vec<T>, Vec<T>)>,
    ) -> Result<Self> {
        let m = u_indices.len();
        if m == 0 {
            return Err(Error::InvalidInput("relocation window is empty".into()));
        }
        if matrix.len() != n * m {
            return Err(Error::InvalidInput(format!(
                "cost table shape mismatch: {} entries for {n} states x {m} targets",
                matrix.len()
            )));
        }
        if u_indices.iter().any(|&i| i >= n) {
            return Err(Error::InvalidInput("relocation target index out of range".into()));
        }
        let mut c_max = T::neg_infinity();
        for &c in &matrix {
            if !c.is_finite() || c >= T::zero() {
                return Err(Error::InvalidInput(format!(
                    "impulse costs must be finite and strictly negative, got {c}"
                )));
            }
            c_max = c_max.max(c);
        }
        Ok(CostSpec { kind, n, u_indices, matrix, parts, c_max })
    }

    /// Exhaustive chaining check, `O(n m^2)`.
    fn check_chaining(&self) -> Result<()> {
        let m = self.m();
        let scale = self.matrix.iter().fold(T::one(), |s, &c| s.max(c.abs()));
        let slack = lit::<T>(1e-12) * scale;
        for x in 0..self.n {
            for kq in 0..m {
                let direct = self.cost(x, kq);
                for km in 0..m {
                    let via = self.cost(x, km) + self.cost(self.u_indices[km], kq);
                    if direct + slack < via {
                        return Err(Error::InvalidInput(format!(
                            "cost table violates chaining at state {x}: direct to target {kq} \
                             costs {direct} but going via target {km} costs {via}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of relocation targets.
    pub fn m(&self) -> usize {
        self.u_indices.len()
    }

    pub fn u_indices(&self) -> &[usize] {
        &self.u_indices
    }

    /// Global state index of target column `k`.
    pub fn u_global(&self, k: usize) -> usize {
        self.u_indices[k]
    }

    /// Column of the target with global index `state`, if it is a target.
    pub fn column_of(&self, state: usize) -> Option<usize> {
        self.u_indices.iter().position(|&i| i == state)
    }

    /// `c(x, xi)` with `k` the target column.
    pub fn cost(&self, x: usize, k: usize) -> T {
        self.matrix[x * self.m() + k]
    }

    /// Least negative cost in the table.
    pub fn c_max(&self) -> T {
        self.c_max
    }

    /// Cheapest relocation out of `x` (the most negative entry of its row).
    pub fn c_underbar(&self, x: usize) -> T {
        let m = self.m();
        self.matrix[x * m..(x + 1) * m]
            .iter()
            .fold(T::infinity(), |acc, &c| acc.min(c))
    }

    /// `sup_{y in window} |min_xi c(y, xi)|`, the worst cheapest-exit cost
    /// over the window itself.
    pub fn c_underbar_sup_window(&self) -> T {
        self.u_indices
            .iter()
            .fold(T::zero(), |acc, &y| acc.max(self.c_underbar(y).abs()))
    }

    /// `kappa = sup_{x in window} max(|c(x, z)|, |c(z, x)|)` for reference
    /// state `z` (global index).  Controls how far relative values can move
    /// inside the window.
    pub fn kappa(&self, z_global: usize) -> Result<T> {
        let kz = self
            .column_of(z_global)
            .ok_or_else(|| Error::InvalidInput(format!("state {z_global} is not a target")))?;
        let mut kappa = T::zero();
        for (kx, &x) in self.u_indices.iter().enumerate() {
            kappa = kappa.max(self.cost(x, kz).abs());
            kappa = kappa.max(self.cost(self.u_indices[kz], kx).abs());
        }
        Ok(kappa)
    }

    /// Separated parts `(d, e)` when available.
    pub fn separated_parts(&self) -> Option<(&[T], &[T])> {
        self.parts.as_ref().map(|(d, e)| (d.as_slice(), e.as_slice()))
    }

    /// Costs clamped from below at `-level`.  Clamping preserves both
    /// negativity (for `level > 0`) and the chaining inequality, since for
    /// nonpositive `a`, `b` one has `max(a + b, -L) >= max(a, -L) + max(b, -L)`.
    pub fn truncated(&self, level: T) -> Result<Self> {
        if !(level > T::zero()) {
            return Err(Error::InvalidInput("truncation level must be positive".into()));
        }
        let floor = -level;
        let matrix: Vec<T> = self.matrix.iter().map(|&c| c.max(floor)).collect();
        Self::assemble(CostKind::General, matrix, self.n, self.u_indices.clone(), None)
    }
}
