//! Optimal stopping on a finite chain, the inner problem of the impulse
//! solvers.
//!
//! Solves `v = max(g, r + beta P v)` by policy iteration over stopping sets:
//! evaluate the current set exactly with a direct solve, then move states
//! between the stop and continuation sets where the comparison says so.
//! Finite convergence, and a warm-start mask usually makes later calls a
//! single evaluation.  `alpha = 0` (undiscounted, `beta = 1`) is allowed;
//! there the evaluation system is singular exactly when the continuation
//! set cannot reach the stopping set, and that singularity is surfaced to
//! the caller rather than hidden.

use crate::chain::TransitionKernel;
use crate::linalg::Lu;
use crate::potentials::discount_factor;
use crate::scalar::{lit, sup_norm, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct StoppingSolution<T> {
    pub values: Vec<T>,
    pub stop_mask: Vec<bool>,
    /// Final fixed-point residual `sup |v - max(g, r + beta P v)|`.
    pub residual: T,
    /// Policy-iteration rounds used.
    pub iterations: usize,
}

/// Value of a fixed stopping rule: `v = g` on the stop set, and
/// `v = r + beta P v` on the continuation set.
pub fn evaluate_stopping_policy<T: Scalar>(
    kernel: &TransitionKernel<T>,
    r: &[T],
    obstacle: &[T],
    stop_mask: &[bool],
    alpha: T,
) -> Result<Vec<T>> {
    let n = kernel.n();
    if r.len() != n || obstacle.len() != n || stop_mask.len() != n {
        return Err(Error::InvalidInput("vector length mismatch".into()));
    }
    let beta = discount_factor(alpha, kernel.dt());
    let mut v: Vec<T> = obstacle.to_vec();
    let idx: Vec<usize> = (0..n).filter(|&i| !stop_mask[i]).collect();
    if idx.is_empty() {
        return Ok(v);
    }
    let m = idx.len();
    let mut a = kernel.gather_submatrix(&idx);
    for e in a.iter_mut() {
        *e = -beta * *e;
    }
    for k in 0..m {
        a[k * m + k] += T::one();
    }
    let mut b = vec![T::zero(); m];
    for (row, &i) in idx.iter().enumerate() {
        let mut acc = r[i];
        for (j, &p) in kernel.row(i).iter().enumerate() {
            if stop_mask[j] {
                acc += beta * p * obstacle[j];
            }
        }
        b[row] = acc;
    }
    let lu = Lu::factor(&a, m).map_err(|e| match e {
        Error::Singular(msg) => Error::Singular(format!(
            "stopping evaluation singular (continuation set never stops): {msg}"
        )),
        other => other,
    })?;
    let x = lu.solve_refined(&a, &b, 2);
    for (&i, &xi) in idx.iter().zip(&x) {
        v[i] = xi;
    }
    Ok(v)
}

/// Solves the stopping problem.  `r` is the full per-step reward (already
/// weighted by the accrual factor), `obstacle` the stop payoff, and `warm`
/// an optional starting stop set.
pub fn solve_optimal_stopping<T: Scalar>(
    kernel: &TransitionKernel<T>,
    r: &[T],
    obstacle: &[T],
    alpha: T,
    warm: Option<&[bool]>,
) -> Result<StoppingSolution<T>> {
    let n = kernel.n();
    if r.len() != n || obstacle.len() != n {
        return Err(Error::InvalidInput("vector length mismatch".into()));
    }
    if alpha < T::zero() {
        return Err(Error::InvalidInput("negative discount rate".into()));
    }
    let beta = discount_factor(alpha, kernel.dt());
    let mut mask: Vec<bool> = match warm {
        Some(w) if w.len() == n => w.to_vec(),
        Some(_) => return Err(Error::InvalidInput("warm-start mask length mismatch".into())),
        // Stopping everywhere is always a valid policy, so it makes a safe
        // starting point even at alpha = 0.
        None => vec![true; n],
    };
    let scale = T::one() + sup_norm(r) + sup_norm(obstacle);
    let switch_tol = T::epsilon() * lit::<T>(64.0) * scale;
    let cap = 50 + 2 * n;
    let mut v = Vec::new();
    for it in 1..=cap {
        v = evaluate_stopping_policy(kernel, r, obstacle, &mask, alpha)?;
        let pv = kernel.apply(&v);
        let mut changed = false;
        let mut next = mask.clone();
        for i in 0..n {
            let cont = r[i] + beta * pv[i];
            let gap = obstacle[i] - cont;
            // Switch only on a clear advantage; inside the tolerance band the
            // current action stays, which rules out cycling on ties.
            if gap > switch_tol && !mask[i] {
                next[i] = true;
                changed = true;
            } else if gap < -switch_tol && mask[i] {
                next[i] = false;
                changed = true;
            }
        }
        if !changed {
            let mut residual = T::zero();
            for i in 0..n {
                let cont = r[i] + beta * pv[i];
                let best = obstacle[i].max(cont);
                residual = residual.max((v[i] - best).abs());
            }
            return Ok(StoppingSolution { values: v, stop_mask: mask, residual, iterations: it });
        }
        mask = next;
    }
    Err(Error::IterationCap {
        what: "stopping policy iteration".into(),
        cap,
        residual: sup_norm(&v).to_f64().unwrap_or(f64::NAN),
    })
}
