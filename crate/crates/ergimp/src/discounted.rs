//! Discounted impulse control.
//!
//! Solves `v = max(M v, f delta_eff + beta P v)` where the intervention
//! operator is `M v(x) = max_xi [c(x, xi) + v(xi)]`.  The fixed point is the
//! best discounted total reward when an impulse relocates the chain at the
//! start of a step and at most one impulse fires per step; the chaining
//! inequality on costs makes faster bursts pointless.
//!
//! Everything runs in recentered coordinates `w = v - v(z) e`,
//! `s = alpha v(z)`: the fixed point becomes
//! `w = max(M w, (f - s) delta_eff + beta P w)` with `w(z) = 0`, which keeps
//! every intermediate quantity O(1) even when `alpha` is tiny and `v` itself
//! is huge.  `v` is reconstructed only on output.

use crate::chain::{StateGrid, TransitionKernel};
use crate::cost::CostSpec;
use crate::potentials::{delta_eff, discount_factor, resolvent};
use crate::scalar::{lit, sup_norm, Scalar};
use crate::stopping::solve_optimal_stopping;
use crate::{Error, Result};

/// Intervention operator on relative values: `max_xi [c(x, xi) + w(xi)]`.
/// Returns the values and the argmax target column per state (ties to the
/// lowest column).
pub fn apply_m<T: Scalar>(w: &[T], cost: &CostSpec<T>) -> (Vec<T>, Vec<usize>) {
    let n = cost.n();
    let m = cost.m();
    let mut mw = vec![T::neg_infinity(); n];
    let mut arg = vec![0usize; n];
    for x in 0..n {
        for k in 0..m {
            let val = cost.cost(x, k) + w[cost.u_global(k)];
            if val > mw[x] {
                mw[x] = val;
                arg[x] = k;
            }
        }
    }
    (mw, arg)
}

/// Same with costs clamped from below at `-level`.
pub fn apply_m_truncated<T: Scalar>(
    w: &[T],
    cost: &CostSpec<T>,
    level: T,
) -> (Vec<T>, Vec<usize>) {
    let n = cost.n();
    let m = cost.m();
    let floor = -level;
    let mut mw = vec![T::neg_infinity(); n];
    let mut arg = vec![0usize; n];
    for x in 0..n {
        for k in 0..m {
            let val = cost.cost(x, k).max(floor) + w[cost.u_global(k)];
            if val > mw[x] {
                mw[x] = val;
                arg[x] = k;
            }
        }
    }
    (mw, arg)
}

#[derive(Debug, Clone)]
pub struct DiscountedParams<T> {
    /// Outer stop: sup-norm of the value increment, and the acceptance
    /// threshold for a polished candidate's fixed-point residual.
    pub tol: T,
    pub max_outer: usize,
    /// Jump to the exact fixed point once the impulse region stabilizes.
    pub polish: bool,
}

impl<T: Scalar> Default for DiscountedParams<T> {
    fn default() -> Self {
        DiscountedParams { tol: lit::<T>(1e-10), max_outer: 1_000_000, polish: true }
    }
}

#[derive(Debug, Clone)]
pub struct DiscountedSolution<T> {
    pub alpha: T,
    /// Relative value, `w(z) = 0`.
    pub w: Vec<T>,
    /// `alpha * v(z)`, the discounted gain seen from the reference state.
    pub s: T,
    /// Absolute value `v = w + (s / alpha) e`.
    pub v: Vec<T>,
    /// `M w` and its argmax columns at the solution.
    pub mw: Vec<T>,
    pub m_arg: Vec<usize>,
    /// States where the intervention branch is active.
    pub stop_mask: Vec<bool>,
    /// Fixed-point residual in recentered coordinates.
    pub residual: T,
    pub outer_iterations: usize,
    pub polished: bool,
    pub z_index: usize,
}

impl<T: Scalar> DiscountedSolution<T> {
    pub fn v_at_z(&self) -> T {
        self.s / self.alpha
    }
}

fn qvi_residual<T: Scalar>(
    kernel: &TransitionKernel<T>,
    f: &[T],
    w: &[T],
    s: T,
    mw: &[T],
    alpha: T,
) -> T {
    let beta = discount_factor(alpha, kernel.dt());
    let delta = delta_eff(alpha, kernel.dt());
    let pw = kernel.apply(w);
    let mut resid = T::zero();
    for i in 0..w.len() {
        let cont = (f[i] - s) * delta + beta * pw[i];
        let best = mw[i].max(cont);
        resid = resid.max((w[i] - best).abs());
    }
    resid
}

fn solve_inner<T: Scalar>(
    kernel: &TransitionKernel<T>,
    grid: &StateGrid<T>,
    f: &[T],
    cost: &CostSpec<T>,
    alpha: T,
    params: &DiscountedParams<T>,
) -> Result<DiscountedSolution<T>> {
    let n = kernel.n();
    let z = grid.z_index();
    let delta = delta_eff(alpha, kernel.dt());

    // Start from the never-intervene value.
    let r0 = resolvent(kernel, f, alpha)?;
    let mut s = alpha * r0[z];
    let mut w: Vec<T> = r0.iter().map(|&v| v - r0[z]).collect();
    let mut warm: Option<Vec<bool>> = None;
    let mut streak = 0usize;
    // Each outer iterate comes out of a direct solve whose forward error
    // grows like 1 / (1 - beta); the monotonicity guard has to absorb that
    // noise floor or tiny discounts trip it on pure rounding.
    let beta = discount_factor(alpha, kernel.dt());
    let solve_noise = lit::<T>(64.0) * T::epsilon() / (T::one() - beta).max(T::epsilon());
    let mono_slack = (lit::<T>(1e-11) + solve_noise) * (T::one() + sup_norm(f));

    for outer in 1..=params.max_outer {
        let (mw, m_arg) = apply_m(&w, cost);
        let r_inner: Vec<T> = f.iter().map(|&fi| (fi - s) * delta).collect();
        let inner = solve_optimal_stopping(kernel, &r_inner, &mw, alpha, warm.as_deref())?;
        let u = inner.values;

        let mut increment = T::zero();
        for i in 0..n {
            let d = u[i] - w[i];
            if d < -mono_slack {
                return Err(Error::Degenerate(format!(
                    "value iteration lost monotonicity at state {i}: step {d:e}"
                )));
            }
            increment = increment.max(d.abs());
        }

        let same_mask = warm.as_deref() == Some(&inner.stop_mask[..]);
        streak = if same_mask { streak + 1 } else { 0 };
        warm = Some(inner.stop_mask.clone());

        s += alpha * u[z];
        for i in 0..n {
            w[i] = u[i] - u[z];
        }

        let try_polish = params.polish && streak >= 3 && (streak == 3 || streak.is_multiple_of(16));
        if try_polish {
            if let Some((wp, sp)) = polish_candidate(
                kernel, f, cost, alpha, z, &inner.stop_mask, &m_arg, params.tol,
            )? {
                let (mw_p, m_arg_p) = apply_m(&wp, cost);
                let resid = qvi_residual(kernel, f, &wp, sp, &mw_p, alpha);
                return Ok(DiscountedSolution {
                    alpha,
                    v: wp.iter().map(|&x| x + sp / alpha).collect(),
                    w: wp,
                    s: sp,
                    mw: mw_p,
                    m_arg: m_arg_p,
                    stop_mask: inner.stop_mask,
                    residual: resid,
                    outer_iterations: outer,
                    polished: true,
                    z_index: z,
                });
            }
        }

        if increment < params.tol {
            let (mw_f, m_arg_f) = apply_m(&w, cost);
            let resid = qvi_residual(kernel, f, &w, s, &mw_f, alpha);
            return Ok(DiscountedSolution {
                alpha,
                v: w.iter().map(|&x| x + s / alpha).collect(),
                w,
                s,
                mw: mw_f,
                m_arg: m_arg_f,
                stop_mask: inner.stop_mask,
                residual: resid,
                outer_iterations: outer,
                polished: false,
                z_index: z,
            });
        }
    }
    Err(Error::IterationCap {
        what: "discounted impulse iteration".into(),
        cap: params.max_outer,
        residual: f64::NAN,
    })
}

/// Tries to solve the linear system of the currently proposed policy and
/// accepts it only when its fixed-point residual clears `tol`.  A `None`
/// means the candidate was rejected (singular system or residual too big)
/// and the outer iteration should continue.
fn polish_candidate<T: Scalar>(
    kernel: &TransitionKernel<T>,
    f: &[T],
    cost: &CostSpec<T>,
    alpha: T,
    z: usize,
    stop_mask: &[bool],
    m_arg: &[usize],
    tol: T,
) -> Result<Option<(Vec<T>, T)>> {
    let n = kernel.n();
    if stop_mask.iter().all(|&s| s) {
        return Ok(None);
    }
    let beta = discount_factor(alpha, kernel.dt());
    let delta = delta_eff(alpha, kernel.dt());
    let mut a = vec![T::zero(); n * n];
    let mut d = vec![T::zero(); n];
    let mut b = vec![T::zero(); n];
    for i in 0..n {
        if stop_mask[i] {
            let k = m_arg[i];
            let target = cost.u_global(k);
            a[i * n + i] += T::one();
            a[i * n + target] -= T::one();
            b[i] = cost.cost(i, k);
        } else {
            for (j, &p) in kernel.row(i).iter().enumerate() {
                a[i * n + j] = -beta * p;
            }
            a[i * n + i] += T::one();
            d[i] = delta;
            b[i] = f[i] * delta;
        }
    }
    let mut pin = vec![T::zero(); n];
    pin[z] = T::one();
    let (w, s) = match crate::linalg::solve_bordered(&a, n, &d, &pin, &b, T::zero()) {
        Ok(ws) => ws,
        Err(Error::Singular(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let (mw, _) = apply_m(&w, cost);
    let resid = qvi_residual(kernel, f, &w, s, &mw, alpha);
    if resid <= tol {
        Ok(Some((w, s)))
    } else {
        Ok(None)
    }
}

/// Solves the discounted problem.
pub fn solve_discounted_qvi<T: Scalar>(
    kernel: &TransitionKernel<T>,
    grid: &StateGrid<T>,
    f: &crate::potentials::RewardSpec<T>,
    cost: &CostSpec<T>,
    alpha: T,
    params: &DiscountedParams<T>,
) -> Result<DiscountedSolution<T>> {
    if !(alpha > T::zero()) {
        return Err(Error::InvalidInput("discounted solves need alpha > 0".into()));
    }
    if kernel.n() != grid.n() || cost.n() != grid.n() || f.values().len() != grid.n() {
        return Err(Error::InvalidInput("model component sizes disagree".into()));
    }
    solve_inner(kernel, grid, f.values(), cost, alpha, params)
}

/// Same with the impulse costs clamped from below at `-level`.
pub fn solve_discounted_qvi_truncated<T: Scalar>(
    kernel: &TransitionKernel<T>,
    grid: &StateGrid<T>,
    f: &crate::potentials::RewardSpec<T>,
    cost: &CostSpec<T>,
    alpha: T,
    level: T,
    params: &DiscountedParams<T>,
) -> Result<DiscountedSolution<T>> {
    let clamped = cost.truncated(level)?;
    solve_discounted_qvi(kernel, grid, f, &clamped, alpha, params)
}

/// Outcome of one named verification check.
#[derive(Debug, Clone)]
pub struct CheckOutcome<T> {
    pub id: &'static str,
    pub passed: bool,
    /// Worst slack seen; negative means a violated constraint.
    pub worst_slack: T,
    pub witness_state: Option<usize>,
}

impl<T: Scalar> CheckOutcome<T> {
    pub(crate) fn from_slacks(
        id: &'static str,
        slacks: impl Iterator<Item = (usize, T)>,
        tol: T,
    ) -> Self {
        let mut worst = T::infinity();
        let mut witness = None;
        for (i, s) in slacks {
            if s < worst {
                worst = s;
                witness = Some(i);
            }
        }
        if worst == T::infinity() {
            worst = T::zero();
        }
        CheckOutcome { id, passed: worst >= -tol, worst_slack: worst, witness_state: witness }
    }
}

/// Structural bounds on a discounted solution.
///
/// With `kappa` the worst relocation cost between the window and the
/// reference state, the relative value satisfies, up to tolerance:
/// on the window, `c(x, z) <= w(x) <= -c(z, x)` and `|w| <= kappa`;
/// everywhere, `c(x, z) <= w(x) <= t(x) sup|f - alpha v(z)| + kappa` with
/// `t` the expected time to reach the relocation window.
pub fn verify_discounted_bounds<T: Scalar>(
    sol: &DiscountedSolution<T>,
    grid: &StateGrid<T>,
    cost: &CostSpec<T>,
    hitting_u: &[T],
    f: &[T],
) -> Result<Vec<CheckOutcome<T>>> {
    let z = grid.z_index();
    let kz = cost
        .column_of(z)
        .ok_or_else(|| Error::InvalidInput("reference state is not a relocation target".into()))?;
    let kappa = cost.kappa(z)?;
    let tol = lit::<T>(1e-9) * (T::one() + kappa);
    let w = &sol.w;

    let window: Vec<usize> = grid.u_indices().collect();
    let lower_u = window.iter().map(|&x| (x, w[x] - cost.cost(x, kz)));
    let upper_u = window.iter().filter_map(|&x| {
        cost.column_of(x).map(|kx| (x, -cost.cost(z, kx) - w[x]))
    });
    let eq10 = CheckOutcome::from_slacks("eq10", lower_u.chain(upper_u), tol);

    let eq11 = CheckOutcome::from_slacks(
        "eq11",
        window.iter().map(|&x| (x, kappa - w[x].abs())),
        tol,
    );

    let bound_norm = f
        .iter()
        .fold(T::zero(), |m, &fi| m.max((fi - sol.s).abs()));
    let all_lower = (0..grid.n()).map(|x| (x, w[x] - cost.cost(x, kz)));
    let all_upper =
        (0..grid.n()).map(|x| (x, hitting_u[x] * bound_norm + kappa - w[x]));
    let tol13 = lit::<T>(1e-9) * (T::one() + kappa + bound_norm * sup_norm(hitting_u));
    let eq13 = CheckOutcome::from_slacks("eq13", all_lower.chain(all_upper), tol13);

    Ok(vec![eq10, eq11, eq13])
}
