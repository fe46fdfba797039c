//! Long-run average impulse control.
//!
//! The target equation is `w = max(M w, (f - lambda) dt + P w)` with
//! `w(z) = 0`: `lambda` is the best achievable average reward per unit time
//! and `w` the relative value.  Two routes are implemented.
//!
//! The canonical route bisects on `lambda`.  For a trial rate, recentered
//! sweeps `w <- T_lambda(w) - T_lambda(w)(z) e` converge to a fixed shape
//! whose per-sweep drift at `z` has the sign of `lambda* - lambda`.  Because
//! a rate charge of `lambda dt` falls on every step regardless of actions,
//! the maximizing policy does not depend on `lambda`; once the sweep shape
//! settles, an exact evaluation of the induced policy (a bordered linear
//! solve) recovers its true gain, and a fixed-point residual check certifies
//! optimality.  In practice that finish fires on the first probe and the
//! bisection is only a safety harness.
//!
//! The validation route drives the discounted solver along a decreasing
//! discount schedule and extrapolates `alpha v_alpha(z) -> lambda`, keeping
//! the smallest-discount relative value as `w`.  The two routes must agree;
//! tests and the verification command hold them to that.

use crate::chain::{stationary_distribution, StateGrid, TransitionKernel};
use crate::cost::CostSpec;
use crate::discounted::{
    apply_m, solve_discounted_qvi, CheckOutcome, DiscountedParams, DiscountedSolution,
};
use crate::potentials::poisson_q;
use crate::scalar::{lit, sup_norm, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Impulses strictly beat leaving the chain alone.
    Active,
    /// The uncontrolled average is already optimal.
    DoNothing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolutionMethod {
    Bisection,
    VanishingDiscount,
}

#[derive(Debug, Clone)]
pub struct ErgodicDiagnostics<T> {
    /// `(alpha, alpha v_alpha(z))` pairs from the vanishing-discount route;
    /// empty for bisection.
    pub lambda_sequence: Vec<(T, T)>,
    /// Fixed-point residual of `(w, lambda)` as returned.
    pub qvi_residual: T,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ErgodicSolution<T> {
    /// Optimal average reward per unit time.
    pub lambda: T,
    /// Relative value, `w(z) = 0`.
    pub w: Vec<T>,
    pub mw: Vec<T>,
    pub impulse_mask: Vec<bool>,
    /// Argmax target column (into the cost table's window) per state.
    pub target_map: Vec<usize>,
    pub method: SolutionMethod,
    pub regime: Regime,
    pub mu_f: T,
    pub z_index: usize,
    pub diagnostics: ErgodicDiagnostics<T>,
}

#[derive(Debug, Clone)]
pub struct ErgodicParams<T> {
    /// Bisection interval width target on lambda.
    pub tol_lambda: T,
    /// Sweep convergence: span of the per-sweep increments.
    pub tol_span: T,
    /// Accepted drift magnitude (per unit time) at termination.
    pub tol_drift: T,
    /// Fixed-point residual a certified policy must clear.
    pub tol_residual: T,
    pub max_sweeps: usize,
    pub max_bisections: usize,
    /// Regime threshold override; `None` uses [`default_tol_regime`].
    pub tol_regime: Option<T>,
}

impl<T: Scalar> Default for ErgodicParams<T> {
    fn default() -> Self {
        ErgodicParams {
            tol_lambda: lit::<T>(1e-10),
            tol_span: lit::<T>(1e-10),
            tol_drift: lit::<T>(1e-8),
            tol_residual: lit::<T>(1e-9),
            max_sweeps: 100_000,
            max_bisections: 200,
            tol_regime: None,
        }
    }
}

/// Default threshold separating the do-nothing regime from discretization
/// noise in the rate comparison.
pub fn default_tol_regime<T: Scalar>(f_sup_norm: T) -> T {
    lit::<T>(1e-5) * (T::one() + f_sup_norm)
}

/// Classifies the regime from the solved rate and the uncontrolled mean.
/// A rate materially below the uncontrolled mean is impossible and reported
/// as an error.
pub fn detect_do_nothing<T: Scalar>(lambda: T, mu_f: T, tol_regime: T) -> Result<Regime> {
    if lambda < mu_f - lit::<T>(1e-6) {
        return Err(Error::Regime(format!(
            "average rate {lambda} sits below the uncontrolled mean {mu_f}; \
             doing nothing already achieves the mean"
        )));
    }
    Ok(if lambda <= mu_f + tol_regime { Regime::DoNothing } else { Regime::Active })
}

/// `sup |w - max(Mw, (f - lambda) dt + P w)|`.
pub fn ergodic_qvi_residual<T: Scalar>(
    kernel: &TransitionKernel<T>,
    f: &[T],
    cost: &CostSpec<T>,
    w: &[T],
    lambda: T,
) -> T {
    let dt = kernel.dt();
    let (mw, _) = apply_m(w, cost);
    let pw = kernel.apply(w);
    let mut resid = T::zero();
    for i in 0..w.len() {
        let cont = (f[i] - lambda) * dt + pw[i];
        resid = resid.max((w[i] - mw[i].max(cont)).abs());
    }
    resid
}

/// Runs recentered sweeps at a fixed trial rate until the increment span
/// settles, warm-starting from (and updating) `w`.  Returns the drift per
/// unit time and the policy the final shape induces.
fn drift_probe<T: Scalar>(
    kernel: &TransitionKernel<T>,
    f: &[T],
    cost: &CostSpec<T>,
    z: usize,
    lambda: T,
    w: &mut [T],
    params: &ErgodicParams<T>,
) -> Result<(T, Vec<bool>, Vec<usize>)> {
    let n = kernel.n();
    let dt = kernel.dt();
    let span_tol = params.tol_span * dt * (T::one() + sup_norm(f) + lambda.abs());
    let mut drift = T::zero();
    let mut settled = false;
    for _ in 0..params.max_sweeps {
        let (mw, _) = apply_m(w, cost);
        let pw = kernel.apply(w);
        let mut lo = T::infinity();
        let mut hi = T::neg_infinity();
        let shift = mw[z].max((f[z] - lambda) * dt + pw[z]);
        for i in 0..n {
            let t = mw[i].max((f[i] - lambda) * dt + pw[i]);
            let inc = t - w[i];
            lo = lo.min(inc);
            hi = hi.max(inc);
            w[i] = t - shift;
        }
        drift = shift / dt;
        if hi - lo < span_tol {
            settled = true;
            break;
        }
    }
    if !settled {
        return Err(Error::IterationCap {
            what: format!("average-reward sweeps at rate {lambda}"),
            cap: params.max_sweeps,
            residual: drift.to_f64().unwrap_or(f64::NAN),
        });
    }
    let (mw, targets) = apply_m(w, cost);
    let pw = kernel.apply(w);
    let mask: Vec<bool> = (0..n)
        .map(|i| mw[i] > (f[i] - lambda) * dt + pw[i])
        .collect();
    Ok((drift, mask, targets))
}

/// Exact average reward and relative value of a fixed impulse policy:
/// impulse rows pin `h(x) = c(x, xi) + h(xi)`, continuation rows satisfy
/// `h + lambda dt = f dt + P h`, and `h(z) = 0`.  `None` when the policy's
/// system is singular (e.g. cyclic impulse targets), which just means the
/// candidate is rejected.
fn evaluate_policy<T: Scalar>(
    kernel: &TransitionKernel<T>,
    f: &[T],
    cost: &CostSpec<T>,
    z: usize,
    mask: &[bool],
    targets: &[usize],
) -> Result<Option<(Vec<T>, T)>> {
    let n = kernel.n();
    if mask.iter().all(|&m| m) {
        return Ok(None);
    }
    let dt = kernel.dt();
    let mut a = vec![T::zero(); n * n];
    let mut d = vec![T::zero(); n];
    let mut b = vec![T::zero(); n];
    for i in 0..n {
        if mask[i] {
            let k = targets[i];
            a[i * n + i] += T::one();
            a[i * n + cost.u_global(k)] -= T::one();
            b[i] = cost.cost(i, k);
        } else {
            for (j, &p) in kernel.row(i).iter().enumerate() {
                a[i * n + j] = -p;
            }
            a[i * n + i] += T::one();
            d[i] = dt;
            b[i] = f[i] * dt;
        }
    }
    let mut pin = vec![T::zero(); n];
    pin[z] = T::one();
    match crate::linalg::solve_bordered(&a, n, &d, &pin, &b, T::zero()) {
        Ok((h, lambda)) => Ok(Some((h, lambda))),
        Err(Error::Singular(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn build_solution<T: Scalar>(
    kernel: &TransitionKernel<T>,
    f: &[T],
    cost: &CostSpec<T>,
    z: usize,
    lambda: T,
    w: Vec<T>,
    method: SolutionMethod,
    mu_f: T,
    lambda_sequence: Vec<(T, T)>,
    mut warnings: Vec<String>,
    tol_regime: T,
) -> ErgodicSolution<T> {
    let dt = kernel.dt();
    let mut w = w;
    // Every route anchors w(z) = 0, but the direct-solve path can leave a
    // negative zero behind; collapse it so exports print 0 rather than -0.
    if w[z] == T::zero() {
        w[z] = T::zero();
    }
    let (mw, target_map) = apply_m(&w, cost);
    let pw = kernel.apply(&w);
    let impulse_mask: Vec<bool> = (0..w.len())
        .map(|i| mw[i] > (f[i] - lambda) * dt + pw[i])
        .collect();
    let mut resid = T::zero();
    for i in 0..w.len() {
        let cont = (f[i] - lambda) * dt + pw[i];
        resid = resid.max((w[i] - mw[i].max(cont)).abs());
    }
    if impulse_mask[z] {
        warnings.push(format!(
            "impulse region contains the reference state z = {z} (zero-gain relocation)"
        ));
    }
    let regime = if lambda <= mu_f + tol_regime {
        Regime::DoNothing
    } else {
        Regime::Active
    };
    ErgodicSolution {
        lambda,
        w,
        mw,
        impulse_mask,
        target_map,
        method,
        regime,
        mu_f,
        z_index: z,
        diagnostics: ErgodicDiagnostics {
            lambda_sequence,
            qvi_residual: resid,
            warnings,
        },
    }
}

/// Solves the average-reward problem by rate bisection with an exact
/// policy-evaluation finish.  `bracket` defaults to
/// `[mu(f), max f + |c_max| / dt]`, which always straddles.
pub fn solve_ergodic_qvi_bisection<T: Scalar>(
    kernel: &TransitionKernel<T>,
    grid: &StateGrid<T>,
    f: &crate::potentials::RewardSpec<T>,
    cost: &CostSpec<T>,
    bracket: Option<(T, T)>,
    params: &ErgodicParams<T>,
) -> Result<ErgodicSolution<T>> {
    let n = kernel.n();
    if n != grid.n() || cost.n() != n || f.values().len() != n {
        return Err(Error::InvalidInput("model component sizes disagree".into()));
    }
    let z = grid.z_index();
    let fv = f.values();
    let dt = kernel.dt();
    let mu = stationary_distribution(kernel)?;
    let mu_f = f.mean_under(&mu);
    let tol_reg = params.tol_regime.unwrap_or_else(|| default_tol_regime(f.sup_norm()));

    // Exact do-nothing test: if the uncontrolled relative value already
    // dominates the intervention operator, (w, mu(f)) solves the equation.
    let q0 = poisson_q(kernel, fv, &mu)?;
    let w0: Vec<T> = q0.iter().map(|&v| v - q0[z]).collect();
    let (mw0, _) = apply_m(&w0, cost);
    let margin = mw0
        .iter()
        .zip(&w0)
        .fold(T::neg_infinity(), |m, (&a, &b)| m.max(a - b));
    if margin <= lit::<T>(1e-10) * (T::one() + f.sup_norm()) {
        return Ok(build_solution(
            kernel,
            fv,
            cost,
            z,
            mu_f,
            w0,
            SolutionMethod::Bisection,
            mu_f,
            Vec::new(),
            Vec::new(),
            tol_reg,
        ));
    }

    let max_f = fv.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let (mut lo, mut hi) = bracket.unwrap_or((mu_f, max_f + cost.c_max().abs() / dt));
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidInput(format!("bad rate bracket [{lo}, {hi}]")));
    }

    let mut w = w0;
    let try_finish = |w_shape: &[T],
                      mask: &[bool],
                      targets: &[usize],
                      lo: T,
                      hi: T|
     -> Result<Option<(Vec<T>, T)>> {
        if let Some((h, lam)) = evaluate_policy(kernel, fv, cost, z, mask, targets)? {
            let resid = ergodic_qvi_residual(kernel, fv, cost, &h, lam);
            if resid <= params.tol_residual
                && lam >= lo - params.tol_drift
                && lam <= hi + params.tol_drift
            {
                return Ok(Some((h, lam)));
            }
        }
        let _ = w_shape;
        Ok(None)
    };

    let (d_lo, mask, targets) = drift_probe(kernel, fv, cost, z, lo, &mut w, params)?;
    if let Some((h, lam)) = try_finish(&w, &mask, &targets, lo, hi)? {
        return Ok(build_solution(
            kernel, fv, cost, z, lam, h, SolutionMethod::Bisection, mu_f, Vec::new(), Vec::new(),
            tol_reg,
        ));
    }
    let (d_hi, mask, targets) = drift_probe(kernel, fv, cost, z, hi, &mut w, params)?;
    if let Some((h, lam)) = try_finish(&w, &mask, &targets, lo, hi)? {
        return Ok(build_solution(
            kernel, fv, cost, z, lam, h, SolutionMethod::Bisection, mu_f, Vec::new(), Vec::new(),
            tol_reg,
        ));
    }
    if d_lo < -params.tol_drift || d_hi > params.tol_drift {
        return Err(Error::Bracket(format!(
            "rate bracket [{lo}, {hi}] does not straddle: drift {d_lo:e} at the lower end, \
             {d_hi:e} at the upper end"
        )));
    }

    for _ in 0..params.max_bisections {
        let mid = (lo + hi) * lit::<T>(0.5);
        let (d_mid, mask, targets) = drift_probe(kernel, fv, cost, z, mid, &mut w, params)?;
        if let Some((h, lam)) = try_finish(&w, &mask, &targets, lo, hi)? {
            return Ok(build_solution(
                kernel, fv, cost, z, lam, h, SolutionMethod::Bisection, mu_f, Vec::new(),
                Vec::new(), tol_reg,
            ));
        }
        if d_mid > T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < params.tol_lambda || d_mid.abs() < params.tol_drift {
            let warnings = vec![format!(
                "accepted by drift criterion (|drift| = {:e}) without a certified policy",
                d_mid.abs()
            )];
            return Ok(build_solution(
                kernel,
                fv,
                cost,
                z,
                mid,
                w,
                SolutionMethod::Bisection,
                mu_f,
                Vec::new(),
                warnings,
                tol_reg,
            ));
        }
    }
    Err(Error::IterationCap {
        what: "rate bisection".into(),
        cap: params.max_bisections,
        residual: (hi - lo).to_f64().unwrap_or(f64::NAN),
    })
}

/// A vanishing-discount run: the extrapolated average-reward solution plus
/// the per-discount solutions it was built from.
#[derive(Debug, Clone)]
pub struct VanishingRun<T> {
    pub solution: ErgodicSolution<T>,
    pub per_alpha: Vec<DiscountedSolution<T>>,
}

/// Validation route: solve the discounted problem along a decreasing
/// schedule, fit `alpha v_alpha(z)` linearly in `alpha` on the last four
/// points, and keep the smallest-discount relative value.
pub fn vanishing_discount<T: Scalar>(
    kernel: &TransitionKernel<T>,
    grid: &StateGrid<T>,
    f: &crate::potentials::RewardSpec<T>,
    cost: &CostSpec<T>,
    alphas: &[T],
    disc_params: &DiscountedParams<T>,
    tol_regime: Option<T>,
) -> Result<VanishingRun<T>> {
    if alphas.len() < 6 {
        return Err(Error::InvalidInput(
            "discount schedule needs at least 6 points".into(),
        ));
    }
    if alphas.windows(2).any(|p| !(p[1] < p[0])) || alphas.iter().any(|&a| !(a > T::zero())) {
        return Err(Error::InvalidInput(
            "discount schedule must be strictly decreasing and positive".into(),
        ));
    }
    let mu = stationary_distribution(kernel)?;
    let mu_f = f.mean_under(&mu);
    let mut per_alpha = Vec::with_capacity(alphas.len());
    let mut seq = Vec::with_capacity(alphas.len());
    for &a in alphas {
        let sol = solve_discounted_qvi(kernel, grid, f, cost, a, disc_params)?;
        seq.push((a, sol.s));
        per_alpha.push(sol);
    }

    let mut warnings = Vec::new();
    let wiggle = lit::<T>(1e-7) * (T::one() + f.sup_norm());
    let mut sign = T::zero();
    for p in seq.windows(2) {
        let d = p[1].1 - p[0].1;
        if d.abs() > wiggle {
            let s = if d > T::zero() { T::one() } else { -T::one() };
            if sign != T::zero() && s != sign {
                warnings.push(format!(
                    "rate sequence is not monotone near alpha = {}: step {d:e}",
                    p[1].0
                ));
            }
            sign = s;
        }
    }

    // Least-squares line s = lambda + b alpha through the last four points.
    let tail = &seq[seq.len() - 4..];
    let m = lit::<T>(tail.len() as f64);
    let sx = tail.iter().fold(T::zero(), |s, p| s + p.0);
    let sy = tail.iter().fold(T::zero(), |s, p| s + p.1);
    let sxx = tail.iter().fold(T::zero(), |s, p| s + p.0 * p.0);
    let sxy = tail.iter().fold(T::zero(), |s, p| s + p.0 * p.1);
    let denom = m * sxx - sx * sx;
    let slope = (m * sxy - sx * sy) / denom;
    let lambda = (sy - slope * sx) / m;

    let last = per_alpha.last().unwrap();
    let w = last.w.clone();
    let tol_reg = tol_regime.unwrap_or_else(|| default_tol_regime(f.sup_norm()));
    let regime = detect_do_nothing(lambda, mu_f, tol_reg)?;
    if regime == Regime::DoNothing {
        // In this regime the discounted rate must flatten to the mean
        // uniformly in the start state, not only at z.
        let a_min = last.alpha;
        let spread = w
            .iter()
            .fold(T::zero(), |sp, &wx| sp.max((a_min * wx + last.s - mu_f).abs()));
        if spread >= lit::<T>(10.0) * tol_reg {
            return Err(Error::Regime(format!(
                "do-nothing classification but the discounted rate spread {spread:e} across \
                 start states has not flattened"
            )));
        }
    }
    let solution = build_solution(
        kernel,
        f.values(),
        cost,
        grid.z_index(),
        lambda,
        w,
        SolutionMethod::VanishingDiscount,
        mu_f,
        seq,
        warnings,
        tol_reg,
    );
    Ok(VanishingRun { solution, per_alpha })
}

/// One-step and iterated domination checks: along uncontrolled dynamics the
/// compensated value `sum_{j<k} P^j (f - lambda) dt + P^k w` never rises
/// above `w` (up to `1e-9` per step).
pub fn supermartingale_check<T: Scalar>(
    kernel: &TransitionKernel<T>,
    f: &[T],
    w: &[T],
    lambda: T,
    k_max: usize,
) -> Result<CheckOutcome<T>> {
    let n = kernel.n();
    if f.len() != n || w.len() != n {
        return Err(Error::InvalidInput("vector length mismatch".into()));
    }
    let dt = kernel.dt();
    let step_tol = lit::<T>(1e-9);
    let r: Vec<T> = f.iter().map(|&fi| (fi - lambda) * dt).collect();
    let mut acc = vec![T::zero(); n];
    let mut pk_r = r.clone();
    let mut pk_w = w.to_vec();
    let mut worst = T::infinity();
    let mut witness = None;
    let mut passed = true;
    for k in 1..=k_max {
        for i in 0..n {
            acc[i] += if k == 1 { r[i] } else { pk_r[i] };
        }
        pk_w = kernel.apply(&pk_w);
        let allow = step_tol * lit::<T>(k as f64);
        for i in 0..n {
            let slack = w[i] - (acc[i] + pk_w[i]);
            if slack < worst {
                worst = slack;
                witness = Some(i);
            }
            if slack < -allow {
                passed = false;
            }
        }
        pk_r = kernel.apply(&pk_r);
    }
    Ok(CheckOutcome { id: "supermartingale", passed, worst_slack: worst, witness_state: witness })
}

/// Structural bounds on an average-reward solution: the window-cost bracket
/// with the hitting-time envelope, the intervention-value bracket, the
/// four-sided sandwich against the uncontrolled potential, and the rate
/// floor at the uncontrolled mean.
pub fn verify_ergodic_bounds<T: Scalar>(
    sol: &ErgodicSolution<T>,
    grid: &StateGrid<T>,
    cost: &CostSpec<T>,
    hitting_u: &[T],
    f: &[T],
    q: &[T],
    q_neg_sup: T,
) -> Result<Vec<CheckOutcome<T>>> {
    let n = grid.n();
    let z = grid.z_index();
    let kz = cost
        .column_of(z)
        .ok_or_else(|| Error::InvalidInput("reference state is not a relocation target".into()))?;
    let kappa = cost.kappa(z)?;
    let w = &sol.w;
    let lambda = sol.lambda;
    let tol = lit::<T>(1e-8);

    let f_minus_lambda = f.iter().fold(T::zero(), |m, &fi| m.max((fi - lambda).abs()));
    let lower22 = (0..n).map(|x| (x, w[x] - cost.cost(x, kz)));
    let upper22 = (0..n).map(|x| (x, hitting_u[x] * f_minus_lambda + kappa - w[x]));
    let eq22p = CheckOutcome::from_slacks("eq22'", lower22.chain(upper22), tol);

    let lower_m = (0..n).map(|x| (x, sol.mw[x] - (cost.c_underbar(x) - kappa)));
    let upper_m = (0..n).map(|x| (x, kappa - sol.mw[x]));
    let eq22pp = CheckOutcome::from_slacks("eq22''", lower_m.chain(upper_m), tol);

    let f_norm = sup_norm(f);
    let c_under_u = cost.c_underbar_sup_window();
    let wb = (0..n).flat_map(|x| {
        let lo = cost
            .cost(x, kz)
            .max(hitting_u[x] * (-f_norm - lambda) - kappa - c_under_u);
        let hi = (q[x] + kappa + q_neg_sup).min(hitting_u[x] * f_minus_lambda + kappa);
        [(x, w[x] - lo), (x, hi - w[x])]
    });
    let wbounds = CheckOutcome::from_slacks("wbounds", wb, tol);

    let lambda_check = CheckOutcome {
        id: "lambda_mu",
        passed: lambda >= sol.mu_f - tol,
        worst_slack: lambda - sol.mu_f,
        witness_state: None,
    };

    Ok(vec![eq22p, eq22pp, wbounds, lambda_check])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::build_custom_kernel;
    use crate::potentials::{alpha_schedule, RewardSpec};

    fn ts_model(c_val: f64) -> (
        TransitionKernel<f64>,
        StateGrid<f64>,
        RewardSpec<f64>,
        CostSpec<f64>,
    ) {
        let k = build_custom_kernel(vec![0.5, 0.5, 0.5, 0.5], 2, 1.0).unwrap();
        let g = StateGrid::indexed(2, 0, 0, 0).unwrap();
        let f = RewardSpec::new(vec![1.0, 0.0]).unwrap();
        let c = CostSpec::constant(c_val, 2, vec![0]).unwrap();
        (k, g, f, c)
    }

    #[test]
    fn bisection_solves_the_two_state_chain() {
        let (k, g, f, c) = ts_model(-0.2);
        let sol =
            solve_ergodic_qvi_bisection(&k, &g, &f, &c, None, &ErgodicParams::default()).unwrap();
        assert!((sol.lambda - 0.9).abs() < 1e-9, "lambda = {}", sol.lambda);
        assert!(sol.w[0].abs() < 1e-12);
        assert!((sol.w[1] + 0.2).abs() < 1e-10);
        assert_eq!(sol.regime, Regime::Active);
        assert_eq!(sol.impulse_mask, vec![false, true]);
        assert_eq!(sol.target_map[1], 0);
        assert!(sol.diagnostics.qvi_residual < 1e-9);
    }

    #[test]
    fn expensive_impulses_mean_do_nothing() {
        let (k, g, f, c) = ts_model(-2.0);
        let sol =
            solve_ergodic_qvi_bisection(&k, &g, &f, &c, None, &ErgodicParams::default()).unwrap();
        assert_eq!(sol.regime, Regime::DoNothing);
        assert!((sol.lambda - 0.5).abs() < 1e-12);
        // Relative value is the recentered potential: q = (0.5, -0.5).
        assert!(sol.w[0].abs() < 1e-12);
        assert!((sol.w[1] + 1.0).abs() < 1e-11);
        assert!(sol.impulse_mask.iter().all(|&m| !m));
    }

    #[test]
    fn constant_reward_is_flat_and_do_nothing() {
        let k = build_custom_kernel(vec![0.5f64, 0.5, 0.5, 0.5], 2, 1.0).unwrap();
        let g = StateGrid::indexed(2, 0, 0, 0).unwrap();
        let f = RewardSpec::new(vec![0.7, 0.7]).unwrap();
        let c = CostSpec::constant(-0.2, 2, vec![0]).unwrap();
        let sol =
            solve_ergodic_qvi_bisection(&k, &g, &f, &c, None, &ErgodicParams::default()).unwrap();
        assert_eq!(sol.regime, Regime::DoNothing);
        assert!((sol.lambda - 0.7).abs() < 1e-13);
        assert!(sol.w.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn vanishing_discount_agrees_with_bisection() {
        let (k, g, f, c) = ts_model(-0.2);
        let alphas = alpha_schedule(1.0, 12);
        let run = vanishing_discount(
            &k,
            &g,
            &f,
            &c,
            &alphas,
            &DiscountedParams::default(),
            None,
        )
        .unwrap();
        let sol = &run.solution;
        assert!((sol.lambda - 0.9).abs() < 1e-6, "lambda = {}", sol.lambda);
        assert!((sol.w[1] + 0.2).abs() < 1e-9);
        assert_eq!(sol.regime, Regime::Active);
        assert_eq!(run.per_alpha.len(), 12);
        assert!(sol.diagnostics.warnings.is_empty(), "{:?}", sol.diagnostics.warnings);
    }

    #[test]
    fn shifting_the_reward_shifts_the_rate() {
        let (k, g, f, c) = ts_model(-0.2);
        let base =
            solve_ergodic_qvi_bisection(&k, &g, &f, &c, None, &ErgodicParams::default()).unwrap();
        let f2 = RewardSpec::new(vec![2.5, 1.5]).unwrap();
        let shifted =
            solve_ergodic_qvi_bisection(&k, &g, &f2, &c, None, &ErgodicParams::default()).unwrap();
        assert!((shifted.lambda - base.lambda - 1.5).abs() < 1e-9);
        for (a, b) in shifted.w.iter().zip(&base.w) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(shifted.impulse_mask, base.impulse_mask);
    }

    #[test]
    fn bad_bracket_is_reported() {
        let (k, g, f, c) = ts_model(-0.2);
        let out = solve_ergodic_qvi_bisection(
            &k,
            &g,
            &f,
            &c,
            Some((2.0, 3.0)),
            &ErgodicParams::default(),
        );
        assert!(matches!(out, Err(Error::Bracket(_))), "got {out:?}");
    }

    #[test]
    fn rate_below_mean_is_rejected() {
        assert!(matches!(
            detect_do_nothing(0.4f64, 0.5, 1e-5),
            Err(Error::Regime(_))
        ));
        assert_eq!(detect_do_nothing(0.9f64, 0.5, 1e-5).unwrap(), Regime::Active);
        assert_eq!(
            detect_do_nothing(0.5000001f64, 0.5, 1e-5).unwrap(),
            Regime::DoNothing
        );
    }

    #[test]
    fn supermartingale_property_holds_at_the_solution() {
        let (k, g, f, c) = ts_model(-0.2);
        let sol =
            solve_ergodic_qvi_bisection(&k, &g, &f, &c, None, &ErgodicParams::default()).unwrap();
        let check = supermartingale_check(&k, f.values(), &sol.w, sol.lambda, 25).unwrap();
        assert!(check.passed, "worst slack {}", check.worst_slack);
        let _ = g;
    }

    #[test]
    fn ergodic_bounds_hold_on_the_two_state_solution() {
        let (k, g, f, c) = ts_model(-0.2);
        let sol =
            solve_ergodic_qvi_bisection(&k, &g, &f, &c, None, &ErgodicParams::default()).unwrap();
        let in_u: Vec<bool> = (0..2).map(|i| g.in_u(i)).collect();
        let t = crate::chain::expected_hitting_time(&k, &in_u).unwrap();
        let mu = stationary_distribution(&k).unwrap();
        let q = poisson_q(&k, f.values(), &mu).unwrap();
        let table = crate::potentials::PotentialTable::build(
            &k,
            &f,
            &alpha_schedule(1.0, 12),
        )
        .unwrap();
        let checks =
            verify_ergodic_bounds(&sol, &g, &c, &t, f.values(), &q, table.q_negative_part_sup())
                .unwrap();
        for ch in &checks {
            assert!(ch.passed, "{} failed with slack {}", ch.id, ch.worst_slack);
        }
    }
}
