//! Reward flattening outside a ball and the error bounds that justify it.
//!
//! Solving on a large grid gets expensive, and the interesting part of the
//! reward usually lives near the reference state.  This module flattens the
//! reward to a constant level outside a ball `B(z, N)` (with a linear collar
//! of width one), solves the flattened problem, and quantifies how far its
//! optimal average can drift from the original one.  Three auxiliary ergodic
//! problems with a small constant impulse charge `delta` supply a two-sided
//! sandwich on that drift, and a separate time-fraction diagnostic (the
//! largest achievable expected fraction of time spent outside the ball)
//! measures how much the chain cares about the flattened region at all.

use crate::chain::{stationary_distribution, StateGrid, TransitionKernel};
use crate::cost::CostSpec;
use crate::ergodic::{solve_ergodic_qvi_bisection, ErgodicParams, ErgodicSolution, Regime};
use crate::potentials::RewardSpec;
use crate::scalar::{lit, Scalar};
use crate::stopping::solve_optimal_stopping;
use crate::strategy::{default_tol_region, extract_policy, policy_average};
use crate::{Error, Result};

/// A reward flattened outside `B(z, N)`, together with its companion that is
/// raised to `sup|f| + 1` instead, and the stationary means of both.
#[derive(Debug, Clone)]
pub struct TruncatedReward<T> {
    /// Ball radius in state units.
    pub n_radius: T,
    /// Flattening level for `f_n`, strictly between the stationary mean of
    /// the original reward and its sup norm.
    pub eta_level: T,
    /// Original reward inside the ball, `eta_level` outside `B(z, N+1)`,
    /// linear blend in between.
    pub f_n: RewardSpec<T>,
    /// Same shape with outside level `sup|f| + 1`; dominates `f_n`.
    pub f_tilde_n: RewardSpec<T>,
    pub mu_f_n: T,
    pub mu_f_tilde_n: T,
    /// Whether the sublevel set `{f_n <= mu(f_n)}` stays inside `B(z, N+1)`.
    /// The flattened problem only stands in for the original one when the
    /// cheap region is confined to the ball, so downstream solves insist on
    /// this flag.
    pub sublevel_inside: bool,
}

/// One ladder entry: everything computed for a `(N, delta)` pair.
#[derive(Debug, Clone)]
pub struct TruncationRow<T> {
    pub n_radius: T,
    pub delta: T,
    /// Largest achievable expected fraction of time outside `B(z, N)`,
    /// over starts in the relocation window and all stopping rules.
    pub ratio_c: T,
    /// Optimal average for the flattened reward under the real cost.
    pub lambda_bar_nc: T,
    /// Long-run average of the flattened problem's optimal strategy when it
    /// is run against the original reward.
    pub lambda_transfer: T,
    /// Auxiliary value, reward `f_tilde_n - f_n`, impulse charge `-delta`.
    pub lambda_tilde: T,
    /// Auxiliary value, reward `f_tilde_n - f`, impulse charge `-delta`.
    pub lambda_tilde2: T,
    /// Auxiliary value, reward `f - f_n`, impulse charge `-delta`.
    pub lambda_bar_ndelta: T,
    /// Sandwich slacks from `sandwich_check`; both should be >= -1e-6.
    pub slack_lo: T,
    pub slack_hi: T,
}

/// Full ladder report: the untruncated optimum plus one row per `(N, delta)`.
#[derive(Debug, Clone)]
pub struct TruncationReport<T> {
    pub lambda_bar: T,
    pub mu_f: T,
    pub eta_level: T,
    pub rows: Vec<TruncationRow<T>>,
}

fn check_probability_vector<T: Scalar>(mu: &[T], n: usize) -> Result<()> {
    if mu.len() != n {
        return Err(Error::InvalidInput("stationary vector length mismatch".into()));
    }
    if mu.iter().any(|&m| !m.is_finite() || m < T::zero()) {
        return Err(Error::InvalidInput("stationary vector has invalid entries".into()));
    }
    let total = mu.iter().fold(T::zero(), |a, &m| a + m);
    if (total - T::one()).abs() > lit::<T>(1e-8) {
        return Err(Error::InvalidInput("stationary vector does not sum to 1".into()));
    }
    Ok(())
}

/// Weight of the inner hat at distance `d` from `z`: 1 on the ball, sloping
/// to 0 over the collar `[N, N+1]`.
fn inner_hat<T: Scalar>(d: T, n_radius: T) -> T {
    (T::one() - (d - n_radius).max(T::zero())).max(T::zero())
}

/// Weight of the outer hat: 1 beyond `N+1`, sloping to 0 at the ball edge.
/// Complements `inner_hat` exactly, so the two always sum to one.
fn outer_hat<T: Scalar>(d: T, n_radius: T) -> T {
    (T::one() - (n_radius + T::one() - d).max(T::zero())).max(T::zero())
}

/// Builds the flattened rewards for ball radius `n_radius` around `z`.
///
/// `mu` is the stationary law of the driving chain; it fixes the admissible
/// range for `eta_level` and the reported means.  The whole collar
/// `B(z, N+1)` must fit inside the grid so that every boundary state already
/// sits at the flat level.
pub fn build_truncations<T: Scalar>(
    f: &RewardSpec<T>,
    grid: &StateGrid<T>,
    mu: &[T],
    n_radius: T,
    eta_level: T,
) -> Result<TruncatedReward<T>> {
    let n = grid.n();
    if f.values().len() != n {
        return Err(Error::InvalidInput("reward length does not match grid".into()));
    }
    check_probability_vector(mu, n)?;
    if !n_radius.is_finite() || n_radius <= T::zero() {
        return Err(Error::InvalidInput("ball radius must be positive".into()));
    }
    let mu_f = f.mean_under(mu);
    let norm = f.sup_norm();
    if !eta_level.is_finite() || eta_level <= mu_f || eta_level >= norm {
        return Err(Error::InvalidInput(format!(
            "flattening level {eta_level} outside (mean {mu_f}, sup {norm})"
        )));
    }
    let z = grid.z_point();
    let reach = n_radius + T::one();
    let slack = lit::<T>(1e-9) * (T::one() + reach);
    if grid.point(0) > z - reach + slack || grid.point(n - 1) < z + reach - slack {
        return Err(Error::InvalidInput(format!(
            "ball of radius {n_radius} plus collar does not fit the grid"
        )));
    }

    let high = norm + T::one();
    let mut f_n = Vec::with_capacity(n);
    let mut f_t = Vec::with_capacity(n);
    for (i, &fx) in f.values().iter().enumerate() {
        let d = (grid.point(i) - z).abs();
        let wi = inner_hat(d, n_radius);
        let wo = outer_hat(d, n_radius);
        f_n.push(fx * wi + eta_level * wo);
        f_t.push(fx * wi + high * wo);
    }
    let f_n = RewardSpec::new(f_n)?;
    let f_tilde_n = RewardSpec::new(f_t)?;
    let mu_f_n = f_n.mean_under(mu);
    let mu_f_tilde_n = f_tilde_n.mean_under(mu);

    // Outside the collar the flattened reward sits at eta exactly, so the
    // sublevel set at the mean escapes the ball precisely when the mean has
    // been dragged up to eta or above.
    let ball_slack = lit::<T>(1e-9) * (T::one() + reach);
    let sublevel_inside = f_n
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v <= mu_f_n)
        .all(|(i, _)| (grid.point(i) - z).abs() <= reach + ball_slack);

    Ok(TruncatedReward {
        n_radius,
        eta_level,
        f_n,
        f_tilde_n,
        mu_f_n,
        mu_f_tilde_n,
        sublevel_inside,
    })
}

/// Largest achievable expected fraction of time spent outside `B(z, N)`,
/// over starts in the relocation window and all stopping rules.
///
/// For a candidate fraction `beta`, the stopped functional
/// `E sum (1_outside - beta) dt` with obstacle 0 is solvable exactly; its
/// sup over the window is positive when some rule beats `beta` and zero
/// otherwise, and an unbounded value (the evaluation turns singular) means
/// even running forever beats `beta`.  Bisection on `beta` then pins the
/// critical fraction to 1e-6.
pub fn assumption_c_ratio<T: Scalar>(
    kernel: &TransitionKernel<T>,
    grid: &StateGrid<T>,
    n_radius: T,
) -> Result<T> {
    let n = kernel.n();
    if n != grid.n() {
        return Err(Error::InvalidInput("kernel and grid sizes disagree".into()));
    }
    if !n_radius.is_finite() || n_radius < T::zero() {
        return Err(Error::InvalidInput("ball radius must be nonnegative".into()));
    }
    let z = grid.z_point();
    let slack = lit::<T>(1e-9) * (T::one() + n_radius);
    let dt = kernel.dt();
    let outside: Vec<bool> =
        (0..n).map(|i| (grid.point(i) - z).abs() > n_radius + slack).collect();
    if outside.iter().all(|&o| !o) {
        return Ok(T::zero());
    }

    let zero_tol = lit::<T>(1e-10) * (T::one() + dt);
    let obstacle = vec![T::zero(); n];
    let mut warm: Option<Vec<bool>> = None;
    let mut lo = T::zero();
    let mut hi = T::one();
    // Fraction of time cannot exceed 1, so the upper end needs no probe.
    while hi - lo > lit::<T>(1e-6) {
        let beta = (lo + hi) * lit::<T>(0.5);
        let r: Vec<T> = outside
            .iter()
            .map(|&o| (if o { T::one() - beta } else { -beta }) * dt)
            .collect();
        match solve_optimal_stopping(kernel, &r, &obstacle, T::zero(), warm.as_deref()) {
            Ok(sol) => {
                let sup_u = grid
                    .u_indices()
                    .map(|i| sol.values[i])
                    .fold(T::neg_infinity(), T::max);
                if sup_u > zero_tol {
                    lo = beta;
                } else {
                    hi = beta;
                }
                warm = Some(sol.stop_mask);
            }
            // A singular evaluation means some stopping rule ran off to an
            // unbounded value, so this beta is still beatable.
            Err(Error::Singular(_)) => lo = beta,
            Err(e) => return Err(e),
        }
    }
    Ok((lo + hi) * lit::<T>(0.5))
}

/// Solves the ergodic problem for the flattened reward under the real cost
/// and certifies that the flattening is consistent: the boundary level must
/// lie strictly below the resulting optimal average, and the cheap region
/// of `f_n` must be confined to the ball.
pub fn lambda_n_c<T: Scalar>(
    kernel: &TransitionKernel<T>,
    grid: &StateGrid<T>,
    inst: &TruncatedReward<T>,
    cost: &CostSpec<T>,
    params: &ErgodicParams<T>,
) -> Result<ErgodicSolution<T>> {
    if !inst.sublevel_inside {
        let z = grid.z_point();
        let reach = inst.n_radius + T::one();
        let worst = inst
            .f_n
            .values()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v <= inst.mu_f_n)
            .max_by(|a, b| {
                let da = (grid.point(a.0) - z).abs();
                let db = (grid.point(b.0) - z).abs();
                da.partial_cmp(&db).unwrap()
            })
            .map(|(i, _)| i)
            .unwrap_or(grid.z_index());
        return Err(Error::BoundViolation {
            check: "sublevel set of flattened reward inside the ball".into(),
            state: worst,
            slack: (reach - (grid.point(worst) - z).abs()).to_f64().unwrap_or(f64::NAN),
        });
    }
    let sol = solve_ergodic_qvi_bisection(kernel, grid, &inst.f_n, cost, None, params)?;
    if inst.eta_level >= sol.lambda {
        return Err(Error::BoundViolation {
            check: "boundary level below flattened optimal average".into(),
            state: grid.z_index(),
            slack: (sol.lambda - inst.eta_level).to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(sol)
}

/// Optimal average for an auxiliary reward with a constant impulse charge
/// `-delta` on the same relocation window.
fn auxiliary_value<T: Scalar>(
    kernel: &TransitionKernel<T>,
    grid: &StateGrid<T>,
    values: Vec<T>,
    delta: T,
    params: &ErgodicParams<T>,
) -> Result<T> {
    let reward = RewardSpec::new(values)?;
    let u: Vec<usize> = grid.u_indices().collect();
    let cost = CostSpec::constant(-delta, kernel.n(), u)?;
    let sol = solve_ergodic_qvi_bisection(kernel, grid, &reward, &cost, None, params)?;
    Ok(sol.lambda)
}

fn check_delta<T: Scalar>(delta: T, c_max: T) -> Result<()> {
    if !delta.is_finite() || delta <= T::zero() || delta >= -c_max {
        return Err(Error::InvalidInput(format!(
            "impulse charge delta {delta} outside (0, {})",
            -c_max
        )));
    }
    Ok(())
}

/// Auxiliary value with reward `f_tilde_n - f_n`.  Nonnegative and supported
/// outside the ball, so it shrinks as the ball grows.
pub fn lambda_tilde_n_delta<T: Scalar>(
    kernel: &TransitionKernel<T>,
    grid: &StateGrid<T>,
    inst: &TruncatedReward<T>,
    delta: T,
    params: &ErgodicParams<T>,
) -> Result<T> {
    let diff: Vec<T> = inst
        .f_tilde_n
        .values()
        .iter()
        .zip(inst.f_n.values())
        .map(|(&a, &b)| a - b)
        .collect();
    auxiliary_value(kernel, grid, diff, delta, params)
}

/// Auxiliary value with reward `f_tilde_n - f`, the upper arm of the
/// sandwich.
pub fn lambda_tilde2_n_delta<T: Scalar>(
    kernel: &TransitionKernel<T>,
    grid: &StateGrid<T>,
    inst: &TruncatedReward<T>,
    f: &RewardSpec<T>,
    delta: T,
    params: &ErgodicParams<T>,
) -> Result<T> {
    let diff: Vec<T> = inst
        .f_tilde_n
        .values()
        .iter()
        .zip(f.values())
        .map(|(&a, &b)| a - b)
        .collect();
    auxiliary_value(kernel, grid, diff, delta, params)
}

/// Auxiliary value with reward `f - f_n`, the lower arm of the sandwich.
pub fn lambda_bar_n_delta<T: Scalar>(
    kernel: &TransitionKernel<T>,
    grid: &StateGrid<T>,
    inst: &TruncatedReward<T>,
    f: &RewardSpec<T>,
    delta: T,
    params: &ErgodicParams<T>,
) -> Result<T> {
    let diff: Vec<T> = f
        .values()
        .iter()
        .zip(inst.f_n.values())
        .map(|(&a, &b)| a - b)
        .collect();
    auxiliary_value(kernel, grid, diff, delta, params)
}

/// Two-sided bound on the truncation error of the optimal average:
///
/// ```text
/// -lambda_bar_ndelta - delta |f| / (-c_max)
///     <= lambda_bar_nc - lambda_bar
///     <= lambda_tilde2 + delta 2|f| / (-c_max)
/// ```
///
/// Returns the slacks `(diff - lower, upper - diff)`, both of which should
/// be at least `-1e-6` when every input came from a certified solve.
pub fn sandwich_check<T: Scalar>(
    lambda_bar: T,
    lambda_bar_nc: T,
    lambda_bar_ndelta: T,
    lambda_tilde2: T,
    delta: T,
    c_max: T,
    f_norm: T,
) -> Result<(T, T)> {
    if !c_max.is_finite() || c_max >= T::zero() {
        return Err(Error::InvalidInput("impulse cost bound must be negative".into()));
    }
    check_delta(delta, c_max)?;
    let budget = delta * f_norm / (-c_max);
    let diff = lambda_bar_nc - lambda_bar;
    let lower = -lambda_bar_ndelta - budget;
    let upper = lambda_tilde2 + budget * lit::<T>(2.0);
    Ok((diff - lower, upper - diff))
}

/// Default ball ladder: four radii from half of the largest usable radius up
/// to the whole of it, where "usable" leaves room for the collar on both
/// sides of the reference state.
pub fn default_n_ladder<T: Scalar>(grid: &StateGrid<T>) -> Result<Vec<T>> {
    let z = grid.z_point();
    let reach = (z - grid.point(0)).min(grid.point(grid.n() - 1) - z);
    let n_max = reach - T::one();
    if n_max <= T::zero() {
        return Err(Error::InvalidInput(
            "grid too narrow around the reference state for any truncation ball".into(),
        ));
    }
    let half = n_max * lit::<T>(0.5);
    let step = (n_max - half) / lit::<T>(3.0);
    Ok((0..4).map(|k| half + step * lit::<T>(k as f64)).collect())
}

/// Default impulse charges for the auxiliary problems: a quarter and a half
/// of the cheapest real impulse.
pub fn default_delta_ladder<T: Scalar>(c_max: T) -> Vec<T> {
    vec![-c_max * lit::<T>(0.25), -c_max * lit::<T>(0.5)]
}

/// Runs the whole ladder: solves the untruncated problem once, then for
/// every ball radius builds the flattened rewards, measures the outside-time
/// fraction, solves the flattened problem, replays its strategy against the
/// original reward, and closes the sandwich for every impulse charge.
pub fn run_truncation_study<T: Scalar>(
    kernel: &TransitionKernel<T>,
    grid: &StateGrid<T>,
    f: &RewardSpec<T>,
    cost: &CostSpec<T>,
    n_ladder: Option<&[T]>,
    deltas: Option<&[T]>,
    eta_level: Option<T>,
    params: &ErgodicParams<T>,
) -> Result<TruncationReport<T>> {
    let mu = stationary_distribution(kernel)?;
    let full = solve_ergodic_qvi_bisection(kernel, grid, f, cost, None, params)?;
    if full.regime == Regime::DoNothing {
        return Err(Error::Regime(
            "truncation ladder needs an instance where impulses pay off".into(),
        ));
    }
    let lambda_bar = full.lambda;
    let mu_f = full.mu_f;
    let norm = f.sup_norm();
    let c_max = cost.c_max();
    let eta = eta_level.unwrap_or_else(|| mu_f + lit::<T>(0.5) * (lambda_bar - mu_f));

    let default_ns;
    let ns: &[T] = match n_ladder {
        Some(ns) => ns,
        None => {
            default_ns = default_n_ladder(grid)?;
            &default_ns
        }
    };
    let default_deltas;
    let ds: &[T] = match deltas {
        Some(ds) => ds,
        None => {
            default_deltas = default_delta_ladder(c_max);
            &default_deltas
        }
    };
    if ns.is_empty() || ds.is_empty() {
        return Err(Error::InvalidInput("empty truncation ladder".into()));
    }

    let tol_region = default_tol_region(norm);
    let mut rows = Vec::with_capacity(ns.len() * ds.len());
    for &n_radius in ns {
        let inst = build_truncations(f, grid, &mu, n_radius, eta)?;
        let ratio_c = assumption_c_ratio(kernel, grid, n_radius)?;
        let sol_nc = lambda_n_c(kernel, grid, &inst, cost, params)?;
        let policy = extract_policy(&sol_nc, cost, tol_region)?;
        let (_, lambda_transfer) = policy_average(&policy, kernel, f.values(), cost)?;
        for &delta in ds {
            check_delta(delta, c_max)?;
            let lambda_tilde = lambda_tilde_n_delta(kernel, grid, &inst, delta, params)?;
            let lambda_tilde2 = lambda_tilde2_n_delta(kernel, grid, &inst, f, delta, params)?;
            let lambda_bar_ndelta = lambda_bar_n_delta(kernel, grid, &inst, f, delta, params)?;
            let (slack_lo, slack_hi) = sandwich_check(
                lambda_bar,
                sol_nc.lambda,
                lambda_bar_ndelta,
                lambda_tilde2,
                delta,
                c_max,
                norm,
            )?;
            rows.push(TruncationRow {
                n_radius,
                delta,
                ratio_c,
                lambda_bar_nc: sol_nc.lambda,
                lambda_transfer,
                lambda_tilde,
                lambda_tilde2,
                lambda_bar_ndelta,
                slack_lo,
                slack_hi,
            });
        }
    }
    Ok(TruncationReport { lambda_bar, mu_f, eta_level: eta, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::build_custom_kernel;
    use crate::stopping::evaluate_stopping_policy;

    fn uniform2() -> TransitionKernel<f64> {
        build_custom_kernel(vec![0.5, 0.5, 0.5, 0.5], 2, 1.0).unwrap()
    }

    /// 9-state lazy reflecting walk on the integer points -4..=4.
    fn walk9() -> (TransitionKernel<f64>, StateGrid<f64>) {
        let n = 9;
        let mut p = vec![0.0; n * n];
        for i in 0..n {
            if i == 0 {
                p[0] = 0.75;
                p[1] = 0.25;
            } else if i == n - 1 {
                p[i * n + i] = 0.75;
                p[i * n + i - 1] = 0.25;
            } else {
                p[i * n + i] = 0.5;
                p[i * n + i - 1] = 0.25;
                p[i * n + i + 1] = 0.25;
            }
        }
        let kernel = build_custom_kernel(p, n, 1.0).unwrap();
        let points: Vec<f64> = (0..n).map(|i| i as f64 - 4.0).collect();
        let grid = StateGrid::new(points, 4, 4, 4).unwrap();
        (kernel, grid)
    }

    /// Reward with a tall peak at z, a moat of zeros, and level 2.5 outside.
    fn peaked_reward() -> RewardSpec<f64> {
        RewardSpec::new(vec![2.5, 2.5, 0.0, 0.0, 10.0, 0.0, 0.0, 2.5, 2.5]).unwrap()
    }

    #[test]
    fn hat_blend_has_plateau_collar_and_tail() {
        let points: Vec<f64> = (0..9).map(|i| i as f64 - 4.0).collect();
        let grid = StateGrid::new(points, 4, 4, 4).unwrap();
        let f = RewardSpec::new(vec![0.5, 0.8, 1.2, 1.8, 2.0, 1.7, 1.1, 0.9, 0.6]).unwrap();
        let mu = vec![1.0 / 9.0; 9];
        let eta = 1.4;
        let inst = build_truncations(&f, &grid, &mu, 1.5, eta).unwrap();
        let fv = f.values();
        let fnv = inst.f_n.values();
        // Plateau: |x| <= 1.5 keeps the original reward.
        for i in 3..=5 {
            assert_eq!(fnv[i], fv[i]);
        }
        // Collar point at |x| = 2 blends half and half.
        assert!((fnv[2] - 0.5 * (fv[2] + eta)).abs() < 1e-15);
        assert!((fnv[6] - 0.5 * (fv[6] + eta)).abs() < 1e-15);
        // Tail: |x| >= 2.5 sits at the flat level.
        for i in [0, 1, 7, 8] {
            assert_eq!(fnv[i], eta);
        }
        // The raised companion dominates and tops out at sup|f| + 1 exactly.
        let high = f.sup_norm() + 1.0;
        for (a, b) in inst.f_tilde_n.values().iter().zip(fnv) {
            assert!(a >= b);
        }
        assert_eq!(inst.f_tilde_n.sup_norm(), high);
        assert_eq!(inst.f_tilde_n.values()[0], high);
    }

    #[test]
    fn build_rejects_bad_level_and_oversized_ball() {
        let points: Vec<f64> = (0..9).map(|i| i as f64 - 4.0).collect();
        let grid = StateGrid::new(points, 4, 4, 4).unwrap();
        let f = peaked_reward();
        let mu = vec![1.0 / 9.0; 9];
        // Level at or below the mean, or at or above the sup, is rejected.
        let mu_f = f.mean_under(&mu);
        assert!(matches!(
            build_truncations(&f, &grid, &mu, 2.0, mu_f),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            build_truncations(&f, &grid, &mu, 2.0, 10.0),
            Err(Error::InvalidInput(_))
        ));
        // Ball plus collar must fit: radius 3.5 needs |x| up to 4.5.
        assert!(matches!(
            build_truncations(&f, &grid, &mu, 3.5, 2.5),
            Err(Error::InvalidInput(_))
        ));
        assert!(build_truncations(&f, &grid, &mu, 3.0, 2.5).is_ok());
    }

    /// Largest outside-time fraction over stationary stopping sets and the
    /// run-forever limit, by direct enumeration.  Small chains only.
    fn brute_force_ratio(
        kernel: &TransitionKernel<f64>,
        grid: &StateGrid<f64>,
        outside: &[bool],
    ) -> f64 {
        let n = kernel.n();
        let dt = kernel.dt();
        let time: Vec<f64> = vec![dt; n];
        let off: Vec<f64> = outside.iter().map(|&o| if o { dt } else { 0.0 }).collect();
        let zero = vec![0.0; n];
        let mu = stationary_distribution(kernel).unwrap();
        let mut best: f64 = outside
            .iter()
            .zip(&mu)
            .filter(|(&o, _)| o)
            .map(|(_, &m)| m)
            .sum();
        for bits in 1..(1u32 << n) {
            let mask: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
            let e_tau = evaluate_stopping_policy(kernel, &time, &zero, &mask, 0.0).unwrap();
            let e_off = evaluate_stopping_policy(kernel, &off, &zero, &mask, 0.0).unwrap();
            for x in grid.u_indices() {
                if e_tau[x] > 0.0 {
                    best = best.max(e_off[x] / e_tau[x]);
                }
            }
        }
        best
    }

    #[test]
    fn outside_fraction_on_two_states_is_one_half() {
        let kernel = uniform2();
        let grid = StateGrid::indexed(2, 0, 0, 0).unwrap();
        let ratio = assumption_c_ratio(&kernel, &grid, 0.0).unwrap();
        assert!((ratio - 0.5).abs() < 2e-6, "got {ratio}");
        let outside = [false, true];
        let oracle = brute_force_ratio(&kernel, &grid, &outside);
        assert!((ratio - oracle).abs() < 2e-6);
    }

    #[test]
    fn outside_fraction_is_zero_when_the_ball_covers_everything() {
        let kernel = uniform2();
        let grid = StateGrid::indexed(2, 0, 0, 0).unwrap();
        assert_eq!(assumption_c_ratio(&kernel, &grid, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn outside_fraction_matches_enumeration_on_three_states() {
        let p = vec![0.6, 0.3, 0.1, 0.2, 0.6, 0.2, 0.1, 0.3, 0.6];
        let kernel = build_custom_kernel(p, 3, 1.0).unwrap();
        let grid = StateGrid::indexed(3, 0, 1, 0).unwrap();
        let ratio = assumption_c_ratio(&kernel, &grid, 1.0).unwrap();
        let outside = [false, false, true];
        let oracle = brute_force_ratio(&kernel, &grid, &outside);
        assert!((ratio - oracle).abs() < 2e-6, "got {ratio}, oracle {oracle}");
    }

    #[test]
    fn flat_tail_reward_truncates_to_itself() {
        let (kernel, grid) = walk9();
        let f = peaked_reward();
        let mu = stationary_distribution(&kernel).unwrap();
        let cost = CostSpec::constant(-0.05, 9, vec![4]).unwrap();
        let params = ErgodicParams::default();
        // Radius 2 covers every state where f differs from the tail level,
        // and the collar lands on points already at that level, so the
        // flattened reward reproduces f exactly.
        let inst = build_truncations(&f, &grid, &mu, 2.0, 2.5).unwrap();
        assert_eq!(inst.f_n.values(), f.values());
        let full = solve_ergodic_qvi_bisection(&kernel, &grid, &f, &cost, None, &params).unwrap();
        let sol_nc = lambda_n_c(&kernel, &grid, &inst, &cost, &params).unwrap();
        assert!((sol_nc.lambda - full.lambda).abs() < 1e-13);
        assert!(sol_nc.lambda > 2.5);
    }

    #[test]
    fn expensive_cost_fails_the_level_certification() {
        let (kernel, grid) = walk9();
        let f = peaked_reward();
        let mu = stationary_distribution(&kernel).unwrap();
        // Impulses at -50 never pay, so the flattened optimum collapses to
        // the stationary mean, which sits below the boundary level.
        let cost = CostSpec::constant(-50.0, 9, vec![4]).unwrap();
        let inst = build_truncations(&f, &grid, &mu, 2.0, 2.5).unwrap();
        let out = lambda_n_c(&kernel, &grid, &inst, &cost, &ErgodicParams::default());
        assert!(matches!(out, Err(Error::BoundViolation { .. })), "got {out:?}");
    }

    #[test]
    fn sandwich_rejects_degenerate_charges() {
        assert!(matches!(
            sandwich_check(1.0, 1.0, 0.0, 0.0, 0.0, -0.5, 1.0),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            sandwich_check(1.0, 1.0, 0.0, 0.0, 0.5, -0.5, 1.0),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            sandwich_check(1.0, 1.0, 0.0, 0.0, 0.1, 0.0, 1.0),
            Err(Error::InvalidInput(_))
        ));
        let (lo, hi) = sandwich_check(1.0f64, 1.2, -0.1, 0.3, 0.25, -4.0, 2.0).unwrap();
        // diff = 0.2, lower arm = 0.1 - 0.125 = -0.025, upper = 0.3 + 0.25.
        assert!((lo - 0.225).abs() < 1e-12);
        assert!((hi - 0.35).abs() < 1e-12);
    }

    #[test]
    fn ladder_study_closes_the_sandwich_on_the_walk() {
        let (kernel, grid) = walk9();
        let f = peaked_reward();
        let cost = CostSpec::constant(-0.05, 9, vec![4]).unwrap();
        let params = ErgodicParams::default();
        let report =
            run_truncation_study(&kernel, &grid, &f, &cost, None, None, None, &params).unwrap();
        assert_eq!(report.rows.len(), 8);
        assert!(report.eta_level > report.mu_f);
        assert!(report.eta_level < f.sup_norm());
        for row in &report.rows {
            assert!(row.slack_lo >= -1e-6, "lower slack {}", row.slack_lo);
            assert!(row.slack_hi >= -1e-6, "upper slack {}", row.slack_hi);
            assert!(row.lambda_tilde >= -1e-9);
            assert!(row.lambda_tilde2 >= -1e-9);
            assert!(row.lambda_transfer <= report.lambda_bar + 1e-9);
        }
        // The outside-time fraction shrinks as the ball grows.
        let ns: Vec<f64> = {
            let mut v: Vec<f64> = report.rows.iter().map(|r| r.n_radius).collect();
            v.dedup();
            v
        };
        let ratios: Vec<f64> = ns
            .iter()
            .map(|&nr| {
                report.rows.iter().find(|r| r.n_radius == nr).unwrap().ratio_c
            })
            .collect();
        for pair in ratios.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "ratios {ratios:?}");
        }
    }

    #[test]
    fn study_refuses_a_do_nothing_instance() {
        let (kernel, grid) = walk9();
        let f = peaked_reward();
        let cost = CostSpec::constant(-50.0, 9, vec![4]).unwrap();
        let out =
            run_truncation_study(&kernel, &grid, &f, &cost, None, None, None, &ErgodicParams::default());
        assert!(matches!(out, Err(Error::Regime(_))), "got {out:?}");
    }
}
