//! Executable impulse strategies and their exact statistics.
//!
//! A policy fixes, per state, whether to fire an impulse and where to
//! relocate.  Each step executes at most one impulse: if the current state
//! is marked, pay the cost and jump to the target; then accrue reward at
//! the (possibly relocated) state for `dt` and transition by the kernel.
//! All cycle quantities below are exact expectations from absorbed linear
//! systems, not simulations; the Monte Carlo layer cross-checks them.

use crate::chain::{stationary_distribution, StateGrid, TransitionKernel};
use crate::cost::{CostKind, CostSpec};
use crate::discounted::CheckOutcome;
use crate::ergodic::{ErgodicSolution, Regime};
use crate::linalg::Lu;
use crate::scalar::{lit, pairwise_sum, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct ImpulsePolicy<T> {
    n: usize,
    impulse_mask: Vec<bool>,
    /// Target column (into `u_indices`) per state; meaningful where the
    /// mask is set but filled everywhere for determinism.
    target_map: Vec<usize>,
    /// Global state index of each target column.
    u_indices: Vec<usize>,
    _marker: core::marker::PhantomData<T>,
}

impl<T: Scalar> ImpulsePolicy<T> {
    pub fn new(
        impulse_mask: Vec<bool>,
        target_map: Vec<usize>,
        u_indices: Vec<usize>,
        n: usize,
    ) -> Result<Self> {
        if impulse_mask.len() != n || target_map.len() != n {
            return Err(Error::InvalidInput("policy arrays must have one entry per state".into()));
        }
        if u_indices.is_empty() || u_indices.iter().any(|&i| i >= n) {
            return Err(Error::InvalidInput("relocation targets out of range".into()));
        }
        if target_map.iter().any(|&k| k >= u_indices.len()) {
            return Err(Error::InvalidInput("target column out of range".into()));
        }
        if impulse_mask.iter().all(|&m| m) {
            return Err(Error::InvalidInput(
                "degenerate policy: every state impulses, the continuation region is empty".into(),
            ));
        }
        Ok(ImpulsePolicy {
            n,
            impulse_mask,
            target_map,
            u_indices,
            _marker: core::marker::PhantomData,
        })
    }

    /// Wasteful probe: impulse from every state except the target itself.
    pub fn probe_impulse_everywhere(n: usize, u_indices: Vec<usize>, col: usize) -> Result<Self> {
        if col >= u_indices.len() {
            return Err(Error::InvalidInput("probe target column out of range".into()));
        }
        let tgt = u_indices[col];
        let mask: Vec<bool> = (0..n).map(|i| i != tgt).collect();
        Self::new(mask, vec![col; n], u_indices, n)
    }

    /// Policy that never intervenes.
    pub fn never(n: usize, u_indices: Vec<usize>) -> Result<Self> {
        Self::new(vec![false; n], vec![0; n], u_indices, n)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn impulse_mask(&self) -> &[bool] {
        &self.impulse_mask
    }

    pub fn target_map(&self) -> &[usize] {
        &self.target_map
    }

    pub fn u_indices(&self) -> &[usize] {
        &self.u_indices
    }

    /// The scheme never stacks impulses within a step.
    pub fn one_impulse_per_step(&self) -> bool {
        true
    }

    pub fn fires(&self, state: usize) -> bool {
        self.impulse_mask[state]
    }

    /// Where the state lands after the (optional) impulse.
    pub fn relocate(&self, state: usize) -> usize {
        if self.impulse_mask[state] {
            self.u_indices[self.target_map[state]]
        } else {
            state
        }
    }

    /// Impulse states that relocate onto themselves.  Legal (costs are
    /// strictly negative, so it only burns money) but worth surfacing.
    pub fn self_relocations(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| self.impulse_mask[i] && self.relocate(i) == i)
            .collect()
    }

    pub fn continuation_states(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| !self.impulse_mask[i]).collect()
    }
}

/// Default width of the band around `w = Mw` treated as the impulse region.
pub fn default_tol_region<T: Scalar>(f_sup_norm: T) -> T {
    lit::<T>(1e-8) * (T::one() + f_sup_norm)
}

/// Reads the impulse strategy off a solved average-reward problem: fire
/// wherever the relative value touches the intervention value.
pub fn extract_policy<T: Scalar>(
    sol: &ErgodicSolution<T>,
    cost: &CostSpec<T>,
    tol_region: T,
) -> Result<ImpulsePolicy<T>> {
    if sol.regime == Regime::DoNothing {
        return Err(Error::Regime(
            "do-nothing regime: no impulse strategy to extract".into(),
        ));
    }
    let n = sol.w.len();
    let mask: Vec<bool> = (0..n).map(|i| sol.w[i] - sol.mw[i] <= tol_region).collect();
    ImpulsePolicy::new(mask, sol.target_map.clone(), cost.u_indices().to_vec(), n)
}

/// For a cost whose target part is separable (or constant), the shared
/// relocation point `argmax [w(xi) + e(xi)]`, lowest index on ties.
pub fn separated_target<T: Scalar>(sol: &ErgodicSolution<T>, cost: &CostSpec<T>) -> Option<usize> {
    let e_of = |k: usize| -> T {
        match cost.kind() {
            CostKind::Separated => cost.separated_parts().map(|(_, e)| e[k]).unwrap_or(T::zero()),
            CostKind::Constant => T::zero(),
            CostKind::General => T::zero(),
        }
    };
    if cost.kind() == CostKind::General {
        return None;
    }
    let mut best = 0;
    let mut best_val = T::neg_infinity();
    for (k, &g) in cost.u_indices().iter().enumerate() {
        let val = sol.w[g] + e_of(k);
        if val > best_val {
            best_val = val;
            best = k;
        }
    }
    Some(cost.u_global(best))
}

/// One-step kernel of the controlled chain in pre-impulse labeling:
/// an impulse state moves like its relocation target.
pub fn controlled_kernel<T: Scalar>(
    policy: &ImpulsePolicy<T>,
    kernel: &TransitionKernel<T>,
) -> Result<TransitionKernel<T>> {
    let n = kernel.n();
    if policy.n() != n {
        return Err(Error::InvalidInput("policy and kernel sizes disagree".into()));
    }
    let mut p = vec![T::zero(); n * n];
    for i in 0..n {
        let src = policy.relocate(i);
        p[i * n..(i + 1) * n].copy_from_slice(kernel.row(src));
    }
    TransitionKernel::new(p, n, kernel.dt())
}

/// One-step kernel on reward-accrual states: transition first, then collapse
/// any impulse state onto its target.  Rows are stochastic but impulse
/// states have empty columns, so this is returned as a raw matrix rather
/// than a validated kernel.
pub fn accrual_kernel<T: Scalar>(
    policy: &ImpulsePolicy<T>,
    kernel: &TransitionKernel<T>,
) -> Result<Vec<T>> {
    let n = kernel.n();
    if policy.n() != n {
        return Err(Error::InvalidInput("policy and kernel sizes disagree".into()));
    }
    let mut p = vec![T::zero(); n * n];
    for i in 0..n {
        for (j, &pij) in kernel.row(i).iter().enumerate() {
            p[i * n + policy.relocate(j)] += pij;
        }
    }
    Ok(p)
}

/// Absorbed system on a continuation set: expected visit counts before the
/// first entry into the complement.
struct AbsorbedSystem<'a, T> {
    kernel: &'a TransitionKernel<T>,
    /// Global indices of continuation states, and the inverse map.
    idx: Vec<usize>,
    pos: Vec<Option<usize>>,
    /// `(I - Q)^T` over the continuation block.
    at: Vec<T>,
    lu: Lu<T>,
}

impl<'a, T: Scalar> AbsorbedSystem<'a, T> {
    fn build(kernel: &'a TransitionKernel<T>, absorb_mask: &[bool]) -> Result<Self> {
        let n = kernel.n();
        let idx: Vec<usize> = (0..n).filter(|&i| !absorb_mask[i]).collect();
        if idx.is_empty() {
            return Err(Error::InvalidInput("absorbing set covers every state".into()));
        }
        let m = idx.len();
        let mut pos = vec![None; n];
        for (a, &i) in idx.iter().enumerate() {
            pos[i] = Some(a);
        }
        let q = kernel.gather_submatrix(&idx);
        let mut at = vec![T::zero(); m * m];
        for a in 0..m {
            for b in 0..m {
                let iq = if a == b { T::one() } else { T::zero() } - q[a * m + b];
                at[b * m + a] = iq;
            }
        }
        let lu = Lu::factor(&at, m).map_err(|e| match e {
            Error::Singular(msg) => Error::Singular(format!(
                "absorption never happens from part of the continuation region \
                 (expected cycle length infinite): {msg}"
            )),
            other => other,
        })?;
        Ok(AbsorbedSystem { kernel, idx, pos, at, lu })
    }

    /// Expected visit counts (full-length vector, zeros on absorbing
    /// states), counting the start itself.
    fn visits_from(&self, start: usize) -> Result<Vec<T>> {
        let m = self.idx.len();
        let s = self.pos[start].ok_or_else(|| {
            Error::InvalidInput(format!("start state {start} lies in the absorbing set"))
        })?;
        let mut e = vec![T::zero(); m];
        e[s] = T::one();
        let sol = self.lu.solve_refined(&self.at, &e, 2);
        let mut resid = T::zero();
        for a in 0..m {
            let mut acc = -e[a];
            for b in 0..m {
                acc += self.at[a * m + b] * sol[b];
            }
            resid = resid.max(acc.abs());
        }
        let scale = sol.iter().fold(T::one(), |s, &x| s.max(x.abs()));
        if resid > lit::<T>(1e-10) * scale {
            return Err(Error::Degenerate(format!(
                "absorbed visit system residual {resid:e} exceeds tolerance"
            )));
        }
        let mut full = vec![T::zero(); self.kernel.n()];
        for (a, &i) in self.idx.iter().enumerate() {
            full[i] = sol[a];
        }
        Ok(full)
    }
}

/// Expected occupation of one impulse cycle started at `start`, normalized
/// to a probability vector (time spent per state divided by expected cycle
/// length).  Supported on the continuation region.
pub fn occupation_measure<T: Scalar>(
    policy: &ImpulsePolicy<T>,
    kernel: &TransitionKernel<T>,
    start: usize,
) -> Result<Vec<T>> {
    if !policy.impulse_mask().iter().any(|&m| m) {
        return Err(Error::InvalidInput(
            "policy never impulses; occupation cycles are undefined".into(),
        ));
    }
    let sys = AbsorbedSystem::build(kernel, policy.impulse_mask())?;
    let visits = sys.visits_from(start)?;
    let total = pairwise_sum(&visits);
    Ok(visits.iter().map(|&v| v / total).collect())
}

/// Stationary law of the controlled chain on accrual states.  For a
/// never-impulse policy this is the uncontrolled stationary law; otherwise
/// it is assembled regeneratively: stationary weights of the embedded
/// target-to-target chain mix the per-target cycle occupations.
pub fn invariant_measure<T: Scalar>(
    policy: &ImpulsePolicy<T>,
    kernel: &TransitionKernel<T>,
) -> Result<Vec<T>> {
    let n = kernel.n();
    if !policy.impulse_mask().iter().any(|&m| m) {
        return stationary_distribution(kernel);
    }
    let mut targets: Vec<usize> = (0..n)
        .filter(|&i| policy.impulse_mask()[i])
        .map(|i| policy.relocate(i))
        .collect();
    targets.sort_unstable();
    targets.dedup();
    if let Some(&bad) = targets.iter().find(|&&t| policy.impulse_mask()[t]) {
        return Err(Error::InvalidInput(format!(
            "impulse target {bad} is itself an impulse state; cycles have zero length"
        )));
    }
    let sys = AbsorbedSystem::build(kernel, policy.impulse_mask())?;
    let k = targets.len();
    let mut visit_rows = Vec::with_capacity(k);
    // Embedded chain over targets: chance that a cycle from target a ends
    // with a relocation to target b.
    let mut embed = vec![T::zero(); k * k];
    for (a, &ta) in targets.iter().enumerate() {
        let visits = sys.visits_from(ta)?;
        for (x, &vx) in visits.iter().enumerate() {
            if vx == T::zero() {
                continue;
            }
            for (xp, &p) in kernel.row(x).iter().enumerate() {
                if policy.impulse_mask()[xp] {
                    let tb = policy.relocate(xp);
                    let b = targets.binary_search(&tb).expect("relocation target tracked");
                    embed[a * k + b] += vx * p;
                }
            }
        }
        visit_rows.push(visits);
    }
    // Stationary law of the embedded chain via the bordered system.
    let mut at = vec![T::zero(); k * k];
    for a in 0..k {
        for b in 0..k {
            at[a * k + b] = if a == b { T::one() } else { T::zero() } - embed[b * k + a];
        }
    }
    let ones = vec![T::one(); k];
    let zeros = vec![T::zero(); k];
    let (pi, _) = crate::linalg::solve_bordered(&at, k, &ones, &ones, &zeros, T::one())?;
    let mut nu = vec![T::zero(); n];
    let mut total = T::zero();
    for (a, visits) in visit_rows.iter().enumerate() {
        let weight = pi[a].max(T::zero());
        for (x, &vx) in visits.iter().enumerate() {
            nu[x] += weight * vx;
        }
        total += weight * pairwise_sum(visits);
    }
    for v in nu.iter_mut() {
        *v = *v / total;
    }
    Ok(nu)
}

/// Exact long-run average reward of a fixed policy from its stationary law:
/// reward accrual plus the impulse-cost flow per unit time.
pub fn policy_average<T: Scalar>(
    policy: &ImpulsePolicy<T>,
    kernel: &TransitionKernel<T>,
    f: &[T],
    cost: &CostSpec<T>,
) -> Result<(Vec<T>, T)> {
    let nu = invariant_measure(policy, kernel)?;
    let dt = kernel.dt();
    let mut avg = T::zero();
    for (y, &ny) in nu.iter().enumerate() {
        if ny == T::zero() {
            continue;
        }
        let mut step = f[y] * dt;
        for (xp, &p) in kernel.row(y).iter().enumerate() {
            if policy.impulse_mask()[xp] {
                step += p * cost.cost(xp, policy.target_map()[xp]);
            }
        }
        avg += ny * step;
    }
    Ok((nu, avg / dt))
}

/// Exact statistics of one impulse cycle.
#[derive(Debug, Clone)]
pub struct CycleStats<T> {
    pub start: usize,
    /// `E{time to the first impulse}`, in time units.
    pub expected_cycle_time: T,
    /// `E{integral of f}` plus the expected terminal impulse cost.
    pub expected_cycle_reward: T,
    pub ratio: T,
    /// State and target parts of the terminal cost when it separates.
    pub terminal_d: Option<T>,
    pub terminal_e: Option<T>,
}

/// First-impulse cycle quantities from `start`, by absorbed first-step
/// analysis.  The terminal cost is charged at the pre-impulse state.
pub fn cycle_stats<T: Scalar>(
    policy: &ImpulsePolicy<T>,
    kernel: &TransitionKernel<T>,
    f: &[T],
    cost: &CostSpec<T>,
    start: usize,
) -> Result<CycleStats<T>> {
    if !policy.impulse_mask().iter().any(|&m| m) {
        return Err(Error::Regime(
            "policy never impulses; a cycle has no end".into(),
        ));
    }
    let sys = AbsorbedSystem::build(kernel, policy.impulse_mask())?;
    let visits = sys.visits_from(start)?;
    let dt = kernel.dt();
    let steps = pairwise_sum(&visits);
    let mut integral = T::zero();
    let mut terminal = T::zero();
    let parts = cost.separated_parts();
    let mut term_d = T::zero();
    let mut term_e = T::zero();
    for (x, &vx) in visits.iter().enumerate() {
        if vx == T::zero() {
            continue;
        }
        integral += vx * f[x] * dt;
        for (xp, &p) in kernel.row(x).iter().enumerate() {
            if policy.impulse_mask()[xp] {
                let col = policy.target_map()[xp];
                terminal += vx * p * cost.cost(xp, col);
                if let Some((d, e)) = parts {
                    term_d += vx * p * d[xp];
                    term_e += vx * p * e[col];
                }
            }
        }
    }
    let time = steps * dt;
    let reward = integral + terminal;
    Ok(CycleStats {
        start,
        expected_cycle_time: time,
        expected_cycle_reward: reward,
        ratio: reward / time,
        terminal_d: parts.map(|_| term_d),
        terminal_e: parts.map(|_| term_e),
    })
}

/// Single-excursion ratio for an arbitrary stopping set: start at `start`,
/// absorb on `stop_mask`, pay the relocation cost back to `return_to`.
/// Every such excursion is an admissible stationary strategy, so its ratio
/// can never beat the optimal rate.
pub fn probe_ratio<T: Scalar>(
    kernel: &TransitionKernel<T>,
    f: &[T],
    cost: &CostSpec<T>,
    stop_mask: &[bool],
    start: usize,
    return_to: usize,
) -> Result<T> {
    let col = cost.column_of(return_to).ok_or_else(|| {
        Error::InvalidInput(format!("return state {return_to} is not a relocation target"))
    })?;
    let sys = AbsorbedSystem::build(kernel, stop_mask)?;
    let visits = sys.visits_from(start)?;
    let dt = kernel.dt();
    let mut integral = T::zero();
    let mut terminal = T::zero();
    for (x, &vx) in visits.iter().enumerate() {
        if vx == T::zero() {
            continue;
        }
        integral += vx * f[x] * dt;
        for (xp, &p) in kernel.row(x).iter().enumerate() {
            if stop_mask[xp] {
                terminal += vx * p * cost.cost(xp, col);
            }
        }
    }
    Ok((integral + terminal) / (pairwise_sum(&visits) * dt))
}

/// Ratio characterization of the optimal rate: every window start's
/// return-excursion ratio under the optimal stopping set stays below
/// `lambda`, with equality at the shared target when the cost separates.
pub fn verify_ratio_identity<T: Scalar>(
    sol: &ErgodicSolution<T>,
    policy: &ImpulsePolicy<T>,
    kernel: &TransitionKernel<T>,
    grid: &StateGrid<T>,
    f: &[T],
    cost: &CostSpec<T>,
) -> Result<CheckOutcome<T>> {
    let lambda = sol.lambda;
    let mut slacks: Vec<(usize, T)> = Vec::new();
    for x in grid.u_indices() {
        if policy.impulse_mask()[x] {
            continue;
        }
        let r = probe_ratio(kernel, f, cost, policy.impulse_mask(), x, x)?;
        slacks.push((x, lambda - r));
    }
    if slacks.is_empty() {
        return Err(Error::Degenerate(
            "the impulse region swallows the whole window; no excursion ratios to probe".into(),
        ));
    }
    if let Some(xh) = separated_target(sol, cost) {
        if !policy.impulse_mask()[xh] {
            let r = probe_ratio(kernel, f, cost, policy.impulse_mask(), xh, xh)?;
            slacks.push((xh, r - lambda));
        }
    }
    Ok(CheckOutcome::from_slacks("equiv2", slacks.into_iter(), lit::<T>(1e-6)))
}

/// Stationarity of the occupation measure under the controlled accrual
/// dynamics, reported as an l1 residual check.
pub fn verify_invariant_measure<T: Scalar>(
    policy: &ImpulsePolicy<T>,
    kernel: &TransitionKernel<T>,
    eta: &[T],
) -> Result<CheckOutcome<T>> {
    let n = kernel.n();
    if eta.len() != n {
        return Err(Error::InvalidInput("measure length mismatch".into()));
    }
    let py = accrual_kernel(policy, kernel)?;
    let mut image = vec![T::zero(); n];
    for y in 0..n {
        if eta[y] == T::zero() {
            continue;
        }
        for x in 0..n {
            image[x] += eta[y] * py[y * n + x];
        }
    }
    let l1: T = pairwise_sum(
        &(0..n)
            .map(|x| (image[x] - eta[x]).abs())
            .collect::<Vec<_>>(),
    );
    Ok(CheckOutcome {
        id: "invmeas",
        passed: l1 < lit::<T>(1e-8),
        worst_slack: lit::<T>(1e-8) - l1,
        witness_state: None,
    })
}

/// Long-run impulse rate against the admissible-strategy budget
/// `(sup|f| + eps) / |c_max|`: costlier impulses allow fewer of them.
pub fn impulse_rate_bound_check<T: Scalar>(
    policy: &ImpulsePolicy<T>,
    kernel: &TransitionKernel<T>,
    f: &[T],
    cost: &CostSpec<T>,
) -> Result<CheckOutcome<T>> {
    let nu = invariant_measure(policy, kernel)?;
    let dt = kernel.dt();
    let mut rate = T::zero();
    for (y, &ny) in nu.iter().enumerate() {
        if ny == T::zero() {
            continue;
        }
        for (xp, &p) in kernel.row(y).iter().enumerate() {
            if policy.impulse_mask()[xp] {
                rate += ny * p;
            }
        }
    }
    rate = rate / dt;
    let f_norm = crate::scalar::sup_norm(f);
    let bound = (f_norm + lit::<T>(1e-6)) / (-cost.c_max());
    Ok(CheckOutcome {
        id: "strbound",
        passed: rate <= bound,
        worst_slack: bound - rate,
        witness_state: None,
    })
}
