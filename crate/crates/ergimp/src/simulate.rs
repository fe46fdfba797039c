//! Monte Carlo execution of a fixed impulse policy.
//!
//! Paths follow the same step semantics as the solvers: impulse first when
//! the current state is marked (cost charged there), then reward accrual at
//! the relocated state for `dt`, then a kernel transition.  Per-path streams
//! come from one ChaCha8 master seed with the path index as the stream
//! number, so results are reproducible bit for bit regardless of how paths
//! are distributed over worker threads; aggregation always runs in path
//! order with pairwise summation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::TransitionKernel;
use crate::cost::CostSpec;
use crate::discounted::CheckOutcome;
use crate::potentials::delta_eff;
use crate::scalar::{lit, pairwise_sum, Scalar};
use crate::strategy::ImpulsePolicy;
use crate::{Error, Result};

/// Raw per-path outcomes.
#[derive(Debug, Clone)]
pub struct PathRecord<T> {
    /// Time-average of accrued reward plus impulse costs at T/4, T/2, T.
    pub partial_averages: [T; 3],
    pub impulse_count: u64,
    /// Discounted total (costs and accrual, discounted per step) for each
    /// requested discount rate.
    pub discounted: Vec<T>,
}

impl<T: Scalar> PathRecord<T> {
    pub fn final_average(&self) -> T {
        self.partial_averages[2]
    }
}

/// Everything the estimators need, kept per path (plus pooled cycles).
#[derive(Debug, Clone)]
pub struct SimulationPaths<T> {
    pub n_paths: usize,
    pub horizon: T,
    pub dt: T,
    pub start: usize,
    pub seed: u64,
    pub alphas: Vec<T>,
    pub records: Vec<PathRecord<T>>,
    /// Completed impulse cycles pooled over paths in path order:
    /// (duration, integrated reward plus the ending impulse cost).
    pub cycles: Vec<(T, T)>,
}

#[derive(Debug, Clone)]
pub struct SimulateOptions<T> {
    /// Discount rates for per-path discounted totals.  Keep
    /// `alpha * horizon` large so the tail beyond the horizon is
    /// negligible.
    pub alphas: Vec<T>,
    /// Pool completed cycles for the renewal estimator.  Disable for
    /// wasteful probe policies where the pool would dwarf the estimates.
    pub collect_cycles: bool,
    /// Worker thread cap; `None` picks a sensible default.  Has no effect
    /// on the numbers produced.
    pub threads: Option<usize>,
}

impl<T> Default for SimulateOptions<T> {
    fn default() -> Self {
        SimulateOptions { alphas: Vec::new(), collect_cycles: true, threads: None }
    }
}

/// Aggregate report; half-widths are 95% normal intervals across paths.
#[derive(Debug, Clone)]
pub struct SimulationReport<T> {
    pub n_paths: usize,
    pub horizon: T,
    pub start: usize,
    pub seed: u64,
    pub j_estimate: T,
    pub j_half_width: T,
    /// Renewal-ratio estimate over pooled cycles, absent without cycles.
    pub j_hat_estimate: Option<T>,
    pub j_hat_half_width: Option<T>,
    /// Mean of the partial averages at T/4, T/2, T; exposes slow
    /// convergence instead of hiding it in a single number.
    pub partial_averages: [T; 3],
    pub impulse_rate: T,
    pub cycles_completed: u64,
    /// `(alpha, mean discounted total, half-width)` per requested rate.
    pub discounted: Vec<(T, T, T)>,
}

struct PathOutput<T> {
    record: PathRecord<T>,
    cycles: Vec<(T, T)>,
}

/// Compensated accumulator for long per-path sums.
struct Kahan<T> {
    sum: T,
    carry: T,
}

impl<T: Scalar> Kahan<T> {
    fn new() -> Self {
        Kahan { sum: T::zero(), carry: T::zero() }
    }

    fn add(&mut self, x: T) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

fn run_one_path<T: Scalar>(
    kernel: &TransitionKernel<T>,
    cdf: &[T],
    policy: &ImpulsePolicy<T>,
    f: &[T],
    cost: &CostSpec<T>,
    steps: usize,
    start: usize,
    seed: u64,
    path_id: u64,
    alphas: &[T],
    collect_cycles: bool,
) -> PathOutput<T> {
    let n = kernel.n();
    let dt = kernel.dt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_id);

    let betas: Vec<T> = alphas.iter().map(|&a| (-a * dt).exp()).collect();
    let deltas: Vec<T> = alphas.iter().map(|&a| delta_eff(a, dt)).collect();
    let mut disc: Vec<Kahan<T>> = alphas.iter().map(|_| Kahan::new()).collect();
    let mut disc_pow: Vec<T> = alphas.iter().map(|_| T::one()).collect();

    let mut total = Kahan::new();
    let mut partials = [T::zero(); 3];
    let checkpoints = [steps / 4, steps / 2, steps];
    let mut impulses = 0u64;
    let mut cycles = Vec::new();
    let mut cycle_reward = Kahan::new();
    let mut cycle_steps = 0usize;

    let mut x = start;
    for k in 0..steps {
        if policy.fires(x) {
            let col = policy.target_map()[x];
            let c = cost.cost(x, col);
            total.add(c);
            for (i, d) in disc.iter_mut().enumerate() {
                d.add(disc_pow[i] * c);
            }
            if collect_cycles {
                cycle_reward.add(c);
                cycles.push((lit::<T>(cycle_steps as f64) * dt, cycle_reward.sum));
                cycle_reward = Kahan::new();
                cycle_steps = 0;
            }
            impulses += 1;
        }
        let y = policy.relocate(x);
        let accrued = f[y] * dt;
        total.add(accrued);
        if collect_cycles {
            cycle_reward.add(accrued);
            cycle_steps += 1;
        }
        for (i, d) in disc.iter_mut().enumerate() {
            d.add(disc_pow[i] * f[y] * deltas[i]);
            disc_pow[i] *= betas[i];
        }
        for (c, &kp) in checkpoints.iter().enumerate() {
            if k + 1 == kp {
                partials[c] = total.sum / (lit::<T>(kp as f64) * dt);
            }
        }
        let u: T = lit(rng.gen::<f64>());
        let row = &cdf[y * n..(y + 1) * n];
        let next = row.partition_point(|&c| c <= u);
        x = next.min(n - 1);
    }
    PathOutput {
        record: PathRecord {
            partial_averages: partials,
            impulse_count: impulses,
            discounted: disc.into_iter().map(|d| d.sum).collect(),
        },
        cycles,
    }
}

/// Simulates `n_paths` independent controlled paths over `[0, horizon]`.
pub fn simulate_paths<T: Scalar>(
    kernel: &TransitionKernel<T>,
    policy: &ImpulsePolicy<T>,
    f: &[T],
    cost: &CostSpec<T>,
    horizon: T,
    n_paths: usize,
    seed: u64,
    start: usize,
    opts: &SimulateOptions<T>,
) -> Result<SimulationPaths<T>> {
    let n = kernel.n();
    let dt = kernel.dt();
    if policy.n() != n || f.len() != n || cost.n() != n {
        return Err(Error::InvalidInput("model component sizes disagree".into()));
    }
    if start >= n {
        return Err(Error::InvalidInput(format!("start state {start} out of range")));
    }
    if n_paths < 2 {
        return Err(Error::InvalidInput("need at least 2 paths for a variance".into()));
    }
    if !(horizon >= lit::<T>(100.0) * dt) {
        return Err(Error::InvalidInput(
            "horizon shorter than 100 steps gives meaningless averages".into(),
        ));
    }
    if opts.alphas.iter().any(|&a| !(a > T::zero())) {
        return Err(Error::InvalidInput("discount rates must be positive".into()));
    }
    let steps = (horizon / dt).round().to_usize().unwrap_or(0);
    if steps == 0 {
        return Err(Error::InvalidInput("empty horizon".into()));
    }

    // Row CDFs once; sampling is then a binary search per step.
    let mut cdf = vec![T::zero(); n * n];
    for i in 0..n {
        let mut acc = T::zero();
        for j in 0..n {
            acc += kernel.entry(i, j);
            cdf[i * n + j] = acc;
        }
        cdf[i * n + n - 1] = T::infinity();
    }

    let threads = opts
        .threads
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1)
        })
        .clamp(1, n_paths);

    let mut outputs: Vec<Option<PathOutput<T>>> = Vec::with_capacity(n_paths);
    outputs.resize_with(n_paths, || None);
    {
        let chunk = n_paths.div_ceil(threads);
        let cdf = &cdf;
        std::thread::scope(|scope| {
            for (t, slot_chunk) in outputs.chunks_mut(chunk).enumerate() {
                let first = t * chunk;
                scope.spawn(move || {
                    for (off, slot) in slot_chunk.iter_mut().enumerate() {
                        let pid = (first + off) as u64;
                        *slot = Some(run_one_path(
                            kernel,
                            cdf,
                            policy,
                            f,
                            cost,
                            steps,
                            start,
                            seed,
                            pid,
                            &opts.alphas,
                            opts.collect_cycles,
                        ));
                    }
                });
            }
        });
    }

    let mut records = Vec::with_capacity(n_paths);
    let mut cycles = Vec::new();
    for out in outputs.into_iter() {
        let out = out.expect("every path slot filled");
        records.push(out.record);
        cycles.extend(out.cycles);
    }
    Ok(SimulationPaths {
        n_paths,
        horizon: lit::<T>(steps as f64) * dt,
        dt,
        start,
        seed,
        alphas: opts.alphas.clone(),
        records,
        cycles,
    })
}

fn mean_and_half_width<T: Scalar>(values: &[T]) -> (T, T) {
    let n = values.len();
    let mean = pairwise_sum(values) / lit::<T>(n as f64);
    let sq: Vec<T> = values.iter().map(|&v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / lit::<T>((n - 1) as f64);
    let half = lit::<T>(1.96) * (var / lit::<T>(n as f64)).sqrt();
    (mean, half)
}

impl<T: Scalar> SimulationPaths<T> {
    pub fn report(&self) -> SimulationReport<T> {
        let finals: Vec<T> = self.records.iter().map(|r| r.final_average()).collect();
        let (j, jh) = mean_and_half_width(&finals);
        let mut partials = [T::zero(); 3];
        for c in 0..3 {
            let vals: Vec<T> = self.records.iter().map(|r| r.partial_averages[c]).collect();
            partials[c] = pairwise_sum(&vals) / lit::<T>(self.n_paths as f64);
        }
        let total_impulses: u64 = self.records.iter().map(|r| r.impulse_count).sum();
        let impulse_rate =
            lit::<T>(total_impulses as f64) / (lit::<T>(self.n_paths as f64) * self.horizon);
        let mut discounted = Vec::with_capacity(self.alphas.len());
        for (i, &a) in self.alphas.iter().enumerate() {
            let vals: Vec<T> = self.records.iter().map(|r| r.discounted[i]).collect();
            let (m, h) = mean_and_half_width(&vals);
            discounted.push((a, m, h));
        }
        let (j_hat, j_hat_h) = match estimate_j_hat(self) {
            Ok((m, h)) => (Some(m), Some(h)),
            Err(_) => (None, None),
        };
        SimulationReport {
            n_paths: self.n_paths,
            horizon: self.horizon,
            start: self.start,
            seed: self.seed,
            j_estimate: j,
            j_half_width: jh,
            j_hat_estimate: j_hat,
            j_hat_half_width: j_hat_h,
            partial_averages: partials,
            impulse_rate,
            cycles_completed: self.cycles.len() as u64,
            discounted,
        }
    }
}

/// Renewal-reward estimator over pooled completed cycles with a jackknife
/// interval (cycles are the natural independence unit here, not paths).
pub fn estimate_j_hat<T: Scalar>(paths: &SimulationPaths<T>) -> Result<(T, T)> {
    let cycles = &paths.cycles;
    if cycles.len() < 2 {
        return Err(Error::Degenerate(
            "horizon too short: fewer than two completed impulse cycles".into(),
        ));
    }
    let durs: Vec<T> = cycles.iter().map(|c| c.0).collect();
    let rews: Vec<T> = cycles.iter().map(|c| c.1).collect();
    let sl = pairwise_sum(&durs);
    let sy = pairwise_sum(&rews);
    if !(sl > T::zero()) {
        return Err(Error::Degenerate("cycles carry no elapsed time".into()));
    }
    let m = cycles.len();
    let ratio = sy / sl;
    let mut jack = Vec::with_capacity(m);
    for i in 0..m {
        jack.push((sy - rews[i]) / (sl - durs[i]));
    }
    let jbar = pairwise_sum(&jack) / lit::<T>(m as f64);
    let sq: Vec<T> = jack.iter().map(|&r| (r - jbar) * (r - jbar)).collect();
    let var = pairwise_sum(&sq) * lit::<T>((m - 1) as f64) / lit::<T>(m as f64);
    Ok((ratio, lit::<T>(1.96) * var.sqrt()))
}

/// Tauberian comparison on the same paths: the finite-horizon average must
/// not exceed the scaled discounted totals beyond combined noise.
pub fn tauberian_check<T: Scalar>(paths: &SimulationPaths<T>) -> Result<CheckOutcome<T>> {
    if paths.alphas.is_empty() {
        return Err(Error::InvalidInput(
            "no discount rates were recorded during simulation".into(),
        ));
    }
    let report = paths.report();
    let lhs = report.j_estimate;
    let lhs_h = report.j_half_width;
    let mut rhs = T::infinity();
    let mut rhs_h = T::zero();
    for &(a, m, h) in &report.discounted {
        let scaled = a * m;
        if scaled < rhs {
            rhs = scaled;
            rhs_h = a * h;
        }
    }
    let slack = rhs + lit::<T>(2.0) * (lhs_h + rhs_h) - lhs;
    Ok(CheckOutcome {
        id: "tauberian",
        passed: slack >= T::zero(),
        worst_slack: slack,
        witness_state: None,
    })
}

/// Empirical impulse-rate budget check.  Only meaningful for policies close
/// to optimal (the budget comes from what an optimal strategy can afford),
/// so wasteful probes return `None` rather than a fake verdict.
pub fn impulse_count_check<T: Scalar>(
    paths: &SimulationPaths<T>,
    f: &[T],
    cost: &CostSpec<T>,
    eps_optimal: bool,
) -> Option<CheckOutcome<T>> {
    if !eps_optimal {
        return None;
    }
    let rates: Vec<T> = paths
        .records
        .iter()
        .map(|r| lit::<T>(r.impulse_count as f64) / paths.horizon)
        .collect();
    let (rate, half) = mean_and_half_width(&rates);
    let bound = (crate::scalar::sup_norm(f) + lit::<T>(1e-6)) / (-cost.c_max());
    let slack = bound + half - rate;
    Some(CheckOutcome {
        id: "strbound",
        passed: slack >= T::zero(),
        worst_slack: slack,
        witness_state: None,
    })
}
