//! Shared fixtures for the integration suites: deterministic random model
//! generation and brute-force oracles that never touch the solver code
//! paths they are judging.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ergimp::chain::{build_custom_kernel, StateGrid, TransitionKernel};
use ergimp::cost::CostSpec;
use ergimp::potentials::{delta_eff, discount_factor, RewardSpec};

pub struct SmallInstance {
    pub kernel: TransitionKernel<f64>,
    pub grid: StateGrid<f64>,
    pub f: RewardSpec<f64>,
    pub cost: CostSpec<f64>,
    pub alpha: f64,
}

/// Draws a fully random chain with `n <= 3` states and a window of at most
/// two relocation targets.  Rows are strictly positive, so every policy
/// induces an irreducible chain and the oracles below are well posed.
pub fn random_small_instance(rng: &mut ChaCha8Rng) -> SmallInstance {
    let n = [2usize, 3, 3, 2][rng.gen_range(0..4)];
    let dt = [0.25, 0.5, 1.0, 1.3][rng.gen_range(0..4)];
    let mut rows = Vec::with_capacity(n * n);
    for _ in 0..n {
        let raw: Vec<f64> = (0..n).map(|_| -(rng.gen::<f64>().max(1e-12)).ln()).collect();
        let s: f64 = raw.iter().sum();
        rows.extend(raw.iter().map(|r| r / s));
    }
    let kernel = build_custom_kernel(rows, n, dt).unwrap();

    let u_len = if n == 1 { 1 } else { rng.gen_range(1..=2usize.min(n)) };
    let u_lo = rng.gen_range(0..=(n - u_len));
    let u_hi = u_lo + u_len - 1;
    let z = rng.gen_range(u_lo..=u_hi);
    let grid = StateGrid::indexed(n, u_lo, u_hi, z).unwrap();
    let u_indices: Vec<usize> = (u_lo..=u_hi).collect();

    let f = RewardSpec::new((0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
    // Separated parts keep the chaining inequality automatic: the cross
    // terms cancel and what remains is a single strictly negative cost.
    let d: Vec<f64> = (0..n).map(|_| -0.05 - 0.5 * rng.gen::<f64>()).collect();
    let e: Vec<f64> = (0..u_len).map(|_| -0.05 - 0.5 * rng.gen::<f64>()).collect();
    let cost = CostSpec::separated(d, e, n, u_indices).unwrap();

    let alpha = rng.gen_range(0.05..1.5);
    SmallInstance { kernel, grid, f, cost, alpha }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Plain Gaussian elimination with partial pivoting, local to the tests so
/// oracle values share nothing with the library's linear algebra.
fn dense_solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if m[r * n + col].abs() > m[piv * n + col].abs() {
                piv = r;
            }
        }
        if m[piv * n + col].abs() < 1e-12 {
            return None;
        }
        if piv != col {
            for c in 0..n {
                m.swap(col * n + c, piv * n + c);
            }
            x.swap(col, piv);
        }
        for r in (col + 1)..n {
            let factor = m[r * n + col] / m[col * n + col];
            for c in col..n {
                m[r * n + c] -= factor * m[col * n + c];
            }
            x[r] -= factor * x[col];
        }
    }
    for r in (0..n).rev() {
        let mut acc = x[r];
        for c in (r + 1)..n {
            acc -= m[r * n + c] * x[c];
        }
        x[r] = acc / m[r * n + r];
    }
    Some(x)
}

/// Every stationary impulse policy as (mask, target column per state).
/// Choice 0 is "continue", choice k >= 1 relocates to window column k - 1.
fn all_policies(n: usize, m: usize) -> Vec<(Vec<bool>, Vec<usize>)> {
    let choices = m + 1;
    let total = choices.pow(n as u32);
    let mut out = Vec::with_capacity(total);
    for code in 0..total {
        let mut c = code;
        let mut mask = vec![false; n];
        let mut cols = vec![0usize; n];
        for i in 0..n {
            let pick = c % choices;
            c /= choices;
            if pick > 0 {
                mask[i] = true;
                cols[i] = pick - 1;
            }
        }
        out.push((mask, cols));
    }
    out
}

/// Exhaustive discounted oracle: the value of each stationary policy solves
/// a linear system (continue rows are one dynamic-programming step, impulse
/// rows tie the state to its target), and the optimum is the pointwise
/// maximum.  Policies whose impulse chains never reach a continuation state
/// have no finite value and are skipped.
pub fn brute_force_discounted(inst: &SmallInstance) -> Vec<f64> {
    let n = inst.kernel.n();
    let m = inst.cost.m();
    let beta = discount_factor(inst.alpha, inst.kernel.dt());
    let delta = delta_eff(inst.alpha, inst.kernel.dt());
    let mut best = vec![f64::NEG_INFINITY; n];
    for (mask, cols) in all_policies(n, m) {
        let mut a = vec![0.0; n * n];
        let mut b = vec![0.0; n];
        for x in 0..n {
            if mask[x] {
                let tgt = inst.cost.u_global(cols[x]);
                a[x * n + x] += 1.0;
                a[x * n + tgt] -= 1.0;
                b[x] = inst.cost.cost(x, cols[x]);
            } else {
                a[x * n + x] += 1.0;
                for (y, &p) in inst.kernel.row(x).iter().enumerate() {
                    a[x * n + y] -= beta * p;
                }
                b[x] = inst.f.values()[x] * delta;
            }
        }
        if let Some(v) = dense_solve(&a, &b, n) {
            if v.iter().all(|x| x.is_finite()) {
                for i in 0..n {
                    best[i] = best[i].max(v[i]);
                }
            }
        }
    }
    best
}

/// Exhaustive long-run-average oracle under the engine's step order: one
/// impulse at most per step, reward accrued at the post-impulse state, cost
/// charged at the pre-impulse state.  The stationary law of the controlled
/// chain comes from damped power iteration, nothing shared with the solver.
pub fn brute_force_ergodic(inst: &SmallInstance) -> f64 {
    let n = inst.kernel.n();
    let m = inst.cost.m();
    let dt = inst.kernel.dt();
    let mut best = f64::NEG_INFINITY;
    for (mask, cols) in all_policies(n, m) {
        if mask.iter().all(|&b| b) {
            continue;
        }
        let resolved: Vec<usize> = (0..n)
            .map(|y| if mask[y] { inst.cost.u_global(cols[y]) } else { y })
            .collect();
        // Controlled kernel on arrival states.
        let mut pstar = vec![0.0; n * n];
        for y in 0..n {
            for (yp, &p) in inst.kernel.row(resolved[y]).iter().enumerate() {
                pstar[y * n + yp] = p;
            }
        }
        let mut pi = vec![1.0 / n as f64; n];
        for _ in 0..200_000 {
            let mut next = vec![0.0; n];
            for y in 0..n {
                for yp in 0..n {
                    next[yp] += pi[y] * pstar[y * n + yp];
                }
            }
            let mut diff = 0.0;
            for y in 0..n {
                next[y] = 0.5 * next[y] + 0.5 * pi[y];
                diff += (next[y] - pi[y]).abs();
            }
            pi = next;
            if diff < 1e-15 {
                break;
            }
        }
        let mut gain = 0.0;
        for y in 0..n {
            let fire_cost = if mask[y] { inst.cost.cost(y, cols[y]) } else { 0.0 };
            gain += pi[y] * (inst.f.values()[resolved[y]] * dt + fire_cost);
        }
        best = best.max(gain / dt);
    }
    best
}
