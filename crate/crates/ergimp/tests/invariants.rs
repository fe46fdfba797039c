//! Cross-module invariants exercised on the built-in instances.  These are
//! the slower structural checks that the per-module unit tests only probe
//! on toy chains.

use ergimp::chain::{expected_hitting_time, stationary_distribution};
use ergimp::ergodic::{solve_ergodic_qvi_bisection, ErgodicParams, Regime};
use ergimp::instances::{all_builtin, ou_default, ou_separated};
use ergimp::potentials::{default_potential_schedule, PotentialTable, RewardSpec};
use ergimp::truncation::{assumption_c_ratio, build_truncations, default_n_ladder, lambda_n_c};

#[test]
fn potentials_center_and_converge_on_every_builtin() {
    for inst in all_builtin() {
        let schedule = default_potential_schedule(inst.kernel.dt());
        let table = PotentialTable::build(&inst.kernel, &inst.reward, &schedule).unwrap();
        let center = |v: &[f64]| -> f64 {
            v.iter().zip(&table.mu).map(|(x, m)| x * m).sum::<f64>().abs()
        };
        assert!(center(&table.q) < 1e-10, "{}: q not centered", inst.name);
        let mut gaps = Vec::new();
        for (a, qa) in schedule.iter().zip(&table.q_alpha) {
            assert!(center(qa) < 1e-10, "{}: q_alpha at {a} not centered", inst.name);
            let gap = qa
                .iter()
                .zip(&table.q)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max);
            gaps.push(gap);
        }
        for pair in gaps.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-12,
                "{}: gap grew from {} to {} as the discount shrank",
                inst.name,
                pair[0],
                pair[1]
            );
        }
        let last = *gaps.last().unwrap();
        assert!(last < 1e-6, "{}: terminal gap {last} too large", inst.name);
    }
}

#[test]
fn solutions_are_normalized_and_dominate_the_mean() {
    for inst in all_builtin() {
        let sol = solve_ergodic_qvi_bisection(
            &inst.kernel,
            &inst.grid,
            &inst.reward,
            &inst.cost,
            None,
            &ErgodicParams::default(),
        )
        .unwrap();
        let z = sol.z_index;
        assert_eq!(sol.w[z].to_bits(), 0.0f64.to_bits(), "{}: w(z) != 0", inst.name);
        // An impulse at the anchor itself would have to be a zero-gain move.
        if sol.impulse_mask[z] {
            assert!(sol.mw[z] >= -1e-8, "{}: anchor impulse loses money", inst.name);
        }
        assert!(
            sol.lambda >= sol.mu_f - 1e-8,
            "{}: lambda {} below the uncontrolled mean {}",
            inst.name,
            sol.lambda,
            sol.mu_f
        );
    }
}

#[test]
fn builtin_kernels_satisfy_the_chain_identities() {
    for inst in all_builtin() {
        let n = inst.kernel.n();
        let mu = stationary_distribution(&inst.kernel).unwrap();
        let mut drift = 0.0f64;
        for j in 0..n {
            let mut col = 0.0;
            for i in 0..n {
                col += mu[i] * inst.kernel.entry(i, j);
            }
            drift += (col - mu[j]).abs();
        }
        assert!(drift < 1e-12, "{}: stationary law drifts by {drift}", inst.name);

        let u_mask: Vec<bool> = (0..n).map(|i| inst.grid.in_u(i)).collect();
        let t = expected_hitting_time(&inst.kernel, &u_mask).unwrap();
        let dt = inst.kernel.dt();
        for x in 0..n {
            if u_mask[x] {
                assert_eq!(t[x], 0.0, "{}: hitting time nonzero on target", inst.name);
                continue;
            }
            let step: f64 = (0..n).map(|y| inst.kernel.entry(x, y) * t[y]).sum();
            assert!(
                (t[x] - dt - step).abs() < 1e-10,
                "{}: one-step identity off by {} at {x}",
                inst.name,
                (t[x] - dt - step).abs()
            );
        }
    }
}

#[test]
fn discounted_shift_moves_the_value_by_the_discounted_rate() {
    use ergimp::discounted::{solve_discounted_qvi, DiscountedParams};
    let k = 0.7;
    for inst in all_builtin() {
        for alpha in [1.0, 0.25] {
            let params = DiscountedParams::default();
            let base = solve_discounted_qvi(
                &inst.kernel, &inst.grid, &inst.reward, &inst.cost, alpha, &params,
            )
            .unwrap();
            let shifted_f =
                RewardSpec::new(inst.reward.values().iter().map(|&v| v + k).collect()).unwrap();
            let shifted = solve_discounted_qvi(
                &inst.kernel, &inst.grid, &shifted_f, &inst.cost, alpha, &params,
            )
            .unwrap();
            for (a, b) in shifted.v.iter().zip(&base.v) {
                assert!(
                    (a - b - k / alpha).abs() < 1e-10,
                    "{} at alpha {alpha}: shift off by {}",
                    inst.name,
                    (a - b - k / alpha).abs()
                );
            }
            assert_eq!(shifted.stop_mask, base.stop_mask, "{}: mask moved", inst.name);
        }
    }
}

#[test]
fn outside_time_fraction_shrinks_along_the_ball_ladder() {
    let inst = ou_default();
    let ladder = default_n_ladder(&inst.grid).unwrap();
    let mut prev = f64::INFINITY;
    for &n_radius in &ladder {
        let ratio = assumption_c_ratio(&inst.kernel, &inst.grid, n_radius).unwrap();
        assert!(ratio >= 0.0);
        assert!(
            ratio <= prev + 1e-12,
            "ratio grew from {prev} to {ratio} at radius {n_radius}"
        );
        prev = ratio;
    }
}

#[test]
fn flattened_rates_stabilize_at_the_top_of_the_ladder() {
    let inst = ou_default();
    let params = ErgodicParams::default();
    let full = solve_ergodic_qvi_bisection(
        &inst.kernel, &inst.grid, &inst.reward, &inst.cost, None, &params,
    )
    .unwrap();
    let eta = full.mu_f + 0.5 * (full.lambda - full.mu_f);
    let mu = stationary_distribution(&inst.kernel).unwrap();
    let ladder = default_n_ladder(&inst.grid).unwrap();
    let top: Vec<f64> = ladder[ladder.len() - 2..]
        .iter()
        .map(|&n_radius| {
            let tr = build_truncations(&inst.reward, &inst.grid, &mu, n_radius, eta).unwrap();
            lambda_n_c(&inst.kernel, &inst.grid, &tr, &inst.cost, &params)
                .unwrap()
                .lambda
        })
        .collect();
    assert!(
        (top[1] - top[0]).abs() < 1e-4,
        "top-of-ladder rates {} and {} disagree",
        top[0],
        top[1]
    );
}

// The weaker functional's route: lift the reward to sup-norm + 1 outside a
// large ball and solve the ordinary problem.  The lift sits where the chain
// barely goes, so the optimal rate has to come back unchanged.
#[test]
fn lifted_reward_route_reproduces_the_optimal_rate() {
    for inst in [ou_default(), ou_separated()] {
        let params = ErgodicParams::default();
        let full = solve_ergodic_qvi_bisection(
            &inst.kernel, &inst.grid, &inst.reward, &inst.cost, None, &params,
        )
        .unwrap();
        assert_eq!(full.regime, Regime::Active, "{}", inst.name);
        let eta = full.mu_f + 0.5 * (full.lambda - full.mu_f);
        let mu = stationary_distribution(&inst.kernel).unwrap();
        let ladder = default_n_ladder(&inst.grid).unwrap();
        let tr = build_truncations(
            &inst.reward, &inst.grid, &mu, *ladder.last().unwrap(), eta,
        )
        .unwrap();
        let lifted = solve_ergodic_qvi_bisection(
            &inst.kernel, &inst.grid, &tr.f_tilde_n, &inst.cost, None, &params,
        )
        .unwrap();
        assert!(
            (lifted.lambda - full.lambda).abs() < 1e-4,
            "{}: lifted route gives {} against {}",
            inst.name,
            lifted.lambda,
            full.lambda
        );
    }
}
