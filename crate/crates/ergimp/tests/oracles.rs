//! Solver-versus-enumeration checks on randomized small models.  The
//! iterative solvers must reproduce what exhaustive stationary-policy
//! search says the optimum is, for both criteria.

mod common;

use common::{brute_force_discounted, brute_force_ergodic, random_small_instance, seeded_rng};
use ergimp::discounted::{solve_discounted_qvi, DiscountedParams};
use ergimp::ergodic::{solve_ergodic_qvi_bisection, ErgodicParams};

#[test]
fn discounted_solver_matches_policy_enumeration() {
    let mut rng = seeded_rng(0x5eed_0001);
    let mut worst: f64 = 0.0;
    for case in 0..80 {
        let inst = random_small_instance(&mut rng);
        let sol = solve_discounted_qvi(
            &inst.kernel,
            &inst.grid,
            &inst.f,
            &inst.cost,
            inst.alpha,
            &DiscountedParams::default(),
        )
        .unwrap();
        let oracle = brute_force_discounted(&inst);
        for (i, (&vs, &vo)) in sol.v.iter().zip(&oracle).enumerate() {
            let gap = (vs - vo).abs();
            worst = worst.max(gap);
            assert!(
                gap < 1e-8,
                "case {case}: v({i}) = {vs} but enumeration gives {vo} \
                 (n = {}, alpha = {})",
                inst.kernel.n(),
                inst.alpha
            );
        }
    }
    println!("discounted oracle gap over 80 random models: {worst:.3e}");
}

#[test]
fn ergodic_bisection_matches_policy_enumeration() {
    let mut rng = seeded_rng(0x5eed_0002);
    let mut worst: f64 = 0.0;
    for case in 0..60 {
        let inst = random_small_instance(&mut rng);
        let sol = solve_ergodic_qvi_bisection(
            &inst.kernel,
            &inst.grid,
            &inst.f,
            &inst.cost,
            None,
            &ErgodicParams::default(),
        )
        .unwrap();
        let oracle = brute_force_ergodic(&inst);
        let gap = (sol.lambda - oracle).abs();
        worst = worst.max(gap);
        assert!(
            gap < 1e-8,
            "case {case}: lambda = {} but enumeration gives {oracle} (n = {})",
            sol.lambda,
            inst.kernel.n()
        );
    }
    println!("ergodic oracle gap over 60 random models: {worst:.3e}");
}

#[test]
fn extracted_policies_price_back_to_lambda() {
    // The policy read off the solved problem, evaluated exactly as a fixed
    // strategy, must earn lambda again.
    let mut rng = seeded_rng(0x5eed_0003);
    for _ in 0..40 {
        let inst = random_small_instance(&mut rng);
        let sol = solve_ergodic_qvi_bisection(
            &inst.kernel,
            &inst.grid,
            &inst.f,
            &inst.cost,
            None,
            &ErgodicParams::default(),
        )
        .unwrap();
        if sol.regime != ergimp::ergodic::Regime::Active {
            continue;
        }
        let policy = ergimp::strategy::extract_policy(
            &sol,
            &inst.cost,
            ergimp::strategy::default_tol_region(inst.f.sup_norm()),
        )
        .unwrap();
        let (_, avg) = ergimp::strategy::policy_average(
            &policy,
            &inst.kernel,
            inst.f.values(),
            &inst.cost,
        )
        .unwrap();
        assert!(
            (avg - sol.lambda).abs() < 1e-8,
            "policy average {avg} vs lambda {}",
            sol.lambda
        );
    }
}
