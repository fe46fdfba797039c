//! Command-line driver: solve, verify, simulate, truncate, report.
//!
//! Every subcommand reads a single JSON configuration, writes its artifacts
//! into an output directory (atomically, so interrupted runs never leave
//! half-written files), and communicates failure through disjoint exit
//! codes: 0 success, 1 a verification check failed, 2 the configuration or
//! an input file is unusable, 3 the numerics failed.  Errors also emit a
//! machine-readable JSON document on stderr.

// `!(x > 0)` rejects NaN where `x <= 0` would not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ergimp::chain::{expected_hitting_time, stationary_distribution};
use ergimp::discounted::{solve_discounted_qvi, verify_discounted_bounds, CheckOutcome, DiscountedParams};
use ergimp::ergodic::{
    solve_ergodic_qvi_bisection, verify_ergodic_bounds, ErgodicParams, ErgodicSolution, Regime,
};
use ergimp::instances::{realize, Instance};
use ergimp::io::{
    self, atomic_write, error_json, exit_code_for, load_config, RunConfig, SolutionHeader,
};
use ergimp::potentials::{alpha_schedule, PotentialTable};
use ergimp::simulate::{simulate_paths, tauberian_check, SimulateOptions, SimulationReport};
use ergimp::strategy::{
    default_tol_region, extract_policy, impulse_rate_bound_check, invariant_measure,
    verify_invariant_measure, verify_ratio_identity, ImpulsePolicy,
};
use ergimp::truncation::{
    build_truncations, default_delta_ladder, default_n_ladder, lambda_bar_n_delta, lambda_n_c,
    lambda_tilde2_n_delta, run_truncation_study,
};
use ergimp::{Error, Result};

#[derive(Parser)]
#[command(name = "ergimp", version, about = "Ergodic impulse-control solver and verifier")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the long-run average problem and write the solution files.
    Solve(CommonArgs),
    /// Run the full invariant suite; one PASS/FAIL line per check.
    Verify(CommonArgs),
    /// Monte Carlo run of the optimal (or do-nothing) strategy.
    Simulate(CommonArgs),
    /// Reward-truncation ladder with sandwich bounds.
    Truncate(CommonArgs),
    /// Solve, verify, simulate and truncate in one pass.
    Report(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress progress output (artifacts are still written).
    #[arg(long)]
    quiet: bool,
}

struct Ctx {
    cfg: RunConfig,
    inst: Instance,
    out: PathBuf,
    quiet: bool,
}

impl Ctx {
    fn prepare(args: &CommonArgs) -> Result<Ctx> {
        let mut cfg = load_config(&args.config)?;
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        if !(cfg.horizon > 0.0) || !cfg.horizon.is_finite() {
            return Err(Error::InvalidInput("horizon must be positive and finite".into()));
        }
        if cfg.n_paths == 0 {
            return Err(Error::InvalidInput("n_paths must be at least 1".into()));
        }
        let base = args.config.parent().unwrap_or_else(|| Path::new("."));
        let inst = realize(&cfg, base)?;
        Ok(Ctx { cfg, inst, out: args.out.clone(), quiet: args.quiet })
    }

    fn say(&self, line: &str) {
        if !self.quiet {
            println!("{line}");
        }
    }
}

fn ergodic_params(cfg: &RunConfig) -> ErgodicParams<f64> {
    let mut p = ErgodicParams::default();
    if let Some(t) = &cfg.tolerances {
        if let Some(v) = t.tol_lambda {
            p.tol_lambda = v;
        }
        if let Some(v) = t.tol_span {
            p.tol_span = v;
        }
        if let Some(v) = t.tol_drift {
            p.tol_drift = v;
        }
        if let Some(v) = t.tol_residual {
            p.tol_residual = v;
        }
        if let Some(v) = t.max_sweeps {
            p.max_sweeps = v;
        }
        if let Some(v) = t.max_bisections {
            p.max_bisections = v;
        }
        if let Some(v) = t.tol_regime {
            p.tol_regime = Some(v);
        }
    }
    p
}

fn discount_schedule(cfg: &RunConfig) -> Result<Vec<f64>> {
    if let Some(sched) = &cfg.alpha_schedule {
        if let Some(values) = &sched.values {
            if values.is_empty()
                || values.iter().any(|&a| !(a > 0.0) || !a.is_finite())
                || values.windows(2).any(|w| w[1] >= w[0])
            {
                return Err(Error::InvalidInput(
                    "alpha schedule values must be positive, finite and strictly decreasing"
                        .into(),
                ));
            }
            return Ok(values.clone());
        }
        if let Some(terms) = sched.terms {
            if terms == 0 || terms > 64 {
                return Err(Error::InvalidInput("alpha schedule terms must be in 1..=64".into()));
            }
            return Ok(alpha_schedule(cfg.dt, terms));
        }
        return Err(Error::InvalidInput(
            "alpha_schedule needs either `terms` or `values`".into(),
        ));
    }
    Ok(alpha_schedule(cfg.dt, 16))
}

fn thread_cap() -> Result<Option<usize>> {
    match std::env::var("ERGIMP_THREADS") {
        Ok(s) => {
            let n: usize = s
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad ERGIMP_THREADS value {s:?}")))?;
            if n == 0 {
                return Err(Error::InvalidInput("ERGIMP_THREADS must be positive".into()));
            }
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

/// Discount rates for the simulated discounted totals, scaled so the mass
/// beyond the horizon is negligible.
fn simulation_alphas(horizon: f64) -> Vec<f64> {
    let base = 32.0 / horizon;
    vec![4.0 * base, 2.0 * base, base]
}

fn regime_name(regime: Regime) -> &'static str {
    match regime {
        Regime::Active => "active",
        Regime::DoNothing => "do_nothing",
    }
}

fn solve_and_write(ctx: &Ctx) -> Result<ErgodicSolution<f64>> {
    let params = ergodic_params(&ctx.cfg);
    let inst = &ctx.inst;
    let sol = solve_ergodic_qvi_bisection(
        &inst.kernel,
        &inst.grid,
        &inst.reward,
        &inst.cost,
        None,
        &params,
    )?;
    io::write_solution_csv(&ctx.out.join("solution.csv"), &sol, inst.grid.points())?;
    io::write_solution_header(
        &ctx.out.join("solution.json"),
        &SolutionHeader::from_solution(&sol),
    )?;
    if sol.regime == Regime::Active {
        let policy = extract_policy(&sol, &inst.cost, default_tol_region(inst.reward.sup_norm()))?;
        io::write_policy_csv(&ctx.out.join("policy.csv"), &policy)?;
    }
    Ok(sol)
}

fn cmd_solve(ctx: &Ctx) -> Result<i32> {
    let sol = solve_and_write(ctx)?;
    ctx.say(&format!(
        "lambda = {:.12e}  (regime {}, stationary mean {:.12e})",
        sol.lambda,
        regime_name(sol.regime),
        sol.mu_f
    ));
    for warning in &sol.diagnostics.warnings {
        ctx.say(&format!("warning: {warning}"));
    }
    Ok(0)
}

enum CheckLine {
    Done(CheckOutcome<f64>),
    Skipped(&'static str, &'static str),
}

fn format_line(line: &CheckLine) -> String {
    match line {
        CheckLine::Done(out) => {
            let verdict = if out.passed { "PASS" } else { "FAIL" };
            let state = out
                .witness_state
                .map(|s| format!(" state={s}"))
                .unwrap_or_default();
            format!("{verdict} {} worst_slack={:.3e}{state}", out.id, out.worst_slack)
        }
        CheckLine::Skipped(id, why) => format!("SKIP {id} ({why})"),
    }
}

/// Replaces the freshly computed solution with the one on disk when present,
/// so the suite validates the artifact rather than recomputing around it.
fn solution_under_test(ctx: &Ctx, fresh: ErgodicSolution<f64>) -> Result<ErgodicSolution<f64>> {
    let csv = ctx.out.join("solution.csv");
    let json = ctx.out.join("solution.json");
    if !csv.exists() || !json.exists() {
        io::write_solution_csv(&csv, &fresh, ctx.inst.grid.points())?;
        io::write_solution_header(&json, &SolutionHeader::from_solution(&fresh))?;
        return Ok(fresh);
    }
    let body = io::read_solution_csv(&csv)?;
    let header = io::read_solution_header(&json)?;
    let n = ctx.inst.grid.n();
    if body.w.len() != n {
        return Err(Error::Parse(format!(
            "solution file has {} states, model has {n}",
            body.w.len()
        )));
    }
    let mut sol = fresh;
    sol.lambda = header.lambda;
    sol.w = body.w;
    sol.mw = body.mw;
    sol.impulse_mask = body.impulse_mask;
    sol.target_map = body.target_map;
    sol.regime = match header.regime.as_str() {
        "do_nothing" => Regime::DoNothing,
        _ => Regime::Active,
    };
    Ok(sol)
}

fn cmd_verify(ctx: &Ctx) -> Result<i32> {
    let inst = &ctx.inst;
    let n = inst.grid.n();
    let params = ergodic_params(&ctx.cfg);
    let fresh = solve_ergodic_qvi_bisection(
        &inst.kernel,
        &inst.grid,
        &inst.reward,
        &inst.cost,
        None,
        &params,
    )?;
    let sol = solution_under_test(ctx, fresh)?;
    let active = sol.regime == Regime::Active;
    let mut lines: Vec<CheckLine> = Vec::new();

    // Discounted-side bounds at the smallest scheduled rate.
    let alphas = discount_schedule(&ctx.cfg)?;
    let alpha_check = *alphas.last().unwrap();
    let disc = solve_discounted_qvi(
        &inst.kernel,
        &inst.grid,
        &inst.reward,
        &inst.cost,
        alpha_check,
        &DiscountedParams::default(),
    )?;
    let u_mask: Vec<bool> = (0..n).map(|i| inst.grid.in_u(i)).collect();
    let hitting_u = expected_hitting_time(&inst.kernel, &u_mask)?;
    for out in verify_discounted_bounds(&disc, &inst.grid, &inst.cost, &hitting_u, inst.reward.values())? {
        lines.push(CheckLine::Done(out));
    }

    // Ergodic value bounds need the potential table.
    if active {
        let table = PotentialTable::build(&inst.kernel, &inst.reward, &alphas)?;
        let outs = verify_ergodic_bounds(
            &sol,
            &inst.grid,
            &inst.cost,
            &hitting_u,
            inst.reward.values(),
            &table.q,
            table.q_negative_part_sup(),
        )?;
        for out in outs {
            lines.push(CheckLine::Done(out));
        }
    } else {
        for id in ["eq22'", "eq22''", "wbounds"] {
            lines.push(CheckLine::Skipped(
                match id {
                    "eq22'" => "eq22'",
                    "eq22''" => "eq22''",
                    _ => "wbounds",
                },
                "do-nothing regime",
            ));
        }
        lines.push(CheckLine::Done(CheckOutcome {
            id: "lambda_mu",
            passed: sol.lambda >= sol.mu_f - 1e-8,
            worst_slack: sol.lambda - sol.mu_f,
            witness_state: None,
        }));
    }

    // Strategy identities only exist when a strategy does.
    let policy: Option<ImpulsePolicy<f64>> = if active {
        match extract_policy(&sol, &inst.cost, default_tol_region(inst.reward.sup_norm())) {
            Ok(p) => Some(p),
            Err(err) => {
                for id in ["equiv2", "invmeas", "strbound"] {
                    lines.push(CheckLine::Done(CheckOutcome {
                        id: match id {
                            "equiv2" => "equiv2",
                            "invmeas" => "invmeas",
                            _ => "strbound",
                        },
                        passed: false,
                        worst_slack: f64::NAN,
                        witness_state: None,
                    }));
                }
                ctx.say(&format!("note: policy extraction failed: {err}"));
                None
            }
        }
    } else {
        for id in ["equiv2", "invmeas", "strbound"] {
            lines.push(CheckLine::Skipped(
                match id {
                    "equiv2" => "equiv2",
                    "invmeas" => "invmeas",
                    _ => "strbound",
                },
                "do-nothing regime",
            ));
        }
        None
    };
    // A check that cannot even be evaluated on the given solution counts as
    // failed; the values under test are not the ones a sound run produces.
    let done_or_fail = |id: &'static str, r: Result<CheckOutcome<f64>>| match r {
        Ok(out) => CheckLine::Done(out),
        Err(err) => {
            if !ctx.quiet {
                println!("note: {id} could not be evaluated: {err}");
            }
            CheckLine::Done(CheckOutcome {
                id,
                passed: false,
                worst_slack: f64::NAN,
                witness_state: None,
            })
        }
    };
    if let Some(policy) = &policy {
        lines.push(done_or_fail(
            "equiv2",
            verify_ratio_identity(
                &sol,
                policy,
                &inst.kernel,
                &inst.grid,
                inst.reward.values(),
                &inst.cost,
            ),
        ));
        lines.push(done_or_fail(
            "invmeas",
            invariant_measure(policy, &inst.kernel)
                .and_then(|eta| verify_invariant_measure(policy, &inst.kernel, &eta)),
        ));
        lines.push(done_or_fail(
            "strbound",
            impulse_rate_bound_check(policy, &inst.kernel, inst.reward.values(), &inst.cost),
        ));
    }

    // Tauberian inequality on a simulated run of the relevant strategy.
    let sim_policy = match &policy {
        Some(p) => p.clone(),
        None => ImpulsePolicy::never(n, inst.grid.u_indices().collect())?,
    };
    let opts = SimulateOptions {
        alphas: simulation_alphas(ctx.cfg.horizon),
        collect_cycles: active,
        threads: thread_cap()?,
    };
    let paths = simulate_paths(
        &inst.kernel,
        &sim_policy,
        inst.reward.values(),
        &inst.cost,
        ctx.cfg.horizon,
        ctx.cfg.n_paths,
        ctx.cfg.seed,
        inst.grid.z_index(),
        &opts,
    )?;
    lines.push(CheckLine::Done(tauberian_check(&paths)?));

    // Truncation sandwich at one ladder point.  Grids with no room for a
    // ball around z cannot host the construction; report that as a skip
    // rather than sinking the rest of the suite.
    if active {
        let tc = ctx.cfg.truncation.clone().unwrap_or_default();
        let n_radius = match &tc.n_ladder {
            Some(ladder) if !ladder.is_empty() => {
                Some(ladder.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            }
            _ => default_n_ladder(&inst.grid).ok().map(|l| *l.last().unwrap()),
        };
        match n_radius {
            Some(n_radius) => {
                let mu = stationary_distribution(&inst.kernel)?;
                let delta = tc
                    .deltas
                    .as_ref()
                    .and_then(|d| d.first().copied())
                    .unwrap_or_else(|| default_delta_ladder(inst.cost.c_max())[0]);
                let eta_level = tc
                    .eta_level
                    .unwrap_or_else(|| sol.mu_f + 0.5 * (sol.lambda - sol.mu_f));
                let trunc =
                    build_truncations(&inst.reward, &inst.grid, &mu, n_radius, eta_level)?;
                let sol_nc = lambda_n_c(&inst.kernel, &inst.grid, &trunc, &inst.cost, &params)?;
                let tilde2 = lambda_tilde2_n_delta(
                    &inst.kernel,
                    &inst.grid,
                    &trunc,
                    &inst.reward,
                    delta,
                    &params,
                )?;
                let bar_nd = lambda_bar_n_delta(
                    &inst.kernel,
                    &inst.grid,
                    &trunc,
                    &inst.reward,
                    delta,
                    &params,
                )?;
                let (lo, hi) = ergimp::truncation::sandwich_check(
                    sol.lambda,
                    sol_nc.lambda,
                    bar_nd,
                    tilde2,
                    delta,
                    inst.cost.c_max(),
                    inst.reward.sup_norm(),
                )?;
                lines.push(CheckLine::Done(CheckOutcome {
                    id: "fact1",
                    passed: lo >= -1e-6 && hi >= -1e-6,
                    worst_slack: lo.min(hi),
                    witness_state: None,
                }));
            }
            None => {
                lines.push(CheckLine::Skipped("fact1", "grid too narrow for a truncation ball"));
            }
        }
    } else {
        lines.push(CheckLine::Skipped("fact1", "do-nothing regime"));
    }

    let mut text = String::new();
    let mut failed = 0usize;
    for line in &lines {
        let s = format_line(line);
        if let CheckLine::Done(out) = line {
            if !out.passed {
                failed += 1;
            }
        }
        println!("{s}");
        text.push_str(&s);
        text.push('\n');
    }
    atomic_write(&ctx.out.join("verify.txt"), &text)?;
    Ok(if failed == 0 { 0 } else { 1 })
}

fn run_simulation(ctx: &Ctx, sol: &ErgodicSolution<f64>) -> Result<SimulationReport<f64>> {
    let inst = &ctx.inst;
    let active = sol.regime == Regime::Active;
    let policy = if active {
        extract_policy(sol, &inst.cost, default_tol_region(inst.reward.sup_norm()))?
    } else {
        ImpulsePolicy::never(inst.grid.n(), inst.grid.u_indices().collect())?
    };
    let opts = SimulateOptions {
        alphas: simulation_alphas(ctx.cfg.horizon),
        collect_cycles: active,
        threads: thread_cap()?,
    };
    let paths = simulate_paths(
        &inst.kernel,
        &policy,
        inst.reward.values(),
        &inst.cost,
        ctx.cfg.horizon,
        ctx.cfg.n_paths,
        ctx.cfg.seed,
        inst.grid.z_index(),
        &opts,
    )?;
    Ok(paths.report())
}

fn cmd_simulate(ctx: &Ctx) -> Result<i32> {
    let params = ergodic_params(&ctx.cfg);
    let inst = &ctx.inst;
    let sol = solve_ergodic_qvi_bisection(
        &inst.kernel,
        &inst.grid,
        &inst.reward,
        &inst.cost,
        None,
        &params,
    )?;
    let report = run_simulation(ctx, &sol)?;
    io::write_simulation_report(&ctx.out.join("simulation.json"), &report)?;
    ctx.say(&format!(
        "j = {:.6e} +- {:.2e}  (solver lambda {:.6e}, {} paths, horizon {:.1e})",
        report.j_estimate, report.j_half_width, sol.lambda, report.n_paths, report.horizon
    ));
    if let (Some(jh), Some(hw)) = (report.j_hat_estimate, report.j_hat_half_width) {
        ctx.say(&format!(
            "j_hat = {:.6e} +- {:.2e}  ({} cycles)",
            jh, hw, report.cycles_completed
        ));
    }
    Ok(0)
}

fn cmd_truncate(ctx: &Ctx) -> Result<i32> {
    let params = ergodic_params(&ctx.cfg);
    let inst = &ctx.inst;
    let tc = ctx.cfg.truncation.clone().unwrap_or_default();
    let report = run_truncation_study(
        &inst.kernel,
        &inst.grid,
        &inst.reward,
        &inst.cost,
        tc.n_ladder.as_deref(),
        tc.deltas.as_deref(),
        tc.eta_level,
        &params,
    )?;
    io::write_truncation_csv(&ctx.out.join("truncation.csv"), &report)?;
    io::write_truncation_json(&ctx.out.join("truncation.json"), &report)?;
    ctx.say(&format!(
        "lambda_bar = {:.6e}, eta = {:.3e}, {} ladder points",
        report.lambda_bar,
        report.eta_level,
        report.rows.len()
    ));
    for row in &report.rows {
        ctx.say(&format!(
            "N={:.2} delta={:.3e}: lambda_bar_nc={:.6e} ratio_c={:.3e} slacks=({:.2e}, {:.2e})",
            row.n_radius, row.delta, row.lambda_bar_nc, row.ratio_c, row.slack_lo, row.slack_hi
        ));
    }
    Ok(0)
}

fn cmd_report(ctx: &Ctx) -> Result<i32> {
    let sol = solve_and_write(ctx)?;
    ctx.say(&format!(
        "lambda = {:.12e}  (regime {})",
        sol.lambda,
        regime_name(sol.regime)
    ));
    let verify_code = cmd_verify(ctx)?;
    let report = run_simulation(ctx, &sol)?;
    io::write_simulation_report(&ctx.out.join("simulation.json"), &report)?;
    let tc = ctx.cfg.truncation.clone().unwrap_or_default();
    let ladder_fits = tc.n_ladder.as_ref().map(|l| !l.is_empty()).unwrap_or_else(|| {
        default_n_ladder(&ctx.inst.grid).is_ok()
    });
    let truncation = if sol.regime != Regime::Active {
        ctx.say("truncation ladder skipped: do-nothing regime");
        None
    } else if !ladder_fits {
        ctx.say("truncation ladder skipped: grid too narrow for a truncation ball");
        None
    } else {
        let trunc = run_truncation_study(
            &ctx.inst.kernel,
            &ctx.inst.grid,
            &ctx.inst.reward,
            &ctx.inst.cost,
            tc.n_ladder.as_deref(),
            tc.deltas.as_deref(),
            tc.eta_level,
            &ergodic_params(&ctx.cfg),
        )?;
        io::write_truncation_csv(&ctx.out.join("truncation.csv"), &trunc)?;
        io::write_truncation_json(&ctx.out.join("truncation.json"), &trunc)?;
        Some(trunc.rows.len())
    };
    let summary = serde_json::json!({
        "lambda": sol.lambda,
        "mu_f": sol.mu_f,
        "regime": regime_name(sol.regime),
        "verify_passed": verify_code == 0,
        "j_estimate": report.j_estimate,
        "j_half_width": report.j_half_width,
        "truncation_rows": truncation,
    });
    atomic_write(
        &ctx.out.join("report.json"),
        &(serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::Parse(format!("serialize report: {e}")))?
            + "\n"),
    )?;
    Ok(verify_code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args = match &cli.cmd {
        Cmd::Solve(a) | Cmd::Verify(a) | Cmd::Simulate(a) | Cmd::Truncate(a) | Cmd::Report(a) => a,
    };
    // Anything that fails before the numerics start is a configuration
    // problem, whatever error kind the loader surfaces.
    let ctx = match Ctx::prepare(args) {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            return ExitCode::from(2);
        }
    };
    let outcome = match &cli.cmd {
        Cmd::Solve(_) => cmd_solve(&ctx),
        Cmd::Verify(_) => cmd_verify(&ctx),
        Cmd::Simulate(_) => cmd_simulate(&ctx),
        Cmd::Truncate(_) => cmd_truncate(&ctx),
        Cmd::Report(_) => cmd_report(&ctx),
    };
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
