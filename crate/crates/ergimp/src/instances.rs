//! Built-in model instances and assembly of models from run configurations.
//!
//! The built-ins serve two audiences: the tests, which need instances with
//! hand-checkable optima, and the CLI, which offers them as starting points.
//! `ts1` is the two-state workhorse whose optimal average of 0.9 can be
//! verified with pencil and paper; the Ornstein-Uhlenbeck family exercises
//! the solvers at a realistic grid size.

use std::path::Path;

use crate::chain::{build_ou_kernel, StateGrid, TransitionKernel};
use crate::cost::CostSpec;
use crate::io::{
    read_kernel_csv, read_matrix_csv, read_vector_csv, CostConfig, ModelConfig, RewardConfig,
    RunConfig,
};
use crate::potentials::RewardSpec;
use crate::{Error, Result};

/// A ready-to-solve model: chain, geometry, reward and cost.
#[derive(Debug, Clone)]
pub struct Instance {
    pub name: String,
    pub kernel: TransitionKernel<f64>,
    pub grid: StateGrid<f64>,
    pub reward: RewardSpec<f64>,
    pub cost: CostSpec<f64>,
}

/// Two uniformly mixing states, reward (1.0, 0.0), relocation to state 0 at
/// cost 0.2.  Leaving the chain alone averages 0.5; relocating from state 1
/// keeps every accrual at the good state and fires on half the steps, so the
/// optimal average is exactly 1 - 0.5 * 0.2 = 0.9.
pub fn ts1() -> Instance {
    let kernel =
        crate::chain::build_custom_kernel(vec![0.5, 0.5, 0.5, 0.5], 2, 1.0).unwrap();
    let grid = StateGrid::indexed(2, 0, 0, 0).unwrap();
    let reward = RewardSpec::new(vec![1.0, 0.0]).unwrap();
    let cost = CostSpec::constant(-0.2, 2, vec![0]).unwrap();
    Instance { name: "ts1".into(), kernel, grid, reward, cost }
}

/// The same chain with impulses priced far above any possible gain, so the
/// optimal strategy never intervenes.
pub fn ts1_expensive() -> Instance {
    let mut inst = ts1();
    inst.name = "ts1_expensive".into();
    inst.cost = CostSpec::constant(-2.0, 2, vec![0]).unwrap();
    inst
}

fn ou_grid() -> StateGrid<f64> {
    let n = 241;
    let points: Vec<f64> = (0..n).map(|i| -6.0 + 0.05 * i as f64).collect();
    // Window [-1, 1] is indices 100..=140; the reference state is x = 0.
    StateGrid::new(points, 100, 140, 120).unwrap()
}

/// Peaked reward used by the Ornstein-Uhlenbeck instances.
pub fn cauchy_reward(grid: &StateGrid<f64>) -> RewardSpec<f64> {
    let values: Vec<f64> = grid.points().iter().map(|&x| 5.0 / (1.0 + x * x)).collect();
    RewardSpec::new(values).unwrap()
}

/// Cost `k0 + k1 |x - xi|` as a full matrix.  `k0` must be strictly
/// negative and `k1` nonpositive, which keeps every entry negative and the
/// two-impulse chaining inequality satisfied.
pub fn proportional_cost(grid: &StateGrid<f64>, k0: f64, k1: f64) -> Result<CostSpec<f64>> {
    if !(k0 < 0.0) || !(k1 <= 0.0) {
        return Err(Error::InvalidInput(
            "proportional cost needs k0 < 0 and k1 <= 0".into(),
        ));
    }
    let n = grid.n();
    let targets: Vec<usize> = grid.u_indices().collect();
    let mut matrix = Vec::with_capacity(n * targets.len());
    for i in 0..n {
        let x = grid.point(i);
        for &t in &targets {
            matrix.push(k0 + k1 * (x - grid.point(t)).abs());
        }
    }
    CostSpec::general(matrix, n, targets)
}

/// Mean-reverting chain on [-6, 6] with 241 states, window [-1, 1], peaked
/// reward and proportional cost.  Impulses pay here: dragging the state back
/// to the peak beats waiting out the excursion.
pub fn ou_default() -> Instance {
    let grid = ou_grid();
    let kernel = build_ou_kernel(&grid, 1.0, 1.0, 0.1).unwrap();
    let reward = cauchy_reward(&grid);
    let cost = proportional_cost(&grid, -0.5, -0.5).unwrap();
    Instance { name: "ou_default".into(), kernel, grid, reward, cost }
}

/// The same model with the cost split into a departure part `d(x)` and an
/// arrival part `e(xi)`, which makes the best relocation target independent
/// of where the impulse fires.
pub fn ou_separated() -> Instance {
    let grid = ou_grid();
    let kernel = build_ou_kernel(&grid, 1.0, 1.0, 0.1).unwrap();
    let reward = cauchy_reward(&grid);
    let d: Vec<f64> = grid.points().iter().map(|&x| -0.25 - 0.25 * x.abs()).collect();
    let e: Vec<f64> = grid.u_indices().map(|i| -0.25 - 0.25 * grid.point(i).abs()).collect();
    let cost = CostSpec::separated(d, e, grid.n(), grid.u_indices().collect()).unwrap();
    Instance { name: "ou_separated".into(), kernel, grid, reward, cost }
}

/// Constant reward on the same chain: no relocation can change the average,
/// so the optimal strategy does nothing.
pub fn ou_constant() -> Instance {
    let grid = ou_grid();
    let kernel = build_ou_kernel(&grid, 1.0, 1.0, 0.1).unwrap();
    let reward = RewardSpec::new(vec![1.0; grid.n()]).unwrap();
    let cost = proportional_cost(&grid, -0.5, -0.5).unwrap();
    Instance { name: "ou_constant".into(), kernel, grid, reward, cost }
}

/// Every built-in instance, for sweeps in tests and reports.
pub fn all_builtin() -> Vec<Instance> {
    vec![ts1(), ts1_expensive(), ou_default(), ou_separated(), ou_constant()]
}

pub fn builtin(name: &str) -> Result<Instance> {
    match name {
        "ts1" => Ok(ts1()),
        "ts1_expensive" => Ok(ts1_expensive()),
        "ou_default" => Ok(ou_default()),
        "ou_separated" => Ok(ou_separated()),
        "ou_constant" => Ok(ou_constant()),
        other => Err(Error::InvalidInput(format!(
            "unknown instance {other:?}; available: ts1, ts1_expensive, \
             ou_default, ou_separated, ou_constant"
        ))),
    }
}

fn builtin_reward(name: &str, grid: &StateGrid<f64>) -> Result<RewardSpec<f64>> {
    match name {
        "cauchy" => Ok(cauchy_reward(grid)),
        "constant" => RewardSpec::new(vec![1.0; grid.n()]),
        other => Err(Error::InvalidInput(format!(
            "unknown reward {other:?}; available: cauchy, constant"
        ))),
    }
}

fn grid_from_config(cfg: &RunConfig) -> Result<StateGrid<f64>> {
    let g = &cfg.grid;
    if g.n < 2 || !(g.x_min < g.x_max) {
        return Err(Error::InvalidInput("grid needs n >= 2 and x_min < x_max".into()));
    }
    let step = (g.x_max - g.x_min) / (g.n - 1) as f64;
    let points: Vec<f64> = (0..g.n).map(|i| g.x_min + step * i as f64).collect();
    if !(g.u_min <= g.u_max) {
        return Err(Error::InvalidInput("relocation window has u_min > u_max".into()));
    }
    let slack = 1e-9 * (1.0 + step);
    let u_lo = points.iter().position(|&x| x >= g.u_min - slack).ok_or_else(|| {
        Error::InvalidInput("relocation window lies beyond the grid".into())
    })?;
    let u_hi = points
        .iter()
        .rposition(|&x| x <= g.u_max + slack)
        .ok_or_else(|| Error::InvalidInput("relocation window lies below the grid".into()))?;
    if u_lo > u_hi {
        return Err(Error::InvalidInput(
            "relocation window contains no grid point".into(),
        ));
    }
    let z_index = {
        let mut best = u_lo;
        let mut dist = (points[u_lo] - g.z).abs();
        for (i, &p) in points.iter().enumerate().take(u_hi + 1).skip(u_lo) {
            let d = (p - g.z).abs();
            if d < dist {
                dist = d;
                best = i;
            }
        }
        best
    };
    StateGrid::new(points, u_lo, u_hi, z_index)
}

/// Builds a full instance from a parsed run configuration.  Relative file
/// paths are resolved against `base`, normally the config file's directory.
pub fn realize(cfg: &RunConfig, base: &Path) -> Result<Instance> {
    if !(cfg.dt > 0.0) || !cfg.dt.is_finite() {
        return Err(Error::InvalidInput("dt must be positive and finite".into()));
    }
    let grid = grid_from_config(cfg)?;
    let n = grid.n();
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

    let kernel = match &cfg.model {
        ModelConfig::Ou { theta, sigma } => build_ou_kernel(&grid, *theta, *sigma, cfg.dt)?,
        ModelConfig::Custom { kernel_file } => {
            let kernel = read_kernel_csv(&resolve(kernel_file))?;
            if kernel.n() != n {
                return Err(Error::InvalidInput(format!(
                    "kernel has {} states, grid has {n}",
                    kernel.n()
                )));
            }
            if (kernel.dt() - cfg.dt).abs() > 1e-12 * (1.0 + cfg.dt) {
                return Err(Error::InvalidInput(format!(
                    "kernel file dt {} disagrees with config dt {}",
                    kernel.dt(),
                    cfg.dt
                )));
            }
            kernel
        }
    };

    let reward = match &cfg.reward {
        RewardConfig::Builtin { name } => builtin_reward(name, &grid)?,
        RewardConfig::Inline { values } => {
            if values.len() != n {
                return Err(Error::InvalidInput(format!(
                    "inline reward has {} entries, grid has {n}",
                    values.len()
                )));
            }
            RewardSpec::new(values.clone())?
        }
    };

    let targets: Vec<usize> = grid.u_indices().collect();
    let cost = match &cfg.cost {
        CostConfig::Constant { value } => CostSpec::constant(*value, n, targets)?,
        CostConfig::Proportional { k0, k1 } => proportional_cost(&grid, *k0, *k1)?,
        CostConfig::Separated { d_file, e_file } => {
            let d = read_vector_csv(&resolve(d_file))?;
            let e = read_vector_csv(&resolve(e_file))?;
            CostSpec::separated(d, e, n, targets)?
        }
        CostConfig::General { file } => {
            let (m, rows, cols) = read_matrix_csv(&resolve(file))?;
            if rows != n || cols != targets.len() {
                return Err(Error::InvalidInput(format!(
                    "cost matrix is {rows}x{cols}, expected {n}x{}",
                    targets.len()
                )));
            }
            CostSpec::general(m, n, targets)?
        }
    };

    Ok(Instance { name: "config".into(), kernel, grid, reward, cost })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ergodic::{solve_ergodic_qvi_bisection, ErgodicParams, Regime};
    use crate::io::GridConfig;

    #[test]
    fn ts1_solves_to_the_textbook_value() {
        let inst = ts1();
        let sol = solve_ergodic_qvi_bisection(
            &inst.kernel,
            &inst.grid,
            &inst.reward,
            &inst.cost,
            None,
            &ErgodicParams::default(),
        )
        .unwrap();
        assert!((sol.lambda - 0.9).abs() < 1e-9, "lambda {}", sol.lambda);
        assert_eq!(sol.regime, Regime::Active);
        assert_eq!(sol.impulse_mask, vec![false, true]);
        assert_eq!(sol.target_map[1], 0);
    }

    #[test]
    fn expensive_variant_does_nothing() {
        let inst = ts1_expensive();
        let sol = solve_ergodic_qvi_bisection(
            &inst.kernel,
            &inst.grid,
            &inst.reward,
            &inst.cost,
            None,
            &ErgodicParams::default(),
        )
        .unwrap();
        assert_eq!(sol.regime, Regime::DoNothing);
        assert!((sol.lambda - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ou_instances_share_geometry() {
        let inst = ou_default();
        assert_eq!(inst.grid.n(), 241);
        assert_eq!(inst.grid.u_range(), (100, 140));
        assert_eq!(inst.grid.z_index(), 120);
        assert_eq!(inst.grid.point(120), 0.0);
        assert!((inst.reward.values()[120] - 5.0).abs() < 1e-15);
        // Window edges carry cost -0.5 for a null move, more for real ones.
        assert_eq!(inst.cost.cost(120, 20), -0.5);
        assert!(inst.cost.cost(0, 20) < -0.5);
        let sep = ou_separated();
        assert!(sep.cost.separated_parts().is_some());
        assert_eq!(builtin("ou_constant").unwrap().reward.values()[0], 1.0);
        assert!(builtin("nope").is_err());
    }

    #[test]
    fn proportional_cost_rejects_positive_slopes() {
        let grid = ou_grid();
        assert!(proportional_cost(&grid, -0.5, 0.1).is_err());
        assert!(proportional_cost(&grid, 0.0, -0.5).is_err());
    }

    #[test]
    fn realize_builds_a_model_from_config() {
        let cfg = RunConfig {
            model: ModelConfig::Ou { theta: 1.0, sigma: 1.0 },
            grid: GridConfig {
                x_min: -6.0,
                x_max: 6.0,
                n: 241,
                u_min: -1.0,
                u_max: 1.0,
                z: 0.0,
            },
            dt: 0.1,
            reward: RewardConfig::Builtin { name: "cauchy".into() },
            cost: CostConfig::Proportional { k0: -0.5, k1: -0.5 },
            alpha_schedule: None,
            tolerances: None,
            seed: 1,
            horizon: 1e4,
            n_paths: 200,
            truncation: None,
        };
        let inst = realize(&cfg, Path::new(".")).unwrap();
        assert_eq!(inst.grid.n(), 241);
        assert_eq!(inst.grid.u_range(), (100, 140));
        assert_eq!(inst.grid.z_index(), 120);
        let reference = ou_default();
        for (a, b) in inst.reward.values().iter().zip(reference.reward.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn realize_rejects_length_mismatches() {
        let mut cfg = RunConfig {
            model: ModelConfig::Ou { theta: 1.0, sigma: 1.0 },
            grid: GridConfig {
                x_min: -1.0,
                x_max: 1.0,
                n: 5,
                u_min: 0.0,
                u_max: 0.0,
                z: 0.0,
            },
            dt: 0.5,
            reward: RewardConfig::Inline { values: vec![1.0; 4] },
            cost: CostConfig::Constant { value: -0.1 },
            alpha_schedule: None,
            tolerances: None,
            seed: 1,
            horizon: 1e4,
            n_paths: 200,
            truncation: None,
        };
        assert!(realize(&cfg, Path::new(".")).is_err());
        cfg.reward = RewardConfig::Inline { values: vec![1.0; 5] };
        cfg.cost = CostConfig::Constant { value: 0.1 };
        assert!(realize(&cfg, Path::new(".")).is_err());
    }
}
