//! File formats and configuration for the command-line driver.
//!
//! Everything numeric is written with 18 significant digits so that a
//! write/read round trip reproduces every `f64` bit for bit, and every file
//! is written to a sibling temp path first and renamed into place, so a
//! crash mid-write never leaves a truncated file behind.  JSON documents are
//! serialized from plain structs with a fixed field order, which keeps
//! repeated runs byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process;

use serde::{Deserialize, Serialize};

use crate::chain::{build_custom_kernel, TransitionKernel};
use crate::ergodic::{ErgodicSolution, Regime, SolutionMethod};
use crate::simulate::SimulationReport;
use crate::strategy::ImpulsePolicy;
use crate::truncation::TruncationReport;
use crate::{Error, Result};

/// Formats a float so that parsing it back recovers the exact value.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.17e}")
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("bad {what}: {s:?}")))
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| Error::Parse(format!("bad {what}: {s:?}")))
}

/// Writes `contents` to `path` atomically: temp file in the same directory,
/// then rename.
pub fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Kernel file: a `n,dt` header line, the two values, then `n` rows of `n`
/// transition probabilities.
pub fn write_kernel_csv(path: &Path, kernel: &TransitionKernel<f64>) -> Result<()> {
    let n = kernel.n();
    let mut out = String::from("n,dt\n");
    let _ = writeln!(out, "{},{}", n, fmt_f64(kernel.dt()));
    for i in 0..n {
        let row: Vec<String> = kernel.row(i).iter().map(|&p| fmt_f64(p)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    atomic_write(path, &out)
}

pub fn read_kernel_csv(path: &Path) -> Result<TransitionKernel<f64>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == "n,dt" => {}
        other => return Err(Error::Parse(format!("kernel file: expected `n,dt` header, got {other:?}"))),
    }
    let sizes = lines
        .next()
        .ok_or_else(|| Error::Parse("kernel file: missing size line".into()))?;
    let mut parts = sizes.split(',');
    let n = parse_usize(parts.next().unwrap_or(""), "state count")?;
    let dt = parse_f64(parts.next().unwrap_or(""), "time step")?;
    let mut p = Vec::with_capacity(n * n);
    for i in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("kernel file: missing row {i}")))?;
        let row: Result<Vec<f64>> = line
            .split(',')
            .map(|s| parse_f64(s, "transition probability"))
            .collect();
        let row = row?;
        if row.len() != n {
            return Err(Error::Parse(format!(
                "kernel file: row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        p.extend(row);
    }
    build_custom_kernel(p, n, dt)
}

/// Plain vector file: one value per line.
pub fn write_vector_csv(path: &Path, v: &[f64]) -> Result<()> {
    let mut out = String::new();
    for &x in v {
        out.push_str(&fmt_f64(x));
        out.push('\n');
    }
    atomic_write(path, &out)
}

pub fn read_vector_csv(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| parse_f64(l, "vector entry"))
        .collect()
}

/// Matrix file: `rows,cols` header line with the two sizes, then the rows.
pub fn write_matrix_csv(path: &Path, m: &[f64], rows: usize, cols: usize) -> Result<()> {
    if m.len() != rows * cols {
        return Err(Error::InvalidInput("matrix size mismatch".into()));
    }
    let mut out = String::from("rows,cols\n");
    let _ = writeln!(out, "{rows},{cols}");
    for r in 0..rows {
        let line: Vec<String> = m[r * cols..(r + 1) * cols].iter().map(|&x| fmt_f64(x)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    atomic_write(path, &out)
}

pub fn read_matrix_csv(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == "rows,cols" => {}
        other => {
            return Err(Error::Parse(format!(
                "matrix file: expected `rows,cols` header, got {other:?}"
            )))
        }
    }
    let sizes = lines
        .next()
        .ok_or_else(|| Error::Parse("matrix file: missing size line".into()))?;
    let mut parts = sizes.split(',');
    let rows = parse_usize(parts.next().unwrap_or(""), "row count")?;
    let cols = parse_usize(parts.next().unwrap_or(""), "column count")?;
    let mut m = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("matrix file: missing row {r}")))?;
        let row: Result<Vec<f64>> = line.split(',').map(|s| parse_f64(s, "matrix entry")).collect();
        let row = row?;
        if row.len() != cols {
            return Err(Error::Parse(format!(
                "matrix file: row {r} has {} entries, expected {cols}",
                row.len()
            )));
        }
        m.extend(row);
    }
    Ok((m, rows, cols))
}

/// JSON header accompanying a solution table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionHeader {
    pub lambda: f64,
    pub mu_f: f64,
    pub method: String,
    pub regime: String,
    pub z_index: usize,
    pub qvi_residual: f64,
    pub warnings: Vec<String>,
}

impl SolutionHeader {
    pub fn from_solution(sol: &ErgodicSolution<f64>) -> Self {
        SolutionHeader {
            lambda: sol.lambda,
            mu_f: sol.mu_f,
            method: match sol.method {
                SolutionMethod::Bisection => "bisection".into(),
                SolutionMethod::VanishingDiscount => "vanishing_discount".into(),
            },
            regime: match sol.regime {
                Regime::Active => "active".into(),
                Regime::DoNothing => "do_nothing".into(),
            },
            z_index: sol.z_index,
            qvi_residual: sol.diagnostics.qvi_residual,
            warnings: sol.diagnostics.warnings.clone(),
        }
    }
}

/// The state-indexed rows of a solution file.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionBody {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub mw: Vec<f64>,
    pub impulse_mask: Vec<bool>,
    pub target_map: Vec<usize>,
}

pub fn write_solution_csv(
    path: &Path,
    sol: &ErgodicSolution<f64>,
    points: &[f64],
) -> Result<()> {
    let n = sol.w.len();
    if points.len() != n {
        return Err(Error::InvalidInput("grid length does not match solution".into()));
    }
    let mut out = String::from("state,x,w,mw,impulse,target\n");
    for i in 0..n {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            i,
            fmt_f64(points[i]),
            fmt_f64(sol.w[i]),
            fmt_f64(sol.mw[i]),
            u8::from(sol.impulse_mask[i]),
            sol.target_map[i],
        );
    }
    atomic_write(path, &out)
}

pub fn read_solution_csv(path: &Path) -> Result<SolutionBody> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == "state,x,w,mw,impulse,target" => {}
        other => {
            return Err(Error::Parse(format!("solution file: unexpected header {other:?}")))
        }
    }
    let mut body = SolutionBody {
        x: Vec::new(),
        w: Vec::new(),
        mw: Vec::new(),
        impulse_mask: Vec::new(),
        target_map: Vec::new(),
    };
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse(format!(
                "solution file: row {row} has {} fields, expected 6",
                fields.len()
            )));
        }
        let state = parse_usize(fields[0], "state index")?;
        if state != row {
            return Err(Error::Parse(format!(
                "solution file: row {row} labelled as state {state}"
            )));
        }
        body.x.push(parse_f64(fields[1], "coordinate")?);
        body.w.push(parse_f64(fields[2], "w value")?);
        body.mw.push(parse_f64(fields[3], "Mw value")?);
        body.impulse_mask.push(match fields[4].trim() {
            "0" => false,
            "1" => true,
            other => return Err(Error::Parse(format!("bad impulse flag: {other:?}"))),
        });
        body.target_map.push(parse_usize(fields[5], "target index")?);
    }
    let n = body.w.len();
    if n == 0 {
        return Err(Error::Parse("solution file: no data rows".into()));
    }
    if body.target_map.iter().any(|&t| t >= n) {
        return Err(Error::Parse("solution file: target index out of range".into()));
    }
    Ok(body)
}

pub fn write_solution_header(path: &Path, header: &SolutionHeader) -> Result<()> {
    let json = serde_json::to_string_pretty(header)
        .map_err(|e| Error::Parse(format!("serialize solution header: {e}")))?;
    atomic_write(path, &(json + "\n"))
}

pub fn read_solution_header(path: &Path) -> Result<SolutionHeader> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("solution header: {e}")))
}

pub fn write_policy_csv(path: &Path, policy: &ImpulsePolicy<f64>) -> Result<()> {
    let mut out = String::from("state,impulse,target\n");
    for i in 0..policy.n() {
        let _ = writeln!(
            out,
            "{},{},{}",
            i,
            u8::from(policy.impulse_mask()[i]),
            policy.target_map()[i],
        );
    }
    atomic_write(path, &out)
}

pub fn read_policy_csv(path: &Path) -> Result<(Vec<bool>, Vec<usize>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == "state,impulse,target" => {}
        other => return Err(Error::Parse(format!("policy file: unexpected header {other:?}"))),
    }
    let mut mask = Vec::new();
    let mut targets = Vec::new();
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse(format!("policy file: row {row} malformed")));
        }
        let state = parse_usize(fields[0], "state index")?;
        if state != row {
            return Err(Error::Parse(format!("policy file: row {row} labelled {state}")));
        }
        mask.push(match fields[1].trim() {
            "0" => false,
            "1" => true,
            other => return Err(Error::Parse(format!("bad impulse flag: {other:?}"))),
        });
        targets.push(parse_usize(fields[2], "target index")?);
    }
    Ok((mask, targets))
}

/// Serializable mirror of a Monte Carlo report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationReportFile {
    pub n_paths: usize,
    pub horizon: f64,
    pub start: usize,
    pub seed: u64,
    pub j_estimate: f64,
    pub j_half_width: f64,
    pub j_hat_estimate: Option<f64>,
    pub j_hat_half_width: Option<f64>,
    pub partial_averages: [f64; 3],
    pub impulse_rate: f64,
    pub cycles_completed: u64,
    /// One `(alpha, mean, half_width)` triple per requested discount rate.
    pub discounted: Vec<(f64, f64, f64)>,
}

impl SimulationReportFile {
    pub fn from_report(rep: &SimulationReport<f64>) -> Self {
        SimulationReportFile {
            n_paths: rep.n_paths,
            horizon: rep.horizon,
            start: rep.start,
            seed: rep.seed,
            j_estimate: rep.j_estimate,
            j_half_width: rep.j_half_width,
            j_hat_estimate: rep.j_hat_estimate,
            j_hat_half_width: rep.j_hat_half_width,
            partial_averages: rep.partial_averages,
            impulse_rate: rep.impulse_rate,
            cycles_completed: rep.cycles_completed,
            discounted: rep.discounted.clone(),
        }
    }
}

pub fn write_simulation_report(path: &Path, rep: &SimulationReport<f64>) -> Result<()> {
    let file = SimulationReportFile::from_report(rep);
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Parse(format!("serialize simulation report: {e}")))?;
    atomic_write(path, &(json + "\n"))
}

pub fn read_simulation_report(path: &Path) -> Result<SimulationReportFile> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("simulation report: {e}")))
}

/// Ladder summary CSV with one row per `(N, delta)` pair.
pub fn write_truncation_csv(path: &Path, report: &TruncationReport<f64>) -> Result<()> {
    let mut out = String::from("n,delta,lambda_bar_nc,lambda_tilde,ratio_c,slack_lo,slack_hi\n");
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_f64(row.n_radius),
            fmt_f64(row.delta),
            fmt_f64(row.lambda_bar_nc),
            fmt_f64(row.lambda_tilde),
            fmt_f64(row.ratio_c),
            fmt_f64(row.slack_lo),
            fmt_f64(row.slack_hi),
        );
    }
    atomic_write(path, &out)
}

/// Serializable mirror of the full ladder report, including the auxiliary
/// values that do not fit the summary CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruncationReportFile {
    pub lambda_bar: f64,
    pub mu_f: f64,
    pub eta_level: f64,
    pub rows: Vec<TruncationRowFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruncationRowFile {
    pub n_radius: f64,
    pub delta: f64,
    pub ratio_c: f64,
    pub lambda_bar_nc: f64,
    pub lambda_transfer: f64,
    pub lambda_tilde: f64,
    pub lambda_tilde2: f64,
    pub lambda_bar_ndelta: f64,
    pub slack_lo: f64,
    pub slack_hi: f64,
}

pub fn write_truncation_json(path: &Path, report: &TruncationReport<f64>) -> Result<()> {
    let file = TruncationReportFile {
        lambda_bar: report.lambda_bar,
        mu_f: report.mu_f,
        eta_level: report.eta_level,
        rows: report
            .rows
            .iter()
            .map(|r| TruncationRowFile {
                n_radius: r.n_radius,
                delta: r.delta,
                ratio_c: r.ratio_c,
                lambda_bar_nc: r.lambda_bar_nc,
                lambda_transfer: r.lambda_transfer,
                lambda_tilde: r.lambda_tilde,
                lambda_tilde2: r.lambda_tilde2,
                lambda_bar_ndelta: r.lambda_bar_ndelta,
                slack_lo: r.slack_lo,
                slack_hi: r.slack_hi,
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Parse(format!("serialize truncation report: {e}")))?;
    atomic_write(path, &(json + "\n"))
}

pub fn read_truncation_json(path: &Path) -> Result<TruncationReportFile> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("truncation report: {e}")))
}

/// Machine-readable error document for stderr.
pub fn error_json(err: &Error) -> String {
    let kind = match err {
        Error::InvalidInput(_) => "invalid_input",
        Error::Degenerate(_) => "degenerate",
        Error::Singular(_) => "singular",
        Error::IterationCap { .. } => "iteration_cap",
        Error::Bracket(_) => "bracket",
        Error::BoundViolation { .. } => "bound_violation",
        Error::Regime(_) => "regime",
        Error::Io(_) => "io",
        Error::Parse(_) => "parse",
    };
    let doc = serde_json::json!({ "error": { "kind": kind, "message": err.to_string() } });
    doc.to_string()
}

/// Exit code for a failed command: configuration and file problems are 2,
/// anything that went wrong inside the numerics is 3.  (Exit 1 is reserved
/// for verification failures, which are reported without an `Error`.)
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::InvalidInput(_) | Error::Io(_) | Error::Parse(_) => 2,
        _ => 3,
    }
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    /// Mean-reverting diffusion discretized on the grid.
    Ou { theta: f64, sigma: f64 },
    /// Explicit kernel from a file in the `write_kernel_csv` format.
    Custom { kernel_file: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
    /// Relocation window in state coordinates, inclusive.
    pub u_min: f64,
    pub u_max: f64,
    /// Reference state; snapped to the nearest grid point.
    pub z: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardConfig {
    /// Named built-in shape, evaluated on the grid.
    Builtin { name: String },
    Inline { values: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostConfig {
    /// `c(x, xi) = value`, which must be strictly negative.
    Constant { value: f64 },
    /// `c(x, xi) = k0 + k1 |x - xi|` with `k0 < 0`, `k1 <= 0`.
    Proportional { k0: f64, k1: f64 },
    /// `c(x, xi) = d(x) + e(xi)` from vector files (`d` per state, `e` per
    /// window state).
    Separated { d_file: PathBuf, e_file: PathBuf },
    /// Full matrix from a file, one row per state, one column per window
    /// state.
    General { file: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaScheduleConfig {
    /// Number of terms of the built-in geometric schedule.
    pub terms: Option<usize>,
    /// Explicit strictly decreasing rates, overriding `terms`.
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    pub tol_lambda: Option<f64>,
    pub tol_span: Option<f64>,
    pub tol_drift: Option<f64>,
    pub tol_residual: Option<f64>,
    pub max_sweeps: Option<usize>,
    pub max_bisections: Option<usize>,
    pub tol_regime: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    pub n_ladder: Option<Vec<f64>>,
    pub deltas: Option<Vec<f64>>,
    pub eta_level: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub dt: f64,
    pub reward: RewardConfig,
    pub cost: CostConfig,
    #[serde(default)]
    pub alpha_schedule: Option<AlphaScheduleConfig>,
    #[serde(default)]
    pub tolerances: Option<ToleranceConfig>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub truncation: Option<TruncationConfig>,
}

fn default_seed() -> u64 {
    1
}

fn default_horizon() -> f64 {
    1e4
}

fn default_n_paths() -> usize {
    200
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU64, Ordering};

    static STAMP: AtomicU64 = AtomicU64::new(0);

    fn scratch_dir() -> PathBuf {
        let stamp = STAMP.fetch_add(1, Ordering::Relaxed);
        let dir = std::env::temp_dir()
            .join(format!("ergimp-io-{}-{stamp}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn kernel_round_trip_is_bit_exact() {
        let dir = scratch_dir();
        let path = dir.join("kernel.csv");
        let p = vec![0.1, 0.9, 1.0 / 3.0, 2.0 / 3.0];
        let kernel = build_custom_kernel(p.clone(), 2, 0.125).unwrap();
        write_kernel_csv(&path, &kernel).unwrap();
        let back = read_kernel_csv(&path).unwrap();
        assert_eq!(back.n(), 2);
        assert_eq!(back.dt().to_bits(), 0.125f64.to_bits());
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(back.row(i)[j].to_bits(), p[i * 2 + j].to_bits());
            }
        }
    }

    #[test]
    fn malformed_kernel_is_a_parse_error() {
        let dir = scratch_dir();
        let path = dir.join("kernel.csv");
        atomic_write(&path, "n,dt\n2,0.5\n0.5,0.5\n").unwrap();
        assert!(matches!(read_kernel_csv(&path), Err(Error::Parse(_))));
        atomic_write(&path, "nope\n").unwrap();
        assert!(matches!(read_kernel_csv(&path), Err(Error::Parse(_))));
    }

    #[test]
    fn vector_round_trip_keeps_awkward_values() {
        let dir = scratch_dir();
        let path = dir.join("v.csv");
        let v = vec![-0.1, 1e-300, std::f64::consts::PI, -2.5e17];
        write_vector_csv(&path, &v).unwrap();
        let back = read_vector_csv(&path).unwrap();
        assert_eq!(v.len(), back.len());
        for (a, b) in v.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn matrix_round_trip_and_shape_errors() {
        let dir = scratch_dir();
        let path = dir.join("m.csv");
        let m = vec![-0.3, -0.5, -0.4, -0.3, -0.2, -0.4];
        write_matrix_csv(&path, &m, 3, 2).unwrap();
        let (back, rows, cols) = read_matrix_csv(&path).unwrap();
        assert_eq!((rows, cols), (3, 2));
        for (a, b) in m.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(matches!(
            write_matrix_csv(&path, &m, 2, 2),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = scratch_dir();
        let path = dir.join("out.txt");
        atomic_write(&path, "hello\n").unwrap();
        atomic_write(&path, "again\n").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "again\n");
        let leftovers: Vec<_> = fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .filter(|n| n.to_string_lossy().contains(".tmp"))
            .collect();
        assert!(leftovers.is_empty(), "{leftovers:?}");
    }

    #[test]
    fn config_parses_and_rejects_unknown_fields() {
        let good = r#"{
            "model": {"kind": "ou", "theta": 1.0, "sigma": 1.0},
            "grid": {"x_min": -6.0, "x_max": 6.0, "n": 241,
                     "u_min": -1.0, "u_max": 1.0, "z": 0.0},
            "dt": 0.1,
            "reward": {"kind": "builtin", "name": "cauchy"},
            "cost": {"kind": "proportional", "k0": -0.5, "k1": -0.5},
            "seed": 7
        }"#;
        let cfg: RunConfig = serde_json::from_str(good).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.n_paths, 200);
        assert!((cfg.horizon - 1e4).abs() < 1e-9);
        let bad = good.replace("\"seed\": 7", "\"sede\": 7");
        assert!(serde_json::from_str::<RunConfig>(&bad).is_err());
    }

    #[test]
    fn error_json_names_the_kind() {
        let doc = error_json(&Error::Parse("x".into()));
        assert!(doc.contains("\"kind\":\"parse\""), "{doc}");
        assert_eq!(exit_code_for(&Error::Parse("x".into())), 2);
        assert_eq!(
            exit_code_for(&Error::Singular("x".into())),
            3
        );
    }
}
