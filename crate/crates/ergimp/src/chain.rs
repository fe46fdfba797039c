//! State grids and transition kernels for finite chains.
//!
//! A model is a 1-d grid of states, a row-stochastic one-step kernel with a
//! physical time step `dt`, a compact relocation window `U` given as a
//! contiguous index range, and a reference state `z` inside it.  Kernel
//! construction validates stochasticity, irreducibility and aperiodicity up
//! front so the solvers can assume a unichain model throughout.

use crate::linalg::{self, Lu};
use crate::scalar::{lit, Scalar};
use crate::{Error, Result};

/// Residual tolerance that degrades gracefully for narrower scalars.
pub(crate) fn residual_tol<T: Scalar>() -> T {
    lit::<T>(1e-12).max(T::epsilon() * lit::<T>(100.0))
}

/// A finite 1-d state grid with a relocation window and reference state.
#[derive(Debug, Clone)]
pub struct StateGrid<T> {
    points: Vec<T>,
    u_lo: usize,
    u_hi: usize,
    z_index: usize,
}

impl<T: Scalar> StateGrid<T> {
    /// Builds a grid from explicit coordinates.  `u_lo..=u_hi` is the
    /// relocation window, `z_index` the reference state inside it.
    pub fn new(points: Vec<T>, u_lo: usize, u_hi: usize, z_index: usize) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(Error::InvalidInput("grid needs at least 2 states".into()));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("grid coordinates must be finite".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "grid coordinates must be strictly increasing".into(),
            ));
        }
        if u_lo > u_hi || u_hi >= n {
            return Err(Error::InvalidInput(format!(
                "relocation window {u_lo}..={u_hi} out of range for {n} states"
            )));
        }
        if z_index < u_lo || z_index > u_hi {
            return Err(Error::InvalidInput(format!(
                "reference state {z_index} outside relocation window {u_lo}..={u_hi}"
            )));
        }
        Ok(StateGrid { points, u_lo, u_hi, z_index })
    }

    /// States `0, 1, ..., n-1` at integer coordinates.  Convenient for
    /// abstract chains where only the indices matter.
    pub fn indexed(n: usize, u_lo: usize, u_hi: usize, z_index: usize) -> Result<Self> {
        let points = (0..n).map(|i| lit::<T>(i as f64)).collect();
        Self::new(points, u_lo, u_hi, z_index)
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn point(&self, i: usize) -> T {
        self.points[i]
    }

    /// Inclusive index range of the relocation window.
    pub fn u_range(&self) -> (usize, usize) {
        (self.u_lo, self.u_hi)
    }

    pub fn u_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.u_lo..=self.u_hi
    }

    pub fn in_u(&self, i: usize) -> bool {
        i >= self.u_lo && i <= self.u_hi
    }

    pub fn z_index(&self) -> usize {
        self.z_index
    }

    pub fn z_point(&self) -> T {
        self.points[self.z_index]
    }

    /// Index of the grid point nearest to `x` (ties to the lower index).
    pub fn nearest_index(&self, x: T) -> usize {
        let mut best = 0usize;
        let mut dist = (self.points[0] - x).abs();
        for (i, &p) in self.points.iter().enumerate().skip(1) {
            let d = (p - x).abs();
            if d < dist {
                dist = d;
                best = i;
            }
        }
        best
    }

    /// Indices whose coordinate lies within `radius` of `center`
    /// (closed ball, with a small tolerance so grid points sitting exactly
    /// on the radius are included).
    pub fn ball_indices(&self, center: T, radius: T) -> Vec<usize> {
        let slack = lit::<T>(1e-12) * (T::one() + radius.abs());
        self.points
            .iter()
            .enumerate()
            .filter(|(_, &p)| (p - center).abs() <= radius + slack)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Uniform grid on `[xmin, xmax]` with `n` points.  The relocation window
/// `[u_min, u_max]` and the reference point `z` are snapped to the nearest
/// grid indices.
pub fn build_grid<T: Scalar>(
    xmin: f64,
    xmax: f64,
    n: usize,
    u_min: f64,
    u_max: f64,
    z: f64,
) -> Result<StateGrid<T>> {
    if !(xmin < xmax) || !xmin.is_finite() || !xmax.is_finite() {
        return Err(Error::InvalidInput(format!(
            "grid range [{xmin}, {xmax}] is not a finite interval"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidInput("grid needs at least 2 states".into()));
    }
    if !(u_min <= u_max) || u_min < xmin || u_max > xmax {
        return Err(Error::InvalidInput(format!(
            "relocation window [{u_min}, {u_max}] must sit inside [{xmin}, {xmax}]"
        )));
    }
    if z < u_min || z > u_max {
        return Err(Error::InvalidInput(format!(
            "reference point {z} outside relocation window [{u_min}, {u_max}]"
        )));
    }
    let h = (xmax - xmin) / (n - 1) as f64;
    let points: Vec<T> = (0..n).map(|i| lit::<T>(xmin + h * i as f64)).collect();
    let snap = |x: f64| -> usize { (((x - xmin) / h).round() as isize).clamp(0, n as isize - 1) as usize };
    StateGrid::new(points, snap(u_min), snap(u_max), snap(z))
}

/// Row-stochastic one-step transition kernel with a physical time step.
#[derive(Debug, Clone)]
pub struct TransitionKernel<T> {
    n: usize,
    dt: T,
    p: Vec<T>,
}

impl<T: Scalar> TransitionKernel<T> {
    /// Validates and normalizes explicit rows.  Rows must sum to 1 within a
    /// small tolerance and the chain must be irreducible and aperiodic.
    pub fn new(rows: Vec<T>, n: usize, dt: T) -> Result<Self> {
        if rows.len() != n * n || n == 0 {
            return Err(Error::InvalidInput(format!(
                "kernel shape mismatch: {} entries for n = {n}",
                rows.len()
            )));
        }
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(Error::InvalidInput("time step dt must be positive and finite".into()));
        }
        let mut p = rows;
        let ulp_tol = T::epsilon() * lit::<T>(16.0) * lit::<T>(n as f64);
        let row_tol = residual_tol::<T>().max(ulp_tol);
        for i in 0..n {
            let row = &mut p[i * n..(i + 1) * n];
            let mut sum = T::zero();
            for &v in row.iter() {
                if !v.is_finite() || v < T::zero() {
                    return Err(Error::Degenerate(format!(
                        "kernel row {i} has a negative or non-finite entry"
                    )));
                }
                sum += v;
            }
            if (sum - T::one()).abs() > row_tol {
                return Err(Error::Degenerate(format!(
                    "kernel row {i} sums to {sum} (expected 1 within {row_tol:e})"
                )));
            }
            // Rows already at 1 up to ulp noise are kept verbatim, so a
            // kernel written to disk and read back is reproduced bit for
            // bit.  Rescaling such a row would shift entries by an ulp and
            // break that round trip without improving anything downstream.
            if (sum - T::one()).abs() > ulp_tol {
                for v in row.iter_mut() {
                    *v = *v / sum;
                }
            }
        }
        let kernel = TransitionKernel { n, dt, p };
        kernel.check_unichain()?;
        Ok(kernel)
    }

    fn check_unichain(&self) -> Result<()> {
        let n = self.n;
        let edge = |i: usize, j: usize| self.p[i * n + j] > T::zero();
        // Strong connectivity: reach everything from state 0, forward and
        // backward.
        let bfs = |forward: bool| -> Vec<i64> {
            let mut d = vec![-1i64; n];
            let mut queue = std::collections::VecDeque::new();
            d[0] = 0;
            queue.push_back(0usize);
            while let Some(u) = queue.pop_front() {
                for v in 0..n {
                    let has = if forward { edge(u, v) } else { edge(v, u) };
                    if has && d[v] < 0 {
                        d[v] = d[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            d
        };
        let fwd = bfs(true);
        if fwd.iter().any(|&d| d < 0) || bfs(false).iter().any(|&d| d < 0) {
            return Err(Error::Degenerate(
                "kernel is reducible: some states do not communicate".into(),
            ));
        }
        // Period: gcd of d[u] + 1 - d[v] over all edges, with d the forward
        // BFS levels.  Aperiodic means gcd 1.
        let mut g: i64 = 0;
        for u in 0..n {
            for v in 0..n {
                if edge(u, v) {
                    let mut a = (fwd[u] + 1 - fwd[v]).abs();
                    let mut b = g;
                    while a != 0 {
                        let r = b % a;
                        b = a;
                        a = r;
                    }
                    g = b;
                }
            }
        }
        if g != 1 {
            return Err(Error::Degenerate(format!("kernel is periodic with period {g}")));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn entry(&self, i: usize, j: usize) -> T {
        self.p[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.p[i * self.n..(i + 1) * self.n]
    }

    pub fn p_flat(&self) -> &[T] {
        &self.p
    }

    /// `y = P x` (expectation of `x` after one step, rowwise).
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        linalg::mat_vec(&self.p, self.n, x, &mut y);
        y
    }

    /// `y = Pᵀ x` (push-forward of a measure).
    pub fn apply_transpose(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        linalg::mat_tvec(&self.p, self.n, x, &mut y);
        y
    }

    /// Dense submatrix `P[idx, idx]` in the order given.
    pub fn gather_submatrix(&self, idx: &[usize]) -> Vec<T> {
        let m = idx.len();
        let mut q = vec![T::zero(); m * m];
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                q[a * m + b] = self.p[i * self.n + j];
            }
        }
        q
    }
}

/// Discretized Ornstein-Uhlenbeck kernel `dX = -theta X dt + sigma dW` on a
/// grid.  Row `i` is the exact one-step Gaussian (mean `e^{-theta dt} x_i`,
/// variance `sigma^2 (1 - e^{-2 theta dt}) / (2 theta)`) integrated over
/// grid cells; cell edges sit halfway between points and the outermost cells
/// absorb the tails, so every row sums to 1 exactly up to rounding.
pub fn build_ou_kernel<T: Scalar>(
    grid: &StateGrid<T>,
    theta: f64,
    sigma: f64,
    dt: f64,
) -> Result<TransitionKernel<T>> {
    if !(theta > 0.0) || !(sigma > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidInput(
            "Ornstein-Uhlenbeck parameters theta, sigma, dt must be positive".into(),
        ));
    }
    let n = grid.n();
    let pts: Vec<f64> = grid.points().iter().map(|p| p.to_f64().unwrap()).collect();
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(f64::NEG_INFINITY);
    for w in pts.windows(2) {
        edges.push(0.5 * (w[0] + w[1]));
    }
    edges.push(f64::INFINITY);
    let decay = (-theta * dt).exp();
    let sd = (sigma * sigma * (1.0 - decay * decay) / (2.0 * theta)).sqrt();
    // Upper tail mass P(Z > t) in standardized coordinates, accurate in both
    // tails.
    let tail = |t: f64| -> f64 {
        if t == f64::NEG_INFINITY {
            1.0
        } else if t == f64::INFINITY {
            0.0
        } else {
            0.5 * libm::erfc(t / std::f64::consts::SQRT_2)
        }
    };
    let mut rows = vec![T::zero(); n * n];
    for i in 0..n {
        let mean = decay * pts[i];
        let mut sum = 0.0f64;
        for j in 0..n {
            let a = (edges[j] - mean) / sd;
            let b = (edges[j + 1] - mean) / sd;
            // Difference of upper tails, evaluated on the side that keeps
            // the erfc arguments positive.
            let mass = if a >= 0.0 {
                tail(a) - tail(b)
            } else if b <= 0.0 {
                tail(-b) - tail(-a)
            } else {
                1.0 - tail(-a) - tail(b)
            };
            if !mass.is_finite() || mass < -1e-15 {
                return Err(Error::Degenerate(format!(
                    "Ornstein-Uhlenbeck cell mass degenerate at row {i}, cell {j}: {mass}"
                )));
            }
            rows[i * n + j] = lit::<T>(mass.max(0.0));
            sum += mass.max(0.0);
        }
        if !sum.is_finite() || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Degenerate(format!(
                "Ornstein-Uhlenbeck row {i} sums to {sum} before normalization"
            )));
        }
    }
    TransitionKernel::new(rows, n, lit::<T>(dt))
}

/// Kernel from explicit rows, e.g. hand-written chains or CSV imports.
pub fn build_custom_kernel<T: Scalar>(rows: Vec<T>, n: usize, dt: T) -> Result<TransitionKernel<T>> {
    TransitionKernel::new(rows, n, dt)
}

/// Stationary distribution of the kernel, solved directly from
/// `mu^T P = mu^T`, `sum mu = 1` with iterative refinement.
pub fn stationary_distribution<T: Scalar>(kernel: &TransitionKernel<T>) -> Result<Vec<T>> {
    let n = kernel.n();
    // A = I - P^T; the border column e absorbs the rank deficiency and the
    // border row enforces the normalization.
    let mut a = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            let v = -kernel.entry(j, i);
            a[i * n + j] = if i == j { T::one() + v } else { v };
        }
    }
    let ones = vec![T::one(); n];
    let zeros = vec![T::zero(); n];
    let (mut mu, _s) = linalg::solve_bordered(&a, n, &ones, &ones, &zeros, T::one())?;
    let tol = residual_tol::<T>() * lit::<T>(n as f64);
    for m in mu.iter_mut() {
        if *m < T::zero() {
            if *m < -tol {
                return Err(Error::Degenerate(format!(
                    "stationary distribution has a negative mass {m:e}"
                )));
            }
            *m = T::zero();
        }
    }
    let total: T = mu.iter().fold(T::zero(), |s, &v| s + v);
    for m in mu.iter_mut() {
        *m = *m / total;
    }
    let back = kernel.apply_transpose(&mu);
    let resid = crate::scalar::sup_dist(&back, &mu);
    if resid > tol {
        return Err(Error::Degenerate(format!(
            "stationary distribution residual {resid:e} exceeds {tol:e}"
        )));
    }
    Ok(mu)
}

/// Expected time (in `dt` units of physical time) to reach the `target` set,
/// one entry per state; zero on the target itself.
pub fn expected_hitting_time<T: Scalar>(
    kernel: &TransitionKernel<T>,
    target: &[bool],
) -> Result<Vec<T>> {
    let n = kernel.n();
    if target.len() != n {
        return Err(Error::InvalidInput("target mask length mismatch".into()));
    }
    if !target.iter().any(|&b| b) {
        return Err(Error::InvalidInput("hitting target is empty".into()));
    }
    let idx: Vec<usize> = (0..n).filter(|&i| !target[i]).collect();
    let mut t = vec![T::zero(); n];
    if idx.is_empty() {
        return Ok(t);
    }
    let m = idx.len();
    let mut a = kernel.gather_submatrix(&idx);
    for v in a.iter_mut() {
        *v = -*v;
    }
    for k in 0..m {
        a[k * m + k] += T::one();
    }
    let b = vec![kernel.dt(); m];
    let lu = Lu::factor(&a, m).map_err(|e| match e {
        Error::Singular(msg) => Error::Singular(format!(
            "hitting-time system singular (target unreachable?): {msg}"
        )),
        other => other,
    })?;
    let x = lu.solve_refined(&a, &b, 1);
    for (&i, &xi) in idx.iter().zip(&x) {
        if !(xi >= T::zero()) {
            return Err(Error::Degenerate(format!(
                "negative expected hitting time {xi} at state {i}"
            )));
        }
        t[i] = xi;
    }
    Ok(t)
}

/// Empirical mixing summary: total-variation distance to stationarity at
/// dyadic step horizons, a fitted geometric decay rate (per unit time), and
/// a crude time integral of the distance.
#[derive(Debug, Clone)]
pub struct ErgodicityProfile<T> {
    /// Step horizons sampled (1, 2, 4, ...).
    pub horizons: Vec<usize>,
    /// Worst-case-over-rows total variation to the stationary law at each
    /// horizon.
    pub tv: Vec<T>,
    /// Fitted decay rate per unit of physical time; infinite when the chain
    /// is already stationary after one step.
    pub rate_per_time: T,
    /// Trapezoid integral of the distance over physical time plus a
    /// geometric tail estimate.
    pub tv_time_integral: T,
}

/// Measures how fast the kernel mixes by squaring it to dyadic horizons.
pub fn ergodicity_profile<T: Scalar>(kernel: &TransitionKernel<T>) -> Result<ErgodicityProfile<T>> {
    let n = kernel.n();
    let mu = stationary_distribution(kernel)?;
    let floor = lit::<T>(1e-13).max(T::epsilon() * lit::<T>(64.0));
    let tv_of = |p: &[T]| -> T {
        let mut worst = T::zero();
        for i in 0..n {
            let mut s = T::zero();
            for j in 0..n {
                s += (p[i * n + j] - mu[j]).abs();
            }
            worst = worst.max(s * lit::<T>(0.5));
        }
        worst
    };
    let matmul = |a: &[T], b: &[T]| -> Vec<T> {
        let mut c = vec![T::zero(); n * n];
        for i in 0..n {
            for k in 0..n {
                let aik = a[i * n + k];
                if aik == T::zero() {
                    continue;
                }
                let brow = &b[k * n..(k + 1) * n];
                let crow = &mut c[i * n..(i + 1) * n];
                for (cj, bj) in crow.iter_mut().zip(brow) {
                    *cj += aik * *bj;
                }
            }
        }
        // Renormalize rows so rounding does not accumulate across squarings.
        for i in 0..n {
            let row = &mut c[i * n..(i + 1) * n];
            let s: T = row.iter().fold(T::zero(), |acc, &v| acc + v);
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        c
    };
    let mut power = kernel.p_flat().to_vec();
    let mut k = 1usize;
    let mut horizons = vec![k];
    let mut tv = vec![tv_of(&power)];
    for _ in 0..24 {
        if *tv.last().unwrap() <= floor {
            break;
        }
        power = matmul(&power, &power);
        k *= 2;
        horizons.push(k);
        tv.push(tv_of(&power));
    }
    // Fit ln tv against physical time on the usable points.
    let dt = kernel.dt().to_f64().unwrap();
    let pts: Vec<(f64, f64)> = horizons
        .iter()
        .zip(&tv)
        .filter_map(|(&h, &v)| {
            let v = v.to_f64().unwrap();
            if v > 1e-13 && v < 0.5 {
                Some((h as f64 * dt, v.ln()))
            } else {
                None
            }
        })
        .collect();
    let rate = if tv[0].to_f64().unwrap() <= 1e-14 {
        T::infinity()
    } else if pts.len() < 2 {
        // Mixed too fast to fit; bound the rate from the last visible point.
        let (t_last, ln_last) = pts.last().copied().unwrap_or((dt, tv[0].to_f64().unwrap().ln()));
        lit::<T>((-ln_last / t_last).max(0.0))
    } else {
        let m = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
        lit::<T>((-slope).max(0.0))
    };
    let mut integral = T::zero();
    for w in horizons.windows(2).zip(tv.windows(2)) {
        let (hs, vs) = w;
        let dt_span = lit::<T>((hs[1] - hs[0]) as f64) * kernel.dt();
        integral += (vs[0] + vs[1]) * lit::<T>(0.5) * dt_span;
    }
    if rate.is_finite() && rate > T::zero() {
        integral += *tv.last().unwrap() / rate;
    }
    Ok(ErgodicityProfile { horizons, tv, rate_per_time: rate, tv_time_integral: integral })
}
