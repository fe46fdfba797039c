//! Resolvents and potential functions of the uncontrolled chain.
//!
//! The discrete-time discounting convention: a step of length `dt` under
//! rate `alpha` accrues reward with weight `delta_eff = (1 - e^{-alpha dt})
//! / alpha` and discounts the future by `beta = e^{-alpha dt}`.  The
//! resolvent is `r = sum_k beta^k P^k f delta_eff`; the potential `q` is its
//! centered `alpha -> 0` limit, solving the Poisson equation
//! `q - P q = (f - mu(f)) dt` with `mu(q) = 0`.

use crate::chain::TransitionKernel;
use crate::linalg::{self, Lu};
use crate::scalar::{lit, sup_norm, Scalar};
use crate::{Error, Result};

/// Per-step accrual weight `(1 - e^{-alpha dt}) / alpha`, continuous at
/// `alpha = 0` where it equals `dt`.
pub fn delta_eff<T: Scalar>(alpha: T, dt: T) -> T {
    if alpha == T::zero() {
        dt
    } else {
        -(-alpha * dt).exp_m1() / alpha
    }
}

/// Per-step discount factor `e^{-alpha dt}`.
pub fn discount_factor<T: Scalar>(alpha: T, dt: T) -> T {
    (-alpha * dt).exp()
}

/// Geometric discount-rate schedule `alpha_k = alpha_0 / 2^k` with
/// `alpha_0 = 1 / (10 dt)`, largest first.
pub fn alpha_schedule<T: Scalar>(dt: T, terms: usize) -> Vec<T> {
    let a0 = T::one() / (lit::<T>(10.0) * dt);
    (0..terms)
        .map(|k| a0 * lit::<T>(0.5).powi(k as i32))
        .collect()
}

/// Schedule used when tabulating potentials.  The gap to the Poisson
/// potential decays linearly in alpha, so 24 halvings push it below 1e-6
/// on chains that mix on the unit time scale.
pub fn default_potential_schedule<T: Scalar>(dt: T) -> Vec<T> {
    alpha_schedule(dt, 24)
}

/// A running reward on the grid, with its sup norm cached.
#[derive(Debug, Clone)]
pub struct RewardSpec<T> {
    f: Vec<T>,
    norm: T,
}

impl<T: Scalar> RewardSpec<T> {
    pub fn new(f: Vec<T>) -> Result<Self> {
        if f.is_empty() || f.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("reward must be finite and non-empty".into()));
        }
        let norm = sup_norm(&f);
        Ok(RewardSpec { f, norm })
    }

    pub fn values(&self) -> &[T] {
        &self.f
    }

    pub fn sup_norm(&self) -> T {
        self.norm
    }

    /// `mu(f)` for a probability vector `mu`.
    pub fn mean_under(&self, mu: &[T]) -> T {
        self.f.iter().zip(mu).fold(T::zero(), |s, (&fi, &mi)| s + fi * mi)
    }
}

/// Solves `(I - beta P) r = f delta_eff` for `alpha > 0`.  The result obeys
/// `sup|r| <= sup|f| / alpha`.
pub fn resolvent<T: Scalar>(kernel: &TransitionKernel<T>, f: &[T], alpha: T) -> Result<Vec<T>> {
    if !(alpha > T::zero()) {
        return Err(Error::InvalidInput(
            "resolvent needs alpha > 0; the alpha = 0 limit is the Poisson potential".into(),
        ));
    }
    let n = kernel.n();
    if f.len() != n {
        return Err(Error::InvalidInput("reward length mismatch".into()));
    }
    let beta = discount_factor(alpha, kernel.dt());
    let delta = delta_eff(alpha, kernel.dt());
    let mut a = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            let v = -beta * kernel.entry(i, j);
            a[i * n + j] = if i == j { T::one() + v } else { v };
        }
    }
    let b: Vec<T> = f.iter().map(|&fi| fi * delta).collect();
    let lu = Lu::factor(&a, n)?;
    let r = lu.solve_refined(&a, &b, 2);
    let bound = sup_norm(f) / alpha;
    let slack = lit::<T>(1e-10) * (T::one() + bound);
    let got = sup_norm(&r);
    if got > bound + slack {
        return Err(Error::Degenerate(format!(
            "resolvent norm {got:e} exceeds its bound {bound:e}"
        )));
    }
    Ok(r)
}

/// Centered resolvent `q_alpha`, the resolvent of `f - mu(f)`.  Stays O(1)
/// as `alpha -> 0` and converges to the Poisson potential.
pub fn q_alpha<T: Scalar>(
    kernel: &TransitionKernel<T>,
    f: &[T],
    mu: &[T],
    alpha: T,
) -> Result<Vec<T>> {
    if f.len() != mu.len() {
        return Err(Error::InvalidInput("reward or measure length mismatch".into()));
    }
    let mu_f = f.iter().zip(mu).fold(T::zero(), |s, (&fi, &mi)| s + fi * mi);
    let centered: Vec<T> = f.iter().map(|&fi| fi - mu_f).collect();
    let mut r = resolvent(kernel, &centered, alpha)?;
    // Rounding in mu(f) is amplified by 1/(1 - beta), which dwarfs 1e-10
    // once alpha gets small; project the drift back out.  Subtracting a
    // constant this size perturbs the resolvent equation by O(drift * (1 -
    // beta)), far below the solve's own residual.
    let drift = r.iter().zip(mu).fold(T::zero(), |s, (&ri, &mi)| s + ri * mi);
    for ri in r.iter_mut() {
        *ri = *ri - drift;
    }
    Ok(r)
}

/// Poisson potential: `q - P q = (f - mu(f)) dt`, normalized by `mu(q) = 0`.
pub fn poisson_q<T: Scalar>(kernel: &TransitionKernel<T>, f: &[T], mu: &[T]) -> Result<Vec<T>> {
    let n = kernel.n();
    if f.len() != n || mu.len() != n {
        return Err(Error::InvalidInput("reward or measure length mismatch".into()));
    }
    let mu_f = f.iter().zip(mu).fold(T::zero(), |s, (&fi, &mi)| s + fi * mi);
    let mut a = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            let v = -kernel.entry(i, j);
            a[i * n + j] = if i == j { T::one() + v } else { v };
        }
    }
    let ones = vec![T::one(); n];
    let b: Vec<T> = f.iter().map(|&fi| (fi - mu_f) * kernel.dt()).collect();
    let (q, _s) = linalg::solve_bordered(&a, n, &ones, mu, &b, T::zero())?;
    Ok(q)
}

/// Telescoped consistency check for a discounted evaluation.
///
/// Given per-step reward `r` and a vector `v` claimed to satisfy
/// `v = r + beta P v`, verifies the `K`-step identity
/// `v = sum_{k<K} beta^k P^k r + beta^K P^K v` and returns the worst sup-norm
/// violation across horizons `1..=K`.
pub fn check_dynkin<T: Scalar>(
    kernel: &TransitionKernel<T>,
    r: &[T],
    v: &[T],
    alpha: T,
    horizon: usize,
) -> Result<T> {
    let n = kernel.n();
    if r.len() != n || v.len() != n {
        return Err(Error::InvalidInput("vector length mismatch".into()));
    }
    let beta = discount_factor(alpha, kernel.dt());
    let mut partial: Vec<T> = r.to_vec();
    let mut pk_r: Vec<T> = r.to_vec();
    let mut pk_v: Vec<T> = v.to_vec();
    let mut bk = T::one();
    let mut worst = T::zero();
    for _ in 1..=horizon {
        pk_v = kernel.apply(&pk_v);
        bk *= beta;
        let mut bad = T::zero();
        for i in 0..n {
            let resid = v[i] - partial[i] - bk * pk_v[i];
            bad = bad.max(resid.abs());
        }
        worst = worst.max(bad);
        pk_r = kernel.apply(&pk_r);
        for i in 0..n {
            partial[i] += bk * pk_r[i];
        }
    }
    Ok(worst)
}

/// Potentials of the uncontrolled chain across a discount schedule.
#[derive(Debug, Clone)]
pub struct PotentialTable<T> {
    pub alphas: Vec<T>,
    pub mu: Vec<T>,
    pub mu_f: T,
    /// Poisson potential (the `alpha = 0` member).
    pub q: Vec<T>,
    /// Centered resolvents, one per entry of `alphas`.
    pub q_alpha: Vec<Vec<T>>,
}

impl<T: Scalar> PotentialTable<T> {
    pub fn build(
        kernel: &TransitionKernel<T>,
        reward: &RewardSpec<T>,
        alphas: &[T],
    ) -> Result<Self> {
        if alphas.iter().any(|&a| !(a > T::zero())) {
            return Err(Error::InvalidInput(
                "discount schedule must be strictly positive; alpha = 0 is implicit".into(),
            ));
        }
        let mu = crate::chain::stationary_distribution(kernel)?;
        let mu_f = reward.mean_under(&mu);
        let q = poisson_q(kernel, reward.values(), &mu)?;
        let mut q_a = Vec::with_capacity(alphas.len());
        for &a in alphas {
            q_a.push(q_alpha(kernel, reward.values(), &mu, a)?);
        }
        Ok(PotentialTable { alphas: alphas.to_vec(), mu, mu_f, q, q_alpha: q_a })
    }

    /// `sup_alpha sup_x max(-q_alpha(x), 0)` over the schedule and the
    /// `alpha = 0` member.
    pub fn q_negative_part_sup(&self) -> T {
        let neg_part = |v: &[T]| {
            v.iter()
                .fold(T::zero(), |m, &x| m.max(if x < T::zero() { -x } else { T::zero() }))
        };
        let mut s = neg_part(&self.q);
        for qa in &self.q_alpha {
            s = s.max(neg_part(qa));
        }
        s
    }

    /// Worst Dynkin-identity violation across the table, horizon `K`.
    pub fn dynkin_residual(&self, kernel: &TransitionKernel<T>, f: &[T], horizon: usize) -> Result<T> {
        let centered: Vec<T> = f.iter().map(|&fi| fi - self.mu_f).collect();
        let r0: Vec<T> = centered.iter().map(|&c| c * kernel.dt()).collect();
        let mut worst = check_dynkin(kernel, &r0, &self.q, T::zero(), horizon)?;
        for (&a, qa) in self.alphas.iter().zip(&self.q_alpha) {
            let d = delta_eff(a, kernel.dt());
            let ra: Vec<T> = centered.iter().map(|&c| c * d).collect();
            worst = worst.max(check_dynkin(kernel, &ra, qa, a, horizon)?);
        }
        Ok(worst)
    }
}

/// Sanity guard used by solvers that depend on a well-conditioned resolvent
/// system: estimates the 1-norm condition number of `I - beta P` and fails
/// above `1e12`.
pub fn check_resolvent_conditioning<T: Scalar>(
    kernel: &TransitionKernel<T>,
    alpha: T,
) -> Result<f64> {
    let n = kernel.n();
    let beta = discount_factor(alpha, kernel.dt());
    let mut a = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            let v = -beta * kernel.entry(i, j);
            a[i * n + j] = if i == j { T::one() + v } else { v };
        }
    }
    let lu = Lu::factor(&a, n)?;
    let cond = lu.cond_1_estimate(&a);
    if !cond.is_finite() || cond > 1e12 {
        return Err(Error::Singular(format!(
            "resolvent system condition estimate {cond:.3e} exceeds 1e12 at alpha {alpha}"
        )));
    }
    Ok(cond)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::build_custom_kernel;

    fn ts_kernel() -> TransitionKernel<f64> {
        build_custom_kernel(vec![0.5, 0.5, 0.5, 0.5], 2, 1.0).unwrap()
    }

    #[test]
    fn accrual_weight_limits() {
        assert_eq!(delta_eff(0.0f64, 0.25), 0.25);
        // Tiny alpha stays smooth: expansion dt - alpha dt^2 / 2.
        let d = delta_eff(1e-9f64, 0.5);
        assert!((d - (0.5 - 1e-9 * 0.125)).abs() < 1e-15);
        let a = -(0.9f64.ln());
        assert!((delta_eff(a, 1.0) - 0.1 / a).abs() < 1e-15);
    }

    #[test]
    fn resolvent_of_uniform_two_state_chain() {
        // With beta = 0.9: r0 = 5.5 delta, r1 = 4.5 delta.
        let a = -(0.9f64.ln());
        let d = delta_eff(a, 1.0);
        let r = resolvent(&ts_kernel(), &[1.0, 0.0], a).unwrap();
        assert!((r[0] - 5.5 * d).abs() < 1e-12, "r0 = {}", r[0]);
        assert!((r[1] - 4.5 * d).abs() < 1e-12, "r1 = {}", r[1]);
    }

    #[test]
    fn poisson_potential_of_uniform_two_state_chain() {
        let k = ts_kernel();
        let mu = crate::chain::stationary_distribution(&k).unwrap();
        let q = poisson_q(&k, &[1.0, 0.0], &mu).unwrap();
        assert!((q[0] - 0.5).abs() < 1e-13);
        assert!((q[1] + 0.5).abs() < 1e-13);
    }

    #[test]
    fn poisson_potential_of_a_biased_chain() {
        // p01 = 0.2, p10 = 0.6, dt = 0.5, f = (1, 0): mu = (0.75, 0.25),
        // q0 - q1 = 0.625 and mu(q) = 0 give q = (0.15625, -0.46875).
        let k = build_custom_kernel(vec![0.8f64, 0.2, 0.6, 0.4], 2, 0.5).unwrap();
        let mu = crate::chain::stationary_distribution(&k).unwrap();
        let q = poisson_q(&k, &[1.0, 0.0], &mu).unwrap();
        assert!((q[0] - 0.15625).abs() < 1e-13);
        assert!((q[1] + 0.46875).abs() < 1e-13);
    }

    #[test]
    fn centered_resolvent_tracks_the_potential() {
        let k = ts_kernel();
        let a = -(0.9f64.ln());
        let qa = q_alpha(&k, &[1.0, 0.0], &[0.5, 0.5], a).unwrap();
        let d = delta_eff(a, 1.0);
        // P annihilates the centered reward here, so q_alpha is exactly
        // delta_eff times the centered reward.
        assert!((qa[0] - 0.5 * d).abs() < 1e-13);
        assert!((qa[1] + 0.5 * d).abs() < 1e-13);
    }

    #[test]
    fn potential_table_is_centered_and_consistent() {
        let k = build_custom_kernel(vec![0.8f64, 0.2, 0.6, 0.4], 2, 0.5).unwrap();
        let f = RewardSpec::new(vec![1.0, 0.0]).unwrap();
        let alphas = alpha_schedule(0.5, 10);
        let table = PotentialTable::build(&k, &f, &alphas).unwrap();
        assert!((table.mu_f - 0.75).abs() < 1e-13);
        for qa in &table.q_alpha {
            let m: f64 = qa.iter().zip(&table.mu).map(|(&q, &w)| q * w).sum();
            assert!(m.abs() < 1e-11, "centered resolvent has mean {m}");
        }
        let resid = table.dynkin_residual(&k, f.values(), 40).unwrap();
        assert!(resid < 1e-11, "dynkin residual {resid}");
        assert!(table.q_negative_part_sup() >= 0.46);
    }

    #[test]
    fn resolvent_rejects_zero_alpha() {
        assert!(matches!(
            resolvent(&ts_kernel(), &[1.0, 0.0], 0.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn conditioning_guard_accepts_a_mild_system() {
        let c = check_resolvent_conditioning(&ts_kernel(), 0.1).unwrap();
        assert!(c < 1e3, "condition estimate {c}");
    }
}
