//! Brute-force stationary covariance of the stacked recursion
//! `y_k = X y_{k-1} + z_k` with `y = (θ, v)`, `X = [[1−ηλ, β], [−ηλ, β]]` and
//! `z_k = −η δg_k (1, 1)ᵀ`.
//!
//! The covariance is the truncated double sum over impulse responses
//! `w_m = X^m (1, 1)ᵀ` weighted by the noise autocorrelation. Nothing here
//! touches the `D`/`E`/`F` algebra, which is the point.

use log::warn;

use crate::error::{Error, Result};
use crate::model::Hyperparams;

/// Noise autocorrelation used by the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKernel {
    /// Epoch sampling: lag `l ∈ 1..=M` carries `−(M−l)/(M(M−1))`.
    Epoch,
    /// Uncorrelated noise: only lag 0.
    White,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovResult {
    pub sigma_theta2: f64,
    pub sigma_v2: f64,
    pub cov_theta_v: f64,
    pub horizon: usize,
    /// Bound on the neglected tail relative to the result.
    pub tail_bound: f64,
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    fn add(&mut self, x: f64) {
        let t = self.s + x;
        if self.s.abs() >= x.abs() {
            self.c += (self.s - t) + x;
        } else {
            self.c += (x - t) + self.s;
        }
        self.s = t;
    }

    fn value(&self) -> f64 {
        self.s + self.c
    }
}

fn spectral_radius(eta_lambda: f64, beta: f64) -> f64 {
    // X has trace 1 + β − ηλ and determinant β
    let tr = 1.0 + beta - eta_lambda;
    let disc = tr * tr - 4.0 * beta;
    if disc >= 0.0 {
        let r = disc.sqrt();
        ((tr + r) * 0.5).abs().max(((tr - r) * 0.5).abs())
    } else {
        beta.sqrt()
    }
}

/// Horizon after which `ρ^{2m}` (with a polynomial safety margin) is below 1e-18.
pub fn default_horizon(eta_lambda: f64, beta: f64, m: usize) -> usize {
    let rho = spectral_radius(eta_lambda, beta);
    let decay = -rho.ln();
    let base = if decay > 0.0 { (41.4 / decay).ceil() } else { f64::INFINITY };
    let h = (base * 1.1).min(5e8) as usize;
    h.max(20 * m).max(64)
}

pub fn lyapunov_oracle(lambda: f64, sigma_dg2: f64, hp: &Hyperparams, horizon: Option<usize>) -> Result<LyapunovResult> {
    lyapunov_oracle_with(lambda, sigma_dg2, hp, horizon, NoiseKernel::Epoch)
}

pub fn lyapunov_oracle_with(
    lambda: f64,
    sigma_dg2: f64,
    hp: &Hyperparams,
    horizon: Option<usize>,
    kernel: NoiseKernel,
) -> Result<LyapunovResult> {
    if !(sigma_dg2.is_finite() && sigma_dg2 >= 0.0) {
        return Err(Error::InvalidInput(format!("noise variance must be non-negative, got {sigma_dg2}")));
    }
    hp.check_stable(lambda)?;
    let m = match kernel {
        NoiseKernel::Epoch => hp.epoch_batches_for_theory()?,
        NoiseKernel::White => 0,
    };
    let (eta, beta) = (hp.eta(), hp.beta());
    let el = eta * lambda;
    let h = horizon.unwrap_or_else(|| default_horizon(el, beta, m));

    // impulse responses w_0..w_{h+m}
    let len = h + m + 1;
    let mut w = Vec::with_capacity(len);
    let mut cur = [1.0f64, 1.0];
    for _ in 0..len {
        w.push(cur);
        cur = [(1.0 - el) * cur[0] + beta * cur[1], -el * cur[0] + beta * cur[1]];
    }
    let coef: Vec<f64> = (1..=m)
        .map(|l| -((m - l) as f64) / (m as f64 * (m as f64 - 1.0)))
        .collect();

    let (mut s11, mut s12, mut s22) = (Sum::default(), Sum::default(), Sum::default());
    for i in 0..h {
        let a = w[i];
        // white part
        s11.add(a[0] * a[0]);
        s12.add(a[0] * a[1]);
        s22.add(a[1] * a[1]);
        if m == 0 {
            continue;
        }
        let mut r = [0.0f64; 2];
        for (l, c) in coef.iter().enumerate() {
            let b = w[i + l + 1];
            r[0] += c * b[0];
            r[1] += c * b[1];
        }
        // w_i rᵀ + r w_iᵀ
        s11.add(2.0 * a[0] * r[0]);
        s12.add(a[0] * r[1] + r[0] * a[1]);
        s22.add(2.0 * a[1] * r[1]);
    }
    let k = eta * eta * sigma_dg2;
    let (t, c, v) = (s11.value(), s12.value(), s22.value());
    let tail = w[h][0].abs().max(w[h][1].abs());
    let scale = t.abs().max(v.abs()).max(f64::MIN_POSITIVE);
    let rho = spectral_radius(el, beta);
    let tail_bound = tail * tail / (1.0 - rho * rho).max(f64::EPSILON) * (1.0 + 2.0 * m as f64) / scale;
    if tail_bound > 1e-10 {
        warn!("lyapunov oracle: truncation tail {tail_bound:e} exceeds 1e-10 of the result (horizon {h})");
    }
    Ok(LyapunovResult { sigma_theta2: k * t, sigma_v2: k * v, cov_theta_v: k * c, horizon: h, tail_bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::{exact_stationary, exact_stationary_uncorrelated};

    #[test]
    fn zero_noise_is_zero() {
        let hp = Hyperparams::with_batches(0.1, 0.5, 10).unwrap();
        let r = lyapunov_oracle(1.0, 0.0, &hp, None).unwrap();
        assert_eq!((r.sigma_theta2, r.sigma_v2), (0.0, 0.0));
    }

    #[test]
    fn white_kernel_plain_ols() {
        // β = 0: θ_k = (1 − ηλ) θ_{k−1} + noise, Var = η²σ² / (1 − (1 − ηλ)²)
        let hp = Hyperparams::with_batches(0.1, 0.0, 10).unwrap();
        let r = lyapunov_oracle_with(3.0, 2.0, &hp, None, NoiseKernel::White).unwrap();
        let want = 0.01 * 2.0 / (1.0 - 0.7f64 * 0.7);
        assert!((r.sigma_theta2 / want - 1.0).abs() < 1e-12);
    }

    #[test]
    fn white_kernel_matches_uncorrelated_formula() {
        for (beta, el) in [(0.0, 0.01), (0.5, 1.0), (0.9, 3.0)] {
            let hp = Hyperparams::with_batches(1.0, beta, 10).unwrap();
            let r = lyapunov_oracle_with(el, 1.0, &hp, None, NoiseKernel::White).unwrap();
            let u = exact_stationary_uncorrelated(el, 1.0, &hp).unwrap();
            assert!((r.sigma_theta2 / u.sigma_theta2 - 1.0).abs() < 1e-8);
            assert!((r.sigma_v2 / u.sigma_v2 - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn epoch_kernel_matches_exact_small_grid() {
        for (beta, el, m) in [(0.0, 0.5, 5), (0.5, 0.01, 50), (0.9, 1.9 * 0.9 * 1.9, 5)] {
            let hp = Hyperparams::with_batches(1.0, beta, m).unwrap();
            let r = lyapunov_oracle(el, 1.0, &hp, None).unwrap();
            let e = exact_stationary(el, 1.0, &hp).unwrap();
            assert!((r.sigma_theta2 / e.sigma_theta2 - 1.0).abs() < 1e-8, "{beta} {el} {m}");
            assert!((r.sigma_v2 / e.sigma_v2 - 1.0).abs() < 1e-8, "{beta} {el} {m}");
        }
    }
}
