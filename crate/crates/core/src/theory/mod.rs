//! Exact stationary statistics of heavy-ball SGD on a quadratic with
//! epoch-correlated noise, evaluated one Hessian eigendirection at a time.
//!
//! Along an eigendirection with eigenvalue `λ` the pair `x_k = (θ_k, θ_{k-1})`
//! obeys `x_k = D x_{k-1} − η δg_k e₁`. Epoch sampling anti-correlates the
//! noise over up to `M` steps; that correlation enters through the matrix `E`,
//! while `F` holds the uncorrelated (white-noise) solution.

mod lyapunov;
mod mat2;

use std::io::Write;

use log::warn;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{Hyperparams, Spectrum};

pub use lyapunov::{default_horizon, lyapunov_oracle, lyapunov_oracle_with, LyapunovResult, NoiseKernel};
pub use mat2::Mat2;

/// Smallest eigenvalue accepted by the closed forms (`(I−D)^{-1}` scales as `1/ηλ`).
pub const MIN_LAMBDA: f64 = 1e-300;

/// The 2×2 objects of one eigendirection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferAlgebra {
    pub eta: f64,
    pub beta: f64,
    pub lambda: f64,
    pub m: usize,
    /// `[[1+β−ηλ, −β], [1, 0]]`.
    pub d: Mat2,
    /// `sqrt((1−β)² − ηλ(2(1+β)−ηλ))`; imaginary in the underdamped regime.
    pub s: Complex64,
    pub lambda_plus: Complex64,
    pub lambda_minus: Complex64,
    pub e: Mat2,
    pub f: Mat2,
}

impl TransferAlgebra {
    pub fn new(eta: f64, beta: f64, lambda: f64, m: usize) -> Result<Self> {
        if lambda <= MIN_LAMBDA || !lambda.is_finite() {
            return Err(Error::InvalidInput(format!("eigenvalue {lambda:e} too small or not finite")));
        }
        if m < 2 {
            return Err(Error::DegenerateEpoch { batches: m });
        }
        let hp = Hyperparams::with_batches(eta, beta, m)?;
        hp.check_stable(lambda)?;
        let el = eta * lambda;
        let d = Mat2::new(1.0 + beta - el, -beta, 1.0, 0.0);
        let disc = (1.0 - beta).powi(2) - el * (2.0 * (1.0 + beta) - el);
        let s = Complex64::new(disc, 0.0).sqrt();
        let half = 0.5 * (1.0 + beta - el);
        let lambda_plus = half + 0.5 * s;
        let lambda_minus = half - 0.5 * s;
        let e = correlation_matrix_series(&d, m);
        let pref = 1.0 / ((1.0 - beta) * (2.0 * (1.0 + beta) - el));
        let f = Mat2::new(
            (1.0 + beta) / el,
            2.0 * beta * (el - 1.0 - beta) / el,
            2.0,
            2.0 * (el - 2.0),
        )
        .scale(pref);
        Ok(Self { eta, beta, lambda, m, d, s, lambda_plus, lambda_minus, e, f })
    }

    pub fn from_hyperparams(hp: &Hyperparams, lambda: f64) -> Result<Self> {
        Self::new(hp.eta(), hp.beta(), lambda, hp.epoch_batches_for_theory()?)
    }

    pub fn eta_lambda(&self) -> f64 {
        self.eta * self.lambda
    }

    pub fn spectral_radius(&self) -> f64 {
        self.lambda_plus.norm().max(self.lambda_minus.norm())
    }

    /// `D^k` by binary exponentiation.
    pub fn d_pow(&self, k: u64) -> Mat2 {
        self.d.pow(k)
    }

    /// `D^k` from the eigendecomposition `D = V diag(Λ±) V^{-1}` with
    /// `V = [[Λ+, Λ−], [1, 1]]`. `None` when `|s| ≤ 1e-6` (near-defective `D`).
    pub fn d_pow_eigen(&self, k: u64) -> Option<Mat2> {
        if self.s.norm() <= 1e-6 || k > u32::MAX as u64 {
            return None;
        }
        let (lp, lm, s) = (self.lambda_plus, self.lambda_minus, self.s);
        let pk = lp.powu(k as u32);
        let mk = lm.powu(k as u32);
        let a = (pk * lp - mk * lm) / s;
        let b = -(lp * lm) * (pk - mk) / s;
        let c = (pk - mk) / s;
        let dd = (lp * mk - lm * pk) / s;
        Some(Mat2::new(a.re, b.re, c.re, dd.re))
    }

    /// `(I − D)^{-1}` from the adjugate, using `det(I − D) = ηλ`.
    pub fn one_minus_d_inverse(&self) -> Mat2 {
        (Mat2::IDENTITY - self.d).adjugate().scale(1.0 / self.eta_lambda())
    }

    /// `E` from the closed form `D (D^M + (I−D)M − I)(I−D)^{-2} / (M(M−1)) e₁e₁ᵀ`.
    ///
    /// Loses precision through cancellation when `M ηλ` is small; the
    /// series evaluation stored in [`e`](Self::e) is the reference.
    pub fn e_closed_form(&self) -> Mat2 {
        let m = self.m as f64;
        let one_minus_d = Mat2::IDENTITY - self.d;
        let inv = self.one_minus_d_inverse();
        let core = self.d_pow(self.m as u64) + one_minus_d.scale(m) - Mat2::IDENTITY;
        let full = (self.d * core * inv * inv).scale(1.0 / (m * (m - 1.0)));
        Mat2::new(full.a, 0.0, full.c, 0.0)
    }

    /// `e₁ − (E + Eᵀ) e₁`.
    pub fn correlation_vector(&self) -> [f64; 2] {
        [1.0 - 2.0 * self.e.a, -self.e.c]
    }

    /// `‖(E + Eᵀ) e₁‖∞`, the size of the anti-correlation correction.
    pub fn correction_norm(&self) -> f64 {
        (2.0 * self.e.a).abs().max(self.e.c.abs())
    }
}

/// `E` via `Σ_{h=0}^{M−1} (M−1−h) D^{h+1} e₁ / (M(M−1))`, evaluated with a
/// Horner recursion on the vector `D^h e₁`.
fn correlation_matrix_series(d: &Mat2, m: usize) -> Mat2 {
    let mut v = [0.0f64; 2];
    for h in (0..m).rev() {
        let coef = (m - 1 - h) as f64;
        let dv = d.apply(v);
        v = [dv[0] + coef, dv[1]];
    }
    let u = d.apply(v);
    let norm = 1.0 / (m as f64 * (m as f64 - 1.0));
    Mat2::new(u[0] * norm, 0.0, u[1] * norm, 0.0)
}

/// Stationary weight and velocity variance with the correlation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryPoint {
    pub sigma_theta2: f64,
    pub sigma_v2: f64,
    pub tau: f64,
}

fn check_noise(sigma_dg2: f64) -> Result<()> {
    if sigma_dg2.is_finite() && sigma_dg2 >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("noise variance must be non-negative, got {sigma_dg2}")))
    }
}

/// `η²σ² F [e₁ − (E+Eᵀ)e₁]`, for the algebra of one direction.
pub fn stationary_from_algebra(alg: &TransferAlgebra, sigma_dg2: f64) -> StationaryPoint {
    let w = alg.correlation_vector();
    let unit = alg.f.apply(w);
    let k = alg.eta * alg.eta * sigma_dg2;
    StationaryPoint { sigma_theta2: k * unit[0], sigma_v2: k * unit[1], tau: 2.0 * unit[0] / unit[1] }
}

/// Exact stationary variances under epoch sampling.
pub fn exact_stationary(lambda: f64, sigma_dg2: f64, hp: &Hyperparams) -> Result<StationaryPoint> {
    check_noise(sigma_dg2)?;
    let alg = TransferAlgebra::from_hyperparams(hp, lambda)?;
    Ok(stationary_from_algebra(&alg, sigma_dg2))
}

/// Exact stationary variances for uncorrelated noise (`E = 0`).
pub fn exact_stationary_uncorrelated(lambda: f64, sigma_dg2: f64, hp: &Hyperparams) -> Result<StationaryPoint> {
    check_noise(sigma_dg2)?;
    if lambda <= MIN_LAMBDA || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("eigenvalue {lambda:e} too small or not finite")));
    }
    hp.check_stable(lambda)?;
    let (eta, beta) = (hp.eta(), hp.beta());
    let el = eta * lambda;
    let pref = eta * eta * sigma_dg2 / ((1.0 - beta) * (2.0 * (1.0 + beta) - el));
    Ok(StationaryPoint {
        sigma_theta2: pref * (1.0 + beta) / el,
        sigma_v2: pref * 2.0,
        tau: (1.0 + beta) / el,
    })
}

/// Large-eigenvalue approximation; coincides with the uncorrelated solution.
pub fn approx_large(lambda: f64, sigma_dg2: f64, hp: &Hyperparams) -> Result<StationaryPoint> {
    exact_stationary_uncorrelated(lambda, sigma_dg2, hp)
}

/// Small-eigenvalue approximation: `τ = τ_SGD`, independent of `λ`.
pub fn approx_small(lambda: f64, sigma_dg2: f64, hp: &Hyperparams) -> Result<StationaryPoint> {
    check_noise(sigma_dg2)?;
    hp.check_stable(lambda)?;
    let (eta, beta) = (hp.eta(), hp.beta());
    let m = hp.epoch_batches_for_theory()? as f64;
    let pref = eta * eta * sigma_dg2 / (2.0 * (1.0 - beta) * (1.0 + beta));
    let tau = (m / 3.0) * (1.0 + beta) / (1.0 - beta);
    Ok(StationaryPoint { sigma_theta2: pref * tau, sigma_v2: pref * 2.0, tau })
}

/// `λ_cross = 3(1−β)/(ηM)`.
pub fn lambda_cross(hp: &Hyperparams) -> Result<f64> {
    let m = hp.epoch_batches_for_theory()? as f64;
    Ok(3.0 * (1.0 - hp.beta()) / (hp.eta() * m))
}

/// `τ_SGD = (M/3)(1+β)/(1−β)`.
pub fn tau_sgd(hp: &Hyperparams) -> Result<f64> {
    let m = hp.epoch_batches_for_theory()? as f64;
    Ok((m / 3.0) * (1.0 + hp.beta()) / (1.0 - hp.beta()))
}

/// Which approximation describes an eigendirection. Advisory only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Large,
    Small,
    NearCrossover,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Large => "large",
            Regime::Small => "small",
            Regime::NearCrossover => "crossover",
        }
    }
}

/// Tags `λ` against the band `[λ_cross/2, 2λ_cross]`.
pub fn regime(lambda: f64, hp: &Hyperparams) -> Result<Regime> {
    let lc = lambda_cross(hp)?;
    Ok(if lambda < 0.5 * lc {
        Regime::Small
    } else if lambda > 2.0 * lc {
        Regime::Large
    } else {
        Regime::NearCrossover
    })
}

/// Threshold used for "`M(ηλ)² ≫ 1`".
pub const STRICT_LARGE_THRESHOLD: f64 = 10.0;

/// The stricter validity condition of the large-eigenvalue approximation.
pub fn strict_large_valid(lambda: f64, hp: &Hyperparams) -> Result<bool> {
    let m = hp.epoch_batches_for_theory()? as f64;
    let el = hp.eta() * lambda;
    Ok(m * el * el >= STRICT_LARGE_THRESHOLD)
}

/// Per-direction exact predictions for a whole spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPrediction {
    pub lambdas: Vec<f64>,
    pub points: Vec<StationaryPoint>,
    pub regimes: Vec<Regime>,
    pub lambda_cross: f64,
    pub tau_sgd: f64,
}

pub fn predict(spectrum: &Spectrum, hp: &Hyperparams) -> Result<StationaryPrediction> {
    spectrum.check_stable(hp)?;
    let noise = spectrum.noise_variances();
    let points = spectrum
        .lambdas()
        .iter()
        .zip(&noise)
        .map(|(&l, &s)| exact_stationary(l, s, hp))
        .collect::<Result<Vec<_>>>()?;
    let regimes = spectrum.lambdas().iter().map(|&l| regime(l, hp)).collect::<Result<Vec<_>>>()?;
    Ok(StationaryPrediction {
        lambdas: spectrum.lambdas().to_vec(),
        points,
        regimes,
        lambda_cross: lambda_cross(hp)?,
        tau_sgd: tau_sgd(hp)?,
    })
}

/// `Σᵢ ½ λᵢ σ²_{θ,i}`.
pub fn loss_fluctuation(spectrum: &Spectrum, variances: &[f64]) -> Result<f64> {
    if variances.len() != spectrum.len() {
        return Err(Error::Dimension(format!(
            "{} eigenvalues but {} variances",
            spectrum.len(),
            variances.len()
        )));
    }
    Ok(spectrum.lambdas().iter().zip(variances).map(|(l, s)| 0.5 * l * s).sum())
}

/// Loss fluctuation under the exact (anti-correlated) prediction against the
/// baseline where every direction keeps its uncorrelated weight variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossFluctuation {
    pub anticorrelated: f64,
    pub baseline: f64,
    pub ratio: f64,
}

pub fn loss_fluctuation_report(spectrum: &Spectrum, hp: &Hyperparams) -> Result<LossFluctuation> {
    let pred = predict(spectrum, hp)?;
    let exact: Vec<f64> = pred.points.iter().map(|p| p.sigma_theta2).collect();
    let base = spectrum
        .lambdas()
        .iter()
        .zip(spectrum.noise_variances())
        .map(|(&l, s)| approx_large(l, s, hp).map(|p| p.sigma_theta2))
        .collect::<Result<Vec<_>>>()?;
    let anticorrelated = loss_fluctuation(spectrum, &exact)?;
    let baseline = loss_fluctuation(spectrum, &base)?;
    Ok(LossFluctuation { anticorrelated, baseline, ratio: anticorrelated / baseline })
}

/// One row of the `theory-table` output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryRow {
    pub lambda: f64,
    pub sigma_dg2: f64,
    pub eta: f64,
    pub beta: f64,
    pub m: usize,
    pub exact: StationaryPoint,
    pub sigma_theta2_large: f64,
    pub sigma_theta2_small: f64,
    pub regime: Regime,
    pub strict_large: bool,
}

pub fn theory_table(spectrum: &Spectrum, hp: &Hyperparams) -> Result<Vec<TheoryRow>> {
    let m = hp.epoch_batches_for_theory()?;
    if !hp.integer_epoch() {
        warn!("theory table evaluated with non-integer M; using ceil(N/S) = {m}");
    }
    let pred = predict(spectrum, hp)?;
    spectrum
        .lambdas()
        .iter()
        .zip(spectrum.noise_variances())
        .zip(pred.points.iter().zip(&pred.regimes))
        .map(|((&lambda, s), (exact, regime))| {
            Ok(TheoryRow {
                lambda,
                sigma_dg2: s,
                eta: hp.eta(),
                beta: hp.beta(),
                m,
                exact: *exact,
                sigma_theta2_large: approx_large(lambda, s, hp)?.sigma_theta2,
                sigma_theta2_small: approx_small(lambda, s, hp)?.sigma_theta2,
                regime: *regime,
                strict_large: strict_large_valid(lambda, hp)?,
            })
        })
        .collect()
}

pub const THEORY_TABLE_COLUMNS: [&str; 12] = [
    "lambda",
    "sigma_dg2",
    "eta",
    "beta",
    "M",
    "sigma_theta2_exact",
    "sigma_v2_exact",
    "tau_exact",
    "sigma_theta2_large",
    "sigma_theta2_small",
    "regime",
    "strict_large",
];

pub fn write_theory_table<W: Write>(rows: &[TheoryRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.to_string());
    out.write_record(THEORY_TABLE_COLUMNS).map_err(io)?;
    for r in rows {
        out.write_record([
            format!("{:e}", r.lambda),
            format!("{:e}", r.sigma_dg2),
            format!("{:e}", r.eta),
            format!("{}", r.beta),
            r.m.to_string(),
            format!("{:e}", r.exact.sigma_theta2),
            format!("{:e}", r.exact.sigma_v2),
            format!("{:e}", r.exact.tau),
            format!("{:e}", r.sigma_theta2_large),
            format!("{:e}", r.sigma_theta2_small),
            r.regime.as_str().to_string(),
            r.strict_large.to_string(),
        ])
        .map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn hp(eta: f64, beta: f64, m: usize) -> Hyperparams {
        Hyperparams::with_batches(eta, beta, m).unwrap()
    }

    #[test]
    fn uncorrelated_example() {
        let p = exact_stationary_uncorrelated(1.0, 1.0, &hp(0.1, 0.0, 10)).unwrap();
        assert_relative_eq!(p.sigma_theta2, 0.01 / (1.9 * 0.1), max_relative = 1e-14);
        assert_relative_eq!(p.tau, 10.0, max_relative = 1e-14);
    }

    #[test]
    fn uncorrelated_diverges_at_edge() {
        let a = exact_stationary_uncorrelated(19.0, 1.0, &hp(0.1, 0.0, 10)).unwrap();
        let b = exact_stationary_uncorrelated(19.99, 1.0, &hp(0.1, 0.0, 10)).unwrap();
        assert!(b.sigma_theta2 > 50.0 * a.sigma_theta2);
        assert!(exact_stationary_uncorrelated(20.0, 1.0, &hp(0.1, 0.0, 10)).is_err());
    }

    #[test]
    fn exact_matches_oracle_example() {
        let h = hp(0.1, 0.5, 10);
        let p = exact_stationary(1.0, 1.0, &h).unwrap();
        let o = lyapunov_oracle(1.0, 1.0, &h, None).unwrap();
        assert_relative_eq!(p.sigma_theta2, o.sigma_theta2, max_relative = 1e-8);
        assert_relative_eq!(p.sigma_v2, o.sigma_v2, max_relative = 1e-8);
    }

    #[test]
    fn scalar_examples() {
        let h = hp(7e-4, 0.9, 1000);
        assert_relative_eq!(lambda_cross(&h).unwrap(), 0.3 / 0.7, max_relative = 1e-12);
        assert_relative_eq!(tau_sgd(&hp(0.3, 0.0, 90)).unwrap(), 30.0, max_relative = 1e-14);
        let ragged = Hyperparams::new(0.005, 0.9, 64, 50_000).unwrap();
        assert!(!ragged.integer_epoch());
        assert_relative_eq!(tau_sgd(&ragged).unwrap(), (782.0 / 3.0) * 19.0, max_relative = 1e-12);
    }

    #[test]
    fn flat_direction_reaches_plateau() {
        let h = hp(7e-4, 0.9, 1000);
        let p = exact_stationary(1e-3, 1e-3, &h).unwrap();
        let ts = tau_sgd(&h).unwrap();
        assert_relative_eq!(ts, 6333.333333333333, max_relative = 1e-12);
        assert!((p.tau / ts - 1.0).abs() < 0.15, "tau = {}", p.tau);
    }

    #[test]
    fn large_approx_at_ten_crossover() {
        let h = hp(7e-4, 0.9, 1000);
        let l = 10.0 * lambda_cross(&h).unwrap();
        let e = exact_stationary(l, l, &h).unwrap();
        let a = approx_large(l, l, &h).unwrap();
        assert!((a.sigma_theta2 / e.sigma_theta2 - 1.0).abs() < 0.10);
        assert!((a.sigma_v2 / e.sigma_v2 - 1.0).abs() < 0.10);
    }

    #[test]
    fn approximations_meet_at_crossover() {
        for (beta, m) in [(0.0, 100), (0.0, 1000), (0.9, 1000), (0.5, 400)] {
            let h = hp(1e-3, beta, m);
            let l = lambda_cross(&h).unwrap();
            let a = approx_large(l, 1.0, &h).unwrap();
            let b = approx_small(l, 1.0, &h).unwrap();
            assert!((a.sigma_theta2 / b.sigma_theta2 - 1.0).abs() < 0.05);
            assert!((a.sigma_v2 / b.sigma_v2 - 1.0).abs() < 0.05);
            let e = exact_stationary(l, 1.0, &h).unwrap();
            assert!((a.sigma_v2 / e.sigma_v2 - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn small_tau_independent_of_lambda() {
        let h = hp(0.01, 0.9, 100);
        let a = approx_small(1e-4, 1.0, &h).unwrap();
        let b = approx_small(1e-2, 1.0, &h).unwrap();
        assert_eq!(a.tau, b.tau);
    }

    #[test]
    fn d_power_two_ways() {
        // β → 1 with tiny ηλ: binary powering drifts by ~k·ε·‖D^j‖², so the
        // tolerance there is looser
        for (beta, el, tol) in [(0.0, 0.3, 1e-10), (0.5, 0.01, 1e-10), (0.9, 1.0, 1e-10), (0.9, 3.5, 1e-10), (0.99, 1e-4, 1e-9)] {
            let a = TransferAlgebra::new(1.0, beta, el, 50).unwrap();
            for k in [1u64, 2, 7, 50, 333] {
                let p = a.d_pow(k);
                if let Some(q) = a.d_pow_eigen(k) {
                    let scale = p.max_abs().max(1e-300);
                    assert!((p - q).max_abs() / scale < tol, "beta {beta} el {el} k {k}");
                }
            }
        }
    }

    #[test]
    fn critical_damping_has_no_eigen_path() {
        // (1−β)² = ηλ(2(1+β)−ηλ) at β = 0.25 gives ηλ = 0.25
        let beta = 0.25;
        let el = 0.25;
        let a = TransferAlgebra::new(1.0, beta, el, 10).unwrap();
        assert!(a.s.norm() < 1e-6);
        assert!(a.d_pow_eigen(5).is_none());
        assert!(a.d_pow(5).max_abs().is_finite());
    }

    #[test]
    fn closed_form_e_agrees_where_well_conditioned() {
        for (beta, el, m) in [(0.0, 0.5, 5), (0.5, 0.1, 50), (0.9, 0.05, 500), (0.0, 1.5, 13)] {
            let a = TransferAlgebra::new(1.0, beta, el, m).unwrap();
            let c = a.e_closed_form();
            assert!((c - a.e).max_abs() < 1e-10 * a.e.max_abs().max(1.0));
        }
    }

    #[test]
    fn e_vanishes_for_long_epochs() {
        for (beta, el) in [(0.0, 0.5), (0.5, 0.2), (0.9, 0.3)] {
            for m in [100usize, 1000, 10_000] {
                let a = TransferAlgebra::new(1.0, beta, el, m).unwrap();
                assert!(a.correction_norm() <= 100.0 / (m as f64 * el * el));
            }
        }
    }

    #[test]
    fn regime_tags() {
        let h = hp(0.01, 0.0, 300);
        let lc = lambda_cross(&h).unwrap();
        assert_eq!(regime(lc, &h).unwrap(), Regime::NearCrossover);
        assert_eq!(regime(lc / 3.0, &h).unwrap(), Regime::Small);
        assert_eq!(regime(3.0 * lc, &h).unwrap(), Regime::Large);
    }

    #[test]
    fn loss_fluctuation_examples() {
        let s = Spectrum::new(vec![2.0], crate::model::NoiseLevels::Proportional(1.0)).unwrap();
        assert_eq!(loss_fluctuation(&s, &[3.0]).unwrap(), 3.0);
        assert_eq!(loss_fluctuation(&s, &[0.0]).unwrap(), 0.0);
        assert!(loss_fluctuation(&s, &[]).is_err());
    }

    #[test]
    fn loss_fluctuation_reduced_when_flat() {
        let h = hp(0.01, 0.9, 100);
        let lc = lambda_cross(&h).unwrap();
        let mut l = crate::model::log_space(lc / 100.0, lc / 2.0, 90).unwrap();
        l.extend(crate::model::log_space(2.0 * lc, 10.0 * lc, 10).unwrap());
        let s = Spectrum::new(l, crate::model::NoiseLevels::Proportional(1.0)).unwrap();
        let r = loss_fluctuation_report(&s, &h).unwrap();
        assert!(r.ratio < 1.0);
    }

    #[test]
    fn theory_table_csv_shape() {
        let h = hp(0.01, 0.5, 20);
        let s = Spectrum::log_spaced(0.01, 10.0, 5, 1.0).unwrap();
        let rows = theory_table(&s, &h).unwrap();
        let mut buf = Vec::new();
        write_theory_table(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("lambda,sigma_dg2,eta,beta,M,"));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(exact_stationary(1.0, 1.0, &hp(0.1, 0.0, 1)).is_err());
        assert!(exact_stationary(30.0, 1.0, &hp(0.1, 0.0, 10)).is_err());
        assert!(exact_stationary(1e-301, 1.0, &hp(0.1, 0.0, 10)).is_err());
        assert!(exact_stationary(1.0, -1.0, &hp(0.1, 0.0, 10)).is_err());
    }

    proptest! {
        #[test]
        fn tau_non_increasing_in_lambda(beta in 0.0f64..0.95, m in 2usize..400, lo in -6.0f64..-1.0) {
            let h = hp(1.0, beta, m);
            let bound = 2.0 * (1.0 + beta);
            let mut prev = f64::INFINITY;
            for i in 0..25 {
                let el = (lo + i as f64 * ((bound * 0.95).ln() - lo) / 24.0).exp();
                let p = exact_stationary(el, 1.0, &h).unwrap();
                prop_assert!(p.tau <= prev * (1.0 + 1e-9), "tau increased at el = {}", el);
                prev = p.tau;
            }
        }

        #[test]
        fn variances_positive(beta in 0.0f64..0.99, m in 2usize..1000, frac in 1e-4f64..0.999) {
            let h = hp(1.0, beta, m);
            let el = frac * 2.0 * (1.0 + beta);
            let p = exact_stationary(el, 1.0, &h).unwrap();
            prop_assert!(p.sigma_theta2 > 0.0 && p.sigma_v2 > 0.0);
        }
    }
}
