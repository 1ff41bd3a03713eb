//! Finite-window PCA artifact on an isotropic quadratic.
//!
//! One window is analysed twice: in the generating (identity) basis, where
//! the variances are isotropic, and in the eigenbasis of its own sample
//! covariance, where sampling noise produces a spread of variances. A second
//! run with a moving minimum checks that the drift lands in the first
//! principal component.

use enl_core::model::NoiseLevels;
use enl_core::rng::streams;
use enl_core::sim::{subtract_mean_velocity, RunOptions};
use enl_core::stats::{abs_cosine, column_variances, default_tau_lag, estimate_stationary_series, pca_basis, spread_ratio};
use enl_core::theory::exact_stationary;
use enl_core::{Spectrum, StreamId};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{commuting_ensemble, resolve_burn_in, resolve_window, schedule_stream, simulate, Outcome};
use crate::config::ExperimentConfig;
use crate::error::CliResult;
use crate::table::{num, Table};

pub struct PcaReport {
    pub dim: usize,
    pub window: usize,
    pub burn_in: usize,
    pub original_variances: Vec<f64>,
    pub original_taus: Vec<f64>,
    pub pca_variances: Vec<f64>,
    pub pca_taus: Vec<f64>,
    pub sigma_theta2_exact: f64,
    pub tau_exact: f64,
    pub drift: Vec<f64>,
    pub drift_explained: Vec<f64>,
    /// `|cos|` between each drift-run principal axis and the drift direction.
    pub drift_cosines: Vec<f64>,
    /// Mean drift-removed weight variance of the drift run over that of the static run.
    pub shifted_variance_ratio: f64,
    pub streams: Vec<StreamId>,
}

impl PcaReport {
    pub fn original_ratio(&self) -> f64 {
        spread_ratio(&self.original_variances)
    }

    pub fn pca_ratio(&self) -> f64 {
        spread_ratio(&self.pca_variances)
    }

    pub fn original_tau_ratio(&self) -> f64 {
        spread_ratio(&self.original_taus)
    }

    pub fn pca_tau_ratio(&self) -> f64 {
        spread_ratio(&self.pca_taus)
    }

    pub fn drift_cosine(&self) -> f64 {
        self.drift_cosines.first().copied().unwrap_or(f64::NAN)
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<PcaReport> {
    let hp = cfg.hyper.build()?;
    let p = &cfg.pca;
    let lambda = p.eta_lambda / hp.eta();
    let spectrum = Spectrum::new(vec![lambda; p.dim], NoiseLevels::Proportional(p.noise_c))?;
    let (ensemble, ens_stream) = commuting_ensemble(&spectrum, &hp, cfg.seed)?;
    let window = resolve_window(&cfg.run, &hp)?;
    let burn_in = resolve_burn_in(&cfg.run, &hp);
    let tau_lag = default_tau_lag(hp.batches_per_epoch(), window);
    let exact = exact_stationary(lambda, spectrum.noise_variance(0), &hp)?;

    let s0 = schedule_stream(cfg.seed, 0);
    let opts = RunOptions::new(window, burn_in);
    let stat = simulate(&ensemble, &hp, cfg.run.sampling, s0, &opts)?;
    let original_variances = column_variances(&stat.theta);
    let original_taus: Vec<f64> = estimate_stationary_series(&stat.theta, &stat.velocity, tau_lag)?
        .directions
        .iter()
        .map(|d| d.tau_ratio)
        .collect();
    let pca = pca_basis(&stat.theta)?;
    let theta_p = &stat.theta * &pca.basis;
    let v_p = &stat.velocity * &pca.basis;
    let pca_variances = column_variances(&theta_p);
    let pca_taus: Vec<f64> =
        estimate_stationary_series(&theta_p, &v_p, tau_lag)?.directions.iter().map(|d| d.tau_ratio).collect();

    // drift direction: a random unit vector scaled to `drift_speed` stationary deviations per step
    let aux = StreamId::new(cfg.seed, streams::AUX);
    let mut rng = aux.rng();
    let raw: Vec<f64> = (0..p.dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    let speed = p.drift_speed * exact.sigma_theta2.sqrt();
    let drift: Vec<f64> = raw.iter().map(|x| x / norm * speed).collect();
    let s1 = schedule_stream(cfg.seed, 1);
    let mut dopts = opts.clone();
    dopts.drift = Some(drift.clone());
    let moving = simulate(&ensemble, &hp, cfg.run.sampling, s1, &dopts)?;
    let dpca = pca_basis(&moving.theta)?;
    let drift_cosines: Vec<f64> = (0..p.dim)
        .map(|j| abs_cosine(&dpca.basis.column(j).iter().copied().collect::<Vec<_>>(), &drift))
        .collect();
    let shifted = subtract_mean_velocity(&moving)?;
    let shifted_theta: &DMatrix<f64> = &shifted.shifted.as_ref().expect("shifted").theta;
    let shifted_variance_ratio = mean(&column_variances(shifted_theta)) / mean(&original_variances);

    Ok(PcaReport {
        dim: p.dim,
        window,
        burn_in,
        original_variances,
        original_taus,
        pca_variances,
        pca_taus,
        sigma_theta2_exact: exact.sigma_theta2,
        tau_exact: exact.tau,
        drift,
        drift_explained: dpca.explained,
        drift_cosines,
        shifted_variance_ratio,
        streams: vec![ens_stream, s0, s1, aux],
    })
}

impl PcaReport {
    pub fn outcome(&self, _cfg: &ExperimentConfig) -> Outcome {
        let mut o = Table::new("original_basis.csv", &["coordinate", "variance", "tau", "sigma_theta2_exact", "tau_exact"]);
        o.meta("window", self.window).meta("burn_in", self.burn_in).meta("dim", self.dim);
        for i in 0..self.dim {
            o.push(vec![
                i.to_string(),
                num(self.original_variances[i]),
                num(self.original_taus[i]),
                num(self.sigma_theta2_exact),
                num(self.tau_exact),
            ]);
        }
        let mut p = Table::new("pca.csv", &["rank", "explained_variance", "tau", "explained_variance_drift", "cos_to_drift"]);
        p.meta("window", self.window).meta("dim", self.dim);
        for i in 0..self.dim {
            p.push(vec![
                i.to_string(),
                num(self.pca_variances[i]),
                num(self.pca_taus[i]),
                num(self.drift_explained[i]),
                num(self.drift_cosines[i]),
            ]);
        }
        let mut out = Outcome { tables: vec![o, p], streams: self.streams.clone(), ..Default::default() };
        out.metric("original_variance_ratio", self.original_ratio());
        out.metric("pca_variance_ratio", self.pca_ratio());
        out.metric("original_tau_ratio", self.original_tau_ratio());
        out.metric("pca_tau_ratio", self.pca_tau_ratio());
        out.metric("drift_cosine", self.drift_cosine());
        out.metric("shifted_variance_ratio", self.shifted_variance_ratio);
        out
    }
}
