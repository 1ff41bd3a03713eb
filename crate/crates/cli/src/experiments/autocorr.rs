//! Noise autocorrelation under epoch sampling and the with-replacement control.
//!
//! `fig1-autocorr` records the minibatch noise along every eigendirection in
//! three runs: epoch schedule with moving weights, epoch schedule in probe
//! mode (frozen weights), and the i.i.d. schedule. `appendix-h-replacement`
//! pairs the moving epoch and i.i.d. runs and additionally compares their
//! stationary variances with the correlated and uncorrelated theory.
//! Both kinds always run both schedules; `[run] sampling` is not read.

use enl_core::sampling::{autocorr_weight, SamplingMode};
use enl_core::sim::{subtract_mean_velocity, RunOptions};
use enl_core::stats::{default_tau_lag, estimate_autocorr, estimate_stationary, AutocorrEstimate, DirectionStats};
use enl_core::theory::{exact_stationary, exact_stationary_uncorrelated, StationaryPoint};
use enl_core::StreamId;
use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{
    average_replicas, commuting_ensemble, fraction, resolve_burn_in, resolve_spectrum, resolve_window, schedule_stream,
    simulate, Outcome,
};
use crate::config::{ExperimentConfig, ExperimentKind, HyperSection};
use crate::error::CliResult;
use crate::plot::{Plot, Series, Style};
use crate::table::{num, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    EpochMoving,
    EpochProbe,
    Iid,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::EpochMoving => "epoch",
            Variant::EpochProbe => "epoch_probe",
            Variant::Iid => "iid",
        }
    }

    fn mode(&self) -> SamplingMode {
        match self {
            Variant::Iid => SamplingMode::IidWithReplacement,
            _ => SamplingMode::EpochWithoutReplacement,
        }
    }
}

pub struct VariantResult {
    pub variant: Variant,
    pub autocorr: AutocorrEstimate,
    /// Per-direction stationary statistics (only for `appendix-h-replacement`).
    pub stationary: Option<Vec<DirectionStats>>,
}

pub struct AutocorrReport {
    pub m: usize,
    pub window: usize,
    pub burn_in: usize,
    pub directions: usize,
    /// `w(h)` for `h = 1..=L`.
    pub theory: Vec<f64>,
    pub variants: Vec<VariantResult>,
    pub lambdas: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub streams: Vec<StreamId>,
}

impl AutocorrReport {
    pub fn variant(&self, v: Variant) -> Option<&VariantResult> {
        self.variants.iter().find(|r| r.variant == v)
    }

    /// Fraction of lags inside the band around `w(h)`.
    pub fn fraction_on_theory(&self, v: Variant) -> Option<f64> {
        let th = &self.theory;
        self.variant(v).map(|r| r.autocorr.fraction_within(|h| th[h - 1]))
    }

    /// Fraction of lags inside the band around zero.
    pub fn fraction_on_null(&self, v: Variant) -> Option<f64> {
        self.variant(v).map(|r| r.autocorr.fraction_within(|_| 0.0))
    }
}

/// Minibatch noise variance with replacement over that without: `(N−1)/(N−S)`.
pub fn with_replacement_factor(h: &HyperSection) -> f64 {
    let (n, s) = (h.num_examples as f64, h.batch_size as f64);
    (n - 1.0) / (n - s)
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<AutocorrReport> {
    let hp = cfg.hyper.build()?;
    let m = hp.epoch_batches_for_theory()?;
    let spectrum = resolve_spectrum(&cfg.spectrum, &hp)?;
    let (ensemble, ens_stream) = commuting_ensemble(&spectrum, &hp, cfg.seed)?;
    let window = resolve_window(&cfg.run, &hp)?;
    let burn_in = resolve_burn_in(&cfg.run, &hp);
    let max_lag = cfg.run.max_lag.unwrap_or(2 * m);
    let with_stats = cfg.kind == ExperimentKind::AppendixHReplacement;
    let variants: &[Variant] = if with_stats {
        &[Variant::EpochMoving, Variant::Iid]
    } else {
        &[Variant::EpochMoving, Variant::EpochProbe, Variant::Iid]
    };
    let mut opts = RunOptions::new(window, burn_in);
    opts.record_noise = true;
    let tau_lag = default_tau_lag(m, window);

    let mut jobs = Vec::new();
    for (vi, v) in variants.iter().enumerate() {
        for r in 0..cfg.run.replicas as u64 {
            // the probe run reuses the moving run's schedule, so their noise coincides
            let stream_index = if *v == Variant::EpochProbe { 0 } else { vi as u64 };
            jobs.push((*v, r, schedule_stream(cfg.seed, stream_index * cfg.run.replicas as u64 + r)));
        }
    }
    let runs = jobs
        .par_iter()
        .map(|(v, _, stream)| -> CliResult<(DMatrix<f64>, Option<Vec<DirectionStats>>)> {
            let mut o = opts.clone();
            o.probe = *v == Variant::EpochProbe;
            let traj = simulate(&ensemble, &hp, v.mode(), *stream, &o)?;
            let stats = if with_stats {
                let traj = if cfg.run.detrend { subtract_mean_velocity(&traj)? } else { traj.clone() };
                Some(estimate_stationary(&traj, tau_lag)?.directions)
            } else {
                None
            };
            Ok((traj.noise.expect("noise recorded"), stats))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let d = ensemble.dim();
    let reps = cfg.run.replicas;
    let mut results = Vec::new();
    for (vi, v) in variants.iter().enumerate() {
        let block = &runs[vi * reps..(vi + 1) * reps];
        // replicas contribute additional independent directions
        let mut stacked = DMatrix::<f64>::zeros(window, d * reps);
        for (r, (noise, _)) in block.iter().enumerate() {
            stacked.columns_mut(r * d, d).copy_from(noise);
        }
        let autocorr = estimate_autocorr(&stacked, max_lag)?;
        let stationary = with_stats.then(|| {
            let per: Vec<Vec<DirectionStats>> = block.iter().map(|(_, s)| s.clone().expect("stats")).collect();
            average_replicas(&per)
        });
        results.push(VariantResult { variant: *v, autocorr, stationary });
    }
    let theory = (1..=max_lag).map(|h| autocorr_weight(h as i64, m)).collect::<enl_core::Result<Vec<_>>>()?;
    let mut streams: Vec<StreamId> = jobs.iter().map(|j| j.2).collect();
    streams.push(ens_stream);
    Ok(AutocorrReport {
        m,
        window,
        burn_in,
        directions: d * reps,
        theory,
        variants: results,
        lambdas: spectrum.lambdas().to_vec(),
        sigma2: spectrum.noise_variances(),
        streams,
    })
}

impl AutocorrReport {
    pub fn outcome(&self, cfg: &ExperimentConfig) -> Outcome {
        let mut cols = vec!["lag".to_string(), "theory".to_string()];
        for v in &self.variants {
            cols.push(format!("value_{}", v.variant.as_str()));
            cols.push(format!("band_{}", v.variant.as_str()));
        }
        let colrefs: Vec<&str> = cols.iter().map(|s| s.as_str()).collect();
        let mut t = Table::new("autocorr.csv", &colrefs);
        t.meta("M", self.m)
            .meta("window", self.window)
            .meta("burn_in", self.burn_in)
            .meta("directions", self.directions)
            .meta("eta", cfg.hyper.eta)
            .meta("beta", cfg.hyper.beta);
        for (i, th) in self.theory.iter().enumerate() {
            let mut row = vec![(i + 1).to_string(), num(*th)];
            for v in &self.variants {
                row.push(num(v.autocorr.values[i]));
                row.push(num(v.autocorr.band[i]));
            }
            t.push(row);
        }
        let lags: Vec<f64> = (1..=self.theory.len()).map(|h| h as f64).collect();
        let mut plot = Plot::new("noise autocorrelation", "lag h", "normalized autocorrelation", false, false)
            .add(Series::new("theory", &lags, &self.theory, Style::Line));
        for v in &self.variants {
            plot = plot.add(Series::new(v.variant.as_str(), &lags, &v.autocorr.values, Style::Markers));
        }
        let mut out = Outcome { tables: vec![t], plots: vec![("autocorr.svg".into(), plot)], streams: self.streams.clone(), ..Default::default() };
        for v in &self.variants {
            let name = v.variant.as_str();
            out.metric(&format!("fraction_on_theory_{name}"), self.fraction_on_theory(v.variant).unwrap_or(f64::NAN));
            out.metric(&format!("fraction_on_null_{name}"), self.fraction_on_null(v.variant).unwrap_or(f64::NAN));
        }
        if let Some(table) = self.stationary_table(cfg) {
            out.tables.push(table);
        }
        if let Some(f) = self.iid_matches_uncorrelated(cfg) {
            out.metric("fraction_iid_on_uncorrelated_theory", f);
        }
        out
    }

    /// Epoch vs i.i.d. stationary variances next to the correlated and uncorrelated theory.
    fn stationary_table(&self, cfg: &ExperimentConfig) -> Option<Table> {
        let epoch = self.variant(Variant::EpochMoving)?.stationary.as_ref()?;
        let iid = self.variant(Variant::Iid)?.stationary.as_ref()?;
        let hp = cfg.hyper.build().ok()?;
        let mut t = Table::new(
            "stationary.csv",
            &[
                "direction",
                "lambda",
                "sigma_theta2_epoch",
                "se_theta2_epoch",
                "sigma_theta2_iid",
                "se_theta2_iid",
                "sigma_theta2_exact",
                "sigma_theta2_uncorrelated",
                "tau_epoch",
                "tau_iid",
                "tau_exact",
                "tau_uncorrelated",
            ],
        );
        let iid_factor = with_replacement_factor(&cfg.hyper);
        for (i, (&l, &s)) in self.lambdas.iter().zip(&self.sigma2).enumerate() {
            let ex: StationaryPoint = exact_stationary(l, s, &hp).ok()?;
            let un = exact_stationary_uncorrelated(l, s * iid_factor, &hp).ok()?;
            t.push(vec![
                i.to_string(),
                num(l),
                num(epoch[i].sigma_theta2),
                num(epoch[i].se_theta2),
                num(iid[i].sigma_theta2),
                num(iid[i].se_theta2),
                num(ex.sigma_theta2),
                num(un.sigma_theta2),
                num(epoch[i].tau_ratio),
                num(iid[i].tau_ratio),
                num(ex.tau),
                num(un.tau),
            ]);
        }
        Some(t)
    }

    /// Directions whose i.i.d.-run weight variance lies within 3 standard
    /// errors of the uncorrelated theory (`appendix-h-replacement` only).
    pub fn iid_matches_uncorrelated(&self, cfg: &ExperimentConfig) -> Option<f64> {
        let iid = self.variant(Variant::Iid)?.stationary.as_ref()?;
        let hp = cfg.hyper.build().ok()?;
        let iid_factor = with_replacement_factor(&cfg.hyper);
        Some(fraction(self.lambdas.iter().zip(&self.sigma2).zip(iid).map(|((&l, &s), st)| {
            exact_stationary_uncorrelated(l, s * iid_factor, &hp)
                .map(|p| (st.sigma_theta2 - p.sigma_theta2).abs() <= 3.0 * st.se_theta2)
                .unwrap_or(false)
        })))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn with_replacement_factor_limits() {
        let h = |s, n| HyperSection { eta: 0.1, beta: 0.0, batch_size: s, num_examples: n };
        assert_eq!(with_replacement_factor(&h(1, 10)), 1.0);
        assert!((with_replacement_factor(&h(10, 1000)) - 999.0 / 990.0).abs() < 1e-15);
    }
}
