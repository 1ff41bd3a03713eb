//! One pipeline per experiment kind.
//!
//! Each pipeline returns a typed report (used directly by tests) that renders
//! into an [`Outcome`]: CSV tables holding empirical series next to their
//! theory curves, optional plots, scalar summary metrics and the random
//! streams consumed.

pub mod autocorr;
pub mod loss;
pub mod noncommuting;
pub mod oracle;
pub mod pca;
pub mod sweep;
pub mod theory_table;
pub mod variances;

use std::collections::BTreeMap;

use enl_core::model::{build_commuting_ensemble, QuadraticEnsemble};
use enl_core::rng::streams;
use enl_core::sampling::{BatchSchedule, SamplingMode};
use enl_core::sim::{default_burn_in, run_sgd, subtract_mean_velocity, RunOptions, Trajectory};
use enl_core::stats::{default_tau_lag, estimate_stationary, DirectionStats};
use enl_core::theory::{lambda_cross, tau_sgd};
use enl_core::{Hyperparams, Spectrum, StreamId};
use rand::RngCore;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ExperimentKind, RunSection, SpectrumSection};
use crate::error::CliResult;
use crate::plot::Plot;
use crate::table::Table;

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub plots: Vec<(String, Plot)>,
    pub summary: BTreeMap<String, f64>,
    pub streams: Vec<StreamId>,
}

impl Outcome {
    pub fn metric(&mut self, key: &str, value: f64) {
        self.summary.insert(key.to_string(), value);
    }
}

/// Runs the pipeline named by `cfg.kind` without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    cfg.validate()?;
    let mut out = match cfg.kind {
        ExperimentKind::TheoryTable => theory_table::run(cfg)?.outcome(cfg),
        ExperimentKind::Fig1Autocorr | ExperimentKind::AppendixHReplacement => autocorr::run(cfg)?.outcome(cfg),
        ExperimentKind::Fig2Variances => variances::run(cfg)?.outcome(cfg),
        ExperimentKind::AppendixFPca => pca::run(cfg)?.outcome(cfg),
        ExperimentKind::AppendixISweep => sweep::run(cfg)?.outcome(cfg),
        ExperimentKind::AppendixNNoncommuting => noncommuting::run(cfg)?.outcome(cfg),
        ExperimentKind::OracleCheck => oracle::run(cfg)?.outcome(cfg),
        ExperimentKind::LossFluct => loss::run(cfg)?.outcome(cfg),
    };
    for t in &mut out.tables {
        t.header.insert(0, ("kind".into(), cfg.kind.to_string()));
        t.header.insert(1, ("seed".into(), cfg.seed.to_string()));
    }
    if !cfg.plot {
        out.plots.clear();
    }
    out.streams.sort_by_key(|s| (s.seed, s.stream));
    out.streams.dedup();
    Ok(out)
}

/// Seed of the `index`-th ensemble of a multi-ensemble experiment.
pub fn derive_seed(seed: u64, index: u64) -> (u64, StreamId) {
    let id = StreamId::replica(seed, streams::AUX, index + 1);
    (id.rng().next_u64(), id)
}

/// Spectrum of `section`, scaling relative ranges by the crossover eigenvalue.
pub fn resolve_spectrum(section: &SpectrumSection, hp: &Hyperparams) -> CliResult<Spectrum> {
    let unit = if section.relative { lambda_cross(hp)? } else { 1.0 };
    Ok(Spectrum::log_spaced(section.lambda_min * unit, section.lambda_max * unit, section.count, section.noise_c)?)
}

/// Recorded window length, rounded up to whole epochs when derived from `τ_SGD`.
pub fn resolve_window(run: &RunSection, hp: &Hyperparams) -> CliResult<usize> {
    if let Some(w) = run.window {
        return Ok(w);
    }
    let m = hp.batches_per_epoch();
    let by_tau = (run.window_tau * tau_sgd(hp)?).ceil() as usize;
    let steps = by_tau.max(run.min_epochs * m).max(1);
    Ok(steps.div_ceil(m) * m)
}

pub fn resolve_burn_in(run: &RunSection, hp: &Hyperparams) -> usize {
    run.burn_in.unwrap_or_else(|| default_burn_in(hp))
}

pub fn schedule_stream(seed: u64, replica: u64) -> StreamId {
    StreamId::replica(seed, streams::SCHEDULE, replica)
}

/// One simulation from rest on the replica's schedule stream.
pub fn simulate(
    ensemble: &QuadraticEnsemble,
    hp: &Hyperparams,
    mode: SamplingMode,
    stream: StreamId,
    opts: &RunOptions,
) -> CliResult<Trajectory> {
    let mut schedule = BatchSchedule::new(mode, ensemble.num_examples(), hp.batch_size(), stream)?;
    let zeros = vec![0.0; ensemble.dim()];
    Ok(run_sgd(ensemble, hp, &mut schedule, &zeros, &zeros, opts)?)
}

/// Per-direction statistics of a commuting ensemble, averaged over replicas.
pub struct StationaryRun {
    pub stats: Vec<DirectionStats>,
    pub window: usize,
    pub burn_in: usize,
    pub tau_lag: usize,
    pub streams: Vec<StreamId>,
}

pub fn stationary_run(
    ensemble: &QuadraticEnsemble,
    hp: &Hyperparams,
    run: &RunSection,
    mode: SamplingMode,
    seed: u64,
) -> CliResult<StationaryRun> {
    let window = resolve_window(run, hp)?;
    let burn_in = resolve_burn_in(run, hp);
    let tau_lag = default_tau_lag(hp.batches_per_epoch(), window);
    let opts = RunOptions::new(window, burn_in);
    let streams: Vec<StreamId> = (0..run.replicas as u64).map(|r| schedule_stream(seed, r)).collect();
    let per_replica: Vec<Vec<DirectionStats>> = streams
        .par_iter()
        .map(|s| -> CliResult<Vec<DirectionStats>> {
            let mut traj = simulate(ensemble, hp, mode, *s, &opts)?;
            if run.detrend {
                traj = subtract_mean_velocity(&traj)?;
            }
            Ok(estimate_stationary(&traj, tau_lag)?.directions)
        })
        .collect::<CliResult<_>>()?;
    Ok(StationaryRun { stats: average_replicas(&per_replica), window, burn_in, tau_lag, streams })
}

/// Replica means; standard errors combine as `sqrt(Σ se²)/R`.
pub fn average_replicas(runs: &[Vec<DirectionStats>]) -> Vec<DirectionStats> {
    if runs.len() == 1 {
        return runs[0].clone();
    }
    let r = runs.len() as f64;
    (0..runs[0].len())
        .map(|j| {
            let mean = |f: fn(&DirectionStats) -> f64| runs.iter().map(|x| f(&x[j])).sum::<f64>() / r;
            let se = |f: fn(&DirectionStats) -> f64| runs.iter().map(|x| f(&x[j]).powi(2)).sum::<f64>().sqrt() / r;
            DirectionStats {
                sigma_theta2: mean(|d| d.sigma_theta2),
                sigma_v2: mean(|d| d.sigma_v2),
                tau_ratio: mean(|d| d.tau_ratio),
                tau_sum: mean(|d| d.tau_sum),
                se_theta2: se(|d| d.se_theta2),
                se_v2: se(|d| d.se_v2),
                se_tau: se(|d| d.se_tau),
                tau_sum_ill_conditioned: runs.iter().any(|x| x[j].tau_sum_ill_conditioned),
            }
        })
        .collect()
}

pub fn commuting_ensemble(spectrum: &Spectrum, hp: &Hyperparams, seed: u64) -> CliResult<(QuadraticEnsemble, StreamId)> {
    spectrum.check_stable(hp)?;
    Ok((build_commuting_ensemble(spectrum, hp, seed)?, StreamId::new(seed, streams::ENSEMBLE)))
}

/// Mean of `values[i]` over the indices where `keep(i)` holds.
pub fn mean_where(values: &[f64], keep: impl Fn(usize) -> bool) -> Option<f64> {
    let sel: Vec<f64> = values.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, v)| *v).collect();
    (!sel.is_empty()).then(|| sel.iter().sum::<f64>() / sel.len() as f64)
}

/// Fraction of `flags` that are true, over a non-empty selection.
pub fn fraction(flags: impl Iterator<Item = bool>) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for f in flags {
        n += 1;
        hit += f as usize;
    }
    if n == 0 {
        f64::NAN
    } else {
        hit as f64 / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_rounds_up_to_whole_epochs() {
        let hp = Hyperparams::new(0.01, 0.9, 10, 1000).unwrap();
        let mut run = ExperimentConfig::default_for(ExperimentKind::Fig2Variances).run;
        run.window_tau = 1.0;
        run.min_epochs = 1;
        // τ_SGD = 633.3 → 634 steps → 7 epochs of 100
        assert_eq!(resolve_window(&run, &hp).unwrap(), 700);
        run.min_epochs = 20;
        assert_eq!(resolve_window(&run, &hp).unwrap(), 2000);
        run.window = Some(123);
        assert_eq!(resolve_window(&run, &hp).unwrap(), 123);
    }

    #[test]
    fn derived_seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..8).map(|i| derive_seed(7, i).0).collect();
        let b: Vec<u64> = (0..8).map(|i| derive_seed(7, i).0).collect();
        assert_eq!(a, b);
        let mut s = a.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), a.len());
        assert_ne!(derive_seed(8, 0).0, a[0]);
    }

    #[test]
    fn fractions_and_means() {
        assert!(fraction(std::iter::empty()).is_nan());
        assert_eq!(fraction([true, false, true, true].into_iter()), 0.75);
        assert_eq!(mean_where(&[1.0, 2.0, 3.0], |i| i > 0), Some(2.5));
        assert_eq!(mean_where(&[1.0], |_| false), None);
    }

    #[test]
    fn replica_average_combines_standard_errors() {
        let d = |x: f64, se: f64| DirectionStats {
            sigma_theta2: x,
            sigma_v2: x,
            tau_ratio: x,
            tau_sum: x,
            se_theta2: se,
            se_v2: se,
            se_tau: se,
            tau_sum_ill_conditioned: false,
        };
        let avg = average_replicas(&[vec![d(1.0, 0.3)], vec![d(3.0, 0.4)]]);
        assert_eq!(avg[0].sigma_theta2, 2.0);
        assert!((avg[0].se_theta2 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn execute_is_deterministic_and_labels_tables() {
        let cfg = ExperimentConfig::default_for(ExperimentKind::AppendixFPca);
        let a = execute(&cfg).unwrap();
        let b = execute(&cfg).unwrap();
        assert_eq!(a.tables.len(), b.tables.len());
        for (x, y) in a.tables.iter().zip(&b.tables) {
            assert_eq!(x.body(), y.body());
            assert_eq!(x.header[0], ("kind".to_string(), "appendix-f-pca".to_string()));
        }
        assert!(a.plots.is_empty());
        assert!(a.streams.windows(2).all(|w| (w[0].seed, w[0].stream) < (w[1].seed, w[1].stream)));
    }
}
