//! Extraction of `τ_SGD` and `λ_cross` from simulated correlation times over a
//! grid of momenta and epoch lengths.
//!
//! Each grid point uses a bulk of flat directions well below the crossover and
//! a band of sharp directions above it. `τ_SGD` is estimated as the mean
//! correlation time of all directions below the crossover; `λ_cross` as the
//! intersection of the least-squares line through `(ln λ, ln τ)` of the sharp
//! band with that plateau.

use enl_core::model::{log_space, NoiseLevels};
use enl_core::stats::powerlaw_fit;
use enl_core::theory::{exact_stationary, lambda_cross, tau_sgd};
use enl_core::{Hyperparams, Spectrum, StreamId};
use rayon::prelude::*;

use super::{commuting_ensemble, derive_seed, mean_where, stationary_run, Outcome};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::plot::{Plot, Series, Style};
use crate::table::{num, Table};

pub const TAU_SGD_TOL: f64 = 0.15;
pub const LAMBDA_CROSS_TOL: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extraction {
    pub tau_sgd: f64,
    pub lambda_cross: f64,
    pub slope: f64,
}

/// Mean `τ` below `lc`, then the fitted large-`λ` line crossing that level.
pub fn extract(lambdas: &[f64], taus: &[f64], lc: f64, large_lo: f64) -> CliResult<Extraction> {
    let plateau = mean_where(taus, |i| lambdas[i] < lc)
        .ok_or_else(|| CliError::Config("no directions below the crossover".into()))?;
    let fit = powerlaw_fit(lambdas, taus, (large_lo, f64::INFINITY))?;
    let lambda = ((plateau.ln() - fit.log_intercept) / fit.exponent).exp();
    Ok(Extraction { tau_sgd: plateau, lambda_cross: lambda, slope: fit.exponent })
}

pub struct GridResult {
    pub beta: f64,
    pub m: usize,
    pub lambda_cross: f64,
    pub tau_sgd: f64,
    pub lambdas: Vec<f64>,
    pub tau_emp: Vec<f64>,
    pub tau_sum: Vec<f64>,
    pub tau_exact: Vec<f64>,
    pub empirical: Extraction,
    pub theory: Extraction,
    pub window: usize,
    pub burn_in: usize,
}

impl GridResult {
    pub fn tau_sgd_error(&self) -> f64 {
        self.empirical.tau_sgd / self.tau_sgd - 1.0
    }

    pub fn lambda_cross_error(&self) -> f64 {
        self.empirical.lambda_cross / self.lambda_cross - 1.0
    }

    pub fn passes(&self) -> bool {
        self.tau_sgd_error().abs() <= TAU_SGD_TOL && self.lambda_cross_error().abs() <= LAMBDA_CROSS_TOL
    }
}

pub struct SweepReport {
    pub grid: Vec<GridResult>,
    pub streams: Vec<StreamId>,
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<SweepReport> {
    let w = &cfg.sweep;
    let mut points = Vec::new();
    for &beta in &w.betas {
        for &m in &w.batches {
            points.push((beta, m));
        }
    }
    let results = points
        .par_iter()
        .enumerate()
        .map(|(g, &(beta, m))| -> CliResult<(GridResult, Vec<StreamId>)> {
            let s = cfg.hyper.batch_size;
            let hp = Hyperparams::new(cfg.hyper.eta, beta, s, m * s)?;
            let lc = lambda_cross(&hp)?;
            let cap = w.max_stability_fraction * 2.0 * (1.0 + beta) / hp.eta();
            let hi = (w.large_max * lc).min(cap);
            let lo = w.large_min * lc;
            if lo >= hi {
                return Err(CliError::Config(format!(
                    "beta = {beta}, M = {m}: large band [{lo:e}, {hi:e}] is empty under the stability cap"
                )));
            }
            let mut lambdas = log_space(w.bulk_min * lc, w.bulk_max * lc, w.bulk_count)?;
            lambdas.extend(log_space(lo, hi, w.large_count)?);
            let spectrum = Spectrum::new(lambdas, NoiseLevels::Proportional(w.noise_c))?;
            let (seed, seed_stream) = derive_seed(cfg.seed, g as u64);
            let (ensemble, ens_stream) = commuting_ensemble(&spectrum, &hp, seed)?;
            let sim = stationary_run(&ensemble, &hp, &cfg.run, cfg.run.sampling, seed)?;
            let lambdas = spectrum.lambdas().to_vec();
            let tau_emp: Vec<f64> = sim.stats.iter().map(|d| d.tau_ratio).collect();
            let tau_sum: Vec<f64> = sim.stats.iter().map(|d| d.tau_sum).collect();
            let tau_exact = lambdas
                .iter()
                .zip(spectrum.noise_variances())
                .map(|(&l, s2)| exact_stationary(l, s2, &hp).map(|p| p.tau))
                .collect::<enl_core::Result<Vec<_>>>()?;
            let empirical = extract(&lambdas, &tau_emp, lc, lo)?;
            let theory = extract(&lambdas, &tau_exact, lc, lo)?;
            let mut streams = sim.streams.clone();
            streams.extend([ens_stream, seed_stream]);
            Ok((
                GridResult {
                    beta,
                    m,
                    lambda_cross: lc,
                    tau_sgd: tau_sgd(&hp)?,
                    lambdas,
                    tau_emp,
                    tau_sum,
                    tau_exact,
                    empirical,
                    theory,
                    window: sim.window,
                    burn_in: sim.burn_in,
                },
                streams,
            ))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut grid = Vec::new();
    let mut streams = Vec::new();
    for (g, s) in results {
        grid.push(g);
        streams.extend(s);
    }
    Ok(SweepReport { grid, streams })
}

impl SweepReport {
    pub fn outcome(&self, cfg: &ExperimentConfig) -> Outcome {
        let mut t = Table::new(
            "sweep.csv",
            &[
                "beta",
                "M",
                "eta",
                "window",
                "burn_in",
                "tau_sgd",
                "tau_sgd_empirical",
                "tau_sgd_theory_extracted",
                "tau_sgd_rel_err",
                "lambda_cross",
                "lambda_cross_empirical",
                "lambda_cross_theory_extracted",
                "lambda_cross_rel_err",
                "large_slope_empirical",
                "large_slope_theory",
            ],
        );
        t.meta("tau_sgd_tol", TAU_SGD_TOL).meta("lambda_cross_tol", LAMBDA_CROSS_TOL);
        let mut d = Table::new("directions.csv", &["beta", "M", "lambda", "tau_ratio", "tau_sum", "tau_exact"]);
        let mut plot = Plot::new("correlation time across the sweep", "lambda / lambda_cross", "tau / tau_sgd", true, true);
        for g in &self.grid {
            t.push(vec![
                num(g.beta),
                g.m.to_string(),
                num(cfg.hyper.eta),
                g.window.to_string(),
                g.burn_in.to_string(),
                num(g.tau_sgd),
                num(g.empirical.tau_sgd),
                num(g.theory.tau_sgd),
                num(g.tau_sgd_error()),
                num(g.lambda_cross),
                num(g.empirical.lambda_cross),
                num(g.theory.lambda_cross),
                num(g.lambda_cross_error()),
                num(g.empirical.slope),
                num(g.theory.slope),
            ]);
            for i in 0..g.lambdas.len() {
                d.push(vec![
                    num(g.beta),
                    g.m.to_string(),
                    num(g.lambdas[i]),
                    num(g.tau_emp[i]),
                    num(g.tau_sum[i]),
                    num(g.tau_exact[i]),
                ]);
            }
            let x: Vec<f64> = g.lambdas.iter().map(|l| l / g.lambda_cross).collect();
            let y: Vec<f64> = g.tau_emp.iter().map(|t| t / g.tau_sgd).collect();
            plot = plot.add(Series::new(&format!("beta={} M={}", g.beta, g.m), &x, &y, Style::Markers));
        }
        let mut out = Outcome {
            tables: vec![t, d],
            plots: vec![("sweep.svg".into(), plot)],
            streams: self.streams.clone(),
            ..Default::default()
        };
        let worst = |f: fn(&GridResult) -> f64| self.grid.iter().map(|g| f(g).abs()).fold(0.0, f64::max);
        out.metric("max_tau_sgd_rel_err", worst(|g| g.tau_sgd_error()));
        out.metric("max_lambda_cross_rel_err", worst(|g| g.lambda_cross_error()));
        out.metric("grid_points_passing", self.grid.iter().filter(|g| g.passes()).count() as f64);
        out.metric("grid_points", self.grid.len() as f64);
        out
    }
}
