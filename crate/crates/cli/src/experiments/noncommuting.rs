//! Dense Hessian with a noise covariance that does not commute with it.
//!
//! Two covariances are compared: `C = c·(H + XXᵀ/d)` (nearly aligned with
//! `H`) and a covariance with the same spectrum in an independent random
//! basis. Each run is simulated in the Hessian eigenbasis, where the
//! recursion decouples; the per-direction theory uses the projected noise
//! variance `pᵢᵀ C pᵢ`. The correlation time does not depend on the noise
//! scale, so its prediction is the same for both covariances.

use enl_core::model::matrices::{random_orthogonal, wishart_perturbation};
use enl_core::model::{build_noncommuting_ensemble_with, sorted_eigen, CovarianceMatch, Hessian, QuadraticEnsemble};
use enl_core::rng::streams;
use enl_core::stats::{powerlaw_fit, DirectionStats, PowerLawFit};
use enl_core::theory::{exact_stationary, lambda_cross, StationaryPoint};
use enl_core::StreamId;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::variances::{within_factor, TAU_FACTOR};
use super::{derive_seed, fraction, resolve_spectrum, stationary_run, Outcome};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::plot::{Plot, Series, Style};
use crate::table::{num, Table};

/// Fitted `σ²_v ∝ λ^p` exponents below this count as "no relation".
pub const BROKEN_EXPONENT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case {
    Aligned,
    Random,
}

impl Case {
    pub fn as_str(&self) -> &'static str {
        match self {
            Case::Aligned => "aligned",
            Case::Random => "random",
        }
    }
}

pub struct CaseResult {
    pub case: Case,
    /// Cosine similarity of the realized gradient covariance with `H`.
    pub cosine: f64,
    pub approximate: bool,
    pub lambdas: Vec<f64>,
    /// Projected minibatch noise variance `pᵢᵀ C pᵢ`.
    pub sigma2: Vec<f64>,
    pub exact: Vec<StationaryPoint>,
    /// Prediction assuming `C ∝ H` (`σ² = c·λ`).
    pub proportional: Vec<StationaryPoint>,
    pub empirical: Vec<DirectionStats>,
    pub velocity_fit: Option<PowerLawFit>,
    pub window: usize,
}

impl CaseResult {
    pub fn fraction_tau_pointwise(&self) -> f64 {
        fraction(self.empirical.iter().zip(&self.exact).map(|(e, t)| within_factor(e.tau_ratio, t.tau, TAU_FACTOR)))
    }

    pub fn fraction_within_3se(&self) -> f64 {
        fraction(self.empirical.iter().zip(&self.exact).map(|(e, t)| {
            (e.sigma_theta2 - t.sigma_theta2).abs() <= 3.0 * e.se_theta2 && (e.sigma_v2 - t.sigma_v2).abs() <= 3.0 * e.se_v2
        }))
    }

    /// Directions whose velocity variance is within [`TAU_FACTOR`] of the `C ∝ H` prediction.
    pub fn fraction_on_proportional(&self) -> f64 {
        fraction(self.empirical.iter().zip(&self.proportional).map(|(e, t)| within_factor(e.sigma_v2, t.sigma_v2, TAU_FACTOR)))
    }

    pub fn velocity_exponent(&self) -> f64 {
        self.velocity_fit.map_or(f64::NAN, |f| f.exponent)
    }
}

pub struct NoncommutingReport {
    pub cases: Vec<CaseResult>,
    pub lambda_cross: f64,
    pub streams: Vec<StreamId>,
}

impl NoncommutingReport {
    pub fn case(&self, c: Case) -> Option<&CaseResult> {
        self.cases.iter().find(|r| r.case == c)
    }
}

/// Coordinates `sel` of a diagonal ensemble, as a smaller diagonal ensemble.
fn restrict(e: &QuadraticEnsemble, sel: &[usize]) -> CliResult<QuadraticEnsemble> {
    let lambdas = match e.hessian() {
        Hessian::Diagonal(w) => sel.iter().map(|&i| w[i]).collect(),
        Hessian::Dense(_) => return Err(CliError::Config("restriction needs a diagonal ensemble".into())),
    };
    let mut noise = Vec::with_capacity(e.num_examples() * sel.len());
    for n in 0..e.num_examples() {
        let row = e.example_noise(n);
        noise.extend(sel.iter().map(|&i| row[i]));
    }
    Ok(QuadraticEnsemble::from_parts(
        Hessian::Diagonal(lambdas),
        noise,
        e.num_examples(),
        Some(DMatrix::identity(sel.len(), sel.len())),
        e.is_approximate(),
    )?)
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<NoncommutingReport> {
    let hp = cfg.hyper.build()?;
    let spectrum = resolve_spectrum(&cfg.spectrum, &hp)?;
    spectrum.check_stable(&hp)?;
    let d = spectrum.len();
    let c = cfg.spectrum.noise_c;
    let aux = StreamId::new(cfg.seed, streams::AUX);
    let mut rng = aux.rng();
    let q = random_orthogonal(d, &mut rng);
    let lam = DVector::from_column_slice(spectrum.lambdas());
    let h = &q * DMatrix::from_diagonal(&lam) * q.transpose();
    let h = (&h + h.transpose()) * 0.5;
    let pert = wishart_perturbation(d, cfg.noncommuting.wishart_sigma, &mut rng);
    let aligned = (&h + pert) * c;
    let (eigs, _) = sorted_eigen(&aligned);
    let q2 = random_orthogonal(d, &mut rng);
    let random = &q2 * DMatrix::from_diagonal(&DVector::from_vec(eigs)) * q2.transpose();
    let random = (&random + random.transpose()) * 0.5;

    let m = cfg.run.directions.unwrap_or(d).min(d);
    let sel: Vec<usize> = if m == d {
        (0..d).collect()
    } else {
        (0..m).map(|j| (j * (d - 1)) / (m - 1).max(1)).collect()
    };
    let mode = if hp.num_examples() > d { CovarianceMatch::Exact } else { CovarianceMatch::AllowApproximate };
    let scale = hp.noise_scale();
    let lc = lambda_cross(&hp)?;

    let cases = [(Case::Aligned, aligned), (Case::Random, random)];
    let results = cases
        .par_iter()
        .enumerate()
        .map(|(k, (case, cov))| -> CliResult<(CaseResult, Vec<StreamId>)> {
            let (seed, seed_stream) = derive_seed(cfg.seed, k as u64);
            let c0 = cov / scale;
            let ens = build_noncommuting_ensemble_with(&h, &c0, hp.num_examples(), seed, mode)?;
            let cosine = ens.noise_hessian_cosine()?;
            let (diag, _) = ens.to_eigenbasis()?;
            let sub = restrict(&diag, &sel)?;
            let lambdas = match sub.hessian() {
                Hessian::Diagonal(w) => w.clone(),
                Hessian::Dense(_) => unreachable!("restricted ensembles are diagonal"),
            };
            let cov_sub = sub.noise_covariance(&hp);
            let sigma2: Vec<f64> = (0..sel.len()).map(|i| cov_sub[(i, i)]).collect();
            let exact = lambdas
                .iter()
                .zip(&sigma2)
                .map(|(&l, &s)| exact_stationary(l, s, &hp))
                .collect::<enl_core::Result<Vec<_>>>()?;
            let proportional = lambdas
                .iter()
                .map(|&l| exact_stationary(l, c * l, &hp))
                .collect::<enl_core::Result<Vec<_>>>()?;
            let sim = stationary_run(&sub, &hp, &cfg.run, cfg.run.sampling, seed)?;
            let v2: Vec<f64> = sim.stats.iter().map(|e| e.sigma_v2).collect();
            let velocity_fit = powerlaw_fit(&lambdas, &v2, (0.0, f64::INFINITY)).ok();
            let mut ids = sim.streams.clone();
            ids.extend([StreamId::new(seed, streams::ENSEMBLE), seed_stream]);
            Ok((
                CaseResult {
                    case: *case,
                    cosine,
                    approximate: sub.is_approximate(),
                    lambdas,
                    sigma2,
                    exact,
                    proportional,
                    empirical: sim.stats,
                    velocity_fit,
                    window: sim.window,
                },
                ids,
            ))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut ids = vec![aux];
    let mut out = Vec::new();
    for (r, s) in results {
        out.push(r);
        ids.extend(s);
    }
    Ok(NoncommutingReport { cases: out, lambda_cross: lc, streams: ids })
}

impl NoncommutingReport {
    pub fn outcome(&self, _cfg: &ExperimentConfig) -> Outcome {
        let mut t = Table::new(
            "noncommuting.csv",
            &[
                "case",
                "direction",
                "lambda",
                "sigma_dg2_projected",
                "sigma_theta2",
                "se_theta2",
                "sigma_v2",
                "se_v2",
                "tau_ratio",
                "tau_sum",
                "sigma_theta2_exact",
                "sigma_v2_exact",
                "tau_exact",
                "sigma_theta2_proportional",
                "sigma_v2_proportional",
            ],
        );
        t.meta("lambda_cross", num(self.lambda_cross));
        let mut out = Outcome { streams: self.streams.clone(), ..Default::default() };
        for r in &self.cases {
            t.meta(&format!("cosine_{}", r.case.as_str()), num(r.cosine));
            for i in 0..r.lambdas.len() {
                let (e, x, p) = (&r.empirical[i], &r.exact[i], &r.proportional[i]);
                t.push(vec![
                    r.case.as_str().into(),
                    i.to_string(),
                    num(r.lambdas[i]),
                    num(r.sigma2[i]),
                    num(e.sigma_theta2),
                    num(e.se_theta2),
                    num(e.sigma_v2),
                    num(e.se_v2),
                    num(e.tau_ratio),
                    num(e.tau_sum),
                    num(x.sigma_theta2),
                    num(x.sigma_v2),
                    num(x.tau),
                    num(p.sigma_theta2),
                    num(p.sigma_v2),
                ]);
            }
            let name = r.case.as_str();
            out.metric(&format!("cosine_{name}"), r.cosine);
            out.metric(&format!("fraction_tau_pointwise_{name}"), r.fraction_tau_pointwise());
            out.metric(&format!("fraction_within_3se_{name}"), r.fraction_within_3se());
            out.metric(&format!("fraction_v2_on_proportional_{name}"), r.fraction_on_proportional());
            out.metric(&format!("velocity_exponent_{name}"), r.velocity_exponent());
            let x = &r.lambdas;
            let plot = Plot::new(&format!("{name} covariance: correlation time"), "lambda", "tau", true, true)
                .add(Series::new("tau_ratio", x, &r.empirical.iter().map(|e| e.tau_ratio).collect::<Vec<_>>(), Style::Markers))
                .add(Series::new("tau exact", x, &r.exact.iter().map(|p| p.tau).collect::<Vec<_>>(), Style::Line));
            let vplot = Plot::new(&format!("{name} covariance: velocity variance"), "lambda", "sigma_v^2", true, true)
                .add(Series::new("empirical", x, &r.empirical.iter().map(|e| e.sigma_v2).collect::<Vec<_>>(), Style::Markers))
                .add(Series::new("projected theory", x, &r.exact.iter().map(|p| p.sigma_v2).collect::<Vec<_>>(), Style::Line))
                .add(Series::new("C proportional to H", x, &r.proportional.iter().map(|p| p.sigma_v2).collect::<Vec<_>>(), Style::Line));
            out.plots.push((format!("tau_{name}.svg"), plot));
            out.plots.push((format!("velocity_{name}.svg"), vplot));
        }
        out.tables.push(t);
        out
    }
}
