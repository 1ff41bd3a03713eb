//! Stationary variances and correlation times across a commuting spectrum.

use enl_core::stats::{flatness, powerlaw_fit, DirectionStats, PowerLawFit};
use enl_core::theory::{approx_large, approx_small, exact_stationary, lambda_cross, tau_sgd, StationaryPoint};
use enl_core::StreamId;

use super::{commuting_ensemble, fraction, mean_where, resolve_spectrum, stationary_run, Outcome};
use crate::config::ExperimentConfig;
use crate::error::CliResult;
use crate::plot::{Plot, Series, Style};
use crate::table::{flag, num, Table};

/// Tolerance on `τ ≈ (1+β)/(ηλ)` in the large-eigenvalue region.
pub const LARGE_TAU_TOL: f64 = 0.15;
/// Pointwise factor between empirical and exact `τ`.
pub const TAU_FACTOR: f64 = 1.5;
/// Directions qualify for pointwise `τ` checks when `τ ≤ window / TAU_WINDOW_DIVISOR`.
pub const TAU_WINDOW_DIVISOR: f64 = 20.0;
/// Agreement of the two correlation-time estimators.
pub const TAU_ESTIMATOR_TOL: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitPair {
    pub empirical: Option<PowerLawFit>,
    pub theory: Option<PowerLawFit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fits {
    pub small_theta: FitPair,
    pub small_v: FitPair,
    pub large_theta: FitPair,
    pub large_v: FitPair,
    pub small_region: (f64, f64),
    pub large_region: (f64, f64),
}

pub fn fit_pair(lambdas: &[f64], emp: &[f64], th: &[f64], region: (f64, f64)) -> FitPair {
    FitPair { empirical: powerlaw_fit(lambdas, emp, region).ok(), theory: powerlaw_fit(lambdas, th, region).ok() }
}

pub struct VariancesReport {
    pub lambdas: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub exact: Vec<StationaryPoint>,
    pub large: Vec<StationaryPoint>,
    pub small: Vec<StationaryPoint>,
    pub empirical: Vec<DirectionStats>,
    pub lambda_cross: f64,
    pub tau_sgd: f64,
    pub eta: f64,
    pub beta: f64,
    pub window: usize,
    pub burn_in: usize,
    pub tau_lag: usize,
    pub fits: Fits,
    pub plateau_max: f64,
    pub large_min: f64,
    pub streams: Vec<StreamId>,
}

impl VariancesReport {
    /// Directions whose weight and velocity variances both lie within
    /// `k` batched-means standard errors of the exact prediction.
    pub fn fraction_within_se(&self, k: f64) -> f64 {
        fraction(self.empirical.iter().zip(&self.exact).map(|(e, t)| {
            (e.sigma_theta2 - t.sigma_theta2).abs() <= k * e.se_theta2 && (e.sigma_v2 - t.sigma_v2).abs() <= k * e.se_v2
        }))
    }

    fn taus(&self) -> Vec<f64> {
        self.empirical.iter().map(|e| e.tau_ratio).collect()
    }

    /// Mean empirical `τ` over directions with `λ ≤ plateau_max`.
    pub fn tau_plateau(&self) -> f64 {
        mean_where(&self.taus(), |i| self.lambdas[i] <= self.plateau_max).unwrap_or(f64::NAN)
    }

    /// The same average over the exact curve.
    pub fn tau_plateau_theory(&self) -> f64 {
        let t: Vec<f64> = self.exact.iter().map(|p| p.tau).collect();
        mean_where(&t, |i| self.lambdas[i] <= self.plateau_max).unwrap_or(f64::NAN)
    }

    /// `τ / ((1+β)/(ηλ)) − 1` for every direction with `λ ≥ large_min`.
    pub fn large_tau_deviations(&self, empirical: bool) -> Vec<f64> {
        (0..self.lambdas.len())
            .filter(|&i| self.lambdas[i] >= self.large_min)
            .map(|i| {
                let limit = (1.0 + self.beta) / (self.eta * self.lambdas[i]);
                let tau = if empirical { self.empirical[i].tau_ratio } else { self.exact[i].tau };
                tau / limit - 1.0
            })
            .collect()
    }

    pub fn fraction_large_tau_within(&self, empirical: bool) -> f64 {
        fraction(self.large_tau_deviations(empirical).iter().map(|d| d.abs() <= LARGE_TAU_TOL))
    }

    fn qualifies(&self, i: usize) -> bool {
        self.exact[i].tau <= self.window as f64 / TAU_WINDOW_DIVISOR
    }

    /// Pointwise `τ` agreement within [`TAU_FACTOR`] over qualifying directions.
    pub fn fraction_tau_pointwise(&self) -> f64 {
        fraction(
            (0..self.lambdas.len())
                .filter(|&i| self.qualifies(i))
                .map(|i| within_factor(self.empirical[i].tau_ratio, self.exact[i].tau, TAU_FACTOR)),
        )
    }

    /// Agreement of `tau_sum` with `tau_ratio` over qualifying directions.
    pub fn fraction_tau_estimators_agree(&self) -> f64 {
        fraction((0..self.lambdas.len()).filter(|&i| self.qualifies(i)).map(|i| {
            let e = &self.empirical[i];
            (e.tau_sum - e.tau_ratio).abs() <= TAU_ESTIMATOR_TOL * e.tau_ratio
        }))
    }
}

pub fn within_factor(a: f64, b: f64, factor: f64) -> bool {
    a > 0.0 && b > 0.0 && a <= factor * b && b <= factor * a
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<VariancesReport> {
    let hp = cfg.hyper.build()?;
    let spectrum = resolve_spectrum(&cfg.spectrum, &hp)?;
    let (ensemble, ens_stream) = commuting_ensemble(&spectrum, &hp, cfg.seed)?;
    let lc = lambda_cross(&hp)?;
    let lambdas = spectrum.lambdas().to_vec();
    let sigma2 = spectrum.noise_variances();
    let point = |f: fn(f64, f64, &enl_core::Hyperparams) -> enl_core::Result<StationaryPoint>| {
        lambdas.iter().zip(&sigma2).map(|(&l, &s)| f(l, s, &hp)).collect::<enl_core::Result<Vec<_>>>()
    };
    let exact = point(exact_stationary)?;
    let large = point(approx_large)?;
    let small = point(approx_small)?;

    let sim = stationary_run(&ensemble, &hp, &cfg.run, cfg.run.sampling, cfg.seed)?;
    let empirical = sim.stats;

    let small_region = (lambdas.iter().copied().fold(f64::INFINITY, f64::min), cfg.fit.small_max * lc);
    let large_region = (cfg.fit.large_min * lc, lambdas.iter().copied().fold(0.0, f64::max));
    let col = |v: &[DirectionStats], f: fn(&DirectionStats) -> f64| v.iter().map(f).collect::<Vec<_>>();
    let th_t: Vec<f64> = exact.iter().map(|p| p.sigma_theta2).collect();
    let th_v: Vec<f64> = exact.iter().map(|p| p.sigma_v2).collect();
    let em_t = col(&empirical, |d| d.sigma_theta2);
    let em_v = col(&empirical, |d| d.sigma_v2);
    let fits = Fits {
        small_theta: fit_pair(&lambdas, &em_t, &th_t, small_region),
        small_v: fit_pair(&lambdas, &em_v, &th_v, small_region),
        large_theta: fit_pair(&lambdas, &em_t, &th_t, large_region),
        large_v: fit_pair(&lambdas, &em_v, &th_v, large_region),
        small_region,
        large_region,
    };
    let mut streams = sim.streams;
    streams.push(ens_stream);
    Ok(VariancesReport {
        lambdas,
        sigma2,
        exact,
        large,
        small,
        empirical,
        lambda_cross: lc,
        tau_sgd: tau_sgd(&hp)?,
        eta: hp.eta(),
        beta: hp.beta(),
        window: sim.window,
        burn_in: sim.burn_in,
        tau_lag: sim.tau_lag,
        fits,
        plateau_max: cfg.fit.plateau_max * lc,
        large_min: cfg.fit.large_min * lc,
        streams,
    })
}

pub fn fits_table(name: &str, rows: &[(&str, (f64, f64), &FitPair)]) -> Table {
    let mut t = Table::new(name, &["quantity", "region_lo", "region_hi", "source", "exponent", "two_sigma", "points"]);
    for (q, region, pair) in rows {
        for (source, fit) in [("empirical", pair.empirical), ("theory", pair.theory)] {
            match fit {
                Some(f) => t.push(vec![
                    q.to_string(),
                    num(region.0),
                    num(region.1),
                    source.into(),
                    num(f.exponent),
                    num(f.two_sigma),
                    f.points.to_string(),
                ]),
                None => t.push(vec![q.to_string(), num(region.0), num(region.1), source.into(), "".into(), "".into(), "0".into()]),
            }
        }
    }
    t
}

impl VariancesReport {
    pub fn outcome(&self, _cfg: &ExperimentConfig) -> Outcome {
        let mut t = Table::new(
            "stationary.csv",
            &[
                "direction",
                "lambda",
                "sigma_dg2",
                "flatness",
                "sigma_theta2",
                "se_theta2",
                "sigma_v2",
                "se_v2",
                "tau_ratio",
                "se_tau",
                "tau_sum",
                "tau_sum_ill_conditioned",
                "sigma_theta2_exact",
                "sigma_v2_exact",
                "tau_exact",
                "sigma_theta2_large",
                "sigma_v2_large",
                "sigma_theta2_small",
                "sigma_v2_small",
                "tau_large_limit",
            ],
        );
        t.meta("eta", self.eta)
            .meta("beta", self.beta)
            .meta("lambda_cross", num(self.lambda_cross))
            .meta("tau_sgd", num(self.tau_sgd))
            .meta("window", self.window)
            .meta("burn_in", self.burn_in)
            .meta("tau_lag", self.tau_lag);
        for i in 0..self.lambdas.len() {
            let (e, x) = (&self.empirical[i], &self.exact[i]);
            t.push(vec![
                i.to_string(),
                num(self.lambdas[i]),
                num(self.sigma2[i]),
                num(flatness(self.lambdas[i])),
                num(e.sigma_theta2),
                num(e.se_theta2),
                num(e.sigma_v2),
                num(e.se_v2),
                num(e.tau_ratio),
                num(e.se_tau),
                num(e.tau_sum),
                flag(e.tau_sum_ill_conditioned),
                num(x.sigma_theta2),
                num(x.sigma_v2),
                num(x.tau),
                num(self.large[i].sigma_theta2),
                num(self.large[i].sigma_v2),
                num(self.small[i].sigma_theta2),
                num(self.small[i].sigma_v2),
                num((1.0 + self.beta) / (self.eta * self.lambdas[i])),
            ]);
        }
        let f = &self.fits;
        let fits = fits_table(
            "fits.csv",
            &[
                ("sigma_theta2", f.small_region, &f.small_theta),
                ("sigma_v2", f.small_region, &f.small_v),
                ("sigma_theta2", f.large_region, &f.large_theta),
                ("sigma_v2", f.large_region, &f.large_v),
            ],
        );
        let x = &self.lambdas;
        let ex = |g: fn(&StationaryPoint) -> f64| self.exact.iter().map(g).collect::<Vec<_>>();
        let em = |g: fn(&DirectionStats) -> f64| self.empirical.iter().map(g).collect::<Vec<_>>();
        let var_plot = Plot::new("stationary variances", "lambda", "variance", true, true)
            .add(Series::new("sigma_theta2 empirical", x, &em(|d| d.sigma_theta2), Style::Markers))
            .add(Series::new("sigma_theta2 exact", x, &ex(|p| p.sigma_theta2), Style::Line))
            .add(Series::new("sigma_v2 empirical", x, &em(|d| d.sigma_v2), Style::Markers))
            .add(Series::new("sigma_v2 exact", x, &ex(|p| p.sigma_v2), Style::Line));
        let tau_plot = Plot::new("correlation time", "lambda", "tau", true, true)
            .add(Series::new("tau_ratio", x, &em(|d| d.tau_ratio), Style::Markers))
            .add(Series::new("tau_sum", x, &em(|d| d.tau_sum), Style::Markers))
            .add(Series::new("tau exact", x, &ex(|p| p.tau), Style::Line));

        let mut out = Outcome {
            tables: vec![t, fits],
            plots: vec![("variances.svg".into(), var_plot), ("tau.svg".into(), tau_plot)],
            streams: self.streams.clone(),
            ..Default::default()
        };
        let exp = |p: &FitPair| p.empirical.map_or(f64::NAN, |f| f.exponent);
        out.metric("fraction_within_3se", self.fraction_within_se(3.0));
        out.metric("exponent_small_theta", exp(&f.small_theta));
        out.metric("exponent_small_v", exp(&f.small_v));
        out.metric("exponent_large_theta", exp(&f.large_theta));
        out.metric("exponent_large_v", exp(&f.large_v));
        out.metric("tau_plateau_over_tau_sgd", self.tau_plateau() / self.tau_sgd);
        out.metric("tau_plateau_theory_over_tau_sgd", self.tau_plateau_theory() / self.tau_sgd);
        out.metric("fraction_large_tau_within_tol", self.fraction_large_tau_within(true));
        out.metric("fraction_large_tau_within_tol_theory", self.fraction_large_tau_within(false));
        out.metric("fraction_tau_pointwise", self.fraction_tau_pointwise());
        out.metric("fraction_tau_estimators_agree", self.fraction_tau_estimators_agree());
        out.metric("window", self.window as f64);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn within_factor_is_symmetric() {
        assert!(within_factor(1.0, 1.5, 1.5));
        assert!(within_factor(1.5, 1.0, 1.5));
        assert!(!within_factor(1.0, 1.51, 1.5));
        assert!(!within_factor(0.0, 1.0, 1.5));
        assert!(!within_factor(-1.0, -1.0, 1.5));
    }
}
