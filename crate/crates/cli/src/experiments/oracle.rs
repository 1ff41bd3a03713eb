//! Closed forms against their independent oracles: the stationary variances
//! against the stacked-system sum, and the noise autocorrelation weights
//! against permutation enumeration.

use enl_core::sampling::{autocorr_weight_exact, oracle_weight, Rational};
use enl_core::theory::{exact_stationary, lyapunov_oracle};
use enl_core::Hyperparams;
use rayon::prelude::*;

use super::Outcome;
use crate::config::ExperimentConfig;
use crate::error::CliResult;
use crate::table::{flag, int, num, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub beta: f64,
    pub eta_lambda: f64,
    pub m: usize,
    pub exact_theta2: f64,
    pub exact_v2: f64,
    pub oracle_theta2: f64,
    pub oracle_v2: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightCheck {
    pub n: usize,
    pub s: usize,
    pub h: usize,
    pub oracle: Rational,
    pub closed_form: Rational,
}

pub struct OracleReport {
    pub grid: Vec<GridPoint>,
    pub weights: Vec<WeightCheck>,
    /// `(M, Σ_h w(h))` for every checked `M`.
    pub zero_sums: Vec<(usize, Rational)>,
}

impl OracleReport {
    pub fn max_rel_err(&self) -> f64 {
        self.grid.iter().map(|g| g.rel_err).fold(0.0, f64::max)
    }

    pub fn weight_mismatches(&self) -> usize {
        self.weights.iter().filter(|w| w.oracle != w.closed_form).count()
    }

    pub fn zero_sum_failures(&self) -> usize {
        self.zero_sums.iter().filter(|(_, s)| *s != Rational::from_integer(0)).count()
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<OracleReport> {
    let o = &cfg.oracle;
    let mut cases = Vec::new();
    for &beta in &o.betas {
        let mut els = o.eta_lambdas.clone();
        if o.edge_fraction > 0.0 {
            els.push(o.edge_fraction * 2.0 * (1.0 + beta));
        }
        for &el in &els {
            for &m in &o.batches {
                cases.push((beta, el, m));
            }
        }
    }
    let grid = cases
        .par_iter()
        .map(|&(beta, el, m)| -> CliResult<GridPoint> {
            // η = 1 so that λ carries ηλ; σ² = 1
            let hp = Hyperparams::with_batches(1.0, beta, m)?;
            let exact = exact_stationary(el, 1.0, &hp)?;
            let orc = lyapunov_oracle(el, 1.0, &hp, None)?;
            Ok(GridPoint {
                beta,
                eta_lambda: el,
                m,
                exact_theta2: exact.sigma_theta2,
                exact_v2: exact.sigma_v2,
                oracle_theta2: orc.sigma_theta2,
                oracle_v2: orc.sigma_v2,
                rel_err: rel(exact.sigma_theta2, orc.sigma_theta2).max(rel(exact.sigma_v2, orc.sigma_v2)),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut pairs = Vec::new();
    for &n in &o.pair_sizes {
        for s in (1..n).filter(|s| n % s == 0) {
            for h in 0..=2 * (n / s) {
                pairs.push((n, s, h));
            }
        }
    }
    let weights = pairs
        .par_iter()
        .map(|&(n, s, h)| -> CliResult<WeightCheck> {
            Ok(WeightCheck {
                n,
                s,
                h,
                oracle: oracle_weight(n, s, h)?,
                closed_form: autocorr_weight_exact(h as i64, n / s)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let zero_sums = (2..=o.zero_sum_max)
        .map(|m| -> CliResult<(usize, Rational)> {
            let mi = m as i64;
            let mut total = Rational::from_integer(0);
            for h in -mi..=mi {
                total += autocorr_weight_exact(h, m)?;
            }
            Ok((m, total))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(OracleReport { grid, weights, zero_sums })
}

impl OracleReport {
    pub fn outcome(&self, _cfg: &ExperimentConfig) -> Outcome {
        let mut g = Table::new(
            "oracle_grid.csv",
            &["beta", "eta_lambda", "M", "sigma_theta2_exact", "sigma_theta2_oracle", "sigma_v2_exact", "sigma_v2_oracle", "rel_err"],
        );
        g.meta("max_rel_err", num(self.max_rel_err()));
        for p in &self.grid {
            g.push(vec![
                num(p.beta),
                num(p.eta_lambda),
                int(p.m),
                num(p.exact_theta2),
                num(p.oracle_theta2),
                num(p.exact_v2),
                num(p.oracle_v2),
                num(p.rel_err),
            ]);
        }
        let mut w = Table::new("oracle_weights.csv", &["N", "S", "M", "h", "weight_oracle", "weight_closed_form", "equal"]);
        w.meta("mismatches", self.weight_mismatches());
        for c in &self.weights {
            w.push(vec![
                int(c.n),
                int(c.s),
                int(c.n / c.s),
                int(c.h),
                c.oracle.to_string(),
                c.closed_form.to_string(),
                flag(c.oracle == c.closed_form),
            ]);
        }
        let mut z = Table::new("zero_sum.csv", &["M", "sum_of_weights"]);
        for (m, s) in &self.zero_sums {
            z.push(vec![int(m), s.to_string()]);
        }
        let mut out = Outcome { tables: vec![g, w, z], ..Default::default() };
        out.metric("max_rel_err", self.max_rel_err());
        out.metric("grid_points", self.grid.len() as f64);
        out.metric("weight_checks", self.weights.len() as f64);
        out.metric("weight_mismatches", self.weight_mismatches() as f64);
        out.metric("zero_sum_failures", self.zero_sum_failures() as f64);
        out
    }
}
