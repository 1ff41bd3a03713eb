//! Closed-form stationary statistics over a spectrum; no simulation.

use enl_core::stats::flatness;
use enl_core::theory::{lambda_cross, tau_sgd, theory_table, TheoryRow, THEORY_TABLE_COLUMNS};

use super::{resolve_spectrum, Outcome};
use crate::config::ExperimentConfig;
use crate::error::CliResult;
use crate::plot::{Plot, Series, Style};
use crate::table::{flag, int, num, Table};

pub struct TheoryTableReport {
    pub rows: Vec<TheoryRow>,
    pub lambda_cross: f64,
    pub tau_sgd: f64,
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<TheoryTableReport> {
    let hp = cfg.hyper.build()?;
    let spectrum = resolve_spectrum(&cfg.spectrum, &hp)?;
    Ok(TheoryTableReport { rows: theory_table(&spectrum, &hp)?, lambda_cross: lambda_cross(&hp)?, tau_sgd: tau_sgd(&hp)? })
}

impl TheoryTableReport {
    pub fn outcome(&self, _cfg: &ExperimentConfig) -> Outcome {
        let mut cols: Vec<&str> = THEORY_TABLE_COLUMNS.to_vec();
        cols.extend(["lambda_over_cross", "flatness"]);
        let mut t = Table::new("theory.csv", &cols);
        t.meta("lambda_cross", num(self.lambda_cross)).meta("tau_sgd", num(self.tau_sgd));
        for r in &self.rows {
            t.push(vec![
                num(r.lambda),
                num(r.sigma_dg2),
                num(r.eta),
                num(r.beta),
                int(r.m),
                num(r.exact.sigma_theta2),
                num(r.exact.sigma_v2),
                num(r.exact.tau),
                num(r.sigma_theta2_large),
                num(r.sigma_theta2_small),
                r.regime.as_str().to_string(),
                flag(r.strict_large),
                num(r.lambda / self.lambda_cross),
                num(flatness(r.lambda)),
            ]);
        }
        let x: Vec<f64> = self.rows.iter().map(|r| r.lambda).collect();
        let col = |f: fn(&TheoryRow) -> f64| self.rows.iter().map(f).collect::<Vec<_>>();
        let plot = Plot::new("stationary weight variance", "lambda", "sigma_theta^2", true, true)
            .add(Series::new("exact", &x, &col(|r| r.exact.sigma_theta2), Style::Line))
            .add(Series::new("large-lambda", &x, &col(|r| r.sigma_theta2_large), Style::Line))
            .add(Series::new("small-lambda", &x, &col(|r| r.sigma_theta2_small), Style::Line));
        let mut out = Outcome { tables: vec![t], plots: vec![("theory.svg".into(), plot)], ..Default::default() };
        out.metric("lambda_cross", self.lambda_cross);
        out.metric("tau_sgd", self.tau_sgd);
        out.metric("rows", self.rows.len() as f64);
        out
    }
}
