//! Loss fluctuation under anti-correlated noise against the uncorrelated baseline.

use enl_core::theory::{approx_large, lambda_cross, loss_fluctuation_report, predict, LossFluctuation};

use super::{resolve_spectrum, Outcome};
use crate::config::ExperimentConfig;
use crate::error::CliResult;
use crate::table::{num, Table};

pub struct LossReport {
    pub lambdas: Vec<f64>,
    pub exact: Vec<f64>,
    pub baseline: Vec<f64>,
    pub totals: LossFluctuation,
    pub fraction_below_cross: f64,
    pub lambda_cross: f64,
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<LossReport> {
    let hp = cfg.hyper.build()?;
    let spectrum = resolve_spectrum(&cfg.spectrum, &hp)?;
    let lc = lambda_cross(&hp)?;
    let pred = predict(&spectrum, &hp)?;
    let baseline = spectrum
        .lambdas()
        .iter()
        .zip(spectrum.noise_variances())
        .map(|(&l, s)| approx_large(l, s, &hp).map(|p| p.sigma_theta2))
        .collect::<enl_core::Result<Vec<_>>>()?;
    let below = spectrum.lambdas().iter().filter(|l| **l < lc).count();
    Ok(LossReport {
        lambdas: spectrum.lambdas().to_vec(),
        exact: pred.points.iter().map(|p| p.sigma_theta2).collect(),
        baseline,
        totals: loss_fluctuation_report(&spectrum, &hp)?,
        fraction_below_cross: below as f64 / spectrum.len() as f64,
        lambda_cross: lc,
    })
}

impl LossReport {
    pub fn outcome(&self, _cfg: &ExperimentConfig) -> Outcome {
        let mut t = Table::new(
            "loss.csv",
            &["lambda", "sigma_theta2_exact", "sigma_theta2_baseline", "loss_exact", "loss_baseline"],
        );
        t.meta("lambda_cross", num(self.lambda_cross))
            .meta("loss_fluct_anticorrelated", num(self.totals.anticorrelated))
            .meta("loss_fluct_baseline", num(self.totals.baseline))
            .meta("ratio", num(self.totals.ratio));
        for i in 0..self.lambdas.len() {
            let l = self.lambdas[i];
            t.push(vec![
                num(l),
                num(self.exact[i]),
                num(self.baseline[i]),
                num(0.5 * l * self.exact[i]),
                num(0.5 * l * self.baseline[i]),
            ]);
        }
        let mut out = Outcome { tables: vec![t], ..Default::default() };
        out.metric("loss_fluct_anticorrelated", self.totals.anticorrelated);
        out.metric("loss_fluct_baseline", self.totals.baseline);
        out.metric("ratio", self.totals.ratio);
        out.metric("fraction_below_cross", self.fraction_below_cross);
        out
    }
}
