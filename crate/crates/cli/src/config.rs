//! Experiment configuration: flat `key = value` text with sections.
//!
//! Every experiment kind owns a fixed set of sections. Unknown sections or
//! keys are rejected, missing keys take the kind's default, and
//! [`ExperimentConfig::to_ini`] writes every resolved value so that
//! `parse(to_ini(c)) == c`.
//!
//! Spectrum ranges and fit regions marked *relative* are multiples of the
//! crossover eigenvalue `3(1−β)/(ηM)` of the configured hyperparameters.

use std::collections::HashSet;
use std::fmt::{self, Display, Write as _};
use std::str::FromStr;

use enl_core::sampling::SamplingMode;
use enl_core::Hyperparams;
use ini::{Ini, ParseOption};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    TheoryTable,
    Fig1Autocorr,
    Fig2Variances,
    AppendixFPca,
    AppendixHReplacement,
    AppendixISweep,
    AppendixNNoncommuting,
    OracleCheck,
    LossFluct,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        ExperimentKind::TheoryTable,
        ExperimentKind::Fig1Autocorr,
        ExperimentKind::Fig2Variances,
        ExperimentKind::AppendixFPca,
        ExperimentKind::AppendixHReplacement,
        ExperimentKind::AppendixISweep,
        ExperimentKind::AppendixNNoncommuting,
        ExperimentKind::OracleCheck,
        ExperimentKind::LossFluct,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::TheoryTable => "theory-table",
            ExperimentKind::Fig1Autocorr => "fig1-autocorr",
            ExperimentKind::Fig2Variances => "fig2-variances",
            ExperimentKind::AppendixFPca => "appendix-f-pca",
            ExperimentKind::AppendixHReplacement => "appendix-h-replacement",
            ExperimentKind::AppendixISweep => "appendix-i-sweep",
            ExperimentKind::AppendixNNoncommuting => "appendix-n-noncommuting",
            ExperimentKind::OracleCheck => "oracle-check",
            ExperimentKind::LossFluct => "loss-fluct",
        }
    }

    /// Sections this kind reads besides `[experiment]`.
    fn sections(&self) -> &'static [Section] {
        use Section::*;
        match self {
            ExperimentKind::TheoryTable | ExperimentKind::LossFluct => &[Hyper, Spectrum],
            ExperimentKind::Fig1Autocorr | ExperimentKind::AppendixHReplacement => &[Hyper, Spectrum, Run],
            ExperimentKind::Fig2Variances => &[Hyper, Spectrum, Run, Fit],
            ExperimentKind::AppendixFPca => &[Hyper, Run, Pca],
            ExperimentKind::AppendixISweep => &[Hyper, Run, Fit, Sweep],
            ExperimentKind::AppendixNNoncommuting => &[Hyper, Spectrum, Run, Fit, Noncommuting],
            ExperimentKind::OracleCheck => &[Oracle],
        }
    }
}

impl Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| CliError::Config(format!("unknown experiment kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Hyper,
    Spectrum,
    Run,
    Fit,
    Pca,
    Sweep,
    Noncommuting,
    Oracle,
}

impl Section {
    fn name(&self) -> &'static str {
        match self {
            Section::Hyper => "hyperparams",
            Section::Spectrum => "spectrum",
            Section::Run => "run",
            Section::Fit => "fit",
            Section::Pca => "pca",
            Section::Sweep => "sweep",
            Section::Noncommuting => "noncommuting",
            Section::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperSection {
    pub eta: f64,
    pub beta: f64,
    pub batch_size: usize,
    pub num_examples: usize,
}

impl HyperSection {
    pub fn build(&self) -> CliResult<Hyperparams> {
        Ok(Hyperparams::new(self.eta, self.beta, self.batch_size, self.num_examples)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSection {
    pub count: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Range given in units of the crossover eigenvalue.
    pub relative: bool,
    /// `σ²_{δg,i} = noise_c · λᵢ`.
    pub noise_c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    /// Recorded steps; `None` means `window_tau · τ_SGD`, at least `min_epochs` epochs.
    pub window: Option<usize>,
    pub window_tau: f64,
    pub min_epochs: usize,
    /// `None` means the larger of 20 epochs and `10·τ_SGD`.
    pub burn_in: Option<usize>,
    pub replicas: usize,
    pub sampling: SamplingMode,
    /// Largest autocorrelation lag; `None` means `2M`.
    pub max_lag: Option<usize>,
    /// Recorded directions for dense ensembles; `None` records all.
    pub directions: Option<usize>,
    /// Remove the window-mean velocity (`θ − v̄·k`) before estimating. On a
    /// drift-free window this adds a ramp of variance `(θ_T − θ_0)²/12`, so it
    /// is off unless the minimum actually moves.
    pub detrend: bool,
}

/// Fit regions, all relative to the crossover eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSection {
    pub small_max: f64,
    pub large_min: f64,
    /// Directions below this level define the empirical plateau.
    pub plateau_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaSection {
    pub dim: usize,
    pub eta_lambda: f64,
    pub noise_c: f64,
    /// Speed of the moving minimum, in stationary weight standard deviations per step.
    pub drift_speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    pub betas: Vec<f64>,
    pub batches: Vec<usize>,
    pub noise_c: f64,
    pub bulk_count: usize,
    pub bulk_min: f64,
    pub bulk_max: f64,
    pub large_count: usize,
    pub large_min: f64,
    pub large_max: f64,
    /// Cap on `ηλ` as a fraction of the stability bound `2(1+β)`.
    pub max_stability_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoncommutingSection {
    /// Entry standard deviation of `X` in the perturbation `XXᵀ/d`.
    pub wishart_sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSection {
    pub betas: Vec<f64>,
    pub eta_lambdas: Vec<f64>,
    /// Adds `edge_fraction · 2(1+β)` to the `ηλ` grid when positive.
    pub edge_fraction: f64,
    pub batches: Vec<usize>,
    pub pair_sizes: Vec<usize>,
    pub zero_sum_max: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub output: Option<String>,
    pub plot: bool,
    pub hyper: HyperSection,
    pub spectrum: SpectrumSection,
    pub run: RunSection,
    pub fit: FitSection,
    pub pca: PcaSection,
    pub sweep: SweepSection,
    pub noncommuting: NoncommutingSection,
    pub oracle: OracleSection,
}

impl ExperimentConfig {
    /// Desk-scale defaults for `kind`.
    pub fn default_for(kind: ExperimentKind) -> Self {
        let mut c = ExperimentConfig {
            kind,
            seed: 1,
            output: None,
            plot: false,
            hyper: HyperSection { eta: 0.01, beta: 0.9, batch_size: 10, num_examples: 1000 },
            spectrum: SpectrumSection { count: 200, lambda_min: 0.01, lambda_max: 10.0, relative: true, noise_c: 1.0 },
            run: RunSection {
                window: None,
                window_tau: 400.0,
                min_epochs: 100,
                burn_in: None,
                replicas: 1,
                sampling: SamplingMode::EpochWithoutReplacement,
                max_lag: None,
                directions: None,
                detrend: false,
            },
            fit: FitSection { small_max: 1.0 / 3.0, large_min: 3.0, plateau_max: 1.0 / 30.0 },
            pca: PcaSection { dim: 250, eta_lambda: 0.8, noise_c: 1.0, drift_speed: 0.05 },
            sweep: SweepSection {
                betas: vec![0.0, 0.5, 0.9],
                batches: vec![50, 100, 200],
                noise_c: 1.0,
                bulk_count: 100,
                bulk_min: 1e-3,
                bulk_max: 1.0 / 30.0,
                large_count: 20,
                // deep enough that the fitted slope is close to its asymptote
                large_min: 10.0,
                large_max: 1000.0,
                max_stability_fraction: 0.5,
            },
            noncommuting: NoncommutingSection { wishart_sigma: 0.02 },
            oracle: OracleSection {
                betas: vec![0.0, 0.5, 0.9, 0.99],
                eta_lambdas: vec![1e-4, 0.01, 0.1, 0.5, 1.0],
                edge_fraction: 0.9,
                batches: vec![5, 50, 500],
                pair_sizes: vec![4, 6, 8],
                zero_sum_max: 64,
            },
        };
        match kind {
            ExperimentKind::AppendixHReplacement => {
                c.hyper.batch_size = 50;
                c.hyper.num_examples = 5000;
            }
            ExperimentKind::Fig1Autocorr => {
                // 20 epochs of M = 100 batches; a large dataset keeps the shared-example
                // overlap term (relative variance ~ directions / N) well inside the band
                c.hyper.batch_size = 50;
                c.hyper.num_examples = 5000;
                c.run.window = Some(2000);
            }
            ExperimentKind::AppendixFPca => {
                c.hyper = HyperSection { eta: 0.01, beta: 0.0, batch_size: 1, num_examples: 1200 };
                c.run.window = Some(1200);
            }
            ExperimentKind::AppendixISweep => {
                c.hyper.batch_size = 4;
            }
            ExperimentKind::AppendixNNoncommuting => {
                c.hyper = HyperSection { eta: 20.0, beta: 0.9, batch_size: 20, num_examples: 1000 };
                c.spectrum = SpectrumSection {
                    count: 500,
                    lambda_min: 1e-5,
                    lambda_max: 6e-3,
                    relative: false,
                    noise_c: 1.0,
                };
                c.run.window_tau = 100.0;
                c.run.directions = Some(100);
            }
            ExperimentKind::LossFluct => {
                c.spectrum.lambda_min = 1e-3;
                c.spectrum.lambda_max = 2.0;
            }
            _ => {}
        }
        c
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let opt = ParseOption {
            enabled_quote: false,
            enabled_escape: false,
            enabled_indented_mutiline_value: false,
            enabled_preserve_key_leading_whitespace: false,
        };
        let ini = Ini::load_from_str_opt(text, opt).map_err(|e| CliError::Config(e.to_string()))?;
        let mut entries: Vec<(String, String, String)> = Vec::new();
        let mut seen = HashSet::new();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("");
            for (k, v) in props.iter() {
                if !seen.insert((section.to_string(), k.to_string())) {
                    return Err(CliError::Config(format!("duplicate key `{k}` in [{section}]")));
                }
                entries.push((section.to_string(), k.to_string(), v.to_string()));
            }
        }
        let kind_text = entries
            .iter()
            .find(|(s, k, _)| s == "experiment" && k == "kind")
            .map(|e| e.2.clone())
            .ok_or_else(|| CliError::Config("missing `kind` in [experiment]".into()))?;
        let kind: ExperimentKind = kind_text.parse()?;
        let allowed = kind.sections();
        let mut c = Self::default_for(kind);
        for (section, key, value) in &entries {
            if section == "experiment" {
                c.set_experiment(key, value)?;
                continue;
            }
            let sec = allowed
                .iter()
                .find(|s| s.name() == section)
                .ok_or_else(|| CliError::Config(format!("section [{section}] is not used by {kind}")))?;
            c.set(*sec, key, value)
                .map_err(|e| CliError::Config(format!("[{section}] {key}: {e}")))?;
        }
        c.validate()?;
        Ok(c)
    }

    fn set_experiment(&mut self, key: &str, value: &str) -> CliResult<()> {
        let wrap = |e: String| CliError::Config(format!("[experiment] {key}: {e}"));
        match key {
            "kind" => {}
            "seed" => self.seed = parse_value(value).map_err(wrap)?,
            "output" => self.output = if value == "auto" { None } else { Some(value.to_string()) },
            "plot" => self.plot = parse_bool(value).map_err(wrap)?,
            _ => return Err(CliError::Config(format!("unknown key `{key}` in [experiment]"))),
        }
        Ok(())
    }

    fn set(&mut self, section: Section, key: &str, v: &str) -> Result<(), String> {
        match (section, key) {
            (Section::Hyper, "eta") => self.hyper.eta = parse_value(v)?,
            (Section::Hyper, "beta") => self.hyper.beta = parse_value(v)?,
            (Section::Hyper, "batch_size") => self.hyper.batch_size = parse_value(v)?,
            (Section::Hyper, "num_examples") => self.hyper.num_examples = parse_value(v)?,

            (Section::Spectrum, "count") => self.spectrum.count = parse_value(v)?,
            (Section::Spectrum, "lambda_min") => self.spectrum.lambda_min = parse_value(v)?,
            (Section::Spectrum, "lambda_max") => self.spectrum.lambda_max = parse_value(v)?,
            (Section::Spectrum, "relative") => self.spectrum.relative = parse_bool(v)?,
            (Section::Spectrum, "noise_c") => self.spectrum.noise_c = parse_value(v)?,

            (Section::Run, "window") => self.run.window = parse_auto(v)?,
            (Section::Run, "window_tau") => self.run.window_tau = parse_value(v)?,
            (Section::Run, "min_epochs") => self.run.min_epochs = parse_value(v)?,
            (Section::Run, "burn_in") => self.run.burn_in = parse_auto(v)?,
            (Section::Run, "replicas") => self.run.replicas = parse_value(v)?,
            (Section::Run, "sampling") => self.run.sampling = v.parse().map_err(|e| format!("{e}"))?,
            (Section::Run, "max_lag") => self.run.max_lag = parse_auto(v)?,
            (Section::Run, "directions") => self.run.directions = parse_auto_or_all(v)?,
            (Section::Run, "detrend") => self.run.detrend = parse_bool(v)?,

            (Section::Fit, "small_max") => self.fit.small_max = parse_value(v)?,
            (Section::Fit, "large_min") => self.fit.large_min = parse_value(v)?,
            (Section::Fit, "plateau_max") => self.fit.plateau_max = parse_value(v)?,

            (Section::Pca, "dim") => self.pca.dim = parse_value(v)?,
            (Section::Pca, "eta_lambda") => self.pca.eta_lambda = parse_value(v)?,
            (Section::Pca, "noise_c") => self.pca.noise_c = parse_value(v)?,
            (Section::Pca, "drift_speed") => self.pca.drift_speed = parse_value(v)?,

            (Section::Sweep, "betas") => self.sweep.betas = parse_list(v)?,
            (Section::Sweep, "batches") => self.sweep.batches = parse_list(v)?,
            (Section::Sweep, "noise_c") => self.sweep.noise_c = parse_value(v)?,
            (Section::Sweep, "bulk_count") => self.sweep.bulk_count = parse_value(v)?,
            (Section::Sweep, "bulk_min") => self.sweep.bulk_min = parse_value(v)?,
            (Section::Sweep, "bulk_max") => self.sweep.bulk_max = parse_value(v)?,
            (Section::Sweep, "large_count") => self.sweep.large_count = parse_value(v)?,
            (Section::Sweep, "large_min") => self.sweep.large_min = parse_value(v)?,
            (Section::Sweep, "large_max") => self.sweep.large_max = parse_value(v)?,
            (Section::Sweep, "max_stability_fraction") => self.sweep.max_stability_fraction = parse_value(v)?,

            (Section::Noncommuting, "wishart_sigma") => self.noncommuting.wishart_sigma = parse_value(v)?,

            (Section::Oracle, "betas") => self.oracle.betas = parse_list(v)?,
            (Section::Oracle, "eta_lambdas") => self.oracle.eta_lambdas = parse_list(v)?,
            (Section::Oracle, "edge_fraction") => self.oracle.edge_fraction = parse_value(v)?,
            (Section::Oracle, "batches") => self.oracle.batches = parse_list(v)?,
            (Section::Oracle, "pair_sizes") => self.oracle.pair_sizes = parse_list(v)?,
            (Section::Oracle, "zero_sum_max") => self.oracle.zero_sum_max = parse_value(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Checks every value the kind reads.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        let finite = |name: &str, x: f64| -> CliResult<()> {
            if x.is_finite() {
                Ok(())
            } else {
                Err(CliError::Config(format!("{name} must be finite")))
            }
        };
        if let Some(o) = &self.output {
            if o.is_empty() || o != o.trim() || o.chars().any(|c| c.is_control()) || o == "auto" {
                return bad(format!("output path `{o}` is not representable"));
            }
        }
        for s in self.kind.sections() {
            match s {
                Section::Hyper => {
                    finite("eta", self.hyper.eta)?;
                    finite("beta", self.hyper.beta)?;
                    self.hyper.build()?;
                }
                Section::Spectrum => {
                    let sp = &self.spectrum;
                    finite("lambda_min", sp.lambda_min)?;
                    finite("lambda_max", sp.lambda_max)?;
                    finite("noise_c", sp.noise_c)?;
                    if sp.count == 0 || !(sp.lambda_min > 0.0) || !(sp.lambda_max >= sp.lambda_min) {
                        return bad("spectrum needs count ≥ 1 and 0 < lambda_min ≤ lambda_max".into());
                    }
                    if !(sp.noise_c >= 0.0) {
                        return bad("noise_c must be non-negative".into());
                    }
                }
                Section::Run => {
                    let r = &self.run;
                    finite("window_tau", r.window_tau)?;
                    if !(r.window_tau > 0.0) || r.replicas == 0 || r.window == Some(0) {
                        return bad("run needs a positive window and at least one replica".into());
                    }
                    if r.max_lag == Some(0) || r.directions == Some(0) {
                        return bad("max_lag and directions must be positive".into());
                    }
                }
                Section::Fit => {
                    let f = &self.fit;
                    for (n, x) in [("small_max", f.small_max), ("large_min", f.large_min), ("plateau_max", f.plateau_max)] {
                        finite(n, x)?;
                        if !(x > 0.0) {
                            return bad(format!("{n} must be positive"));
                        }
                    }
                }
                Section::Pca => {
                    let p = &self.pca;
                    finite("eta_lambda", p.eta_lambda)?;
                    finite("noise_c", p.noise_c)?;
                    finite("drift_speed", p.drift_speed)?;
                    if p.dim == 0 || !(p.eta_lambda > 0.0) || !(p.noise_c > 0.0) || !(p.drift_speed > 0.0) {
                        return bad("pca needs dim ≥ 1 and positive eta_lambda, noise_c, drift_speed".into());
                    }
                }
                Section::Sweep => {
                    let w = &self.sweep;
                    if w.betas.is_empty() || w.batches.is_empty() || w.bulk_count == 0 || w.large_count < 3 {
                        return bad("sweep needs betas, batches, bulk_count ≥ 1 and large_count ≥ 3".into());
                    }
                    for (n, x) in [
                        ("noise_c", w.noise_c),
                        ("bulk_min", w.bulk_min),
                        ("bulk_max", w.bulk_max),
                        ("large_min", w.large_min),
                        ("large_max", w.large_max),
                        ("max_stability_fraction", w.max_stability_fraction),
                    ] {
                        finite(n, x)?;
                        if !(x > 0.0) {
                            return bad(format!("{n} must be positive"));
                        }
                    }
                    if w.bulk_min > w.bulk_max || w.large_min > w.large_max || w.max_stability_fraction >= 1.0 {
                        return bad("sweep ranges must be ordered and the stability fraction below 1".into());
                    }
                    for b in &w.betas {
                        finite("beta", *b)?;
                        Hyperparams::new(self.hyper.eta, *b, self.hyper.batch_size, self.hyper.batch_size * 2)?;
                    }
                    if w.batches.iter().any(|m| *m < 2) {
                        return bad("every swept M must be at least 2".into());
                    }
                }
                Section::Noncommuting => {
                    finite("wishart_sigma", self.noncommuting.wishart_sigma)?;
                    if !(self.noncommuting.wishart_sigma >= 0.0) {
                        return bad("wishart_sigma must be non-negative".into());
                    }
                }
                Section::Oracle => {
                    let o = &self.oracle;
                    if o.betas.is_empty() || o.batches.is_empty() || (o.eta_lambdas.is_empty() && o.edge_fraction <= 0.0) {
                        return bad("oracle grid is empty".into());
                    }
                    finite("edge_fraction", o.edge_fraction)?;
                    if !(0.0..1.0).contains(&o.edge_fraction) {
                        return bad("edge_fraction must lie in [0, 1)".into());
                    }
                    for b in &o.betas {
                        finite("beta", *b)?;
                        if !(0.0..1.0).contains(b) {
                            return bad(format!("beta {b} outside [0, 1)"));
                        }
                    }
                    for el in &o.eta_lambdas {
                        finite("eta_lambda", *el)?;
                        if !(*el > 0.0) {
                            return bad(format!("eta_lambda {el} must be positive"));
                        }
                    }
                    if o.batches.iter().any(|m| *m < 2) || o.zero_sum_max < 2 {
                        return bad("oracle M values must be at least 2".into());
                    }
                    if o.pair_sizes.iter().any(|n| *n < 2 || *n > enl_core::sampling::ORACLE_MAX_N) {
                        return bad(format!("pair sizes must lie in 2..={}", enl_core::sampling::ORACLE_MAX_N));
                    }
                }
            }
        }
        Ok(())
    }

    /// Canonical text form holding every resolved value the kind reads.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[experiment]");
        kv(&mut s, "kind", self.kind);
        kv(&mut s, "seed", self.seed);
        kv(&mut s, "output", self.output.as_deref().unwrap_or("auto"));
        kv(&mut s, "plot", self.plot);
        for sec in self.kind.sections() {
            let _ = writeln!(s, "\n[{}]", sec.name());
            match sec {
                Section::Hyper => {
                    let h = &self.hyper;
                    kv(&mut s, "eta", h.eta);
                    kv(&mut s, "beta", h.beta);
                    kv(&mut s, "batch_size", h.batch_size);
                    kv(&mut s, "num_examples", h.num_examples);
                }
                Section::Spectrum => {
                    let p = &self.spectrum;
                    kv(&mut s, "count", p.count);
                    kv(&mut s, "lambda_min", p.lambda_min);
                    kv(&mut s, "lambda_max", p.lambda_max);
                    kv(&mut s, "relative", p.relative);
                    kv(&mut s, "noise_c", p.noise_c);
                }
                Section::Run => {
                    let r = &self.run;
                    kv(&mut s, "window", auto(r.window));
                    kv(&mut s, "window_tau", r.window_tau);
                    kv(&mut s, "min_epochs", r.min_epochs);
                    kv(&mut s, "burn_in", auto(r.burn_in));
                    kv(&mut s, "replicas", r.replicas);
                    kv(&mut s, "sampling", r.sampling.as_str());
                    kv(&mut s, "max_lag", auto(r.max_lag));
                    kv(&mut s, "directions", r.directions.map_or("all".to_string(), |d| d.to_string()));
                    kv(&mut s, "detrend", r.detrend);
                }
                Section::Fit => {
                    kv(&mut s, "small_max", self.fit.small_max);
                    kv(&mut s, "large_min", self.fit.large_min);
                    kv(&mut s, "plateau_max", self.fit.plateau_max);
                }
                Section::Pca => {
                    let p = &self.pca;
                    kv(&mut s, "dim", p.dim);
                    kv(&mut s, "eta_lambda", p.eta_lambda);
                    kv(&mut s, "noise_c", p.noise_c);
                    kv(&mut s, "drift_speed", p.drift_speed);
                }
                Section::Sweep => {
                    let w = &self.sweep;
                    kv(&mut s, "betas", list(&w.betas));
                    kv(&mut s, "batches", list(&w.batches));
                    kv(&mut s, "noise_c", w.noise_c);
                    kv(&mut s, "bulk_count", w.bulk_count);
                    kv(&mut s, "bulk_min", w.bulk_min);
                    kv(&mut s, "bulk_max", w.bulk_max);
                    kv(&mut s, "large_count", w.large_count);
                    kv(&mut s, "large_min", w.large_min);
                    kv(&mut s, "large_max", w.large_max);
                    kv(&mut s, "max_stability_fraction", w.max_stability_fraction);
                }
                Section::Noncommuting => kv(&mut s, "wishart_sigma", self.noncommuting.wishart_sigma),
                Section::Oracle => {
                    let o = &self.oracle;
                    kv(&mut s, "betas", list(&o.betas));
                    kv(&mut s, "eta_lambdas", list(&o.eta_lambdas));
                    kv(&mut s, "edge_fraction", o.edge_fraction);
                    kv(&mut s, "batches", list(&o.batches));
                    kv(&mut s, "pair_sizes", list(&o.pair_sizes));
                    kv(&mut s, "zero_sum_max", o.zero_sum_max);
                }
            }
        }
        s
    }
}

fn kv(s: &mut String, key: &str, value: impl Display) {
    let _ = writeln!(s, "{key} = {value}");
}

fn auto(v: Option<usize>) -> String {
    v.map_or("auto".to_string(), |x| x.to_string())
}

fn list<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn parse_value<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: Display,
{
    v.trim().parse::<T>().map_err(|e| format!("`{v}`: {e}"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean")),
    }
}

fn parse_auto(v: &str) -> Result<Option<usize>, String> {
    if v.trim() == "auto" {
        Ok(None)
    } else {
        parse_value(v).map(Some)
    }
}

fn parse_auto_or_all(v: &str) -> Result<Option<usize>, String> {
    if v.trim() == "all" {
        Ok(None)
    } else {
        parse_value(v).map(Some)
    }
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: Display,
{
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(parse_value).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_round_trip() {
        for kind in ExperimentKind::ALL {
            let c = ExperimentConfig::default_for(kind);
            c.validate().unwrap();
            let text = c.to_ini();
            assert_eq!(ExperimentConfig::parse(&text).unwrap(), c, "{kind}:\n{text}");
        }
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = ExperimentConfig::parse("[experiment]\nkind = fig2-variances\n").unwrap();
        assert_eq!(c, ExperimentConfig::default_for(ExperimentKind::Fig2Variances));
    }

    #[test]
    fn overrides_apply() {
        let c = ExperimentConfig::parse(
            "[experiment]\nkind = appendix-i-sweep\nseed = 9\n[sweep]\nbetas = 0.1, 0.2\n[run]\nburn_in = 50\nsampling = iid\n",
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.sweep.betas, vec![0.1, 0.2]);
        assert_eq!(c.run.burn_in, Some(50));
        assert_eq!(c.run.sampling, SamplingMode::IidWithReplacement);
    }

    #[test]
    fn rejects_bad_input() {
        let cases = [
            "[experiment]\n",
            "[experiment]\nkind = nope\n",
            "[experiment]\nkind = theory-table\n[run]\nwindow = 5\n",
            "[experiment]\nkind = theory-table\n[hyperparams]\ncolour = red\n",
            "[experiment]\nkind = theory-table\n[hyperparams]\neta = 0.1\neta = 0.2\n",
            "[experiment]\nkind = theory-table\n[hyperparams]\nbeta = 1.5\n",
            "[experiment]\nkind = theory-table\n[hyperparams]\neta = NaN\n",
            "[experiment]\nkind = oracle-check\n[oracle]\npair_sizes = 40\n",
            "[experiment]\nkind = fig2-variances\n[run]\nwindow = 0\n",
        ];
        for text in cases {
            assert!(ExperimentConfig::parse(text).is_err(), "{text}");
        }
    }

    proptest! {
        #[test]
        fn random_configs_round_trip(
            seed in any::<u64>(),
            eta in 1e-6f64..1.0,
            beta in 0.0f64..0.999,
            s in 1usize..20,
            cnt in 1usize..500,
            lo in 1e-6f64..1.0,
            span in 1.0f64..1e4,
            window in proptest::option::of(1usize..100_000),
            detrend in any::<bool>(),
            kind_idx in 0usize..9,
        ) {
            let kind = ExperimentKind::ALL[kind_idx];
            let mut c = ExperimentConfig::default_for(kind);
            c.seed = seed;
            c.hyper.eta = eta;
            c.hyper.beta = beta;
            c.hyper.batch_size = s;
            c.hyper.num_examples = s * 7;
            c.spectrum.count = cnt;
            c.spectrum.lambda_min = lo;
            c.spectrum.lambda_max = lo * span;
            c.run.window = window;
            c.run.detrend = detrend;
            c.output = Some(format!("out/run {seed}"));
            prop_assume!(c.validate().is_ok());
            let text = c.to_ini();
            let back = ExperimentConfig::parse(&text).unwrap();
            prop_assert_eq!(back.to_ini(), text);
            // sections a kind does not read keep their defaults
            if kind.sections().contains(&Section::Run) && kind.sections().contains(&Section::Spectrum) {
                prop_assert_eq!(back, c);
            }
        }
    }
}
