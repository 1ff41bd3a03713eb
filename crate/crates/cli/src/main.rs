use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use enl_cli::{rerun, run_experiment, CliError, CliResult, ExperimentConfig, ExperimentKind, RunManifest};

#[derive(Parser)]
#[command(name = "enl", version, about = "Epoch-noise SGD experiments on quadratic losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file; the kind's defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; default `[experiment] output`, else `out/<kind>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write SVG plots.
    #[arg(long)]
    plot: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form stationary variances and correlation times over a spectrum.
    TheoryTable(RunArgs),
    /// Noise autocorrelation under epoch and with-replacement sampling.
    Fig1Autocorr(RunArgs),
    /// Simulated stationary variances and correlation times against theory.
    Fig2Variances(RunArgs),
    /// Finite-window PCA artifact on an isotropic quadratic.
    AppendixFPca(RunArgs),
    /// Epoch schedule against sampling with replacement.
    AppendixHReplacement(RunArgs),
    /// Extract tau_SGD and lambda_cross over a momentum / epoch-length grid.
    AppendixISweep(RunArgs),
    /// Noise covariance that does not commute with the Hessian.
    AppendixNNoncommuting(RunArgs),
    /// Closed forms against enumeration and stacked-system oracles.
    OracleCheck(RunArgs),
    /// Loss fluctuation with anti-correlated noise against the baseline.
    LossFluct(RunArgs),
    /// Print the default configuration of an experiment kind.
    Defaults { kind: String },
    /// Re-run a recorded manifest and compare output hashes.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(kind: ExperimentKind, args: &RunArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::parse(&std::fs::read_to_string(p)?)?,
        None => ExperimentConfig::default_for(kind),
    };
    if cfg.kind != kind {
        return Err(CliError::Config(format!("config describes {}, subcommand is {kind}", cfg.kind)));
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.plot |= args.plot;
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cmd: Command) -> CliResult<i32> {
    let (kind, args) = match cmd {
        Command::Defaults { kind } => {
            print!("{}", ExperimentConfig::default_for(kind.parse()?).to_ini());
            return Ok(0);
        }
        Command::Rerun { manifest, out } => {
            let recorded = RunManifest::read(&manifest)?;
            let (_, mismatched) = rerun(&recorded, &out)?;
            if mismatched.is_empty() {
                println!("all {} files reproduced", recorded.files.len());
                return Ok(0);
            }
            for m in &mismatched {
                eprintln!("hash mismatch: {m}");
            }
            return Ok(1);
        }
        Command::TheoryTable(a) => (ExperimentKind::TheoryTable, a),
        Command::Fig1Autocorr(a) => (ExperimentKind::Fig1Autocorr, a),
        Command::Fig2Variances(a) => (ExperimentKind::Fig2Variances, a),
        Command::AppendixFPca(a) => (ExperimentKind::AppendixFPca, a),
        Command::AppendixHReplacement(a) => (ExperimentKind::AppendixHReplacement, a),
        Command::AppendixISweep(a) => (ExperimentKind::AppendixISweep, a),
        Command::AppendixNNoncommuting(a) => (ExperimentKind::AppendixNNoncommuting, a),
        Command::OracleCheck(a) => (ExperimentKind::OracleCheck, a),
        Command::LossFluct(a) => (ExperimentKind::LossFluct, a),
    };
    let cfg = load(kind, &args)?;
    let manifest = run_experiment(&cfg, args.out.as_deref())?;
    for f in &manifest.files {
        println!("{}  {}", f.sha256, f.name);
    }
    for (k, v) in &manifest.summary {
        println!("{k} = {v}");
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
