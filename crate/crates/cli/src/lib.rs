//! Config-driven experiment runner over `enl-core`.
//!
//! [`run_experiment`] resolves a configuration, executes the named pipeline
//! and writes its CSV tables (plus optional SVG plots) and a
//! [`RunManifest`] into an output directory. Pipelines are also callable
//! in memory through [`experiments`].

pub mod config;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod plot;
pub mod table;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{CliError, CliResult};
pub use manifest::RunManifest;

use manifest::{sha256_hex, FileEntry, MANIFEST_FILE};

/// Output directory: the explicit argument, else the configured one, else `out/<kind>`.
pub fn output_dir(cfg: &ExperimentConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(cfg.kind.as_str()))
}

/// Executes `cfg` and writes every artifact, the manifest last.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> CliResult<RunManifest> {
    let dir = output_dir(cfg, out);
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let outcome = experiments::execute(cfg)?;
    std::fs::create_dir_all(&dir)?;

    let mut files = Vec::new();
    let mut emit = |name: &str, body: &str| -> CliResult<()> {
        std::fs::write(dir.join(name), body)?;
        files.push(FileEntry { name: name.to_string(), sha256: sha256_hex(body.as_bytes()), bytes: body.len() as u64 });
        Ok(())
    };
    for t in &outcome.tables {
        emit(&t.name, &t.body())?;
    }
    for (name, plot) in &outcome.plots {
        emit(name, &plot.to_svg())?;
    }
    let mut resolved = cfg.clone();
    resolved.output = Some(dir.to_string_lossy().into_owned());
    let manifest = RunManifest {
        library: "enl-core".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        kind: cfg.kind.to_string(),
        seed: cfg.seed,
        config: resolved.to_ini(),
        started_unix,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
        rng_streams: outcome.streams.iter().map(|s| s.to_string()).collect(),
        files,
        summary: outcome.summary.into_iter().filter(|(_, v)| v.is_finite()).collect(),
    };
    std::fs::write(dir.join(MANIFEST_FILE), manifest.to_json())?;
    Ok(manifest)
}

/// Re-executes the configuration recorded in `manifest` into `out` and
/// reports the files whose hashes differ from the recorded ones.
pub fn rerun(manifest: &RunManifest, out: &Path) -> CliResult<(RunManifest, Vec<String>)> {
    let cfg = manifest.config()?;
    let fresh = run_experiment(&cfg, Some(out))?;
    let before = manifest.hashes();
    let after = fresh.hashes();
    let mut mismatched: Vec<String> = before
        .iter()
        .filter(|(name, h)| !after.iter().any(|(n, g)| n == name && g == h))
        .map(|(n, _)| n.clone())
        .collect();
    mismatched.extend(after.iter().filter(|(n, _)| !before.iter().any(|(m, _)| m == n)).map(|(n, _)| n.clone()));
    Ok((fresh, mismatched))
}
