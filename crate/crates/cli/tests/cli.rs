use std::path::Path;
use std::process::{Command, Output};

use enl_cli::{ExperimentConfig, ExperimentKind, RunManifest};

fn enl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_enl")).args(args).output().expect("spawn enl")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn defaults_print_and_parse() {
    for kind in ExperimentKind::ALL {
        let o = enl(&["defaults", kind.as_str()]);
        assert_eq!(code(&o), 0, "{kind}");
        let text = String::from_utf8(o.stdout).unwrap();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), ExperimentConfig::default_for(kind));
    }
    assert_eq!(code(&enl(&["defaults", "no-such-kind"])), 2);
}

#[test]
fn run_writes_tables_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = enl(&["theory-table", "--out", out.to_str().unwrap(), "--plot"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = RunManifest::read(&out.join("manifest.json")).unwrap();
    assert_eq!(m.kind, "theory-table");
    assert!(m.files.iter().any(|f| f.name == "theory.csv"));
    assert!(m.files.iter().any(|f| f.name.ends_with(".svg")));
    for f in &m.files {
        let body = std::fs::read(out.join(&f.name)).unwrap();
        assert_eq!(f.bytes as usize, body.len());
        assert_eq!(f.sha256, enl_cli::manifest::sha256_hex(&body));
    }
}

#[test]
fn seed_override_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&enl(&["appendix-f-pca", "--out", a.to_str().unwrap()])), 0);
    assert_eq!(code(&enl(&["appendix-f-pca", "--seed", "2", "--out", b.to_str().unwrap()])), 0);
    let ma = RunManifest::read(&a.join("manifest.json")).unwrap();
    let mb = RunManifest::read(&b.join("manifest.json")).unwrap();
    assert_eq!(mb.seed, 2);
    assert_ne!(ma.hashes(), mb.hashes());
}

#[test]
fn rerun_reproduces_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    assert_eq!(code(&enl(&["appendix-f-pca", "--out", first.to_str().unwrap()])), 0);
    let manifest = first.join("manifest.json");
    let again = dir.path().join("again");
    let o = enl(&["rerun", "--manifest", manifest.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let a = RunManifest::read(&manifest).unwrap();
    let b = RunManifest::read(&again.join("manifest.json")).unwrap();
    assert_eq!(a.hashes(), b.hashes());
}

#[test]
fn config_file_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "t.ini",
        "[experiment]\nkind = theory-table\nseed = 5\n\n[hyperparams]\neta = 0.02\nbeta = 0.5\nbatch_size = 5\nnum_examples = 500\n",
    );
    let out = dir.path().join("o");
    assert_eq!(code(&enl(&["theory-table", "--config", &cfg, "--out", out.to_str().unwrap()])), 0);
    let m = RunManifest::read(&out.join("manifest.json")).unwrap();
    let resolved = m.config().unwrap();
    assert_eq!(resolved.seed, 5);
    assert_eq!(resolved.hyper.eta, 0.02);
    assert_eq!(resolved.hyper.num_examples, 500);
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let mismatch = write(dir.path(), "m.ini", "[experiment]\nkind = loss-fluct\n");
    assert_eq!(code(&enl(&["theory-table", "--config", &mismatch])), 2);
    let unknown = write(dir.path(), "u.ini", "[experiment]\nkind = theory-table\ncolour = red\n");
    assert_eq!(code(&enl(&["theory-table", "--config", &unknown])), 2);
    let bad = write(dir.path(), "b.ini", "[experiment]\nkind = theory-table\n[hyperparams]\nbeta = 1.5\n");
    assert_eq!(code(&enl(&["theory-table", "--config", &bad])), 2);
    let unstable = write(
        dir.path(),
        "s.ini",
        "[experiment]\nkind = fig2-variances\n[hyperparams]\neta = 1\n[spectrum]\nrelative = false\nlambda_min = 1\nlambda_max = 100\n",
    );
    let out = dir.path().join("s");
    assert_eq!(code(&enl(&["fig2-variances", "--config", &unstable, "--out", out.to_str().unwrap()])), 2);
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn missing_config_exits_1() {
    assert_eq!(code(&enl(&["theory-table", "--config", "/nonexistent/enl.ini"])), 1);
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // stable dynamics, but noise large enough to cross the divergence threshold
    let cfg = write(
        dir.path(),
        "d.ini",
        "[experiment]\nkind = appendix-f-pca\n[pca]\nnoise_c = 1e40\n",
    );
    let out = dir.path().join("d");
    let o = enl(&["appendix-f-pca", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}
