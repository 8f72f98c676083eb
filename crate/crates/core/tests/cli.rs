use std::path::Path;
use std::process::{Command, Output};

fn sparsedom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsedom"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const HILBERT_ZERO: &str = r#"
name = "zero"
dim = 1
m = 8

[kernel]
type = "dini"

[inputs.f1]
kind = "zero"

[inputs.f2]
kind = "spike"
at = [40, 0]
amp = 1.0
"#;

#[test]
fn zero_input_gives_the_single_top_cube() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), HILBERT_ZERO);
    let out = dir.path().join("out");
    let o = sparsedom(&["sparsify", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("collection.json")).unwrap()).unwrap();
    assert_eq!(v["collection"]["cubes"].as_array().unwrap().len(), 1);
    assert_eq!(v["sparsity"]["disjoint"], true);
    assert!(v["config_hash"].as_str().unwrap().len() == 64);
}

#[test]
fn preset_round_trip_passes_the_sparsity_audit() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("h");
    let o = sparsedom(&[
        "sparsify",
        "--preset",
        "dini-hilbert",
        "--out",
        out.to_str().unwrap(),
        "--trace",
    ]);
    assert!(o.status.success());
    let v: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("collection.json")).unwrap()).unwrap();
    let s = &v["sparsity"];
    assert_eq!(s["disjoint"], true);
    assert!(s["eta"].as_f64().unwrap() >= 0.5);
    let cert: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["config_hash"], v["config_hash"]);
}

#[test]
fn rough_exponent_constraint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
name = "bad"
dim = 2
m = 5

[kernel]
type = "rough"
q = 2.0
omega = { type = "lacunary", samples = 64, levels = 3, a = 1.0 }

[exponents]
p2 = 1.5

[inputs.f1]
kind = "zero"

[inputs.f2]
kind = "zero"
"#;
    let cfg = write_config(dir.path(), body);
    let o = sparsedom(&[
        "sparsify",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("q′"));
}

#[test]
fn unknown_preset_and_missing_source_exit_2() {
    assert_eq!(
        sparsedom(&["sparsify", "--preset", "nope"]).status.code(),
        Some(2)
    );
    assert_eq!(sparsedom(&["verify"]).status.code(), Some(2));
}

#[test]
fn abort_after_retries_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
name = "tight"
dim = 1
m = 8
lambda = 1.0001
max_retries = 0

[kernel]
type = "dini"

[inputs.f1]
kind = "random"
lo = [0, 0]
hi = [256, 1]
spike_rate = 0.05
spike_height = 50.0

[inputs.f2]
kind = "random"
lo = [0, 0]
hi = [256, 1]
spike_rate = 0.05
spike_height = 50.0
"#;
    let cfg = write_config(dir.path(), body);
    let out = dir.path().join("out");
    let o = sparsedom(&["sparsify", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(out.join("failure.json").exists());
}

#[test]
fn verify_csv_is_deterministic_under_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        for suite in ["domination", "weak11", "weights"] {
            let o = sparsedom(&[
                "verify",
                "--preset",
                "dini-hilbert",
                "--suite",
                suite,
                "--seed",
                "7",
                "--out",
                out.to_str().unwrap(),
            ]);
            assert!(
                o.status.success(),
                "{suite}: {}",
                String::from_utf8_lossy(&o.stderr)
            );
        }
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["domination.csv", "p_sweep.csv", "weak11.csv", "weights.csv"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f}");
        assert!(x.starts_with(b"# config_hash: "));
    }
}

#[test]
fn config_lists_and_prints_presets() {
    let o = sparsedom(&["config"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 3);
    let o = sparsedom(&["config", "--preset", "br-critical"]);
    let cfg = sparsedom::config::RunConfig::from_toml(&String::from_utf8_lossy(&o.stdout)).unwrap();
    assert_eq!(
        cfg,
        sparsedom::config::RunConfig::preset("br-critical").unwrap()
    );
}
