use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nli_core::io::{read_hom_csv, read_matrix_csv};

const SMALL: &str = r#"
[grid]
points = 96

[run]
n_pulses = 200000
seed = 5

[hom]
samples = 20000
"#;

fn nli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nli"))
        .current_dir(dir)
        .env_remove("NLI_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup(extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("job.toml");
    fs::write(&cfg, format!("{SMALL}\n{extra}")).unwrap();
    (dir, cfg)
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn result(path: &Path) -> serde_json::Value {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v["result"].clone()
}

#[test]
fn jsi_map_round_trips() {
    let (dir, cfg) = setup("");
    let o = nli(dir.path(), &["jsi", "--config", cfg.to_str().unwrap(), "--out", "o"]);
    ok(&o);
    let m = read_matrix_csv(&dir.path().join("o/jsi/jsi.csv")).unwrap();
    assert_eq!((m.values.nrows(), m.values.ncols()), (96, 96));
    assert!(m.values.iter().all(|v| *v >= 0.0));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/jsi/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["grid"]["points"], 96);
    assert!(manifest["files"].as_array().unwrap().iter().any(|f| f == "jsi.csv"));
}

#[test]
fn single_stage_has_fewer_islands() {
    let count = |extra: &str| {
        let (dir, cfg) = setup(extra);
        ok(&nli(dir.path(), &["islands", "--config", cfg.to_str().unwrap(), "--out", "o"]));
        result(&dir.path().join("o/islands/islands.json")).as_array().unwrap().len()
    };
    let three = count("");
    let one = count("[nli]\nstages = 1");
    assert!(one < three, "N=1 gives {one} islands, N=3 gives {three}");
    assert!(three >= 3);
}

#[test]
fn malformed_key_exits_2() {
    let (dir, cfg) = setup("[nli]\nstagez = 3");
    let o = nli(dir.path(), &["jsi", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stagez"));
    let (dir, cfg) = setup("[detectors.signal]\nefficiency = 2.0");
    assert_eq!(nli(dir.path(), &["hbt", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn bad_arguments_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(nli(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(nli(dir.path(), &["jsi", "--seed", "minus-one"]).status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_3() {
    let (dir, cfg) = setup("");
    let blocker = dir.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let o = nli(dir.path(), &["schmidt", "--config", cfg.to_str().unwrap(), "--out", blocker.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let o = nli(dir.path(), &["jsi", "--config", "missing.toml"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn same_seed_same_bytes() {
    let (dir, cfg) = setup("");
    let c = cfg.to_str().unwrap();
    ok(&nli(dir.path(), &["hbt", "--config", c, "--out", "a"]));
    ok(&nli(dir.path(), &["hbt", "--config", c, "--out", "b", "--threads", "1"]));
    ok(&nli(dir.path(), &["hbt", "--config", c, "--out", "c", "--seed", "6"]));
    let read = |d: &str| fs::read(dir.path().join(d).join("hbt/hbt.json")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    let ma: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("a/hbt/manifest.json")).unwrap()).unwrap();
    let mut mb: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("b/hbt/manifest.json")).unwrap()).unwrap();
    mb["created_unix_s"] = ma["created_unix_s"].clone();
    assert_eq!(ma, mb);
}

#[test]
fn output_dir_from_environment() {
    let (dir, cfg) = setup("");
    let o = Command::new(env!("CARGO_BIN_EXE_nli"))
        .current_dir(dir.path())
        .env("NLI_OUT_DIR", "from-env")
        .args(["schmidt", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    ok(&o);
    let r = result(&dir.path().join("from-env/schmidt/schmidt.json"));
    assert!(r["mode_number"].as_f64().unwrap() >= 1.0);
}

#[test]
fn simulate_then_analyze() {
    let (dir, cfg) = setup("");
    let c = cfg.to_str().unwrap();
    ok(&nli(dir.path(), &["simulate", "--config", c, "--out", "o"]));
    ok(&nli(dir.path(), &["hbt", "--config", c, "--out", "o"]));
    ok(&nli(dir.path(), &["hom", "--config", c, "--out", "o"]));
    let hom = read_hom_csv(&dir.path().join("o/hom/hom.csv")).unwrap();
    assert_eq!(hom.len(), 49);
    ok(&nli(
        dir.path(),
        &[
            "analyze",
            "--config",
            c,
            "--out",
            "o",
            "--power-sweep",
            "o/simulate/power_sweep.json",
            "--hbt",
            "o/hbt/hbt.json",
            "--hom",
            "o/hom/hom.json",
            "--fit-rates",
        ],
    ));
    let r = result(&dir.path().join("o/analyze/analysis.json"));
    assert_eq!(r["raman_fraction_source"], "power fit");
    let v = r["visibility"]["v_raw"].as_f64().unwrap();
    assert!((0.6..0.95).contains(&v), "raw visibility {v}");
    assert!(r["power_sweep"]["fit_signal"]["s2"].as_f64().unwrap() > 0.0);

    // The CSV scan is accepted as well.
    ok(&nli(dir.path(), &["analyze", "--config", c, "--out", "p", "--hom", "o/hom/hom.csv"]));
    let r = result(&dir.path().join("p/analyze/analysis.json"));
    assert!(r["dip_fit"]["visibility"].as_f64().is_some());
}

#[test]
fn analyze_needs_input() {
    let (dir, cfg) = setup("");
    let o = nli(dir.path(), &["analyze", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn design_sweep_is_sorted() {
    let (dir, cfg) = setup("[sweep.design]\npump_fwhm_nm = [1.0]\nsmf_length_m = [20.0]\nstages = [2, 3]\nfilter_bandwidths_nm = [1.5]");
    ok(&nli(dir.path(), &["design", "--config", cfg.to_str().unwrap(), "--out", "o"]));
    let rows = result(&dir.path().join("o/design/sweep.json"));
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let score = |r: &serde_json::Value| r["scores"]["composite"].as_f64().unwrap_or(f64::NEG_INFINITY);
    assert!(score(&rows[0]) >= score(&rows[1]));
    let csv = fs::read_to_string(dir.path().join("o/design/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
