use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sdeid_cli::RunConfig;
use sdeid_core::{BasisExpansion, BasisTerm, SdeModel};

const SMALL: &str = r#"
system = "duffing_sdof"

[simulate]
dt = 0.001
horizon = 1.0
n_paths = 20
noise_percent = 5.0
noise_states = [0]
seed = 7

[dictionary]
poly_order = 3

[discovery]
drift_states = [1]
diffusion_states = [1]
kinematic_pairs = [[0, 1]]

[reliability]
threshold = 0.0645
horizon = 30.0
n_paths = 100
seed = 11
"#;

fn sdeid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdeid"))
        .args(args)
        .env_remove("SDEID_OUTPUT_DIR")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(str::to_string)
        .collect()
}

fn hash_of(cfg: &Path) -> String {
    RunConfig::load(cfg, &[]).unwrap().hash
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn simulate_writes_one_file_per_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = sdeid(&["simulate", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ens = out.join("ensemble");
    let paths: Vec<PathBuf> = files(&ens)
        .into_iter()
        .filter(|p| p.extension().unwrap() == "csv")
        .collect();
    assert_eq!(paths.len(), 20);
    assert!(paths.iter().all(|p| data_rows(p).len() == 1001));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = sdeid(&["pipeline", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for sub in ["", "ensemble"] {
        for f in files(&a.join(sub)).into_iter().filter(|p| p.is_file()) {
            let name = f.file_name().unwrap();
            let other = b.join(sub).join(name);
            let (x, y) = (fs::read_to_string(&f).unwrap(), fs::read_to_string(&other).unwrap());
            // the report records where the discovered model was written
            let x = x.replace(a.to_str().unwrap(), b.to_str().unwrap());
            assert_eq!(x, y, "{}", f.display());
        }
    }
}

#[test]
fn every_output_carries_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = sdeid(&["pipeline", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let hash = hash_of(&cfg);
    let mut all: Vec<PathBuf> = files(&out).into_iter().filter(|p| p.is_file()).collect();
    all.extend(files(&out.join("ensemble")));
    assert!(all.len() > 20);
    for f in &all {
        let text = fs::read_to_string(f).unwrap();
        assert!(text.contains(&hash), "{} lacks the hash", f.display());
    }
    let curve = out.join("pf_duffing_sdof.csv");
    assert_eq!(data_rows(&curve).len(), 301);
    let head = fs::read_to_string(&curve).unwrap();
    assert!(head.lines().any(|l| l == "t,pf,ci_lo,ci_hi"));
    assert!(head.contains("seed=11"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(report["config_hash"], hash.as_str());
    assert!(report["sup_diff"].as_f64().unwrap() >= 0.0);
    assert_eq!(report["curves"][1]["provenance"]["config_hash"], hash.as_str());
}

#[test]
fn discover_and_reliability_run_separately() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let c = cfg.to_str().unwrap();
    let out = dir.path().join("out");
    let o = out.to_str().unwrap();
    assert_eq!(code(&sdeid(&["simulate", "-c", c, "-o", o])), 0);
    let d = sdeid(&["discover", "-c", c, "-o", o]);
    assert_eq!(code(&d), 0, "{}", stderr(&d));
    for f in [
        "discovered.json",
        "pip_drift_x2.csv",
        "elbo_drift_x2.csv",
        "pip_diffusion_x2_x2.csv",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let model = out.join("discovered.json");
    let r = sdeid(&[
        "reliability",
        "-c",
        c,
        "-o",
        o,
        "-m",
        "duffing_sdof",
        "--compare",
        model.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert!(String::from_utf8_lossy(&r.stdout).contains("sup_diff"));
    assert!(out.join("pf_duffing_sdof_discovered.csv").is_file());
}

#[test]
fn bad_horizon_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = sdeid(&[
        "simulate",
        "-c",
        cfg.to_str().unwrap(),
        "--set",
        "simulate.horizon=1.0005",
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("simulate.horizon"), "{}", stderr(&o));
}

#[test]
fn missing_threshold_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("threshold = 0.0645\n", ""));
    let out = dir.path().join("out");
    let o = sdeid(&[
        "reliability",
        "-c",
        cfg.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
        "-m",
        "duffing_sdof",
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("threshold"));
}

#[test]
fn empty_ensemble_directory_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = sdeid(&[
        "discover",
        "-c",
        cfg.to_str().unwrap(),
        "-e",
        empty.to_str().unwrap(),
        "-o",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn divergence_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let cubic = BasisTerm::monomial(vec![0, 0, 0]).unwrap();
    let model = SdeModel::new(
        "blowup",
        vec![BasisExpansion::new(1, vec![(cubic, 1e6)]).unwrap()],
        vec![BasisExpansion::zero(1)],
    )
    .unwrap();
    fs::write(dir.path().join("blowup.json"), model.to_json()).unwrap();
    let text = SMALL
        .replace("system = \"duffing_sdof\"", "system = \"blowup.json\"\nx0 = [10.0]")
        .replace("noise_states = [0]\n", "");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let o = sdeid(&["simulate", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn unconverged_fit_still_exits_zero_and_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let c = cfg.to_str().unwrap();
    let out = dir.path().join("out");
    let o = out.to_str().unwrap();
    assert_eq!(code(&sdeid(&["simulate", "-c", c, "-o", o])), 0);
    let d = sdeid(&["discover", "-c", c, "-o", o, "--set", "vb.max_iters=1"]);
    assert_eq!(code(&d), 0, "{}", stderr(&d));
    assert!(stderr(&d).contains("warning"));
    let found: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("discovered.json")).unwrap()).unwrap();
    assert_eq!(found["provenance"]["converged"], false);
}

#[test]
fn output_dir_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let target = dir.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_sdeid"))
        .args(["simulate", "-c", cfg.to_str().unwrap(), "--set", "simulate.n_paths=2"])
        .env("SDEID_OUTPUT_DIR", &target)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(target.join("ensemble/path_1.csv").is_file());
}

#[test]
fn overrides_change_the_hash_and_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let c = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(
        code(&sdeid(&[
            "simulate",
            "-c",
            c,
            "-o",
            a.to_str().unwrap(),
            "--set",
            "simulate.n_paths=3"
        ])),
        0
    );
    assert_eq!(
        code(&sdeid(&[
            "simulate",
            "-c",
            c,
            "-o",
            b.to_str().unwrap(),
            "--set",
            "simulate.n_paths=3",
            "--seed",
            "8"
        ])),
        0
    );
    let pa = fs::read_to_string(a.join("ensemble/path_0.csv")).unwrap();
    let pb = fs::read_to_string(b.join("ensemble/path_0.csv")).unwrap();
    assert_ne!(pa.lines().next(), pb.lines().next());
    assert_ne!(pa, pb);
    assert!(pb.contains("seed=8"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("seed = 7", "seed = 7\nseeed = 8"));
    let o = sdeid(&["simulate", "-c", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("seeed"));
}

#[test]
fn failed_stage_keeps_earlier_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = sdeid(&[
        "pipeline",
        "-c",
        cfg.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
        "--set",
        "reliability.report_stride=0.0015",
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("report_stride"));
    assert!(out.join("ensemble/manifest.json").is_file());
    assert!(out.join("discovered.json").is_file());
    assert!(!out.join("comparison.json").exists());
}
