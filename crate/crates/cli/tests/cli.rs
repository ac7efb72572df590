use std::path::Path;
use std::process::{Command, Output};

use proptest::prelude::*;
use treeq::experiments::RunManifest;
use treeq::gibbs::{mu_plus_root, ModelParams};
use treeq_cli::{BoundaryArg, RunConfig};

fn treeq(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treeq"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("TREEQ_WORKERS")
        .output()
        .unwrap()
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn recursion_prints_finite_depth_magnetization() {
    let dir = tempfile::tempdir().unwrap();
    let out = treeq(
        &[
            "recursion",
            "--b",
            "2",
            "--beta",
            "1",
            "--h",
            "0",
            "--depth",
            "8",
            "--boundary",
            "plus",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let printed: f64 = text.trim().rsplit(' ').next().unwrap().parse().unwrap();
    let expected = mu_plus_root(&ModelParams::new(1.0, 0.0, 2).unwrap(), Some(8));
    assert!(
        (printed - expected).abs() < 1e-12,
        "{printed} vs {expected}"
    );
    let csv = std::fs::read_to_string(dir.path().join("recursion.csv")).unwrap();
    assert!(csv.starts_with("vertex,level,log_ratio,plus_probability,magnetization\n"));
    assert_eq!(csv.lines().count(), 1 + 511);
}

#[test]
fn missing_seed_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["quench", "hc-quench", "contraction", "gap"] {
        let out = treeq(&[sub], dir.path());
        assert_eq!(out.status.code(), Some(2), "{sub}");
        assert!(String::from_utf8(out.stderr).unwrap().contains("--seed"));
    }
}

#[test]
fn unknown_flag_prints_help_hint() {
    let dir = tempfile::tempdir().unwrap();
    let out = treeq(&["quench", "--bogus", "1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("--help"));
    assert_eq!(treeq(&["frobnicate"], dir.path()).status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = treeq(&["gap", "--seed", "1", "--depth", "6"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validate_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = treeq(&["validate"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(!String::from_utf8(out.stdout).unwrap().contains("FAIL"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        beta: Some(0.2),
        depth: Some(3),
        boundary: Some(BoundaryArg::Minus),
        ..Default::default()
    };
    let path = dir.path().join("run.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = treeq(
        &[
            "recursion",
            "--config",
            path.to_str().unwrap(),
            "--beta",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let m = manifest(dir.path());
    assert_eq!(m.spec["beta"], 1.0);
    assert_eq!(m.spec["depth"], 3);
    assert_eq!(m.spec["boundary"], "minus");
    let root = m.summary["root_magnetization"].as_f64().unwrap();
    assert!((root + mu_plus_root(&ModelParams::new(1.0, 0.0, 2).unwrap(), Some(3))).abs() < 1e-12);
    std::fs::write(&path, r#"{"subcommand": "quench"}"#).unwrap();
    assert_eq!(
        treeq(
            &["recursion", "--config", path.to_str().unwrap()],
            dir.path()
        )
        .status
        .code(),
        Some(2)
    );
    std::fs::write(&path, r#"{"betta": 1}"#).unwrap();
    assert_eq!(
        treeq(
            &["recursion", "--config", path.to_str().unwrap()],
            dir.path()
        )
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn reruns_reproduce_outputs() {
    let runs: [&[&str]; 4] = [
        &[
            "quench",
            "--seed",
            "3",
            "--depth",
            "5",
            "--t-max",
            "3",
            "--probes",
            "7",
            "--replicas",
            "40",
        ],
        &[
            "hc-quench",
            "--seed",
            "3",
            "--lambda",
            "6",
            "--depth",
            "4",
            "--t-max",
            "3",
            "--replicas",
            "40",
        ],
        &[
            "contraction",
            "--seed",
            "9",
            "--depth",
            "5",
            "--t-max",
            "2",
            "--replicas",
            "50",
        ],
        &["phase-diagram", "--points", "5"],
    ];
    for args in runs {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        assert_eq!(treeq(args, a.path()).status.code(), Some(0), "{args:?}");
        let mut with_workers = args.to_vec();
        with_workers.extend(["--workers", "1"]);
        assert_eq!(treeq(&with_workers, b.path()).status.code(), Some(0));
        assert_eq!(
            manifest(a.path()).outputs,
            manifest(b.path()).outputs,
            "{args:?}"
        );
        assert!(manifest(a.path()).reproduces(&manifest(b.path())));
    }
}

proptest! {
    #[test]
    fn run_config_round_trips(
        b in proptest::option::of(2usize..5),
        beta in proptest::option::of(-3.0f64..3.0),
        seed in proptest::option::of(any::<u64>()),
        flip in proptest::option::of(proptest::collection::vec(0usize..100, 0..4)),
        boundary in proptest::option::of(prop_oneof![Just(BoundaryArg::Plus), Just(BoundaryArg::Even), Just(BoundaryArg::Free)]),
        workers in proptest::option::of(1usize..8),
    ) {
        let cfg = RunConfig { subcommand: Some("quench".into()), b, beta, seed, flip, boundary, workers, ..Default::default() };
        let text = serde_json::to_string(&cfg).unwrap();
        prop_assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn merge_prefers_flags(a in proptest::option::of(0.0f64..5.0), c in proptest::option::of(0.0f64..5.0)) {
        let file = RunConfig { beta: a, ..Default::default() };
        let flags = RunConfig { beta: c, ..Default::default() };
        prop_assert_eq!(file.merged(flags).beta, c.or(a));
    }
}
