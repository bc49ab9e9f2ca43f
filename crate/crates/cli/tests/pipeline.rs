use std::fs;
use std::path::Path;
use std::process::Command;

use asopf_cli::config::{GridSource, RunConfig, TrainSettings};
use asopf_cli::pipeline::run_pipeline;
use asopf_core::grid::WindProfile;

fn smoke_config(out: &Path, etas: Vec<f64>) -> RunConfig {
    RunConfig {
        grid: GridSource::Synthetic { n_buses: 5 },
        wind_profile: WindProfile::High,
        etas,
        n_samples: 20,
        seed: 11,
        train: TrainSettings {
            epochs: 50,
            ..TrainSettings::default()
        },
        threshold: 0.5,
        output_dir: out.to_path_buf(),
        reference_bus: None,
        bench_samples: 5,
    }
}

const REPORTS: [&str; 9] = [
    "misclassification.csv",
    "samples.csv",
    "error_buses.csv",
    "error_generators.csv",
    "error_summary.csv",
    "market_summary.csv",
    "timing.csv",
    "training.csv",
    "manifest.json",
];

#[test]
fn smoke_run_writes_every_report() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_pipeline(&smoke_config(dir.path(), vec![0.01])).unwrap();
    for name in REPORTS {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    for name in ["grid.json", "dataset_eta0.01.json", "model_eta0.01.json"] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    let case = &summary.cases[0];
    assert_eq!(case.rows.len(), 20);
    let mut seen: Vec<usize> = case.rows.iter().map(|r| r.sample).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..20).collect::<Vec<_>>());
    assert!(case.timing.qp_median_us > 0.0 && case.timing.ese_median_us > 0.0);
}

#[test]
fn noiseless_data_is_learned_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_pipeline(&smoke_config(dir.path(), vec![0.0])).unwrap();
    assert_eq!(summary.cases[0].misclassification.rates(), [0.0; 4]);
}

#[test]
fn reports_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(&smoke_config(a.path(), vec![0.05])).unwrap();
    run_pipeline(&smoke_config(b.path(), vec![0.05])).unwrap();
    for name in [
        "misclassification.csv",
        "error_buses.csv",
        "error_generators.csv",
        "market_summary.csv",
        "training.csv",
        "dataset_eta0.05.json",
        "model_eta0.05.json",
    ] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

fn asopf(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_asopf"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

#[test]
fn subcommands_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    let ok = |args: &[&str]| {
        let o = asopf(args);
        assert!(
            o.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    };
    ok(&[
        "grid-gen",
        "--buses",
        "6",
        "--seed",
        "2",
        "--out",
        &p("g.json"),
    ]);
    ok(&["solve", "--grid", &p("g.json"), "--out", &p("s.json")]);
    ok(&[
        "generate",
        "--grid",
        &p("g.json"),
        "--eta",
        "0.1",
        "--samples",
        "10",
        "--out",
        &p("d.json"),
    ]);
    ok(&["label", "--dataset", &p("d.json"), "--out", &p("l.csv")]);
    ok(&[
        "train",
        "--dataset",
        &p("d.json"),
        "--epochs",
        "20",
        "--out",
        &p("m.json"),
    ]);
    ok(&[
        "predict",
        "--model",
        &p("m.json"),
        "--dataset",
        &p("d.json"),
        "--out",
        &p("p.csv"),
    ]);
    ok(&[
        "ese",
        "--dataset",
        &p("d.json"),
        "--labels",
        &p("p.csv"),
        "--out",
        &p("e.csv"),
    ]);
    ok(&["validate", "--dataset", &p("d.json"), "--out", &p("v.csv")]);
    ok(&[
        "bench",
        "--dataset",
        &p("d.json"),
        "--samples",
        "3",
        "--out",
        &p("t.csv"),
    ]);
    let labels = fs::read_to_string(p("l.csv")).unwrap();
    assert_eq!(labels.lines().count(), 11);
    let ese = fs::read_to_string(p("e.csv")).unwrap();
    assert_eq!(ese.lines().count(), 6);
}

#[test]
fn exit_codes_follow_the_failure_kind() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    let cfg = p("bad.toml");
    fs::write(&cfg, "etas = [0.1]\nn_samples = 3\noutput_dir = \"o\"\n[grid]\nkind = \"synthetic\"\nn_buses = 5\n").unwrap();
    assert_eq!(
        asopf(&["pipeline", "--config", &cfg]).status.code(),
        Some(2)
    );
    assert_eq!(
        asopf(&["grid-gen", "--buses", "1", "--out", &p("g.json")])
            .status
            .code(),
        Some(2)
    );
    fs::write(p("junk.json"), "{}").unwrap();
    assert_eq!(
        asopf(&["solve", "--grid", &p("junk.json"), "--out", &p("s.json")])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        asopf(&["solve", "--grid", &p("missing.json"), "--out", &p("s.json")])
            .status
            .code(),
        Some(4)
    );
}
