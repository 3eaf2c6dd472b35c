use std::fs;
use std::process::{Command, Output};

fn fracsing(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fracsing")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn constants_run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = fracsing(&["constants", "--sigma", "0.3", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).lines().any(|l| l.starts_with("PASS constants/N(1/2)")));

    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "experiment,check,anchor,inputs,measured,predicted,tolerance,one_sided,pass"
    );
    assert!(lines.count() >= 6);

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["sigma"], 0.3);
    assert_eq!(summary["all_pass"], true);
    assert!(summary["checks"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| !c["anchor"].as_str().unwrap().is_empty()));

    let plot = fs::read_to_string(dir.path().join("plotdata/normalizer.tsv")).unwrap();
    assert!(plot.starts_with("# sigma\tN(sigma)\n"));
    assert_eq!(plot.lines().count(), 20);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let out = dir.path().join("o");
    fs::write(
        &cfg,
        format!(
            r#"{{"experiment": "poincare", "n": 2, "sigma": 0.3, "levels": 1, "output_dir": "{}"}}"#,
            out.display()
        ),
    )
    .unwrap();
    let o = fracsing(&["constants", "--config", cfg.to_str().unwrap(), "--sigma", "0.6"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["experiment"], "constants");
    assert_eq!(summary["config"]["sigma"], 0.6);
    assert_eq!(summary["config"]["levels"], 1);
}

#[test]
fn invalid_parameters_are_all_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = fracsing(&["solve", "--sigma", "1.2", "--k", "5", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("sigma out of (0,1)"), "{err}");
    assert!(err.contains("k must be ≤ n−1"), "{err}");
    assert!(!dir.path().join("results.csv").exists());
}

#[test]
fn unknown_keys_and_experiments_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"experiment": "constants", "sigmaa": 0.5}"#).unwrap();
    let o = fracsing(&["constants", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sigmaa"));

    let o = fracsing(&["nope"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown experiment 'nope'"));
}

#[test]
fn same_seed_gives_identical_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = fracsing(&["fraclap-check", "--seed", "11", "--out", d.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["results.csv", "summary.json", "plotdata/bubble-residual.tsv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}
