use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_fedclust");

fn fedclust(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, policy: &str, rounds: usize) -> String {
    let path = dir.join(name);
    let k = if policy == "FEDSAUC_FIXED_K" {
        r#", "k": 4"#
    } else {
        ""
    };
    std::fs::write(
        &path,
        format!(
            r#"{{"dataset": {{"kind": "synth", "groups": 4, "clients_per_group": 2, "dims": 2,
                  "spread": 0.5, "samples_per_client": 30, "test_per_group": 20}},
                "model": {{"architecture": "LOGREG"}},
                "federation": {{"rounds": {rounds}, "policy": "{policy}"{k}}}}}"#
        ),
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

fn run_to(config: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--config",
        config,
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ];
    args.extend_from_slice(extra);
    fedclust(&args)
}

#[test]
fn run_writes_metrics_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "fedavg.json", "FEDAVG_ALL", 12);
    let out = dir.path().join("out");
    let o = run_to(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("transmissions=96"), "{}", stdout(&o));
    let metrics = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 12);
    let first: serde_json::Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    for key in [
        "method",
        "round",
        "participants",
        "p",
        "mean_loss",
        "reduction_ratio",
        "accuracy",
        "uploads",
        "cumulative_uploads",
        "assignment",
    ] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["total_uploads"], 96);
}

#[test]
fn same_seed_gives_byte_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "adaptive.json", "ADAPTIVE", 30);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run_to(&cfg, &a, &["--seed", "5"]).status.success());
    assert!(run_to(&cfg, &b, &["--seed", "5", "--threads", "2"])
        .status
        .success());
    assert_eq!(
        std::fs::read(a.join("metrics.jsonl")).unwrap(),
        std::fs::read(b.join("metrics.jsonl")).unwrap()
    );
    let c = dir.path().join("c");
    assert!(run_to(&cfg, &c, &["--seed", "6"]).status.success());
    assert_ne!(
        std::fs::read(a.join("metrics.jsonl")).unwrap(),
        std::fs::read(c.join("metrics.jsonl")).unwrap()
    );
}

#[test]
fn compare_tabulates_runs() {
    let dir = tempfile::tempdir().unwrap();
    let avg = write_config(dir.path(), "avg.json", "FEDAVG_ALL", 200);
    let sauc = write_config(dir.path(), "sauc.json", "FEDSAUC_FIXED_K", 200);
    assert!(run_to(&avg, &dir.path().join("avg"), &[]).status.success());
    assert!(run_to(&sauc, &dir.path().join("sauc"), &[])
        .status
        .success());
    let m1 = dir.path().join("avg/metrics.jsonl");
    let m2 = dir.path().join("sauc/metrics.jsonl");
    let o = fedclust(&["compare", m1.to_str().unwrap(), m2.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(
        rows[0].starts_with("FedAvg") && rows[0].contains(" 1600 "),
        "{table}"
    );
    assert!(
        rows[1].starts_with("FedSAUC(4)") && rows[1].contains(" 808 "),
        "{table}"
    );

    let single = fedclust(&["compare", m1.to_str().unwrap()]);
    assert_eq!(stdout(&single).lines().count(), 2);
}

#[test]
fn compare_without_files_is_a_usage_error() {
    let o = fedclust(&["compare"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).to_lowercase().contains("usage"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn compare_rejects_malformed_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{not json}\n").unwrap();
    let o = fedclust(&["compare", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.jsonl"), "{}", stderr(&o));
}

#[test]
fn partition_report_shows_group_pure_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "p.json", "FEDAVG_ALL", 1);
    let o = fedclust(&["partition", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    let rows: Vec<Vec<usize>> = table
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().map(|t| t.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 8);
    for row in &rows {
        let client = row[0];
        let counts = &row[1..5];
        assert_eq!(counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(counts[client / 2], 30);
    }
}

#[test]
fn bad_configs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"dataset": {"kind": "synth", "groups": 4, "clients_per_group": 2,
        "dims": 2, "spread": 0.5, "samples_per_client": 30}, "foo": 1}"#,
    )
    .unwrap();
    let o = fedclust(&[
        "run",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("foo"), "{}", stderr(&o));

    let o = fedclust(&["run", "--config", "/nonexistent/config.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("/nonexistent/config.json"),
        "{}",
        stderr(&o)
    );
}
