use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dap_cli::commands::RunSummary;
use dap_cli::config::ExperimentConfig;

fn dap(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dap"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("DAP_THREADS", t),
        None => cmd.env_remove("DAP_THREADS"),
    };
    cmd.output().unwrap()
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_trace_meta_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let cfg = config_path("epigraph_lp_star.json");
    let o = dap(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(
        lines.next(),
        Some("k,consensus_error,max_violation,total_violation,objective_gap,alpha_k,wallclock_ms")
    );
    assert!(lines.count() > 1);
    assert!(!trace.contains("-0,") && !trace.contains("NaN"));

    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("trace.csv.meta.json")).unwrap()).unwrap();
    assert!(meta["total_violation"].as_str().unwrap().contains("sum over agents"));
    assert_eq!(meta["seed"], 1);

    let summary: RunSummary =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(summary.all_converged);
    assert_eq!(summary.config_hash, summary.config.content_hash());
}

#[test]
fn repeats_get_one_trace_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_path("gossip_clique4.json");
    let o = dap(
        &["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--max-rounds", "300"],
        None,
    );
    // Capped runs exit with the not-converged status.
    assert_eq!(o.status.code(), Some(2));
    for seed in 0..3 {
        assert!(dir.path().join(format!("gossip_clique4-seed{seed}.csv")).exists());
    }
    let summary: RunSummary =
        serde_json::from_str(&fs::read_to_string(dir.path().join("gossip_clique4.summary.json")).unwrap()).unwrap();
    assert_eq!(summary.runs.len(), 3);
    assert_eq!(summary.config.run.max_rounds, 300);
}

#[test]
fn missing_topology_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", r#"{"problem": "gossip", "weights": {"scheme": "metropolis"}}"#);
    let o = dap(&["run", "--config", cfg.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("missing field `topology`"), "{err}");
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "typo.json",
        r#"{"problem": "gossip", "topology": {"kind": "cycle", "n": 4}, "weights": {"scheme": "metropolis"}, "stepsise": {}}"#,
    );
    assert_eq!(dap(&["validate", "--config", cfg.to_str().unwrap()], None).status.code(), Some(1));
}

#[test]
fn validate_reports_column_failure_for_equal_neighbor_star() {
    let cfg = config_path("epigraph_lp_star.json");
    let o = dap(&["validate", "--config", cfg.to_str().unwrap()], None);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.contains("PASS  rows sum to 1"), "{text}");
    assert!(text.contains("FAIL  columns sum to 1"), "{text}");
    assert!(text.contains("PASS  equal-neighbor regime"), "{text}");
}

#[test]
fn validate_accepts_periodic_matchings() {
    let cfg = config_path("alternating_matchings.json");
    let o = dap(&["validate", "--config", cfg.to_str().unwrap()], None);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.contains("PASS  Q-strongly connected (Q = 2)"), "{text}");
}

#[test]
fn disconnected_schedule_fails_validation_and_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "split.json",
        r#"{
            "problem": "builtin:median",
            "topology": {"kind": "custom", "n": 4, "schedule": [[[0, 1], [1, 0], [2, 3], [3, 2]]]},
            "weights": {"scheme": "metropolis"}
        }"#,
    );
    let o = dap(&["validate", "--config", cfg.to_str().unwrap()], None);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(2), "{text}");
    assert!(text.contains("FAIL  Q-strongly connected"), "{text}");

    let o = dap(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn shipped_configs_round_trip() {
    for entry in fs::read_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")).unwrap() {
        let path = entry.unwrap().path();
        let config = ExperimentConfig::load(&path).unwrap();
        let again = ExperimentConfig::parse(&config.to_json()).unwrap();
        assert_eq!(config, again, "{}", path.display());
        assert_eq!(config.content_hash(), again.content_hash());
        config.run_config(config.run.seed).unwrap();
    }
}

#[test]
fn traces_do_not_depend_on_thread_count() {
    let cfg = config_path("gossip_clique4.json");
    let read = |threads: &str| {
        let dir = tempfile::tempdir().unwrap();
        let o = dap(
            &["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--max-rounds", "500"],
            Some(threads),
        );
        assert_eq!(o.status.code(), Some(2));
        (0..3)
            .map(|s| fs::read(dir.path().join(format!("gossip_clique4-seed{s}.csv"))).unwrap())
            .collect::<Vec<_>>()
    };
    let one = read("1");
    assert_eq!(one, read("1"));
    assert_eq!(one, read("4"));
}

#[test]
fn bad_thread_count_is_rejected() {
    let cfg = config_path("epigraph_lp_star.json");
    let o = dap(&["run", "--config", cfg.to_str().unwrap()], Some("zero"));
    assert_eq!(o.status.code(), Some(1));
}
