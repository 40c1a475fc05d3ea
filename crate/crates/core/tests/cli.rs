use std::path::Path;
use std::process::{Command, Output};

use pipechain::sim::SimConfig;

fn pipechain(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pipechain"));
    cmd.args(args).env_remove("PIPECHAIN_SEED");
    if let Some(s) = seed_env {
        cmd.env("PIPECHAIN_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, cfg: &SimConfig) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path.display().to_string()
}

fn short() -> SimConfig {
    SimConfig {
        rounds: 12,
        ..SimConfig::default()
    }
}

#[test]
fn dimension_prints_the_counts() {
    let out = pipechain(&["dimension", "--f", "8", "--e", "4", "--j", "7"], None);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("leaf_rpcs               4"), "{text}");
    assert!(text.contains("inner_rpcs              1"));
    assert!(text.contains("q                       3"));

    let json = pipechain(&["dimension", "--f", "8", "--e", "4", "--j", "7", "--json"], None);
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!((v["leaf_rpcs"].as_u64(), v["inner_rpcs"].as_u64(), v["q"].as_u64()), (Some(4), Some(1), Some(3)));
}

#[test]
fn dimension_rejects_zero_load() {
    let out = pipechain(&["dimension", "--f", "0", "--e", "4", "--j", "7"], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn run_writes_one_line_per_round_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &short());
    let report = dir.path().join("report.jsonl");
    let out = pipechain(&["run", "--config", &config, "--report", report.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&report).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 13);
    for (i, l) in lines[..12].iter().enumerate() {
        assert_eq!(l["round"].as_u64(), Some(i as u64 + 1));
        assert_eq!(l["block_height"].as_u64(), Some(i as u64 + 1));
        assert_eq!(l["oracle"], "match");
        assert_eq!(l["state_root"].as_str().unwrap().len(), 64);
        assert!(l["per_committee"].as_array().unwrap().len() > 4 + 8);
    }
    assert!(lines[12]["summary"]["divergence"].is_null());
}

#[test]
fn malformed_or_unknown_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"seed\": 1,").unwrap();
    assert_eq!(pipechain(&["run", "--config", bad.to_str().unwrap()], None).status.code(), Some(2));
    let mut v = serde_json::to_value(short()).unwrap();
    v["leafs"] = 8.into();
    std::fs::write(&bad, v.to_string()).unwrap();
    assert_eq!(pipechain(&["run", "--config", bad.to_str().unwrap()], None).status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    assert_eq!(pipechain(&["verify", "--config", missing.to_str().unwrap()], None).status.code(), Some(2));
}

#[test]
fn injected_fault_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &short());
    let report = dir.path().join("r.jsonl");
    let out = pipechain(
        &["run", "--config", &config, "--inject-fault", "4", "--report", report.to_str().unwrap()],
        None,
    );
    assert_eq!(out.status.code(), Some(3));
    let text = std::fs::read_to_string(&report).unwrap();
    let last: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert!(last["summary"]["divergence"].as_str().unwrap().contains("oracle"));
}

#[test]
fn verify_passes_on_a_clean_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = short();
    cfg.oracle_enabled = false;
    let config = write_config(dir.path(), &cfg);
    let report = dir.path().join("v.jsonl");
    let out = pipechain(&["verify", "--config", &config, "--report", report.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.lines().take(12).all(|l| l.contains("\"oracle\":\"match\"")));
    let last: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert!(last["summary"]["audit_checks"].as_u64().unwrap() > 0);
}

#[test]
fn seed_env_overrides_the_flag_and_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &short());
    let run = |seed: &str, env: Option<&str>| {
        let out = pipechain(&["run", "--config", &config, "--seed", seed, "--rounds", "6"], env);
        assert!(out.status.success());
        out.stdout
    };
    assert_eq!(run("5", None), run("5", None));
    assert_ne!(run("5", None), run("6", None));
    assert_eq!(run("6", Some("5")), run("5", None));
}

#[test]
fn scale_writes_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("scale.csv");
    let out = pipechain(&["scale", "--alphas", "1,2", "--rounds", "20", "--out", csv.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("alpha,n_c,leaf_rpcs,inner_rpcs,q,peak_cc_tx,peak_rpc_hashes,peak_msgs,verdict")
    );
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.ends_with("well_provisioned")));
    assert!(rows[1].starts_with("2,4,16,1,3,"));
}

#[test]
fn scale_rejects_a_base_not_dimensioned_after_doubling() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &short());
    let out = pipechain(&["scale", "--config", &config, "--alphas", "1"], None);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn scale_over_capacity_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SimConfig {
        j: 7,
        rounds: 10,
        ..SimConfig::scale_base()
    };
    let config = write_config(dir.path(), &cfg);
    let out = pipechain(&["scale", "--config", &config, "--alphas", "1"], None);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8(out.stdout).unwrap().contains("over_capacity"));
}
