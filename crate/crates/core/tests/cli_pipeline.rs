use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hubfair::fairness::validate_bundle;
use hubfair::synth::SynthConfig;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn hubfair(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hubfair")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hubfair(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_synth() -> SynthConfig {
    SynthConfig {
        n_counties: 60,
        n_weeks: 8,
        ..SynthConfig::default()
    }
}

/// Writes a synthetic corpus and returns (tempdir, path of hubfair.toml).
fn corpus(cfg: &SynthConfig) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("synth.toml");
    fs::write(&synth, toml::to_string(cfg).unwrap()).unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--config", s(&synth), "--out", s(&data)]);
    (dir, data.join("hubfair.toml"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn out_dir(cfg: &Path) -> PathBuf {
    cfg.parent().unwrap().join("out")
}

fn digest(path: &Path) -> String {
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}

#[test]
fn score_conserves_rows_and_is_repeatable() {
    let synth = small_synth();
    let (_dir, cfg) = corpus(&synth);
    ok(&["score", "--config", s(&cfg)]);
    let panel = out_dir(&cfg).join("panel.csv");
    let first = digest(&panel);
    let rows = fs::read_to_string(&panel).unwrap().lines().count() - 1;
    let groups = synth.teams.len() * synth.n_counties * synth.n_weeks * synth.lookaheads.len();
    let trim: serde_json::Value = serde_json::from_slice(&fs::read(out_dir(&cfg).join("trim_report.json")).unwrap()).unwrap();
    assert_eq!(trim["n_input"], groups);
    assert_eq!(rows, groups - trim["removed"].as_u64().unwrap() as usize);

    ok(&["score", "--config", s(&cfg)]);
    assert_eq!(digest(&panel), first);
}

#[test]
fn missing_input_exits_2_naming_the_path() {
    let (_dir, cfg) = corpus(&small_synth());
    fs::remove_file(cfg.parent().unwrap().join("truth.csv")).unwrap();
    let out = hubfair(&["score", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "input");
    assert!(err["message"].as_str().unwrap().contains("truth.csv"));
}

#[test]
fn missing_config_exits_2() {
    let out = hubfair(&["score", "--config", "/nonexistent/hubfair.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_spec_exits_2() {
    let (_dir, cfg) = corpus(&small_synth());
    ok(&["score", "--config", s(&cfg)]);
    let out = hubfair(&["fit", "--config", s(&cfg), "--specs", "GLM-9"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_spec_gives_single_table() {
    let (_dir, cfg) = corpus(&small_synth());
    ok(&["score", "--config", s(&cfg)]);
    ok(&["fit", "--config", s(&cfg), "--specs", "GLM-1"]);
    let tables: Vec<_> = fs::read_dir(out_dir(&cfg).join("coefficients")).unwrap().collect();
    assert_eq!(tables.len(), 1);
    assert!(out_dir(&cfg).join("coefficients/GLM-1.csv").exists());
    assert!(out_dir(&cfg).join("gvif/GLM-1.csv").exists());
    assert!(!out_dir(&cfg).join("relative_effects").exists());
}

#[test]
fn lookahead_interaction_gives_twelve_relative_effects() {
    let (_dir, cfg) = corpus(&small_synth());
    ok(&["score", "--config", s(&cfg)]);
    ok(&["fit", "--config", s(&cfg), "--specs", "GLM-1a"]);
    let text = fs::read_to_string(out_dir(&cfg).join("relative_effects/GLM-1a.csv")).unwrap();
    assert_eq!(text.lines().count() - 1, 12);
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(out_dir(&cfg).join("fit_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["specs"][0]["status"], "ok");
}

#[test]
fn protected_collinearity_fails_the_run() {
    let (_dir, cfg) = corpus(&small_synth());
    // make the Asian share a near copy of the Black share
    let demo = cfg.parent().unwrap().join("demographics.csv");
    let text = fs::read_to_string(&demo).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let cols: Vec<&str> = header.split(',').collect();
    let black = cols.iter().position(|c| *c == "pct_black").unwrap();
    let asian = cols.iter().position(|c| *c == "pct_asian").unwrap();
    let mut out = vec![header.clone()];
    for (k, line) in lines.enumerate() {
        let mut f: Vec<String> = line.split(',').map(String::from).collect();
        let b: f64 = f[black].parse().unwrap();
        f[asian] = format!("{}", 0.5 * b + 0.001 * (k % 3) as f64);
        out.push(f.join(","));
    }
    fs::write(&demo, out.join("\n") + "\n").unwrap();

    ok(&["score", "--config", s(&cfg)]);
    let res = hubfair(&["fit", "--config", s(&cfg), "--specs", "GLM-1,GLM-2"]);
    assert_eq!(res.status.code(), Some(1));
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(out_dir(&cfg).join("fit_summary.json")).unwrap()).unwrap();
    // the race model fails on its protected terms, the urbanicity model still runs
    assert_eq!(summary["specs"][0]["status"], "failed");
    assert!(summary["specs"][0]["error"].as_str().unwrap().contains("pct_"));
    assert_eq!(summary["specs"][1]["status"], "ok");
}

#[test]
fn bundle_validates_and_hash_is_stable() {
    let (_dir, cfg) = corpus(&small_synth());
    ok(&["score", "--config", s(&cfg)]);
    ok(&["fit", "--config", s(&cfg), "--specs", "GLM-1,GLM-1a"]);
    let printed = ok(&["bundle", "--config", s(&cfg)]);
    assert!(printed.contains("teams"));
    let path = out_dir(&cfg).join("bundle.json");
    let first: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    validate_bundle(&first).unwrap();
    assert_eq!(first["relative_effects"][0]["spec"], "GLM-1a");

    ok(&["bundle", "--config", s(&cfg)]);
    let second: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    assert_eq!(first["run"]["config_hash"], second["run"]["config_hash"]);

    let dest = ok(&["serve-export", "--config", s(&cfg)]);
    assert!(dest.contains("dashboard"));
    assert_eq!(digest(&path), digest(&out_dir(&cfg).join("dashboard/bundle.json")));
}

#[test]
fn urbanicity_grouping_keys_cells_by_urbanicity() {
    let (_dir, cfg) = corpus(&small_synth());
    ok(&["score", "--config", s(&cfg)]);
    ok(&["bundle", "--config", s(&cfg), "--group", "urbanicity"]);
    let bundle: serde_json::Value =
        serde_json::from_slice(&fs::read(out_dir(&cfg).join("bundle.json")).unwrap()).unwrap();
    assert_eq!(bundle["run"]["unprotected_group"], "LM");
    let groups: std::collections::BTreeSet<&str> = bundle["teams"][0]["cells"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["group"].as_str().unwrap())
        .collect();
    assert_eq!(groups, ["MC", "SMM"].into_iter().collect());
}

#[test]
fn overrides_change_the_config_hash() {
    let (_dir, cfg) = corpus(&small_synth());
    ok(&["score", "--config", s(&cfg)]);
    ok(&["bundle", "--config", s(&cfg)]);
    let a: serde_json::Value =
        serde_json::from_slice(&fs::read(out_dir(&cfg).join("bundle.json")).unwrap()).unwrap();
    ok(&["bundle", "--config", s(&cfg), "--seed", "7"]);
    let b: serde_json::Value =
        serde_json::from_slice(&fs::read(out_dir(&cfg).join("bundle.json")).unwrap()).unwrap();
    assert_ne!(a["run"]["config_hash"], b["run"]["config_hash"]);
}

#[test]
fn bad_trim_fraction_is_an_input_error() {
    let (_dir, cfg) = corpus(&small_synth());
    let out = hubfair(&["score", "--config", s(&cfg), "--trim", "0.7"]);
    assert_eq!(out.status.code(), Some(2));
}
