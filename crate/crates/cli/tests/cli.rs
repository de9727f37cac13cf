//! End-to-end checks of the `yahtzee` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use yahtzee_core::eval::StatsFile;

fn yahtzee(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_yahtzee"))
        .args(args)
        .env_remove("YAHTZEE_THREADS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = "seed = 9\n[net]\nhidden = 32\nlayers = 1\n[train]\ngames = 200\nbatch_games = 20\neval_every = 100\neval_games = 50\ncheckpoint_every = 100\n";

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn smoke_train_writes_checkpoints_and_metrics() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), SMALL);
    let out = d.path().join("run");
    let o = yahtzee(&["train", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("finished 200 games in 10 updates"));
    assert!(out.join("final.ckpt").exists() && out.join("latest.ckpt").exists());
    let metrics = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().filter(|l| l.contains("\"event\":\"batch\"")).count(), 10);
    assert_eq!(metrics.lines().filter(|l| l.contains("\"event\":\"eval\"")).count(), 2);
    assert!(metrics.lines().next().unwrap().contains("\"config\""));
}

#[test]
fn interrupted_training_resumes_bit_identically() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), SMALL);
    let full = d.path().join("full");
    let part = d.path().join("part");
    assert_eq!(code(&yahtzee(&["train", "--config", &cfg, "--out", s(&full), "--quiet"])), 0);
    let o = yahtzee(&["train", "--config", &cfg, "--out", s(&part), "--stop-after", "120", "--quiet"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("paused after 120 games"));
    assert!(!part.join("final.ckpt").exists());
    assert_eq!(code(&yahtzee(&["train", "--config", &cfg, "--out", s(&part), "--quiet"])), 0);
    assert_eq!(
        fs::read_to_string(full.join("metrics.jsonl")).unwrap(),
        fs::read_to_string(part.join("metrics.jsonl")).unwrap()
    );
    assert_eq!(fs::read(full.join("final.ckpt")).unwrap(), fs::read(part.join("final.ckpt")).unwrap());
}

#[test]
fn config_errors_exit_with_code_two() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("run");
    let cfg = write_config(d.path(), "[algo]\nalgorithm = \"dqn\"\n");
    let o = yahtzee(&["train", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("dqn"), "{}", stderr(&o));
    let cfg = write_config(d.path(), "[algo]\ngae_lamda = 0.5\n");
    let o = yahtzee(&["train", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("algo.gae_lamda"), "{}", stderr(&o));
    let o = yahtzee(&["train", "--config", s(&d.path().join("missing.toml"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn usage_errors_exit_with_code_one() {
    assert_eq!(code(&yahtzee(&["frobnicate"])), 1);
    assert_eq!(code(&yahtzee(&["evaluate", "--out", "x"])), 1);
    let d = tempfile::tempdir().unwrap();
    let o = yahtzee(&["evaluate", "--dp-policy", "--games", "0", "--out", s(d.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--games"));
    let o = Command::new(env!("CARGO_BIN_EXE_yahtzee"))
        .args(["analyze", "nothing.json"])
        .env("YAHTZEE_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    assert_eq!(code(&yahtzee(&["--help"])), 0);
}

#[test]
fn evaluate_and_analyze_a_checkpoint() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), SMALL);
    let run = d.path().join("run");
    assert_eq!(code(&yahtzee(&["train", "--config", &cfg, "--out", s(&run), "--games", "40", "--quiet"])), 0);
    let ckpt = run.join("final.ckpt");

    let mut files = Vec::new();
    for name in ["e1", "e2"] {
        let out = d.path().join(name);
        let o = yahtzee(&["evaluate", "--checkpoint", s(&ckpt), "--games", "300", "--seed", "4", "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let line = stdout(&o);
        for key in ["mean=", "median=", "bonus=", "yahtzee=", ">=250="] {
            assert!(line.contains(key), "{line}");
        }
        files.push((fs::read(out.join("stats.json")).unwrap(), fs::read(out.join("stats.csv")).unwrap()));
    }
    assert_eq!(files[0], files[1]);
    let stats = StatsFile::read_json(&d.path().join("e1/stats.json")).unwrap();
    assert_eq!(stats.stats.games, 300);
    assert_eq!(stats.config["run"]["seed"], 9);

    let o = yahtzee(&["analyze", s(&d.path().join("e1/stats.json"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("19.58"), "{text}");
    let turns = fs::read_to_string(d.path().join("e1/turns.csv")).unwrap();
    let sections: std::collections::BTreeSet<&str> =
        turns.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(sections.len(), 13);
    let cats = fs::read_to_string(d.path().join("e1/categories.csv")).unwrap();
    assert_eq!(cats.lines().count(), 14);

    // Feature settings that disagree with the checkpoint.
    let other = write_config(d.path(), "[features]\ninclude_game_progress = false\n");
    let o = yahtzee(&["evaluate", "--checkpoint", s(&ckpt), "--config", &other, "--games", "10", "--out", s(&d.path().join("e3"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn analyze_rejects_bad_files() {
    let d = tempfile::tempdir().unwrap();
    let bad = d.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&yahtzee(&["analyze", s(&bad)])), 3);
    fs::write(&bad, "{\"schema_version\": 99}").unwrap();
    let o = yahtzee(&["analyze", s(&bad)]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("99"));
    assert_eq!(code(&yahtzee(&["analyze", s(&d.path().join("absent.json"))])), 3);
}

#[test]
fn corrupted_value_cache_fails() {
    let d = tempfile::tempdir().unwrap();
    let cache = d.path().join("values.bin");
    let mut bytes = b"YZDPVAL\0".to_vec();
    bytes.extend_from_slice(&7u32.to_le_bytes());
    bytes.extend_from_slice(&[0; 16]);
    fs::write(&cache, &bytes).unwrap();
    let o = yahtzee(&["solve-dp", "--cache", s(&cache)]);
    assert_ne!(code(&o), 0);
    assert!(stderr(&o).contains("version"), "{}", stderr(&o));
    let o = yahtzee(&["solve-dp", "--cache", s(&d.path().join("no/such/dir/values.bin"))]);
    assert_eq!(code(&o), 3);
}

/// Solves once, reuses the cache, then evaluates and analyzes the optimal policy.
#[test]
fn solver_cache_and_dp_policy_analysis() {
    let d = tempfile::tempdir().unwrap();
    let cache = d.path().join("values.bin");
    let first = yahtzee(&["solve-dp", "--cache", s(&cache)]);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let second = yahtzee(&["solve-dp", "--cache", s(&cache)]);
    assert_eq!(code(&second), 0);
    let ev = |o: &Output| stdout(o).lines().next().unwrap().to_string();
    assert_eq!(ev(&first), ev(&second));
    assert!(ev(&first).contains("254.5877"), "{}", ev(&first));

    let out = d.path().join("dp");
    let o = yahtzee(&["evaluate", "--dp-policy", "--cache", s(&cache), "--games", "2000", "--seed", "1", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = yahtzee(&["analyze", s(&out.join("stats.json"))]);
    assert_eq!(code(&o), 0);
    let turns = fs::read_to_string(out.join("turns.csv")).unwrap();
    let last: Vec<Vec<&str>> = turns.lines().filter(|l| l.starts_with("13,")).map(|l| l.split(',').collect()).collect();
    assert_eq!(last.len(), 3);
    assert!(last.iter().any(|r| r[4].parse::<f64>().unwrap() == 0.0), "{turns}");
}
