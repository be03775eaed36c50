use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pex::prefs::PreferencePair;
use pex::prompting::PromptVariant;
use pex::sampler::Explanation;

fn pex(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pex"))
        .arg("--run-dir")
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = pex(dir, args);
    assert!(
        out.status.success(),
        "pex {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn diagnostic(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    serde_json::from_str(line)
        .unwrap_or_else(|_| panic!("stderr is not a JSON diagnostic: {stderr}"))
}

/// A toy run directory sampled for three training reviews.
fn sampled_run(dir: &Path) {
    ok(dir, &["toy-init", "--seed", "5", "--size", "60"]);
    ok(dir, &["ingest"]);
    ok(dir, &["split"]);
    ok(
        dir,
        &[
            "sample",
            "--max-reviews",
            "3",
            "--samples-per-stage",
            "40,40",
            "--temperatures",
            "1.0,1.2",
        ],
    );
}

#[test]
fn help_lists_every_documented_flag() {
    let dir = tempfile::tempdir().unwrap();
    let top = ok(dir.path(), &["--help"]);
    for flag in ["--run-dir", "--config", "--jobs", "--force"] {
        assert!(top.contains(flag), "top-level help lacks {flag}");
    }
    let expected: &[(&str, &[&str])] = &[
        (
            "sample",
            &[
                "--samples-per-stage",
                "--temperatures",
                "--max-tokens",
                "--seed",
            ],
        ),
        ("score", &["--variant", "--prompt-variant"]),
        (
            "build-prefs",
            &["--p ", "--pairs", "--zero-straddle", "--no-zero-straddle"],
        ),
        ("split", &["--fractions", "--min-words"]),
        ("train-toy", &["--beta", "--lr", "--epochs"]),
        ("eval-sim", &["--k ", "--passes"]),
        ("stats", &["--level", "--resamples"]),
        ("ingest", &["--input", "--format"]),
    ];
    for (command, flags) in expected {
        let help = ok(dir.path(), &[command, "--help"]);
        for flag in *flags {
            assert!(
                help.contains(flag),
                "{command} --help lacks {flag}:\n{help}"
            );
        }
        assert!(help.contains("--jobs"));
    }
    for command in [
        "ingest",
        "split",
        "sample",
        "score",
        "rank",
        "build-prefs",
        "train-toy",
        "eval-sim",
        "stats",
        "report",
        "all",
    ] {
        assert!(top.contains(command), "help does not list {command}");
    }
}

#[test]
fn score_prefs_and_idempotence_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    sampled_run(dir);

    ok(
        dir,
        &["score", "--variant", "adjusted", "--prompt-variant", "V1"],
    );
    let scored: Vec<Explanation> = pex::io::read_jsonl(&dir.join("scores/scored.jsonl")).unwrap();
    assert_eq!(scored.len(), 240);
    assert!(scored
        .iter()
        .all(|e| e.score.as_ref().unwrap().prompt_variant == Some(PromptVariant::V1)));

    ok(dir, &["rank"]);
    ok(
        dir,
        &[
            "build-prefs",
            "--p",
            "0.10",
            "--pairs",
            "8",
            "--zero-straddle",
        ],
    );
    let pairs: Vec<PreferencePair> = pex::io::read_jsonl(&dir.join("prefs/pairs.jsonl")).unwrap();
    assert!(!pairs.is_empty());
    let mut per_example: BTreeMap<(String, String), usize> = BTreeMap::new();
    for p in &pairs {
        assert!(p.chosen_score > 0.0 && p.rejected_score < 0.0);
        *per_example
            .entry((p.review_id.clone(), p.answer.to_string()))
            .or_default() += 1;
    }
    assert!(per_example.values().all(|&n| n <= 8));
    let lines = fs::read_to_string(dir.join("prefs/prefs.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), pairs.len());

    let before = fs::read(dir.join("prefs/prefs.jsonl")).unwrap();
    assert_eq!(ok(dir, &["rank"]).trim(), "rank: up to date");
    assert_eq!(
        ok(
            dir,
            &[
                "build-prefs",
                "--p",
                "0.10",
                "--pairs",
                "8",
                "--zero-straddle"
            ]
        )
        .trim(),
        "build-prefs: up to date"
    );
    assert!(ok(dir, &["--force", "rank"]).starts_with("rank: "));
    assert!(!ok(dir, &["--force", "rank"]).contains("up to date"));
    assert_eq!(fs::read(dir.join("prefs/prefs.jsonl")).unwrap(), before);

    let changed = ok(dir, &["build-prefs", "--pairs", "2"]);
    assert!(!changed.contains("up to date"));
    let fewer: Vec<PreferencePair> = pex::io::read_jsonl(&dir.join("prefs/pairs.jsonl")).unwrap();
    assert!(fewer.len() < pairs.len());

    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    for stage in ["ingest", "split", "sample", "score", "rank", "build-prefs"] {
        assert!(
            manifest["stages"][stage]["outputs"].is_object(),
            "manifest lacks {stage}"
        );
    }
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let missing = pex(dir, &["rank"]);
    assert_eq!(missing.status.code(), Some(2));
    let d = diagnostic(&missing);
    assert_eq!(d["error"], "config");
    assert_eq!(d["exit_code"], 2);

    let unknown = pex(dir, &["rank", "--colour", "blue"]);
    assert_eq!(unknown.status.code(), Some(2));

    ok(dir, &["toy-init", "--size", "40"]);
    let bad = pex(dir, &["split", "--fractions", "0.5,0.5,0.5"]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(diagnostic(&bad)["error"], "config");

    let short = pex(dir, &["split", "--fractions", "0.5,0.5"]);
    assert_eq!(short.status.code(), Some(2));

    let twice = pex(dir, &["toy-init"]);
    assert_eq!(twice.status.code(), Some(2));

    let early = pex(dir, &["rank"]);
    assert_eq!(
        early.status.code(),
        Some(2),
        "rank before sample must name the missing input"
    );
}

#[test]
fn bad_data_exits_with_four() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["toy-init", "--size", "40"]);
    let raw = dir.join("data/raw.csv");
    let mut text = fs::read_to_string(&raw).unwrap();
    text.push_str("broken-1,a review with an odd label,maybe\n");
    fs::write(&raw, text).unwrap();
    let out = pex(dir, &["ingest"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(diagnostic(&out)["exit_code"], 4);
}

#[test]
fn unreachable_backend_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["toy-init", "--size", "40"]);
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}/v1/complete", listener.local_addr().unwrap());
    drop(listener);
    let path = dir.join("config.json");
    let mut config: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    config["backends"]["teacher"] = serde_json::json!({
        "kind": "remote",
        "endpoint": endpoint,
        "retries": 0,
        "backoff_ms": 1
    });
    fs::write(&path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
    ok(dir, &["ingest"]);
    ok(dir, &["split"]);
    let out = pex(dir, &["sample", "--max-reviews", "1"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(diagnostic(&out)["error"], "transport");
}

#[test]
fn explicit_config_file_is_used() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["toy-init", "--size", "40"]);
    let alt = dir.join("alt.json");
    let mut config: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("config.json")).unwrap()).unwrap();
    config["split"]["train"] = serde_json::json!(0.5);
    config["split"]["validation"] = serde_json::json!(0.25);
    config["split"]["test"] = serde_json::json!(0.25);
    fs::write(&alt, serde_json::to_vec(&config).unwrap()).unwrap();
    let alt_arg = alt.to_string_lossy().into_owned();
    ok(dir, &["--config", &alt_arg, "ingest"]);
    ok(dir, &["--config", &alt_arg, "split"]);
    ok(dir, &["split", "--fractions", "0.5,0.25,0.25"]);
    let rows: Vec<serde_json::Value> = pex::io::read_jsonl(&dir.join("data/splits.jsonl")).unwrap();
    let train = rows.iter().filter(|r| r["split"] == "train").count();
    assert_eq!((rows.len(), train), (40, 20));
}
