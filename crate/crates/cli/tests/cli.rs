use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vmr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vmr"))
        .args(args)
        .current_dir(dir)
        .env_remove("VMR_VERB_LEXICON")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synth(dir: &Path) {
    let out = vmr(dir, &["synth", "--seed", "1", "--out-dir", "b"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap()
}

fn recall(metrics: &serde_json::Value, mu: f64) -> f64 {
    metrics["recalls"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["n"] == 1 && r["mu"].as_f64() == Some(mu))
        .unwrap()["recall"]
        .as_f64()
        .unwrap()
}

#[test]
fn planted_moments_round_trip_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = vmr(dir.path(), &["validate", "b/manifest.json"]);
    assert_eq!(code(&out), 0);
    let summary = json(&out.stdout);
    assert_eq!(summary["videos"], 20);
    assert_eq!(summary["score_mode"], "direct_scores");

    assert_eq!(
        code(&vmr(
            dir.path(),
            &["retrieve", "b/manifest.json", "--out", "r.jsonl"]
        )),
        0
    );
    let out = vmr(dir.path(), &["eval", "b/manifest.json", "r.jsonl"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let metrics = json(&out.stdout);
    assert_eq!(recall(&metrics, 0.7), 100.0);
    assert!(stderr(&out).contains("R@1,IoU=0.7"));
}

#[test]
fn results_are_sorted_by_query() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    assert_eq!(
        code(&vmr(
            dir.path(),
            &[
                "retrieve",
                "b/manifest.json",
                "--out",
                "r.jsonl",
                "--workers",
                "3"
            ]
        )),
        0
    );
    let text = fs::read_to_string(dir.path().join("r.jsonl")).unwrap();
    let ids: Vec<String> = text
        .lines()
        .map(|l| json(l.as_bytes())["query_id"].as_str().unwrap().to_owned())
        .collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    assert_eq!(ids.len(), 40);
}

#[test]
fn ablation_flags_run() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    for args in [
        &["--no-refine", "--no-merge"][..],
        &["--gate", "chain"],
        &["--method", "sliding"],
        &["--method", "random", "--k", "4"],
        &["--method", "abrupt"],
    ] {
        let mut full = vec!["retrieve", "b/manifest.json", "--out", "r.jsonl"];
        full.extend_from_slice(args);
        let out = vmr(dir.path(), &full);
        assert_eq!(code(&out), 0, "{args:?}: {}", stderr(&out));
        assert_eq!(
            code(&vmr(
                dir.path(),
                &["eval", "b/manifest.json", "r.jsonl", "--n", "1,5"]
            )),
            0
        );
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    for args in [
        &[
            "retrieve",
            "b/manifest.json",
            "--out",
            "r.jsonl",
            "--no-merge",
            "--gate",
            "joint",
        ][..],
        &["retrieve", "b/manifest.json", "--out", "r.jsonl", "--bogus"],
        &[
            "retrieve",
            "b/manifest.json",
            "--out",
            "r.jsonl",
            "--method",
            "dbscan",
        ],
        &[
            "retrieve",
            "b/manifest.json",
            "--out",
            "r.jsonl",
            "--k",
            "0",
        ],
        &["ood", "b/manifest.json", "--p", "-3", "--out-dir", "o"],
        &["frobnicate"],
    ] {
        let out = vmr(dir.path(), args);
        assert_eq!(code(&out), 2, "{args:?}");
        let msg = stderr(&out);
        assert_eq!(msg.trim_end().lines().count(), 1, "{msg}");
        assert!(msg.starts_with("vmr: "), "{msg}");
    }
}

#[test]
fn data_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let out = vmr(dir.path(), &["eval", "b/manifest.json", "empty.jsonl"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("no results"));

    assert_eq!(
        code(&vmr(dir.path(), &["validate", "missing/manifest.json"])),
        1
    );

    fs::write(dir.path().join("junk.jsonl"), "{not json}\n").unwrap();
    assert_eq!(
        code(&vmr(dir.path(), &["eval", "b/manifest.json", "junk.jsonl"])),
        1
    );

    fs::remove_file(dir.path().join("b/scores/v004/v004_q0.0.f32")).unwrap();
    let out = vmr(dir.path(), &["validate", "b/manifest.json"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("v004_q0"), "{}", stderr(&out));
}

#[test]
fn lexicon_path_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_vmr"))
        .args(["retrieve", "b/manifest.json", "--out", "r.jsonl"])
        .current_dir(dir.path())
        .env("VMR_VERB_LEXICON", "no-such-lexicon.txt")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("no-such-lexicon.txt"));
}

#[test]
fn ood_bundle_validates_and_shifts_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = vmr(
        dir.path(),
        &[
            "ood",
            "b/manifest.json",
            "--p",
            "10",
            "--seed",
            "3",
            "--out-dir",
            "o",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(code(&vmr(dir.path(), &["validate", "o/manifest.json"])), 0);
    let before = fs::read_to_string(dir.path().join("b/queries.jsonl")).unwrap();
    let after = fs::read_to_string(dir.path().join("o/queries.jsonl")).unwrap();
    for (a, b) in before.lines().zip(after.lines()) {
        let (a, b) = (json(a.as_bytes()), json(b.as_bytes()));
        assert_eq!(
            b["gt_begin_s"].as_f64().unwrap(),
            a["gt_begin_s"].as_f64().unwrap() + 10.0
        );
    }
}

#[test]
fn prelim_reports_both_probes() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = vmr(dir.path(), &["prelim", "b/manifest.json", "--seed", "2"]);
    assert_eq!(code(&out), 0);
    let report = json(&out.stdout);
    assert_eq!(report["text_to_snippet"]["percentage"], 100.0);
    assert_eq!(report["snippet_to_text"]["percentage"], 100.0);
}

#[test]
fn synth_reads_a_spec_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("spec.json"),
        r#"{"n_videos": 3, "snippet_count": 16, "dim": 8, "moments_per_video": 1, "verbs_per_query": 3, "noise_sigma": 0.01}"#,
    )
    .unwrap();
    let out = vmr(
        dir.path(),
        &[
            "synth",
            "--spec",
            "spec.json",
            "--seed",
            "4",
            "--out-dir",
            "s",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = json(&vmr(dir.path(), &["validate", "s/manifest.json"]).stdout);
    assert_eq!(summary["queries"], 3);
    assert_eq!(summary["snippet_count"], 16);
    let expected = json(&fs::read(dir.path().join("s/expected.json")).unwrap());
    assert_eq!(expected.as_array().unwrap().len(), 3);

    fs::write(dir.path().join("bad.json"), r#"{"n_videos": 0}"#).unwrap();
    assert_eq!(
        code(&vmr(
            dir.path(),
            &["synth", "--spec", "bad.json", "--out-dir", "x"]
        )),
        2
    );
}

#[test]
fn metrics_fingerprint_tracks_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    assert_eq!(
        code(&vmr(
            dir.path(),
            &["retrieve", "b/manifest.json", "--out", "r.jsonl"]
        )),
        0
    );
    let a = json(&vmr(dir.path(), &["eval", "b/manifest.json", "r.jsonl"]).stdout);
    let b = json(
        &vmr(
            dir.path(),
            &["eval", "b/manifest.json", "r.jsonl", "--mu", "0.5"],
        )
        .stdout,
    );
    assert_ne!(a["config_fingerprint"], b["config_fingerprint"]);
    assert_eq!(b["recalls"].as_array().unwrap().len(), 1);
}
