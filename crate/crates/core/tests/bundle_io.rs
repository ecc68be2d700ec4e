use std::collections::BTreeMap;
use std::fs;

use vmr_core::bundle::{
    load_bundle, write_bundle, Bundle, BundleParts, QueryTarget, ScoreMode, VideoRecord,
};
use vmr_core::correlation::get_scores;
use vmr_core::synth::{generate_scenario, ScenarioSpec};
use vmr_core::{Error, QueryRecord};

fn small_spec() -> ScenarioSpec {
    ScenarioSpec {
        n_videos: 3,
        noise_sigma: 0.05,
        ..ScenarioSpec::default()
    }
}

fn lcg(state: &mut u64) -> f32 {
    *state = state
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    ((*state >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
}

fn embeddings_bundle() -> Bundle {
    let dim = 8;
    let mut state = 7;
    let videos = ["a", "b"]
        .iter()
        .map(|id| VideoRecord {
            video_id: id.to_string(),
            duration_s: 20.0,
            n_raw_snippets: 16,
            raw_features: (0..16 * dim).map(|_| lcg(&mut state)).collect(),
        })
        .collect();
    let queries = vec![
        QueryRecord {
            query_id: "a0".into(),
            video_id: "a".into(),
            raw_text: "a man opens the door and walks in".into(),
            simple_texts: Some(vec!["a man opens the door".into(), "walks in".into()]),
            gt_begin_s: 2.5,
            gt_end_s: 7.5,
        },
        QueryRecord {
            query_id: "b0".into(),
            video_id: "b".into(),
            raw_text: "someone sits down".into(),
            simple_texts: None,
            gt_begin_s: 10.0,
            gt_end_s: 20.0,
        },
    ];
    let mut embeddings = BTreeMap::new();
    for key in [
        ("a0", QueryTarget::Simple(0)),
        ("a0", QueryTarget::Simple(1)),
        ("b0", QueryTarget::Simple(0)),
        ("b0", QueryTarget::Raw),
    ] {
        embeddings.insert(
            (key.0.to_string(), key.1),
            (0..dim).map(|_| lcg(&mut state)).collect(),
        );
    }
    Bundle::from_parts(BundleParts {
        embedding_dim: dim,
        snippet_count: 8,
        score_mode: Some(ScoreMode::Embeddings),
        videos,
        queries,
        embeddings,
        scores: BTreeMap::new(),
    })
    .unwrap()
}

#[test]
fn direct_scores_round_trip() {
    let scenario = generate_scenario(&small_spec(), 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_bundle(&scenario.bundle, dir.path()).unwrap();
    let loaded = load_bundle(&manifest).unwrap();
    assert_eq!(loaded, scenario.bundle);
}

#[test]
fn embeddings_round_trip() {
    let bundle = embeddings_bundle();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_bundle(&bundle, dir.path()).unwrap();
    assert_eq!(load_bundle(&manifest).unwrap(), bundle);
}

#[test]
fn writing_twice_gives_identical_bytes() {
    let scenario = generate_scenario(&small_spec(), 2).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_bundle(&scenario.bundle, a.path()).unwrap();
    write_bundle(&scenario.bundle, b.path()).unwrap();
    for entry in walk(a.path()) {
        let rel = entry.strip_prefix(a.path()).unwrap();
        assert_eq!(
            fs::read(&entry).unwrap(),
            fs::read(b.path().join(rel)).unwrap(),
            "{}",
            rel.display()
        );
    }
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

#[test]
fn truncated_feature_file_is_a_dimension_error() {
    let scenario = generate_scenario(&small_spec(), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_bundle(&scenario.bundle, dir.path()).unwrap();
    let path = dir.path().join("features/v001.f32");
    let bytes = fs::read(&path).unwrap();
    // 31 of the declared 32 rows
    fs::write(&path, &bytes[..bytes.len() - 16 * 4]).unwrap();
    match load_bundle(&manifest).unwrap_err() {
        Error::DimensionMismatch { record, .. } => assert!(record.contains("v001"), "{record}"),
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn ragged_feature_file_is_rejected() {
    let scenario = generate_scenario(&small_spec(), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_bundle(&scenario.bundle, dir.path()).unwrap();
    let path = dir.path().join("features/v000.f32");
    let mut bytes = fs::read(&path).unwrap();
    bytes.pop();
    fs::write(&path, &bytes).unwrap();
    let err = load_bundle(&manifest).unwrap_err();
    assert!(!err.is_usage(), "{err}");
}

#[test]
fn missing_score_file_names_the_query() {
    let scenario = generate_scenario(&small_spec(), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_bundle(&scenario.bundle, dir.path()).unwrap();
    fs::remove_file(dir.path().join("scores/v002/v002_q1.1.f32")).unwrap();
    match load_bundle(&manifest).unwrap_err() {
        Error::MissingScore {
            query_id, video_id, ..
        } => {
            assert_eq!(query_id, "v002_q1");
            assert_eq!(video_id, "v002");
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn missing_manifest_is_a_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_bundle(dir.path().join("manifest.json")).unwrap_err(),
        Error::MissingFile { .. }
    ));
}

#[test]
fn empty_video_list_is_invalid() {
    let parts = BundleParts {
        embedding_dim: 4,
        snippet_count: 8,
        ..BundleParts::default()
    };
    assert!(matches!(
        Bundle::from_parts(parts).unwrap_err(),
        Error::InvalidBundle(_)
    ));
}

#[test]
fn ground_truth_past_the_end_is_rejected() {
    let mut parts = embeddings_bundle().into_parts();
    parts.queries[0].gt_end_s = 20.5;
    assert!(matches!(
        Bundle::from_parts(parts).unwrap_err(),
        Error::GroundTruthOutOfRange { .. }
    ));
}

#[test]
fn non_finite_payload_is_rejected() {
    let mut parts = embeddings_bundle().into_parts();
    parts
        .embeddings
        .get_mut(&("a0".to_string(), QueryTarget::Simple(1)))
        .unwrap()[3] = f32::NAN;
    assert!(matches!(
        Bundle::from_parts(parts).unwrap_err(),
        Error::NonFinite { .. }
    ));
}

fn cosine_oracle(a: &[f64], b: &[f32]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, &y) in a.iter().zip(b) {
        let y = f64::from(y);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na.sqrt() * nb.sqrt())
}

#[test]
fn embeddings_mode_scores_are_cosines() {
    let bundle = embeddings_bundle();
    let features = bundle.features("a").unwrap();
    let emb = bundle
        .query_embedding("a0", QueryTarget::Simple(1))
        .unwrap();
    let sv = get_scores(&bundle, "a", "a0", QueryTarget::Simple(1)).unwrap();
    assert_eq!(sv.len(), 8);
    for (i, &s) in sv.scores.iter().enumerate() {
        assert!((s - cosine_oracle(features.row(i), emb)).abs() < 1e-12);
    }
}

#[test]
fn raw_target_without_payload_uses_the_mean_simple_embedding() {
    let bundle = embeddings_bundle();
    let e0 = bundle
        .query_embedding("a0", QueryTarget::Simple(0))
        .unwrap();
    let e1 = bundle
        .query_embedding("a0", QueryTarget::Simple(1))
        .unwrap();
    let mean: Vec<f32> = e0
        .iter()
        .zip(e1)
        .map(|(a, b)| ((f64::from(*a) + f64::from(*b)) / 2.0) as f32)
        .collect();
    let features = bundle.features("a").unwrap();
    let sv = get_scores(&bundle, "a", "a0", QueryTarget::Raw).unwrap();
    for (i, &s) in sv.scores.iter().enumerate() {
        assert!((s - cosine_oracle(features.row(i), &mean)).abs() < 1e-6);
    }
}

#[test]
fn direct_mode_scores_are_read_back() {
    let scenario = generate_scenario(&small_spec(), 5).unwrap();
    let bundle = &scenario.bundle;
    let stored = bundle
        .stored_scores("v001_q0", QueryTarget::Simple(1))
        .unwrap();
    let sv = get_scores(bundle, "v001", "v001_q0", QueryTarget::Simple(1)).unwrap();
    let expected: Vec<f64> = stored.iter().map(|&v| f64::from(v)).collect();
    assert_eq!(sv.scores, expected);
}

#[test]
fn unknown_score_target_is_reported() {
    let bundle = embeddings_bundle();
    assert!(get_scores(&bundle, "a", "a0", QueryTarget::Simple(5)).is_err());
    assert!(get_scores(&bundle, "zz", "a0", QueryTarget::Simple(0)).is_err());
}
