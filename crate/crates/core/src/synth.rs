//! Seeded synthetic bundles with planted moments.
//!
//! Each video is a run of latent segments, each with its own unit-norm
//! feature prototype. Every query targets one segment; all of its simple
//! queries score that segment in `[0.7, 0.9]` and everything else in
//! `[0.1, 0.3]`, so the planted segment is the answer.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bundle::{Bundle, BundleParts, QueryTarget, ScoreMode, VideoRecord};
use crate::error::{Error, Result};
use crate::model::{snippets_to_seconds, Interval, QueryRecord};
use crate::seed;

const SUBJECTS: [&str; 4] = ["person", "a man", "a woman", "someone"];

const PHRASES: [&str; 16] = [
    "opens the door",
    "sits down on a chair",
    "picks up a towel",
    "drinks from a glass",
    "laughs at the television",
    "puts a book on the shelf",
    "walks across the room",
    "holds a phone",
    "closes the window",
    "eats a sandwich",
    "throws a pillow",
    "washes the dishes",
    "takes off the shoes",
    "pours some water",
    "sneezes loudly",
    "looks out the window",
];

fn default_segments() -> usize {
    6
}

fn default_duration() -> f64 {
    32.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n_videos: usize,
    pub snippet_count: usize,
    pub dim: usize,
    pub moments_per_video: usize,
    pub verbs_per_query: usize,
    pub noise_sigma: f64,
    #[serde(default = "default_segments")]
    pub segments_per_video: usize,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            n_videos: 20,
            snippet_count: 32,
            dim: 16,
            moments_per_video: 2,
            verbs_per_query: 2,
            noise_sigma: 0.0,
            segments_per_video: default_segments(),
            duration_s: default_duration(),
        }
    }
}

impl ScenarioSpec {
    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::usage(format!("invalid scenario: {msg}")));
        if self.n_videos == 0 || self.dim == 0 || self.snippet_count == 0 {
            return fail("n_videos, dim and snippet_count must be positive".into());
        }
        if self.segments_per_video == 0 || self.segments_per_video > self.snippet_count {
            return fail(format!(
                "{} segments do not fit {} snippets",
                self.segments_per_video, self.snippet_count
            ));
        }
        if self.moments_per_video == 0 || self.moments_per_video > self.segments_per_video {
            return fail(format!(
                "{} moments per video need between 1 and {} segments",
                self.moments_per_video, self.segments_per_video
            ));
        }
        if self.verbs_per_query == 0 || self.verbs_per_query > PHRASES.len() {
            return fail(format!("verbs_per_query must be in 1..={}", PHRASES.len()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return fail(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            ));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return fail(format!("duration_s must be > 0, got {}", self.duration_s));
        }
        Ok(())
    }
}

/// Planted answer of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedAnswer {
    pub query_id: String,
    pub video_id: String,
    pub interval: Interval,
    pub begin_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub bundle: Bundle,
    pub expected: Vec<ExpectedAnswer>,
}

fn segment_lengths(rng: &mut impl Rng, snippets: usize, segments: usize) -> Vec<usize> {
    let min_len = (snippets / segments).clamp(1, 3);
    let mut lengths = vec![min_len; segments];
    for _ in 0..snippets - min_len * segments {
        lengths[rng.random_range(0..segments)] += 1;
    }
    lengths
}

fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn step_scores(
    rng: &mut impl Rng,
    noise: &Option<Normal<f64>>,
    target: Interval,
    snippets: usize,
    levels: (f64, f64),
) -> Vec<f32> {
    (0..snippets)
        .map(|i| {
            let base = if target.contains(i) {
                levels.0
            } else {
                levels.1
            };
            let jitter = noise.as_ref().map_or(0.0, |n| n.sample(rng));
            (base + jitter) as f32
        })
        .collect()
}

/// Builds a direct-scores bundle and its planted answers, reproducibly from `seed`.
pub fn generate_scenario(spec: &ScenarioSpec, seed: u64) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = seed::rng(seed);
    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("validated sigma"));
    let lv = spec.snippet_count;

    let mut parts = BundleParts {
        embedding_dim: spec.dim,
        snippet_count: lv,
        score_mode: Some(ScoreMode::DirectScores),
        ..BundleParts::default()
    };
    let mut expected = Vec::new();

    for v in 0..spec.n_videos {
        let video_id = format!("v{v:03}");
        let lengths = segment_lengths(&mut rng, lv, spec.segments_per_video);
        let mut segments = Vec::with_capacity(lengths.len());
        let mut begin = 0;
        for len in lengths {
            segments.push(Interval::new(begin, begin + len)?);
            begin += len;
        }
        let prototypes: Vec<Vec<f64>> = (0..segments.len())
            .map(|_| unit_vector(&mut rng, spec.dim))
            .collect();

        let mut raw_features = Vec::with_capacity(lv * spec.dim);
        for (seg, proto) in segments.iter().zip(&prototypes) {
            for _ in 0..seg.len() {
                for &x in proto {
                    let jitter = noise.as_ref().map_or(0.0, |n| n.sample(&mut rng));
                    raw_features.push((x + jitter) as f32);
                }
            }
        }
        parts.videos.push(VideoRecord {
            video_id: video_id.clone(),
            duration_s: spec.duration_s,
            n_raw_snippets: lv,
            raw_features,
        });

        let mut targets = sample(&mut rng, segments.len(), spec.moments_per_video).into_vec();
        targets.sort_unstable();
        for (j, seg_index) in targets.into_iter().enumerate() {
            let target = segments[seg_index];
            let query_id = format!("{video_id}_q{j}");
            let subject = SUBJECTS[rng.random_range(0..SUBJECTS.len())];
            let simple_texts: Vec<String> = sample(&mut rng, PHRASES.len(), spec.verbs_per_query)
                .into_iter()
                .enumerate()
                .map(|(t, p)| {
                    if t == 0 {
                        format!("{subject} {}", PHRASES[p])
                    } else {
                        PHRASES[p].to_owned()
                    }
                })
                .collect();

            let mut level_sum = (0.0, 0.0);
            for t in 0..spec.verbs_per_query {
                let levels = (rng.random_range(0.7..=0.9), rng.random_range(0.1..=0.3));
                level_sum.0 += levels.0;
                level_sum.1 += levels.1;
                let scores = step_scores(&mut rng, &noise, target, lv, levels);
                parts
                    .scores
                    .insert((query_id.clone(), QueryTarget::Simple(t)), scores);
            }
            let k = spec.verbs_per_query as f64;
            let raw_levels = (level_sum.0 / k, level_sum.1 / k);
            let raw_scores = step_scores(&mut rng, &noise, target, lv, raw_levels);
            parts
                .scores
                .insert((query_id.clone(), QueryTarget::Raw), raw_scores);

            let (begin_s, end_s) = snippets_to_seconds(target, spec.duration_s, lv);
            parts.queries.push(QueryRecord {
                query_id: query_id.clone(),
                video_id: video_id.clone(),
                raw_text: simple_texts.join(" then "),
                simple_texts: Some(simple_texts),
                gt_begin_s: begin_s,
                gt_end_s: end_s,
            });
            expected.push(ExpectedAnswer {
                query_id,
                video_id: video_id.clone(),
                interval: target,
                begin_s,
                end_s,
            });
        }
    }

    Ok(Scenario {
        bundle: Bundle::from_parts(parts)?,
        expected,
    })
}
