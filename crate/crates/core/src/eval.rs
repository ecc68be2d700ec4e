//! Recall/mIoU metrics, the novel-location shift transform and the
//! snippet/text correlation probes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bundle::{resample_features, Bundle, QueryTarget, ScoreMode, VideoRecord};
use crate::correlation::{cosine, get_scores, target_embedding};
use crate::error::{Error, Result};
use crate::merge::ResultLine;
use crate::model::{seconds_iou, SnippetFeatureMatrix};
use crate::seed;

pub const DEFAULT_MUS: [f64; 4] = [0.1, 0.3, 0.5, 0.7];

/// Ranked predictions of one query against its ground truth, in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub query_id: String,
    pub predictions: Vec<(f64, f64)>,
    pub ground_truth: (f64, f64),
}

fn check_items(items: &[EvalItem]) -> Result<()> {
    if items.is_empty() {
        return Err(Error::usage("no queries to evaluate"));
    }
    if let Some(item) = items.iter().find(|i| i.predictions.is_empty()) {
        return Err(Error::usage(format!(
            "query {} has no results",
            item.query_id
        )));
    }
    Ok(())
}

/// Percentage of queries with a top-`n` prediction whose IoU is strictly above `mu`.
pub fn recall_at(items: &[EvalItem], n: usize, mu: f64) -> Result<f64> {
    check_items(items)?;
    let hits = items
        .iter()
        .filter(|item| {
            item.predictions
                .iter()
                .take(n)
                .any(|&p| seconds_iou(p, item.ground_truth) > mu)
        })
        .count();
    Ok(hits as f64 * 100.0 / items.len() as f64)
}

/// Mean top-1 IoU, as a percentage.
pub fn mean_iou(items: &[EvalItem]) -> Result<f64> {
    check_items(items)?;
    let total: f64 = items
        .iter()
        .map(|item| seconds_iou(item.predictions[0], item.ground_truth))
        .sum();
    Ok(total * 100.0 / items.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallEntry {
    pub n: usize,
    pub mu: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub recalls: Vec<RecallEntry>,
    pub miou: f64,
    pub query_count: usize,
    pub config_fingerprint: String,
}

impl MetricsReport {
    pub fn recall(&self, n: usize, mu: f64) -> Option<f64> {
        self.recalls
            .iter()
            .find(|r| r.n == n && r.mu == mu)
            .map(|r| r.recall)
    }

    /// Aligned plain-text table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16} {:>8}", "metric", "value");
        for r in &self.recalls {
            let _ = writeln!(
                out,
                "{:<16} {:>8.2}",
                format!("R@{},IoU={}", r.n, r.mu),
                r.recall
            );
        }
        let _ = writeln!(out, "{:<16} {:>8.2}", "mIoU", self.miou);
        let _ = writeln!(out, "{:<16} {:>8}", "queries", self.query_count);
        out
    }
}

pub fn evaluate(
    items: &[EvalItem],
    ns: &[usize],
    mus: &[f64],
    fingerprint: impl Into<String>,
) -> Result<MetricsReport> {
    if ns.is_empty() || mus.is_empty() {
        return Err(Error::usage("need at least one n and one mu"));
    }
    if let Some(mu) = mus.iter().find(|m| !(0.0..1.0).contains(*m)) {
        return Err(Error::usage(format!("IoU threshold {mu} outside [0, 1)")));
    }
    let mut recalls = Vec::with_capacity(ns.len() * mus.len());
    for &n in ns {
        if n == 0 {
            return Err(Error::usage("n must be at least 1"));
        }
        for &mu in mus {
            recalls.push(RecallEntry {
                n,
                mu,
                recall: recall_at(items, n, mu)?,
            });
        }
    }
    Ok(MetricsReport {
        recalls,
        miou: mean_iou(items)?,
        query_count: items.len(),
        config_fingerprint: fingerprint.into(),
    })
}

/// Pairs result lines with the bundle's ground truth.
pub fn eval_items(bundle: &Bundle, results: &[ResultLine]) -> Result<Vec<EvalItem>> {
    results
        .iter()
        .map(|line| {
            let record = bundle.query(&line.query_id)?;
            Ok(EvalItem {
                query_id: line.query_id.clone(),
                predictions: line
                    .proposals
                    .iter()
                    .map(|p| (p.begin_s, p.end_s))
                    .collect(),
                ground_truth: record.ground_truth(),
            })
        })
        .collect()
}

fn uniform_pick<T: Copy>(rng: &mut impl Rng, items: &[T]) -> T {
    items[rng.random_range(0..items.len())]
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Prepends `p_seconds` of unrelated content to every video and shifts the
/// ground truth by `p_seconds`.
///
/// Padding rows are snippet rows of other videos (with the score a random
/// query of the donor video gave that snippet), or Gaussian rows matched to
/// the video's statistics when the bundle has a single video. The padded
/// video is pooled back to the bundle's snippet count.
pub fn ood_shift(bundle: &Bundle, p_seconds: f64, seed: u64) -> Result<Bundle> {
    if !(p_seconds.is_finite() && p_seconds >= 0.0) {
        return Err(Error::usage(format!(
            "shift must be finite and >= 0, got {p_seconds}"
        )));
    }
    if p_seconds == 0.0 {
        return Ok(bundle.clone());
    }
    let lv = bundle.snippet_count();
    let dim = bundle.embedding_dim();
    let direct = bundle.score_mode() == ScoreMode::DirectScores;

    let mut queries_of: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for q in bundle.queries() {
        queries_of
            .entry(q.video_id.as_str())
            .or_default()
            .push(q.query_id.as_str());
    }

    let mut parts = bundle.clone().into_parts();
    let mut videos = Vec::with_capacity(parts.videos.len());
    for video in bundle.videos() {
        let id = video.video_id.as_str();
        let n_pad = (p_seconds / video.duration_s * lv as f64).round() as usize;
        if n_pad == 0 {
            videos.push(VideoRecord {
                duration_s: video.duration_s + p_seconds,
                ..video.clone()
            });
            continue;
        }
        let mut rng = seed::rng(seed::derive(seed, &["ood", id]));
        let own = bundle.features(id)?;
        let donors: Vec<&str> = bundle
            .videos()
            .iter()
            .map(|v| v.video_id.as_str())
            .filter(|&v| v != id && (!direct || queries_of.contains_key(v)))
            .collect();

        let mut pad_rows: Vec<f64> = Vec::with_capacity(n_pad * dim);
        let mut pad_scores: Vec<f64> = Vec::with_capacity(n_pad);
        if donors.is_empty() {
            let feature_stats: Vec<(f64, f64)> = (0..dim)
                .map(|d| mean_std((0..lv).map(|r| own.row(r)[d])))
                .collect();
            let own_scores: Vec<f64> = queries_of
                .get(id)
                .into_iter()
                .flatten()
                .flat_map(|&q| (0..bundle.simple_target_count(q)).map(move |t| (q, t)))
                .filter_map(|(q, t)| bundle.stored_scores(q, QueryTarget::Simple(t)))
                .flatten()
                .map(|&v| f64::from(v))
                .collect();
            let score_stats = mean_std(own_scores.iter().copied());
            for _ in 0..n_pad {
                for &(mean, std) in &feature_stats {
                    pad_rows.push(sample_normal(&mut rng, mean, std));
                }
                pad_scores.push(sample_normal(&mut rng, score_stats.0, score_stats.1));
            }
        } else {
            for _ in 0..n_pad {
                let donor = uniform_pick(&mut rng, &donors);
                let row = rng.random_range(0..lv);
                pad_rows.extend_from_slice(bundle.features(donor)?.row(row));
                if direct {
                    let query = uniform_pick(&mut rng, &queries_of[donor]);
                    let t = rng.random_range(0..bundle.simple_target_count(query));
                    let scores = bundle
                        .stored_scores(query, QueryTarget::Simple(t))
                        .expect("validated bundle");
                    pad_scores.push(f64::from(scores[row]));
                }
            }
        }

        let raw_features: Vec<f32> = pad_rows
            .iter()
            .chain(own.data())
            .map(|&v| v as f32)
            .collect();
        videos.push(VideoRecord {
            video_id: video.video_id.clone(),
            duration_s: video.duration_s + p_seconds,
            n_raw_snippets: lv + n_pad,
            raw_features,
        });
        if direct {
            for q in queries_of.get(id).into_iter().flatten() {
                for (key, values) in parts.scores.range_mut(
                    (q.to_string(), QueryTarget::Simple(0))..=(q.to_string(), QueryTarget::Raw),
                ) {
                    debug_assert_eq!(key.0, *q);
                    let padded: Vec<f64> = pad_scores
                        .iter()
                        .copied()
                        .chain(values.iter().map(|&v| f64::from(v)))
                        .collect();
                    *values = resample_features(&padded, lv + n_pad, 1, lv)
                        .into_iter()
                        .map(|v| v as f32)
                        .collect();
                }
            }
        }
    }
    parts.videos = videos;
    for q in &mut parts.queries {
        q.gt_begin_s += p_seconds;
        q.gt_end_s += p_seconds;
    }
    Bundle::from_parts(parts)
}

fn sample_normal(rng: &mut impl Rng, mean: f64, std: f64) -> f64 {
    if std > 0.0 {
        Normal::new(mean, std).expect("finite std").sample(rng)
    } else {
        mean
    }
}

/// Snippets whose time span overlaps `gt` by at least half a snippet width.
pub fn foreground_mask(gt: (f64, f64), duration_s: f64, snippets: usize) -> Vec<bool> {
    let width = duration_s / snippets as f64;
    (0..snippets)
        .map(|i| {
            let (b, e) = (i as f64 * width, (i + 1) as f64 * width);
            let overlap = (e.min(gt.1) - b.max(gt.0)).max(0.0);
            overlap >= 0.5 * width
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub successes: usize,
    pub evaluated: usize,
    pub excluded: usize,
    /// `None` when nothing could be evaluated.
    pub percentage: Option<f64>,
}

impl ProbeReport {
    fn new(successes: usize, evaluated: usize, excluded: usize) -> Self {
        Self {
            successes,
            evaluated,
            excluded,
            percentage: (evaluated > 0).then(|| successes as f64 * 100.0 / evaluated as f64),
        }
    }
}

/// Text-to-snippet probe: a query succeeds when its mean foreground score
/// is strictly above its mean background score.
pub fn prelim_text_retrieval(bundle: &Bundle) -> Result<ProbeReport> {
    let (mut successes, mut evaluated, mut excluded) = (0, 0, 0);
    for query in bundle.queries() {
        let features = bundle.features(&query.video_id)?;
        let mask = foreground_mask(query.ground_truth(), features.duration_s, features.rows());
        let scores = get_scores(bundle, &query.video_id, &query.query_id, QueryTarget::Raw)?.scores;
        let mut fg = Vec::new();
        let mut bg = Vec::new();
        for (s, is_fg) in scores.iter().copied().zip(mask) {
            if is_fg {
                fg.push(s)
            } else {
                bg.push(s)
            }
        }
        if fg.is_empty() || bg.is_empty() {
            excluded += 1;
            continue;
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        evaluated += 1;
        if mean(&fg) > mean(&bg) {
            successes += 1;
        }
    }
    Ok(ProbeReport::new(successes, evaluated, excluded))
}

fn foreign_score(
    bundle: &Bundle,
    features: &SnippetFeatureMatrix,
    snippet: usize,
    query_id: &str,
) -> Option<f64> {
    if bundle.score_mode() != ScoreMode::Embeddings {
        return None;
    }
    let query = target_embedding(bundle, query_id, QueryTarget::Raw).ok()?;
    Some(cosine(features.row(snippet), &query.embedding))
}

/// Snippet-to-text probe: a foreground snippet succeeds when its matched
/// query scores strictly above every distractor query.
///
/// Distractors are the other queries of the same video; a video with a single
/// query borrows one seeded foreign query, which needs embeddings (direct
/// scores only exist for a query's own video), otherwise the snippets are
/// excluded.
pub fn prelim_snippet_retrieval(bundle: &Bundle, seed: u64) -> Result<ProbeReport> {
    let (mut successes, mut evaluated, mut excluded) = (0, 0, 0);
    let mut queries_of: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for q in bundle.queries() {
        queries_of
            .entry(q.video_id.as_str())
            .or_default()
            .push(q.query_id.as_str());
    }
    for video in bundle.videos() {
        let id = video.video_id.as_str();
        let Some(own) = queries_of.get(id) else {
            continue;
        };
        let features = bundle.features(id)?;
        let n = features.rows();
        let mut rng = seed::rng(seed::derive(seed, &["snippet-probe", id]));

        let mut masks = Vec::with_capacity(own.len());
        let mut scores = Vec::with_capacity(own.len());
        for &q in own {
            let record = bundle.query(q)?;
            masks.push(foreground_mask(
                record.ground_truth(),
                features.duration_s,
                n,
            ));
            scores.push(get_scores(bundle, id, q, QueryTarget::Raw)?.scores);
        }
        let foreign: Option<&str> = if own.len() == 1 {
            let others: Vec<&str> = bundle
                .queries()
                .iter()
                .filter(|q| q.video_id != id)
                .map(|q| q.query_id.as_str())
                .collect();
            (!others.is_empty()).then(|| uniform_pick(&mut rng, &others))
        } else {
            None
        };

        for i in 0..n {
            let owners: Vec<usize> = (0..own.len()).filter(|&q| masks[q][i]).collect();
            let &[matched] = owners.as_slice() else {
                if owners.len() > 1 {
                    excluded += 1;
                }
                continue;
            };
            let target = scores[matched][i];
            let distractors: Vec<f64> = if own.len() > 1 {
                (0..own.len())
                    .filter(|&q| q != matched)
                    .map(|q| scores[q][i])
                    .collect()
            } else {
                match foreign.and_then(|f| foreign_score(bundle, features, i, f)) {
                    Some(s) => vec![s],
                    None => {
                        excluded += 1;
                        continue;
                    }
                }
            };
            evaluated += 1;
            if distractors.iter().all(|&d| target > d) {
                successes += 1;
            }
        }
    }
    Ok(ProbeReport::new(successes, evaluated, excluded))
}
