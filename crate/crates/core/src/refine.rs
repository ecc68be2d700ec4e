//! Query-conditional feature refinement.
//!
//! For each snippet `i` the snippet whose score differs most from `i`'s acts
//! as an anchor for "definitely another moment"; every other snippet `m` gets
//! a same-moment weight `1 - d(i, m) / d(i, anchor)` with `d` the squared
//! score difference. Snippet features are then mixed with their weighted
//! neighbours within the context distance.

use crate::error::{Error, Result};
use crate::model::{RefinementConfig, ScoreVector, SnippetFeatureMatrix};

/// Squared score differences between snippet `i` and every snippet.
pub fn correlation_diffs(scores: &[f64], i: usize) -> Result<Vec<f64>> {
    let anchor = *scores.get(i).ok_or_else(|| {
        Error::usage(format!(
            "snippet index {i} out of range for {} snippets",
            scores.len()
        ))
    })?;
    Ok(scores.iter().map(|s| (anchor - s) * (anchor - s)).collect())
}

/// Index of the largest difference, ties to the smallest index.
pub fn anchor_index(diffs: &[f64]) -> usize {
    diffs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(best, max), (m, &d)| {
            if d > max {
                (m, d)
            } else {
                (best, max)
            }
        })
        .0
}

/// Same-moment probabilities of every snippet relative to snippet `i`.
///
/// A flat score profile has no anchor; all weights are then 1.
pub fn same_moment_weights(scores: &[f64], i: usize) -> Result<Vec<f64>> {
    let diffs = correlation_diffs(scores, i)?;
    let denom = diffs[anchor_index(&diffs)];
    if denom == 0.0 {
        return Ok(vec![1.0; scores.len()]);
    }
    Ok(diffs.into_iter().map(|d| 1.0 - d / denom).collect())
}

/// Row `i` holds [`same_moment_weights`] for snippet `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    size: usize,
    weights: Vec<f64>,
}

impl WeightMatrix {
    pub fn from_scores(scores: &[f64]) -> Self {
        let size = scores.len();
        let mut weights = Vec::with_capacity(size * size);
        for i in 0..size {
            weights.extend(same_moment_weights(scores, i).expect("index in range"));
        }
        Self { size, weights }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.size..(i + 1) * self.size]
    }

    pub fn get(&self, i: usize, m: usize) -> f64 {
        self.weights[i * self.size + m]
    }
}

/// `x_i + lambda * sum_{1 <= |i - m| <= L^n} w_i(m) x_m` for every snippet.
pub fn refine_features(
    features: &SnippetFeatureMatrix,
    scores: &ScoreVector,
    cfg: &RefinementConfig,
) -> Result<SnippetFeatureMatrix> {
    let n = features.rows();
    if scores.len() != n {
        return Err(Error::DimensionMismatch {
            record: format!(
                "scores of query {} on video {}",
                scores.query_id, features.video_id
            ),
            expected: format!("{n} snippets"),
            found: format!("{} scores", scores.len()),
        });
    }
    if !(cfg.lambda.is_finite() && cfg.lambda >= 0.0) {
        return Err(Error::usage(format!(
            "lambda must be finite and >= 0, got {}",
            cfg.lambda
        )));
    }
    if cfg.lambda == 0.0 || cfg.context_distance == 0 {
        return Ok(features.clone());
    }

    let dim = features.dim();
    let mut out = Vec::with_capacity(n * dim);
    let mut context = vec![0.0; dim];
    for i in 0..n {
        let weights = same_moment_weights(&scores.scores, i)?;
        context.iter_mut().for_each(|c| *c = 0.0);
        let lo = i.saturating_sub(cfg.context_distance);
        let hi = (i + cfg.context_distance).min(n - 1);
        for m in (lo..=hi).filter(|&m| m != i) {
            for (c, x) in context.iter_mut().zip(features.row(m)) {
                *c += weights[m] * x;
            }
        }
        out.extend(
            features
                .row(i)
                .iter()
                .zip(&context)
                .map(|(x, c)| x + cfg.lambda * c),
        );
    }
    SnippetFeatureMatrix::new(features.video_id.clone(), n, dim, out, features.duration_s)
}
