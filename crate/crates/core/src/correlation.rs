//! Snippet/query correlation scores.

use crate::bundle::{Bundle, QueryTarget, ScoreMode};
use crate::error::{Error, Result};
use crate::model::{QueryEmbedding, ScoreVector, SnippetFeatureMatrix};

/// Cosine similarity; zero-norm operands give 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Cosine similarity of every snippet row with the query embedding.
pub fn snippet_scores(
    features: &SnippetFeatureMatrix,
    query: &QueryEmbedding,
) -> Result<ScoreVector> {
    if features.dim() != query.embedding.len() {
        return Err(Error::DimensionMismatch {
            record: format!(
                "query {} against video {}",
                query.query_id, features.video_id
            ),
            expected: format!("embedding of length {}", features.dim()),
            found: format!("length {}", query.embedding.len()),
        });
    }
    let scores = (0..features.rows())
        .map(|i| cosine(features.row(i), &query.embedding))
        .collect();
    Ok(ScoreVector {
        video_id: features.video_id.clone(),
        query_id: query.query_id.clone(),
        scores,
    })
}

fn to_f64(values: &[f32]) -> Vec<f64> {
    values.iter().map(|&v| f64::from(v)).collect()
}

/// Element-wise mean of the stored simple-query payloads, used for the raw
/// target when a bundle ships none.
fn mean_payload<'a>(rows: impl Iterator<Item = &'a [f32]>) -> Option<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    let mut count = 0usize;
    for row in rows {
        count += 1;
        match acc.as_mut() {
            None => acc = Some(to_f64(row)),
            Some(sum) => sum
                .iter_mut()
                .zip(row)
                .for_each(|(s, &v)| *s += f64::from(v)),
        }
    }
    let mut acc = acc?;
    acc.iter_mut().for_each(|s| *s /= count as f64);
    Some(acc)
}

fn payload<'a>(
    bundle: &'a Bundle,
    query_id: &str,
    target: QueryTarget,
    lookup: impl Fn(&str, QueryTarget) -> Option<&'a [f32]>,
) -> Option<Vec<f64>> {
    match (lookup(query_id, target), target) {
        (Some(values), _) => Some(to_f64(values)),
        (None, QueryTarget::Raw) => {
            let n = bundle.simple_target_count(query_id);
            mean_payload((0..n).filter_map(|t| lookup(query_id, QueryTarget::Simple(t))))
        }
        (None, QueryTarget::Simple(_)) => None,
    }
}

/// Scores of `video_id` against one text of `query_id`.
pub fn get_scores(
    bundle: &Bundle,
    video_id: &str,
    query_id: &str,
    target: QueryTarget,
) -> Result<ScoreVector> {
    let record = bundle.query(query_id)?;
    if record.video_id != video_id {
        return Err(Error::MissingEntry(format!(
            "query {query_id} belongs to video {}, not {video_id}",
            record.video_id
        )));
    }
    let missing = || Error::MissingScore {
        video_id: video_id.to_owned(),
        query_id: query_id.to_owned(),
        target: target.to_string(),
    };
    match bundle.score_mode() {
        ScoreMode::DirectScores => {
            let scores = payload(bundle, query_id, target, |q, t| bundle.stored_scores(q, t))
                .ok_or_else(missing)?;
            Ok(ScoreVector {
                video_id: video_id.to_owned(),
                query_id: query_id.to_owned(),
                scores,
            })
        }
        ScoreMode::Embeddings => {
            let query = target_embedding(bundle, query_id, target)?;
            snippet_scores(bundle.features(video_id)?, &query)
        }
    }
}

/// Embedding of one text of `query_id` (embeddings bundles only).
pub fn target_embedding(
    bundle: &Bundle,
    query_id: &str,
    target: QueryTarget,
) -> Result<QueryEmbedding> {
    let record = bundle.query(query_id)?;
    let embedding = payload(bundle, query_id, target, |q, t| {
        bundle.query_embedding(q, t)
    })
    .ok_or_else(|| Error::MissingScore {
        video_id: record.video_id.clone(),
        query_id: query_id.to_owned(),
        target: target.to_string(),
    })?;
    let text = match target {
        QueryTarget::Simple(t) => record
            .provided_splits()
            .and_then(|s| s.get(t))
            .cloned()
            .unwrap_or_default(),
        QueryTarget::Raw => record.raw_text.clone(),
    };
    Ok(QueryEmbedding {
        query_id: query_id.to_owned(),
        text,
        embedding,
    })
}
