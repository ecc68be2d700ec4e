//! Proposal scoring, bottom-up merging across simple queries, ranking, and
//! the end-to-end retrieval pipeline.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bundle::{Bundle, QueryTarget};
use crate::error::{Error, Result};
use crate::model::{
    joint_iou, snippets_to_seconds, union_span, Interval, MergeGate, QueryRecord, RefinementConfig,
    RetrievalConfig, ScoredProposal,
};
use crate::proposal::generate_proposals;
use crate::split::{resolve_splits, Lexicon};

/// Mean score over the snippets of `iv`.
pub fn score_proposal(scores: &[f64], iv: Interval) -> f64 {
    let span = &scores[iv.begin()..iv.end()];
    span.iter().sum::<f64>() / span.len() as f64
}

/// True when the members form one component under pairwise overlap.
fn chain_connected(members: &[Interval]) -> bool {
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    let mut reach = sorted[0].end();
    for iv in &sorted[1..] {
        if iv.begin() >= reach {
            return false;
        }
        reach = reach.max(iv.end());
    }
    true
}

pub fn gate_passes(members: &[Interval], gate: MergeGate) -> bool {
    match gate {
        MergeGate::Joint => joint_iou(members).is_ok_and(|v| v > 0.0),
        MergeGate::Chain => chain_connected(members),
    }
}

fn combination_count(lists: &[Vec<ScoredProposal>]) -> u128 {
    lists
        .iter()
        .fold(1u128, |acc, l| acc.saturating_mul(l.len() as u128))
}

/// Merges per-simple-query proposal lists into raw-query proposals.
///
/// Every combination taking one proposal per list whose members pass `gate`
/// yields the union span scored by the mean member score; equal spans keep
/// their best score. With no passing combination the single best proposal
/// overall is returned. A single list is returned unchanged.
pub fn merge_bottom_up(
    per_query: &[Vec<ScoredProposal>],
    gate: MergeGate,
    cap: u64,
) -> Result<Vec<ScoredProposal>> {
    if per_query.is_empty() {
        return Err(Error::usage("merge needs at least one proposal list"));
    }
    if let Some(t) = per_query.iter().position(Vec::is_empty) {
        return Err(Error::usage(format!("proposal list {t} is empty")));
    }
    if per_query.len() == 1 {
        return Ok(per_query[0].clone());
    }
    let count = combination_count(per_query);
    if count > u128::from(cap) {
        return Err(Error::CombinationCap { count, cap });
    }

    let depth = per_query.len();
    let mut merged: BTreeMap<Interval, f64> = BTreeMap::new();
    let mut cursor = vec![0usize; depth];
    let mut members = Vec::with_capacity(depth);
    'outer: loop {
        members.clear();
        members.extend(
            cursor
                .iter()
                .zip(per_query)
                .map(|(&i, list)| list[i].interval),
        );
        if gate_passes(&members, gate) {
            let span = union_span(&members)?;
            let total: f64 = cursor
                .iter()
                .zip(per_query)
                .map(|(&i, list)| list[i].score)
                .sum();
            let score = total / depth as f64;
            merged
                .entry(span)
                .and_modify(|s| *s = s.max(score))
                .or_insert(score);
        }
        // odometer over the product, last list fastest
        for t in (0..depth).rev() {
            cursor[t] += 1;
            if cursor[t] < per_query[t].len() {
                continue 'outer;
            }
            cursor[t] = 0;
        }
        break;
    }

    if merged.is_empty() {
        let best = rank_proposals(per_query.iter().flatten().copied().collect())
            .into_iter()
            .next()
            .expect("lists are non-empty");
        return Ok(vec![best]);
    }
    Ok(merged
        .into_iter()
        .map(|(interval, score)| ScoredProposal::new(interval, score))
        .collect())
}

/// Ranking order: higher score, earlier begin, shorter span.
pub fn rank_order(a: &ScoredProposal, b: &ScoredProposal) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.interval.begin().cmp(&b.interval.begin()))
        .then(a.interval.len().cmp(&b.interval.len()))
        .then(a.interval.end().cmp(&b.interval.end()))
}

pub fn rank_proposals(mut proposals: Vec<ScoredProposal>) -> Vec<ScoredProposal> {
    proposals.sort_by(rank_order);
    proposals
}

/// A ranked proposal with its span in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedProposal {
    pub interval: Interval,
    pub begin_s: f64,
    pub end_s: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub query_id: String,
    pub video_id: String,
    pub simple_texts: Vec<String>,
    pub proposals: Vec<RankedProposal>,
}

/// Runs the full pipeline for one query record.
pub fn retrieve(
    bundle: &Bundle,
    record: &QueryRecord,
    lexicon: &Lexicon,
    cfg: &RetrievalConfig,
    refinement: &RefinementConfig,
) -> Result<Retrieval> {
    let video_id = record.video_id.as_str();
    let features = bundle.features(video_id)?;
    let resolved = resolve_splits(record, lexicon)?;
    let simple_texts = resolved.simple_texts().to_vec();

    let merged = if cfg.merge_enabled {
        let lists = (0..simple_texts.len())
            .map(|t| {
                generate_proposals(
                    bundle,
                    video_id,
                    &record.query_id,
                    QueryTarget::Simple(t),
                    cfg,
                    refinement,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        merge_bottom_up(&lists, cfg.merge_gate, cfg.combination_cap)?
    } else {
        generate_proposals(
            bundle,
            video_id,
            &record.query_id,
            QueryTarget::Raw,
            cfg,
            refinement,
        )?
    };

    let proposals = rank_proposals(merged)
        .into_iter()
        .map(|p| {
            let (begin_s, end_s) =
                snippets_to_seconds(p.interval, features.duration_s, features.rows());
            RankedProposal {
                interval: p.interval,
                begin_s,
                end_s,
                score: p.score,
            }
        })
        .collect();
    Ok(Retrieval {
        query_id: record.query_id.clone(),
        video_id: record.video_id.clone(),
        simple_texts,
        proposals,
    })
}

/// One line of a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultLine {
    pub query_id: String,
    pub proposals: Vec<SecondsProposal>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondsProposal {
    pub begin_s: f64,
    pub end_s: f64,
    pub score: f64,
}

impl From<&Retrieval> for ResultLine {
    fn from(r: &Retrieval) -> Self {
        Self {
            query_id: r.query_id.clone(),
            proposals: r
                .proposals
                .iter()
                .map(|p| SecondsProposal {
                    begin_s: p.begin_s,
                    end_s: p.end_s,
                    score: p.score,
                })
                .collect(),
        }
    }
}
