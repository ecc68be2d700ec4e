//! Domain types, interval algebra and run configuration.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-video snippet features, `rows` snippets by `dim` embedding dimensions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SnippetFeatureMatrix {
    pub video_id: String,
    pub duration_s: f64,
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl SnippetFeatureMatrix {
    pub fn new(
        video_id: impl Into<String>,
        rows: usize,
        dim: usize,
        data: Vec<f64>,
        duration_s: f64,
    ) -> Result<Self> {
        let video_id = video_id.into();
        if rows == 0 || dim == 0 {
            return Err(Error::DimensionMismatch {
                record: format!("video {video_id}"),
                expected: "at least one snippet and one dimension".into(),
                found: format!("{rows}x{dim}"),
            });
        }
        if data.len() != rows * dim {
            return Err(Error::DimensionMismatch {
                record: format!("video {video_id}"),
                expected: format!("{} values ({rows}x{dim})", rows * dim),
                found: format!("{} values", data.len()),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                record: format!("features of video {video_id}"),
                index,
            });
        }
        if !(duration_s.is_finite() && duration_s > 0.0) {
            return Err(Error::InvalidBundle(format!(
                "video {video_id} has non-positive duration {duration_s}"
            )));
        }
        Ok(Self {
            video_id,
            duration_s,
            rows,
            dim,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Time span `[begin_s, end_s)` covered by snippet `i`.
    pub fn snippet_span(&self, i: usize) -> (f64, f64) {
        let width = self.duration_s / self.rows as f64;
        (i as f64 * width, (i + 1) as f64 * width)
    }
}

/// Text-encoder output for one (simple) query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEmbedding {
    pub query_id: String,
    pub text: String,
    pub embedding: Vec<f64>,
}

/// Correlation of every snippet of a video with one query.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub video_id: String,
    pub query_id: String,
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Half-open snippet interval `[begin, end)`; never empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interval {
    begin: usize,
    end: usize,
}

impl Interval {
    pub fn new(begin: usize, end: usize) -> Result<Self> {
        if begin < end {
            Ok(Self { begin, end })
        } else {
            Err(Error::usage(format!("empty interval [{begin}, {end})")))
        }
    }

    pub fn begin(self) -> usize {
        self.begin
    }

    pub fn end(self) -> usize {
        self.end
    }

    pub fn len(self) -> usize {
        self.end - self.begin
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn contains(self, index: usize) -> bool {
        self.begin <= index && index < self.end
    }

    pub fn intersection_len(self, other: Self) -> usize {
        self.end
            .min(other.end)
            .saturating_sub(self.begin.max(other.begin))
    }

    pub fn overlaps(self, other: Self) -> bool {
        self.intersection_len(other) > 0
    }

    /// Checks the interval fits a video of `snippets` snippets.
    pub fn check_within(self, snippets: usize) -> Result<()> {
        if self.end <= snippets {
            Ok(())
        } else {
            Err(Error::usage(format!(
                "interval {self} exceeds video length {snippets}"
            )))
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.begin, self.end)
    }
}

/// Intersection over union of two snippet intervals.
pub fn interval_iou(a: Interval, b: Interval) -> f64 {
    let inter = a.intersection_len(b);
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Common intersection of all intervals over the length they jointly cover.
pub fn joint_iou(intervals: &[Interval]) -> Result<f64> {
    let (first, rest) = intervals
        .split_first()
        .ok_or_else(|| Error::usage("joint IoU of an empty interval list"))?;
    let lo = rest.iter().fold(first.begin, |acc, iv| acc.max(iv.begin));
    let hi = rest.iter().fold(first.end, |acc, iv| acc.min(iv.end));
    let inter = hi.saturating_sub(lo);
    if inter == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / covered_len(intervals) as f64)
}

/// Total length covered by the union of `intervals` (gaps not counted).
pub(crate) fn covered_len(intervals: &[Interval]) -> usize {
    let mut sorted = intervals.to_vec();
    sorted.sort_unstable();
    let mut total = 0;
    let mut cursor = 0;
    for iv in sorted {
        let start = iv.begin.max(cursor);
        if iv.end > start {
            total += iv.end - start;
        }
        cursor = cursor.max(iv.end);
    }
    total
}

/// Smallest interval covering every input interval.
pub fn union_span(intervals: &[Interval]) -> Result<Interval> {
    let (first, rest) = intervals
        .split_first()
        .ok_or_else(|| Error::usage("union of an empty interval list"))?;
    Ok(rest.iter().fold(*first, |acc, iv| Interval {
        begin: acc.begin.min(iv.begin),
        end: acc.end.max(iv.end),
    }))
}

/// Converts a snippet interval to seconds on a uniform snippet grid.
pub fn snippets_to_seconds(iv: Interval, duration_s: f64, snippets: usize) -> (f64, f64) {
    let n = snippets as f64;
    (
        iv.begin as f64 * duration_s / n,
        iv.end as f64 * duration_s / n,
    )
}

/// IoU of two `(begin_s, end_s)` spans measured in seconds.
pub fn seconds_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredProposal {
    pub interval: Interval,
    pub score: f64,
}

impl ScoredProposal {
    pub fn new(interval: Interval, score: f64) -> Self {
        Self { interval, score }
    }
}

/// One annotated sentence query. `simple_texts` is `None` when the query has
/// not been split yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub video_id: String,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simple_texts: Option<Vec<String>>,
    pub gt_begin_s: f64,
    pub gt_end_s: f64,
}

impl QueryRecord {
    /// Provided simple queries, treating an empty list as absent.
    pub fn provided_splits(&self) -> Option<&[String]> {
        self.simple_texts
            .as_deref()
            .filter(|texts| !texts.is_empty())
    }

    pub fn ground_truth(&self) -> (f64, f64) {
        (self.gt_begin_s, self.gt_end_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinementConfig {
    /// Context strength.
    pub lambda: f64,
    /// Snippets within this distance contribute context.
    pub context_distance: usize,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            context_distance: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalMethod {
    Kmeans,
    Random,
    SlidingWindow,
    AbruptChange,
}

/// How the members of a proposal combination must overlap to be merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeGate {
    /// All members share at least one snippet.
    #[default]
    Joint,
    /// Members form one connected component under pairwise overlap.
    Chain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalConfig {
    pub k: usize,
    pub snippet_count: usize,
    pub proposal_method: ProposalMethod,
    pub merge_enabled: bool,
    pub refine_enabled: bool,
    pub rng_seed: u64,
    pub merge_gate: MergeGate,
    pub combination_cap: u64,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub kmeans_restarts: usize,
    /// Cut threshold for the abrupt-change baseline; `None` uses the mean step.
    pub abrupt_threshold: Option<f64>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: 6,
            snippet_count: 32,
            proposal_method: ProposalMethod::Kmeans,
            merge_enabled: true,
            refine_enabled: true,
            rng_seed: 0,
            merge_gate: MergeGate::Joint,
            combination_cap: 1_000_000,
            kmeans_max_iter: 100,
            kmeans_tol: 1e-6,
            kmeans_restarts: 10,
            abrupt_threshold: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iv(b: usize, e: usize) -> Interval {
        Interval::new(b, e).unwrap()
    }

    #[test]
    fn empty_interval_is_rejected() {
        assert!(Interval::new(3, 3).is_err());
        assert!(Interval::new(4, 2).is_err());
    }

    #[test]
    fn pairwise_iou_examples() {
        assert_eq!(interval_iou(iv(0, 4), iv(0, 4)), 1.0);
        assert_eq!(interval_iou(iv(0, 4), iv(4, 8)), 0.0);
        assert!((interval_iou(iv(0, 4), iv(2, 6)) - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn joint_iou_examples() {
        assert_eq!(joint_iou(&[iv(0, 4)]).unwrap(), 1.0);
        assert_eq!(joint_iou(&[iv(0, 4), iv(2, 6), iv(3, 8)]).unwrap(), 0.125);
        assert_eq!(joint_iou(&[iv(0, 2), iv(4, 6)]).unwrap(), 0.0);
        assert!(joint_iou(&[]).unwrap_err().is_usage());
    }

    #[test]
    fn union_span_examples() {
        assert_eq!(union_span(&[iv(1, 3)]).unwrap(), iv(1, 3));
        assert_eq!(union_span(&[iv(1, 3), iv(2, 5)]).unwrap(), iv(1, 5));
        assert_eq!(union_span(&[iv(0, 2), iv(6, 8)]).unwrap(), iv(0, 8));
        assert!(union_span(&[]).is_err());
    }

    #[test]
    fn seconds_conversion_examples() {
        assert_eq!(snippets_to_seconds(iv(0, 32), 30.59, 32), (0.0, 30.59));
        assert_eq!(snippets_to_seconds(iv(8, 16), 32.0, 32), (8.0, 16.0));
        assert_eq!(snippets_to_seconds(iv(3, 5), 10.0, 4), (7.5, 12.5));
    }

    #[test]
    fn covered_length_ignores_gaps() {
        assert_eq!(covered_len(&[iv(0, 2), iv(6, 8)]), 4);
        assert_eq!(covered_len(&[iv(0, 5), iv(1, 2), iv(4, 9)]), 9);
    }

    fn arb_interval(max: usize) -> impl Strategy<Value = Interval> {
        (0..max)
            .prop_flat_map(move |b| (Just(b), b + 1..=max))
            .prop_map(|(b, e)| iv(b, e))
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_interval(40), b in arb_interval(40)) {
            let ab = interval_iou(a, b);
            prop_assert_eq!(ab, interval_iou(b, a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab == 1.0, a == b);
            prop_assert_eq!(ab == 0.0, !a.overlaps(b));
            prop_assert_eq!(joint_iou(&[a, b]).unwrap(), ab);
        }

        #[test]
        fn joint_iou_is_permutation_invariant_and_monotone(
            ivs in proptest::collection::vec(arb_interval(30), 1..6),
            extra in arb_interval(30),
        ) {
            let base = joint_iou(&ivs).unwrap();
            let mut reversed = ivs.clone();
            reversed.reverse();
            prop_assert_eq!(base, joint_iou(&reversed).unwrap());
            let mut grown = ivs.clone();
            grown.push(extra);
            prop_assert!(joint_iou(&grown).unwrap() <= base);
        }

        #[test]
        fn seconds_round_trip_on_even_grid(b in 0usize..32, len in 1usize..32, width in 1u32..5) {
            let e = (b + len).min(32);
            prop_assume!(b < e);
            let duration = 32.0 * f64::from(width);
            let (bs, es) = snippets_to_seconds(iv(b, e), duration, 32);
            let w = duration / 32.0;
            prop_assert_eq!((bs / w).round() as usize, b);
            prop_assert_eq!((es / w).round() as usize, e);
        }
    }
}
