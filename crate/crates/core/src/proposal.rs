//! Temporal proposal generation: k-means over (refined) snippet features,
//! plus the random, sliding-window and abrupt-change baselines.

use rand::Rng;

use crate::bundle::{Bundle, QueryTarget};
use crate::correlation::get_scores;
use crate::error::{Error, Result};
use crate::merge::score_proposal;
use crate::model::{
    Interval, ProposalMethod, RefinementConfig, RetrievalConfig, ScoredProposal,
    SnippetFeatureMatrix,
};
use crate::refine::refine_features;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// Cluster of every snippet, each `< k`.
    pub labels: Vec<usize>,
    /// `k x dim`, row-major.
    pub centroids: Vec<f64>,
    pub k: usize,
    pub dim: usize,
    pub iterations_run: usize,
    /// Within-cluster SSE after every Lloyd update, in order.
    pub sse_history: Vec<f64>,
}

impl ClusterAssignment {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn sse(&self) -> f64 {
        self.sse_history.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub max_iter: usize,
    pub tol: f64,
    /// Independently seeded runs; the lowest final SSE wins.
    pub restarts: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
            restarts: 10,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy k-means++: each new centre is the best of a few D^2-weighted
/// candidates by resulting potential.
fn init_centroids(points: &SnippetFeatureMatrix, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = points.rows();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centers = vec![rng.random_range(0..n)];
    let mut closest: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(centers[0])))
        .collect();
    while centers.len() < k {
        let potential: f64 = closest.iter().sum();
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for _ in 0..trials {
            let candidate = if potential > 0.0 {
                let mut target = rng.random::<f64>() * potential;
                let mut pick = n - 1;
                for (i, &d) in closest.iter().enumerate() {
                    if target < d {
                        pick = i;
                        break;
                    }
                    target -= d;
                }
                pick
            } else {
                // every point coincides with a centre
                (0..n).find(|i| !centers.contains(i)).unwrap_or(0)
            };
            let updated: Vec<f64> = (0..n)
                .map(|i| closest[i].min(sq_dist(points.row(i), points.row(candidate))))
                .collect();
            let pot: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|(_, p, _)| pot < *p) {
                best = Some((candidate, pot, updated));
            }
        }
        let (candidate, _, updated) = best.expect("at least one trial");
        centers.push(candidate);
        closest = updated;
    }
    centers
}

fn assign(points: &SnippetFeatureMatrix, centroids: &[f64], k: usize, labels: &mut [usize]) {
    let dim = points.dim();
    for (i, label) in labels.iter_mut().enumerate() {
        let row = points.row(i);
        let mut best = (0, f64::INFINITY);
        for c in 0..k {
            let d = sq_dist(row, &centroids[c * dim..(c + 1) * dim]);
            if d < best.1 {
                best = (c, d);
            }
        }
        *label = best.0;
    }
}

/// Moves the point farthest from its centroid (taken from a cluster with at
/// least two members) into each empty cluster.
fn repair_empty(
    points: &SnippetFeatureMatrix,
    centroids: &mut [f64],
    k: usize,
    labels: &mut [usize],
) {
    let dim = points.dim();
    loop {
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&l| sizes[l] += 1);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far = None;
        for (i, &l) in labels.iter().enumerate() {
            if sizes[l] < 2 {
                continue;
            }
            let d = sq_dist(points.row(i), &centroids[l * dim..(l + 1) * dim]);
            if far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        let Some((i, _)) = far else { return };
        labels[i] = empty;
        centroids[empty * dim..(empty + 1) * dim].copy_from_slice(points.row(i));
    }
}

fn update(points: &SnippetFeatureMatrix, labels: &[usize], k: usize, centroids: &mut [f64]) -> f64 {
    let dim = points.dim();
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, x) in sums[l * dim..(l + 1) * dim].iter_mut().zip(points.row(i)) {
            *s += x;
        }
    }
    let mut movement: f64 = 0.0;
    for c in 0..k {
        if counts[c] == 0 {
            continue;
        }
        let mut shift = 0.0;
        for d in 0..dim {
            let mean = sums[c * dim + d] / counts[c] as f64;
            shift += (mean - centroids[c * dim + d]).powi(2);
            centroids[c * dim + d] = mean;
        }
        movement = movement.max(shift.sqrt());
    }
    movement
}

fn sse(points: &SnippetFeatureMatrix, labels: &[usize], centroids: &[f64]) -> f64 {
    let dim = points.dim();
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(points.row(i), &centroids[l * dim..(l + 1) * dim]))
        .sum()
}

/// Seeded k-means (greedy k-means++ seeding, Lloyd iterations), best of
/// `params.restarts` runs.
///
/// `k` is clamped to the number of points. Nearest-centroid ties go to the
/// lowest centroid index; SSE ties to the earliest run.
pub fn kmeans(
    points: &SnippetFeatureMatrix,
    k: usize,
    seed: u64,
    params: KMeansParams,
) -> Result<ClusterAssignment> {
    if k == 0 {
        return Err(Error::usage("k must be at least 1"));
    }
    let mut rng = seed::rng(seed);
    let mut best: Option<ClusterAssignment> = None;
    for _ in 0..params.restarts.max(1) {
        let run = lloyd(points, k.min(points.rows()), &mut rng, params);
        if best.as_ref().is_none_or(|b| run.sse() < b.sse()) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one run"))
}

fn lloyd(
    points: &SnippetFeatureMatrix,
    k: usize,
    rng: &mut impl Rng,
    params: KMeansParams,
) -> ClusterAssignment {
    let n = points.rows();
    let dim = points.dim();

    let mut centroids: Vec<f64> = init_centroids(points, k, rng)
        .into_iter()
        .flat_map(|i| points.row(i).to_vec())
        .collect();
    let mut labels = vec![0; n];
    let mut sse_history = Vec::new();
    let mut iterations_run = 0;
    while iterations_run < params.max_iter {
        let previous = labels.clone();
        assign(points, &centroids, k, &mut labels);
        repair_empty(points, &mut centroids, k, &mut labels);
        let movement = update(points, &labels, k, &mut centroids);
        iterations_run += 1;
        sse_history.push(sse(points, &labels, &centroids));
        if movement < params.tol || (iterations_run > 1 && labels == previous) {
            break;
        }
    }
    ClusterAssignment {
        labels,
        centroids,
        k,
        dim,
        iterations_run,
        sse_history,
    }
}

fn sort_dedup(mut intervals: Vec<Interval>) -> Vec<Interval> {
    intervals.sort_by_key(|iv| (iv.begin(), iv.len()));
    intervals.dedup();
    intervals
}

/// One span `[first, last + 1)` per non-empty cluster, ordered by begin then
/// length, duplicates removed.
pub fn clusters_to_proposals(labels: &[usize], k: usize) -> Vec<Interval> {
    let mut spans: Vec<Option<(usize, usize)>> =
        vec![None; k.max(labels.iter().max().map_or(0, |m| m + 1))];
    for (i, &l) in labels.iter().enumerate() {
        let span = spans[l].get_or_insert((i, i));
        span.1 = i;
    }
    sort_dedup(
        spans
            .into_iter()
            .flatten()
            .map(|(b, e)| Interval::new(b, e + 1).expect("non-empty span"))
            .collect(),
    )
}

/// `k` uniformly drawn intervals: begin in `[0, n)`, end in `(begin, n]`.
pub fn random_proposals(snippets: usize, k: usize, seed: u64) -> Result<Vec<Interval>> {
    if snippets == 0 {
        return Err(Error::usage("video has no snippets"));
    }
    let mut rng = seed::rng(seed);
    Ok((0..k)
        .map(|_| {
            let b = rng.random_range(0..snippets);
            let e = rng.random_range(b + 1..=snippets);
            Interval::new(b, e).expect("b < e")
        })
        .collect())
}

/// Windows of width n/4, n/2 and 3n/4 at stride n/8.
pub fn sliding_window_proposals(snippets: usize) -> Result<Vec<Interval>> {
    if snippets < 8 {
        return Err(Error::usage(format!(
            "sliding windows need at least 8 snippets, got {snippets}"
        )));
    }
    let stride = snippets / 8;
    let mut out = Vec::new();
    for width in [snippets / 4, snippets / 2, 3 * snippets / 4] {
        let mut begin = 0;
        while begin + width <= snippets {
            out.push(Interval::new(begin, begin + width)?);
            begin += stride;
        }
    }
    Ok(sort_dedup(out))
}

/// Segments between cuts where consecutive scores jump by more than
/// `threshold` (default: the mean absolute step).
pub fn abrupt_change_proposals(scores: &[f64], threshold: Option<f64>) -> Result<Vec<Interval>> {
    let n = scores.len();
    if n < 2 {
        return Err(Error::usage(
            "abrupt-change proposals need at least 2 snippets",
        ));
    }
    let steps: Vec<f64> = scores.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let tau = threshold.unwrap_or_else(|| steps.iter().sum::<f64>() / steps.len() as f64);
    let mut out = Vec::new();
    let mut begin = 0;
    for (m, &step) in steps.iter().enumerate() {
        if step > tau {
            out.push(Interval::new(begin, m + 1)?);
            begin = m + 1;
        }
    }
    out.push(Interval::new(begin, n)?);
    Ok(out)
}

/// Scored proposals of one video for one text of a query.
pub fn generate_proposals(
    bundle: &Bundle,
    video_id: &str,
    query_id: &str,
    target: QueryTarget,
    cfg: &RetrievalConfig,
    refinement: &RefinementConfig,
) -> Result<Vec<ScoredProposal>> {
    let scores = get_scores(bundle, video_id, query_id, target)?;
    let features = bundle.features(video_id)?;
    let n = features.rows();
    let seed = seed::derive(cfg.rng_seed, &[video_id, query_id, &target.to_string()]);

    let intervals = match cfg.proposal_method {
        ProposalMethod::Kmeans => {
            let refined = if cfg.refine_enabled {
                refine_features(features, &scores, refinement)?
            } else {
                features.clone()
            };
            let params = KMeansParams {
                max_iter: cfg.kmeans_max_iter,
                tol: cfg.kmeans_tol,
                restarts: cfg.kmeans_restarts,
            };
            let assignment = kmeans(&refined, cfg.k, seed, params)?;
            clusters_to_proposals(&assignment.labels, assignment.k)
        }
        ProposalMethod::Random => random_proposals(n, cfg.k, seed)?,
        ProposalMethod::SlidingWindow => sliding_window_proposals(n)?,
        ProposalMethod::AbruptChange => {
            abrupt_change_proposals(&scores.scores, cfg.abrupt_threshold)?
        }
    };
    Ok(intervals
        .into_iter()
        .map(|iv| ScoredProposal::new(iv, score_proposal(&scores.scores, iv)))
        .collect())
}
