//! On-disk dataset bundle: a JSON manifest, headerless little-endian `f32`
//! feature binaries, a JSON-lines query file and, depending on the score mode,
//! per-query embeddings or directly supplied score vectors.
//!
//! ```text
//! manifest.json
//! queries.jsonl
//! features/{video_id}.f32               n_raw_snippets x embedding_dim, row-major
//! scores/{video_id}/{query_id}.{t}.f32  snippet_count values    (direct_scores)
//! embeddings/{query_id}.{t}.f32         embedding_dim values    (embeddings)
//! ```
//!
//! `t` is the simple-query index, or `raw` for the unsplit sentence.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{QueryRecord, SnippetFeatureMatrix};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const QUERIES_FILE: &str = "queries.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Embeddings,
    DirectScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestVideo {
    pub video_id: String,
    pub duration_s: f64,
    pub feature_file: String,
    pub n_raw_snippets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format_version: u32,
    pub embedding_dim: usize,
    pub snippet_count: usize,
    pub videos: Vec<ManifestVideo>,
    pub queries_file: String,
    pub score_mode: ScoreMode,
}

/// Which text of a query record a score vector or embedding belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QueryTarget {
    Simple(usize),
    Raw,
}

impl fmt::Display for QueryTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Simple(t) => write!(f, "{t}"),
            Self::Raw => f.write_str("raw"),
        }
    }
}

/// Raw (un-resampled) features of one video, exactly as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    pub duration_s: f64,
    pub n_raw_snippets: usize,
    pub raw_features: Vec<f32>,
}

/// Everything needed to assemble a [`Bundle`].
#[derive(Debug, Clone, Default)]
pub struct BundleParts {
    pub embedding_dim: usize,
    pub snippet_count: usize,
    pub score_mode: Option<ScoreMode>,
    pub videos: Vec<VideoRecord>,
    pub queries: Vec<QueryRecord>,
    pub embeddings: BTreeMap<(String, QueryTarget), Vec<f32>>,
    pub scores: BTreeMap<(String, QueryTarget), Vec<f32>>,
}

/// A validated, immutable dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    embedding_dim: usize,
    snippet_count: usize,
    score_mode: ScoreMode,
    videos: Vec<VideoRecord>,
    features: Vec<SnippetFeatureMatrix>,
    video_index: BTreeMap<String, usize>,
    queries: Vec<QueryRecord>,
    query_index: BTreeMap<String, usize>,
    embeddings: BTreeMap<(String, QueryTarget), Vec<f32>>,
    scores: BTreeMap<(String, QueryTarget), Vec<f32>>,
}

fn check_id(kind: &str, id: &str) -> Result<()> {
    if id.is_empty() || id == "." || id == ".." || id.contains(['/', '\\']) {
        return Err(Error::InvalidBundle(format!(
            "{kind} id {id:?} cannot be used as a file name"
        )));
    }
    Ok(())
}

fn check_finite(values: &[f32], record: impl FnOnce() -> String) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            record: record(),
            index,
        }),
        None => Ok(()),
    }
}

impl Bundle {
    pub fn from_parts(parts: BundleParts) -> Result<Self> {
        let BundleParts {
            embedding_dim,
            snippet_count,
            score_mode,
            videos,
            queries,
            embeddings,
            scores,
        } = parts;
        let score_mode = score_mode.unwrap_or(if scores.is_empty() {
            ScoreMode::Embeddings
        } else {
            ScoreMode::DirectScores
        });
        if videos.is_empty() {
            return Err(Error::InvalidBundle(
                "bundle must contain at least one video".into(),
            ));
        }
        if embedding_dim == 0 || snippet_count == 0 {
            return Err(Error::InvalidBundle(format!(
                "embedding_dim ({embedding_dim}) and snippet_count ({snippet_count}) must be positive"
            )));
        }

        let mut video_index = BTreeMap::new();
        let mut features = Vec::with_capacity(videos.len());
        for (i, video) in videos.iter().enumerate() {
            check_id("video", &video.video_id)?;
            if video_index.insert(video.video_id.clone(), i).is_some() {
                return Err(Error::InvalidBundle(format!(
                    "duplicate video id {}",
                    video.video_id
                )));
            }
            let expected = video.n_raw_snippets * embedding_dim;
            if video.n_raw_snippets == 0 || video.raw_features.len() != expected {
                return Err(Error::DimensionMismatch {
                    record: format!("video {}", video.video_id),
                    expected: format!("{} rows of {embedding_dim} values", video.n_raw_snippets),
                    found: format!(
                        "{} values ({:.2} rows)",
                        video.raw_features.len(),
                        video.raw_features.len() as f64 / embedding_dim as f64
                    ),
                });
            }
            check_finite(&video.raw_features, || {
                format!("features of video {}", video.video_id)
            })?;
            let data = resample_features(
                &video.raw_features,
                video.n_raw_snippets,
                embedding_dim,
                snippet_count,
            );
            features.push(SnippetFeatureMatrix::new(
                video.video_id.clone(),
                snippet_count,
                embedding_dim,
                data,
                video.duration_s,
            )?);
        }

        let mut query_index = BTreeMap::new();
        for (i, query) in queries.iter().enumerate() {
            check_id("query", &query.query_id)?;
            if query_index.insert(query.query_id.clone(), i).is_some() {
                return Err(Error::InvalidBundle(format!(
                    "duplicate query id {}",
                    query.query_id
                )));
            }
            let video = video_index
                .get(&query.video_id)
                .map(|&v| &videos[v])
                .ok_or_else(|| {
                    Error::MissingEntry(format!(
                        "query {} refers to unknown video {}",
                        query.query_id, query.video_id
                    ))
                })?;
            let (b, e) = query.ground_truth();
            if !(b.is_finite() && e.is_finite() && 0.0 <= b && b < e && e <= video.duration_s) {
                return Err(Error::GroundTruthOutOfRange {
                    query_id: query.query_id.clone(),
                    video_id: query.video_id.clone(),
                    begin_s: b,
                    end_s: e,
                    duration_s: video.duration_s,
                });
            }
            if query.raw_text.trim().is_empty() {
                return Err(Error::InvalidBundle(format!(
                    "query {} has empty raw_text",
                    query.query_id
                )));
            }
        }

        let (payload, expected_len, other) = match score_mode {
            ScoreMode::Embeddings => (&embeddings, embedding_dim, &scores),
            ScoreMode::DirectScores => (&scores, snippet_count, &embeddings),
        };
        if !other.is_empty() {
            return Err(Error::InvalidBundle(format!(
                "{score_mode:?} bundle carries payload of the other score mode"
            )));
        }
        for ((query_id, target), values) in payload {
            if !query_index.contains_key(query_id) {
                return Err(Error::MissingEntry(format!(
                    "payload for unknown query {query_id}"
                )));
            }
            if values.len() != expected_len {
                return Err(Error::DimensionMismatch {
                    record: format!("query {query_id} ({target})"),
                    expected: format!("{expected_len} values"),
                    found: format!("{} values", values.len()),
                });
            }
            check_finite(values, || format!("query {query_id} ({target})"))?;
        }
        for query in &queries {
            let have = (0..)
                .take_while(|&t| {
                    payload.contains_key(&(query.query_id.clone(), QueryTarget::Simple(t)))
                })
                .count();
            let need = query.provided_splits().map_or(1, <[String]>::len);
            if have < need {
                return Err(Error::MissingScore {
                    video_id: query.video_id.clone(),
                    query_id: query.query_id.clone(),
                    target: have.to_string(),
                });
            }
        }

        Ok(Self {
            embedding_dim,
            snippet_count,
            score_mode,
            videos,
            features,
            video_index,
            queries,
            query_index,
            embeddings,
            scores,
        })
    }

    pub fn into_parts(self) -> BundleParts {
        BundleParts {
            embedding_dim: self.embedding_dim,
            snippet_count: self.snippet_count,
            score_mode: Some(self.score_mode),
            videos: self.videos,
            queries: self.queries,
            embeddings: self.embeddings,
            scores: self.scores,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn snippet_count(&self) -> usize {
        self.snippet_count
    }

    pub fn score_mode(&self) -> ScoreMode {
        self.score_mode
    }

    pub fn videos(&self) -> &[VideoRecord] {
        &self.videos
    }

    pub fn queries(&self) -> &[QueryRecord] {
        &self.queries
    }

    pub fn video(&self, video_id: &str) -> Result<&VideoRecord> {
        self.video_index
            .get(video_id)
            .map(|&i| &self.videos[i])
            .ok_or_else(|| Error::MissingEntry(format!("unknown video {video_id}")))
    }

    /// Features resampled to [`Bundle::snippet_count`] rows.
    pub fn features(&self, video_id: &str) -> Result<&SnippetFeatureMatrix> {
        self.video_index
            .get(video_id)
            .map(|&i| &self.features[i])
            .ok_or_else(|| Error::MissingEntry(format!("unknown video {video_id}")))
    }

    pub fn query(&self, query_id: &str) -> Result<&QueryRecord> {
        self.query_index
            .get(query_id)
            .map(|&i| &self.queries[i])
            .ok_or_else(|| Error::MissingEntry(format!("unknown query {query_id}")))
    }

    pub fn stored_scores(&self, query_id: &str, target: QueryTarget) -> Option<&[f32]> {
        self.scores
            .get(&(query_id.to_owned(), target))
            .map(Vec::as_slice)
    }

    pub fn query_embedding(&self, query_id: &str, target: QueryTarget) -> Option<&[f32]> {
        self.embeddings
            .get(&(query_id.to_owned(), target))
            .map(Vec::as_slice)
    }

    /// Number of consecutive simple-query payloads stored for `query_id`.
    pub fn simple_target_count(&self, query_id: &str) -> usize {
        let map = match self.score_mode {
            ScoreMode::Embeddings => &self.embeddings,
            ScoreMode::DirectScores => &self.scores,
        };
        (0..)
            .take_while(|&t| map.contains_key(&(query_id.to_owned(), QueryTarget::Simple(t))))
            .count()
    }

    /// Re-derives the resampled features at a different snippet count.
    /// Direct scores are fixed to the stored length, so only embeddings
    /// bundles can be resampled.
    pub fn with_snippet_count(self, snippet_count: usize) -> Result<Self> {
        if snippet_count == self.snippet_count {
            return Ok(self);
        }
        if self.score_mode == ScoreMode::DirectScores {
            return Err(Error::usage(format!(
                "direct_scores bundle is fixed at {} snippets, cannot resample to {snippet_count}",
                self.snippet_count
            )));
        }
        let mut parts = self.into_parts();
        parts.snippet_count = snippet_count;
        Self::from_parts(parts)
    }
}

/// Pools `n` rows of width `dim` into `target` rows.
///
/// With `n >= target` row `j` is the mean of raw rows
/// `[round(j n / target), round((j + 1) n / target))`; otherwise row `j`
/// copies the raw row nearest to its centre.
pub fn resample_features<T: Copy + Into<f64>>(
    raw: &[T],
    n: usize,
    dim: usize,
    target: usize,
) -> Vec<f64> {
    assert!(n >= 1 && dim >= 1 && target >= 1 && raw.len() == n * dim);
    let mut out = Vec::with_capacity(target * dim);
    if n >= target {
        // round-half-up of j * n / target in integer arithmetic
        let bound = |j: usize| (2 * j * n + target) / (2 * target);
        for j in 0..target {
            let (lo, hi) = (bound(j), bound(j + 1));
            let count = (hi - lo) as f64;
            for d in 0..dim {
                let sum: f64 = (lo..hi).map(|r| raw[r * dim + d].into()).sum();
                out.push(sum / count);
            }
        }
    } else {
        for j in 0..target {
            let src = ((2 * j + 1) * n) / (2 * target);
            out.extend(raw[src * dim..(src + 1) * dim].iter().map(|&v| v.into()));
        }
    }
    out
}

fn read_f32_file(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::InvalidBundle(format!(
            "{} has {} bytes, not a whole number of f32 values",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_f32_file(path: &Path, values: &[f32]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn payload_path(
    root: &Path,
    mode: ScoreMode,
    video_id: &str,
    query_id: &str,
    target: QueryTarget,
) -> PathBuf {
    match mode {
        ScoreMode::DirectScores => root
            .join("scores")
            .join(video_id)
            .join(format!("{query_id}.{target}.f32")),
        ScoreMode::Embeddings => root
            .join("embeddings")
            .join(format!("{query_id}.{target}.f32")),
    }
}

/// Reads `path` if it exists; `Ok(None)` only for a missing file.
fn read_optional(path: &Path) -> Result<Option<Vec<f32>>> {
    match read_f32_file(path) {
        Ok(v) => Ok(Some(v)),
        Err(Error::MissingFile { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Loads and validates the bundle described by `manifest_path`.
pub fn load_bundle(manifest_path: impl AsRef<Path>) -> Result<Bundle> {
    let manifest_path = manifest_path.as_ref();
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: BundleManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: manifest_path.to_owned(),
        source,
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::InvalidBundle(format!(
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }

    let mut videos = Vec::with_capacity(manifest.videos.len());
    for entry in &manifest.videos {
        check_id("video", &entry.video_id)?;
        let raw_features = read_f32_file(&root.join(&entry.feature_file))?;
        videos.push(VideoRecord {
            video_id: entry.video_id.clone(),
            duration_s: entry.duration_s,
            n_raw_snippets: entry.n_raw_snippets,
            raw_features,
        });
    }

    let queries_path = root.join(&manifest.queries_file);
    let file = fs::File::open(&queries_path).map_err(|e| Error::io(&queries_path, e))?;
    let mut queries = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(&queries_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: QueryRecord = serde_json::from_str(&line).map_err(|source| Error::Json {
            path: queries_path.clone(),
            source,
        })?;
        queries.push(record);
    }

    let mut payload = BTreeMap::new();
    let video_ids: HashSet<&str> = manifest
        .videos
        .iter()
        .map(|v| v.video_id.as_str())
        .collect();
    for query in &queries {
        check_id("query", &query.query_id)?;
        if !video_ids.contains(query.video_id.as_str()) {
            continue; // reported by validation
        }
        let path_for = |target| {
            payload_path(
                root,
                manifest.score_mode,
                &query.video_id,
                &query.query_id,
                target,
            )
        };
        for t in 0.. {
            let target = QueryTarget::Simple(t);
            match read_optional(&path_for(target))? {
                Some(values) => {
                    payload.insert((query.query_id.clone(), target), values);
                }
                None => break,
            }
        }
        if let Some(values) = read_optional(&path_for(QueryTarget::Raw))? {
            payload.insert((query.query_id.clone(), QueryTarget::Raw), values);
        }
    }

    let mut parts = BundleParts {
        embedding_dim: manifest.embedding_dim,
        snippet_count: manifest.snippet_count,
        score_mode: Some(manifest.score_mode),
        videos,
        queries,
        ..BundleParts::default()
    };
    match manifest.score_mode {
        ScoreMode::Embeddings => parts.embeddings = payload,
        ScoreMode::DirectScores => parts.scores = payload,
    }
    Bundle::from_parts(parts)
}

/// Writes `bundle` under `dir` and returns the manifest path.
pub fn write_bundle(bundle: &Bundle, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut manifest_videos = Vec::with_capacity(bundle.videos.len());
    for video in &bundle.videos {
        let feature_file = format!("features/{}.f32", video.video_id);
        write_f32_file(&dir.join(&feature_file), &video.raw_features)?;
        manifest_videos.push(ManifestVideo {
            video_id: video.video_id.clone(),
            duration_s: video.duration_s,
            feature_file,
            n_raw_snippets: video.n_raw_snippets,
        });
    }

    let queries_path = dir.join(QUERIES_FILE);
    let file = fs::File::create(&queries_path).map_err(|e| Error::io(&queries_path, e))?;
    let mut out = BufWriter::new(file);
    for query in &bundle.queries {
        let line = serde_json::to_string(query).map_err(|source| Error::Json {
            path: queries_path.clone(),
            source,
        })?;
        writeln!(out, "{line}").map_err(|e| Error::io(&queries_path, e))?;
    }
    out.flush().map_err(|e| Error::io(&queries_path, e))?;

    let payload = match bundle.score_mode {
        ScoreMode::Embeddings => &bundle.embeddings,
        ScoreMode::DirectScores => &bundle.scores,
    };
    for ((query_id, target), values) in payload {
        let video_id = &bundle.query(query_id)?.video_id;
        let path = payload_path(dir, bundle.score_mode, video_id, query_id, *target);
        write_f32_file(&path, values)?;
    }

    let manifest = BundleManifest {
        format_version: FORMAT_VERSION,
        embedding_dim: bundle.embedding_dim,
        snippet_count: bundle.snippet_count,
        videos: manifest_videos,
        queries_file: QUERIES_FILE.into(),
        score_mode: bundle.score_mode,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json {
        path: manifest_path.clone(),
        source,
    })?;
    fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}
