use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use vmr_core::bundle::{load_bundle, write_bundle, ScoreMode};
use vmr_core::eval::{self, ProbeReport, DEFAULT_MUS};
use vmr_core::merge::{retrieve, ResultLine};
use vmr_core::split::Lexicon;
use vmr_core::synth::{generate_scenario, ScenarioSpec};
use vmr_core::{MergeGate, ProposalMethod, RefinementConfig, RetrievalConfig};

/// Training-free video moment retrieval.
#[derive(Parser, Debug)]
#[command(name = "vmr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load a bundle and report its shape
    Validate { manifest: PathBuf },

    /// Retrieve ranked moments for every query of a bundle
    Retrieve {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Clusters per video
        #[arg(long, default_value_t = 6)]
        k: usize,
        /// Context mixing strength
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        /// Context window radius in snippets
        #[arg(long, default_value_t = 2)]
        ln: usize,
        /// Snippets per video
        #[arg(long, default_value_t = 32)]
        lv: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = MethodArg::Kmeans)]
        method: MethodArg,
        #[arg(long)]
        no_refine: bool,
        /// Score the raw query directly instead of merging simple queries
        #[arg(long)]
        no_merge: bool,
        /// Which proposal combinations may merge (default: joint)
        #[arg(long, value_enum)]
        gate: Option<GateArg>,
        /// Worker threads (default: all cores)
        #[arg(long)]
        workers: Option<usize>,
    },

    /// Score a results file against the bundle's ground truth
    Eval {
        manifest: PathBuf,
        results: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_MUS)]
        mu: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize])]
        n: Vec<usize>,
        /// Write the metrics JSON here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Prepend p seconds of unrelated content to every video
    Ood {
        manifest: PathBuf,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },

    /// Text-to-snippet and snippet-to-text correlation probes
    Prelim {
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },

    /// Write a synthetic bundle with planted moments
    Synth {
        /// Scenario JSON (default scenario when omitted)
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Kmeans,
    Random,
    Sliding,
    Abrupt,
}

impl From<MethodArg> for ProposalMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Kmeans => ProposalMethod::Kmeans,
            MethodArg::Random => ProposalMethod::Random,
            MethodArg::Sliding => ProposalMethod::SlidingWindow,
            MethodArg::Abrupt => ProposalMethod::AbruptChange,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GateArg {
    Joint,
    Chain,
}

impl From<GateArg> for MergeGate {
    fn from(g: GateArg) -> Self {
        match g {
            GateArg::Joint => MergeGate::Joint,
            GateArg::Chain => MergeGate::Chain,
        }
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Data(_) => 1,
            Failure::Usage(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) => f.write_str(m),
        }
    }
}

impl From<vmr_core::Error> for Failure {
    fn from(e: vmr_core::Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("vmr: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("vmr: {f}");
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Validate { manifest } => validate(&manifest),
        Command::Retrieve {
            manifest,
            out,
            k,
            lambda,
            ln,
            lv,
            seed,
            method,
            no_refine,
            no_merge,
            gate,
            workers,
        } => {
            if no_merge && gate.is_some() {
                return Err(Failure::Usage(
                    "--gate has no effect with --no-merge".into(),
                ));
            }
            if workers == Some(0) {
                return Err(Failure::Usage("--workers must be at least 1".into()));
            }
            let cfg = RetrievalConfig {
                k,
                snippet_count: lv,
                proposal_method: method.into(),
                merge_enabled: !no_merge,
                refine_enabled: !no_refine,
                rng_seed: seed,
                merge_gate: gate.map_or(MergeGate::Joint, Into::into),
                ..RetrievalConfig::default()
            };
            let refinement = RefinementConfig {
                lambda,
                context_distance: ln,
            };
            retrieve_all(&manifest, &out, &cfg, &refinement, workers)
        }
        Command::Eval {
            manifest,
            results,
            mu,
            n,
            out,
        } => evaluate(&manifest, &results, &n, &mu, out.as_deref()),
        Command::Ood {
            manifest,
            p,
            seed,
            out_dir,
        } => {
            let bundle = load_bundle(&manifest)?;
            let shifted = eval::ood_shift(&bundle, p, seed)?;
            let path = write_bundle(&shifted, &out_dir)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Prelim { manifest, seed } => prelim(&manifest, seed),
        Command::Synth {
            spec,
            seed,
            out_dir,
        } => synth(spec.as_deref(), seed, &out_dir),
    }
}

#[derive(Serialize)]
struct BundleSummary {
    videos: usize,
    queries: usize,
    snippet_count: usize,
    embedding_dim: usize,
    score_mode: ScoreMode,
}

fn validate(manifest: &Path) -> Outcome {
    let bundle = load_bundle(manifest)?;
    let summary = BundleSummary {
        videos: bundle.videos().len(),
        queries: bundle.queries().len(),
        snippet_count: bundle.snippet_count(),
        embedding_dim: bundle.embedding_dim(),
        score_mode: bundle.score_mode(),
    };
    print_json(&summary)
}

fn retrieve_all(
    manifest: &Path,
    out: &Path,
    cfg: &RetrievalConfig,
    refinement: &RefinementConfig,
    workers: Option<usize>,
) -> Outcome {
    let mut bundle = load_bundle(manifest)?;
    if bundle.snippet_count() != cfg.snippet_count {
        bundle = bundle.with_snippet_count(cfg.snippet_count)?;
    }
    let lexicon = Lexicon::from_env()?;

    let mut records: Vec<_> = bundle.queries().iter().collect();
    records.sort_by(|a, b| a.query_id.cmp(&b.query_id));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Data(format!("cannot start worker pool: {e}")))?;
    let lines = pool.install(|| {
        records
            .par_iter()
            .map(|record| {
                retrieve(&bundle, record, &lexicon, cfg, refinement).map(|r| ResultLine::from(&r))
            })
            .collect::<vmr_core::Result<Vec<_>>>()
    })?;

    let mut text = String::new();
    for line in &lines {
        text.push_str(&to_json(line)?);
        text.push('\n');
    }
    write_file(out, text.as_bytes())?;
    eprintln!("retrieved {} queries -> {}", lines.len(), out.display());
    Ok(())
}

fn read_results(path: &Path) -> std::result::Result<(Vec<ResultLine>, Vec<u8>), Failure> {
    let bytes = fs::read(path).map_err(|e| io_failure(path, e))?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let mut lines = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line: ResultLine = serde_json::from_str(raw)
            .map_err(|e| Failure::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if !seen.insert(line.query_id.clone()) {
            return Err(Failure::Data(format!(
                "{}:{}: duplicate query {}",
                path.display(),
                i + 1,
                line.query_id
            )));
        }
        lines.push(line);
    }
    if lines.is_empty() {
        return Err(Failure::Data(format!("{}: no results", path.display())));
    }
    Ok((lines, bytes))
}

/// Hash of the results bytes and the evaluation thresholds.
fn fingerprint(results: &[u8], ns: &[usize], mus: &[f64]) -> String {
    let mut h = Sha256::new();
    h.update(results);
    for n in ns {
        h.update(format!("n={n};").as_bytes());
    }
    for mu in mus {
        h.update(format!("mu={mu};").as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn evaluate(
    manifest: &Path,
    results: &Path,
    ns: &[usize],
    mus: &[f64],
    out: Option<&Path>,
) -> Outcome {
    let bundle = load_bundle(manifest)?;
    let (lines, bytes) = read_results(results)?;
    let items = eval::eval_items(&bundle, &lines)?;
    let report = eval::evaluate(&items, ns, mus, fingerprint(&bytes, ns, mus))?;
    eprint!("{}", report.table());
    match out {
        Some(path) => write_file(path, format!("{}\n", to_json(&report)?).as_bytes()),
        None => print_json(&report),
    }
}

#[derive(Serialize)]
struct PrelimReport {
    text_to_snippet: ProbeReport,
    snippet_to_text: ProbeReport,
}

fn prelim(manifest: &Path, seed: u64) -> Outcome {
    let bundle = load_bundle(manifest)?;
    let report = PrelimReport {
        text_to_snippet: eval::prelim_text_retrieval(&bundle)?,
        snippet_to_text: eval::prelim_snippet_retrieval(&bundle, seed)?,
    };
    for (name, r) in [
        ("R^t", &report.text_to_snippet),
        ("R^s", &report.snippet_to_text),
    ] {
        let pct = r
            .percentage
            .map_or_else(|| "n/a".to_string(), |p| format!("{p:.2}"));
        eprintln!(
            "{name:<4} {pct:>8}  ({}/{} evaluated, {} excluded)",
            r.successes, r.evaluated, r.excluded
        );
    }
    print_json(&report)
}

#[derive(Serialize)]
struct PlantedMoment<'a> {
    query_id: &'a str,
    video_id: &'a str,
    begin_snippet: usize,
    end_snippet: usize,
    begin_s: f64,
    end_s: f64,
}

fn synth(spec: Option<&Path>, seed: u64, out_dir: &Path) -> Outcome {
    let spec: ScenarioSpec = match spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => ScenarioSpec::default(),
    };
    let scenario = generate_scenario(&spec, seed)?;
    let manifest = write_bundle(&scenario.bundle, out_dir)?;
    let expected: Vec<PlantedMoment> = scenario
        .expected
        .iter()
        .map(|e| PlantedMoment {
            query_id: &e.query_id,
            video_id: &e.video_id,
            begin_snippet: e.interval.begin(),
            end_snippet: e.interval.end(),
            begin_s: e.begin_s,
            end_s: e.end_s,
        })
        .collect();
    write_file(
        &out_dir.join("expected.json"),
        format!("{}\n", to_json(&expected)?).as_bytes(),
    )?;
    println!("{}", manifest.display());
    Ok(())
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> std::result::Result<String, Failure> {
    serde_json::to_string(value).map_err(|e| Failure::Data(format!("serialize: {e}")))
}

fn print_json<T: Serialize>(value: &T) -> Outcome {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::Data(format!("serialize: {e}")))?;
    let mut stdout = io::stdout().lock();
    writeln!(stdout, "{text}").map_err(|e| Failure::Data(format!("stdout: {e}")))
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_failure(path, e))
}
