//! Experiment harness behind the `adablock` binary: sweep specs, batch
//! decoding, trace analysis and replay.
//!
//! A spec is a `key = value` file. Global keys choose the predictor, the
//! prompt and the run layout; decode keys (see [`CONFIG_KEYS`]) may appear
//! globally or in `[cell]` sections, and `a|b|c` lists alternatives that
//! expand into a cross product. Cell keys override global ones.
//!
//! ```text
//! predictor = ngram
//! ngram.corpus = corpus.txt
//! prompt_len = 4
//! repetitions = 5
//! tau = 0.9
//!
//! [cell]
//! scheduler = fixed
//! b0 = 16|32|64
//!
//! [cell]
//! scheduler = adaptive
//! ```
//!
//! Each run gets the seed `hash(experiment_seed, seed, repetition)`, where
//! `seed` is the cell's seed value, so cells that differ only in scheduler
//! or block size see identical noise and prompts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{split_escaped, unescape, ConfigError, DecodeConfig, KvDocument, CONFIG_KEYS};
use crate::decoder::{decode, DecodeError, DecodeResult};
use crate::metrics::{
    failure_rates, heatmap_csv, regimes_csv, segment_regimes, step_report_csv, vb_width_series, FailureReport,
    MetricsError, RegimeThresholds,
};
use crate::predictor::{
    build_ngram, build_synthetic, load_trace_predictor, MaskPredictor, NGramModel, NGramOptions, PredictorError,
    SyntheticFieldParams, Tokenization, TracePredictor,
};
use crate::rng::hash_words;
use crate::trace::{read_trace, DecodeTrace, TraceError};
use crate::vocab::{TokenId, Vocabulary, NEWLINE_TOKEN};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("spec line {line}: {reason}")]
    Spec { line: usize, reason: String },
    #[error("invalid spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("predictor: {0}")]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Trace {
        path: PathBuf,
        #[source]
        source: TraceError,
    },
    #[error("no readable traces under {0}")]
    NoTraces(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictorSpec {
    Synthetic(SyntheticFieldParams),
    NGram { corpus: PathBuf, options: NGramOptions },
    Trace(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptSpec {
    /// Token strings separated by whitespace (n-gram: the corpus tokenizer).
    Literal(String),
    /// A line-initial window of this many corpus tokens, drawn per run.
    FromCorpus(usize),
    /// The predictor's default: `w0` for the synthetic field, the recorded
    /// prompt for a trace.
    Default,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellSpec {
    pub id: String,
    /// Decode keys for this cell after expansion, in application order.
    pub pairs: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub predictor: PredictorSpec,
    pub prompt: PromptSpec,
    pub cells: Vec<CellSpec>,
    pub repetitions: usize,
    pub out: PathBuf,
    pub experiment_seed: u64,
    pub jobs: usize,
}

const SPEC_KEYS: &[&str] = &["predictor", "prompt", "prompt_len", "repetitions", "out", "experiment_seed", "jobs"];

fn spec_err(line: usize, reason: impl Into<String>) -> HarnessError {
    HarnessError::Spec { line, reason: reason.into() }
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, HarnessError> {
    v.trim().parse().map_err(|_| spec_err(line, format!("{key}: cannot parse {v:?}")))
}

fn is_decode_key(key: &str) -> bool {
    CONFIG_KEYS.contains(&key)
}

/// Expands `key = a|b` alternatives into every combination, keeping key
/// order. Escaped `\|` stays literal.
fn expand(pairs: &[(String, String)]) -> Vec<Vec<(String, String)>> {
    let mut out: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (k, v) in pairs {
        let alts: Vec<String> = split_escaped(v, '|').into_iter().map(|a| a.trim().replace("\\|", "|")).collect();
        out = out
            .into_iter()
            .flat_map(|prefix| {
                alts.iter().map(move |a| {
                    let mut row = prefix.clone();
                    row.push((k.clone(), a.clone()));
                    row
                })
            })
            .collect();
    }
    out
}

impl ExperimentSpec {
    /// Parses a spec. Relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let doc = KvDocument::parse(text)?;
        let mut kind = String::from("synthetic");
        let mut synth = SyntheticFieldParams::default();
        let mut ngram = NGramOptions::default();
        let mut corpus: Option<PathBuf> = None;
        let mut trace: Option<PathBuf> = None;
        let mut prompt = PromptSpec::Default;
        let mut repetitions = 1usize;
        let mut out = base_dir.join("adablock-out");
        let mut experiment_seed = 0u64;
        let mut jobs = 1usize;
        let mut global_decode = Vec::new();

        for e in doc.global() {
            let (k, v, line) = (e.key.as_str(), e.value.as_str(), e.line);
            match k {
                "predictor" => kind = v.to_string(),
                "prompt" => prompt = PromptSpec::Literal(v.to_string()),
                "prompt_len" => prompt = PromptSpec::FromCorpus(num(line, k, v)?),
                "repetitions" => repetitions = num(line, k, v)?,
                "out" => out = base_dir.join(v),
                "experiment_seed" => experiment_seed = num(line, k, v)?,
                "jobs" => jobs = num(line, k, v)?,
                "trace.path" => trace = Some(base_dir.join(v)),
                "ngram.corpus" => corpus = Some(base_dir.join(v)),
                "ngram.order" => ngram.order = num(line, k, v)?,
                "ngram.k" => ngram.smoothing_k = num(line, k, v)?,
                "ngram.span" => ngram.max_span = num(line, k, v)?,
                "ngram.provisional" => ngram.provisional_context = Some(num(line, k, v)?),
                "ngram.mode" => {
                    ngram.tokenization = match v {
                        "whitespace" => Tokenization::Whitespace,
                        "character" => Tokenization::Character,
                        other => return Err(spec_err(line, format!("ngram.mode: unknown mode {other:?}"))),
                    }
                }
                "synthetic.plateau_rate" => synth.plateau_rate = num(line, k, v)?,
                "synthetic.vb_width_mean" => synth.vb_width_mean = num(line, k, v)?,
                "synthetic.vb_width_jitter" => synth.vb_width_jitter = num(line, k, v)?,
                "synthetic.floor_level" => synth.floor_level = num(line, k, v)?,
                "synthetic.vb_low" => synth.vb_low = num(line, k, v)?,
                "synthetic.vb_high" => synth.vb_high = num(line, k, v)?,
                "synthetic.plateau_level" => synth.plateau_level = num(line, k, v)?,
                "synthetic.delimiter_period" => synth.delimiter_period = num(line, k, v)?,
                k if is_decode_key(k) => global_decode.push((k.to_string(), v.to_string())),
                other => return Err(spec_err(line, format!("unknown key {other:?}"))),
            }
        }
        if let Some(s) = doc.sections.iter().skip(1).find(|s| s.name != "cell") {
            let line = s.entries.first().map_or(0, |e| e.line);
            return Err(spec_err(line, format!("unknown section [{}]", s.name)));
        }

        let predictor = match kind.as_str() {
            "synthetic" => {
                synth.validate()?;
                PredictorSpec::Synthetic(synth)
            }
            "ngram" => PredictorSpec::NGram {
                corpus: corpus.ok_or_else(|| HarnessError::Invalid("ngram predictor needs ngram.corpus".into()))?,
                options: ngram,
            },
            "trace" => PredictorSpec::Trace(
                trace.ok_or_else(|| HarnessError::Invalid("trace predictor needs trace.path".into()))?,
            ),
            other => return Err(HarnessError::Invalid(format!("unknown predictor {other:?}"))),
        };
        if repetitions == 0 {
            return Err(HarnessError::Invalid("repetitions must be at least 1".into()));
        }
        if jobs == 0 {
            return Err(HarnessError::Invalid("jobs must be at least 1".into()));
        }
        if matches!(prompt, PromptSpec::FromCorpus(_)) && !matches!(predictor, PredictorSpec::NGram { .. }) {
            return Err(HarnessError::Invalid("prompt_len needs an n-gram corpus".into()));
        }

        let mut sections: Vec<Vec<(String, String)>> = Vec::new();
        for s in doc.named("cell") {
            let mut pairs = global_decode.clone();
            for e in &s.entries {
                if !is_decode_key(&e.key) {
                    return Err(spec_err(e.line, format!("{:?} is not a decode key", e.key)));
                }
                pairs.retain(|(k, _)| k != &e.key);
                pairs.push((e.key.clone(), e.value.clone()));
            }
            sections.push(pairs);
        }
        if sections.is_empty() {
            sections.push(global_decode);
        }
        let cells: Vec<CellSpec> = sections
            .iter()
            .flat_map(|pairs| expand(pairs))
            .enumerate()
            .map(|(i, pairs)| CellSpec { id: format!("c{i:03}"), pairs })
            .collect();

        Ok(Self { predictor, prompt, cells, repetitions, out, experiment_seed, jobs })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Applies a `key=value` override from the command line.
    pub fn set_override(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        match key {
            "out" => self.out = PathBuf::from(value),
            "experiment_seed" => self.experiment_seed = num(0, key, value)?,
            "jobs" => self.jobs = num(0, key, value)?,
            "repetitions" => {
                self.repetitions = num(0, key, value)?;
                if self.repetitions == 0 {
                    return Err(HarnessError::Invalid("repetitions must be at least 1".into()));
                }
            }
            k if is_decode_key(k) => {
                for cell in &mut self.cells {
                    cell.pairs.retain(|(ck, _)| ck != k);
                    cell.pairs.push((k.to_string(), value.to_string()));
                }
            }
            k if SPEC_KEYS.contains(&k) => {
                return Err(HarnessError::Invalid(format!("{k} cannot be overridden from the command line")))
            }
            other => return Err(HarnessError::Invalid(format!("unknown key {other:?}"))),
        }
        Ok(())
    }
}

/// Seed of one run.
pub fn run_seed(experiment_seed: u64, cell_seed: u64, repetition: usize) -> u64 {
    hash_words(experiment_seed, &[cell_seed, repetition as u64])
}

/// A built predictor, shared by every run of an experiment.
pub enum Backend {
    Synthetic { params: SyntheticFieldParams, vocab: Vocabulary },
    NGram(Arc<NGramModel>),
    Trace(Arc<TracePredictor>),
}

impl Backend {
    pub fn build(spec: &PredictorSpec) -> Result<Self, HarnessError> {
        Ok(match spec {
            PredictorSpec::Synthetic(p) => {
                Backend::Synthetic { params: p.clone(), vocab: build_synthetic(p.clone())?.vocabulary().clone() }
            }
            PredictorSpec::NGram { corpus, options } => {
                let text = fs::read_to_string(corpus).map_err(io_err(corpus))?;
                Backend::NGram(Arc::new(build_ngram(&text, options.clone())?))
            }
            PredictorSpec::Trace(path) => Backend::Trace(Arc::new(load_trace_predictor(path)?)),
        })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        match self {
            Backend::Synthetic { vocab, .. } => vocab,
            Backend::NGram(m) => m.vocabulary(),
            Backend::Trace(t) => t.vocabulary(),
        }
    }

    /// The predictor for one run.
    pub fn instance(&self, seed: u64) -> Result<Box<dyn MaskPredictor>, HarnessError> {
        Ok(match self {
            Backend::Synthetic { params, .. } => {
                Box::new(build_synthetic(SyntheticFieldParams { noise_seed: seed, ..params.clone() })?)
            }
            Backend::NGram(m) => Box::new(Arc::clone(m)),
            Backend::Trace(t) => Box::new(t.fork()),
        })
    }

    pub fn prompt(&self, spec: &PromptSpec, seed: u64) -> Result<Vec<TokenId>, HarnessError> {
        match (spec, self) {
            (PromptSpec::Literal(text), Backend::NGram(m)) => Ok(m.encode(&unescape(text))?),
            (PromptSpec::Literal(text), _) => text
                .split_whitespace()
                .map(|t| self.vocabulary().require_id(&unescape(t)).map_err(|e| HarnessError::Invalid(e.to_string())))
                .collect(),
            (PromptSpec::FromCorpus(len), Backend::NGram(m)) => sample_prompt(m, *len, seed),
            (PromptSpec::FromCorpus(_), _) => Err(HarnessError::Invalid("prompt_len needs an n-gram corpus".into())),
            (PromptSpec::Default, Backend::Synthetic { vocab, .. }) => {
                Ok(vec![vocab.require_id("w0").expect("content word")])
            }
            (PromptSpec::Default, Backend::NGram(m)) => sample_prompt(m, 4, seed),
            (PromptSpec::Default, Backend::Trace(t)) => {
                t.header().prompt.clone().ok_or_else(|| HarnessError::Invalid("trace header records no prompt".into()))
            }
        }
    }
}

/// `len` corpus tokens starting at a line start chosen by `seed`.
pub fn sample_prompt(model: &NGramModel, len: usize, seed: u64) -> Result<Vec<TokenId>, HarnessError> {
    let toks = model.corpus();
    let nl = model.vocabulary().id(NEWLINE_TOKEN);
    if len == 0 || len > toks.len() {
        return Err(HarnessError::Invalid(format!("prompt_len {len} does not fit the corpus")));
    }
    let starts: Vec<usize> = (0..=toks.len() - len).filter(|&i| i == 0 || Some(toks[i - 1]) == nl).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = starts[rng.gen_range(0..starts.len())];
    Ok(toks[start..start + len].to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStats {
    pub steps: usize,
    pub nfe: usize,
    pub position_evals: usize,
    pub late_overhead_rate: f64,
    pub premature_rate: f64,
    pub mean_block_size: f64,
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub cell: String,
    pub repetition: usize,
    pub seed: u64,
    pub config: Option<DecodeConfig>,
    pub stats: Result<RunStats, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub out: PathBuf,
    pub runs: Vec<RunOutcome>,
}

pub const AGGREGATE_HEADER: &str = "cell,scheduler,sampler,cache,b0,tau_d,seed,steps,nfe,position_evals,\
late_overhead_rate,premature_rate,mean_block_size,completed";

impl ExperimentReport {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.stats.is_err()).count()
    }

    pub fn aggregate_csv(&self) -> String {
        let mut out = format!("{AGGREGATE_HEADER}\n");
        for r in &self.runs {
            let (sched, sampler, cache, b0, tau_d) = match &r.config {
                Some(c) => (
                    c.scheduler.to_string(),
                    c.sampler.to_string(),
                    c.cache.to_string(),
                    c.b0.to_string(),
                    c.tau_d.to_string(),
                ),
                None => Default::default(),
            };
            let _ = write!(out, "{},{sched},{sampler},{cache},{b0},{tau_d},{},", r.cell, r.seed);
            match &r.stats {
                Ok(s) => {
                    let _ = writeln!(
                        out,
                        "{},{},{},{:.6},{:.6},{:.3},{}",
                        s.steps,
                        s.nfe,
                        s.position_evals,
                        s.late_overhead_rate,
                        s.premature_rate,
                        s.mean_block_size,
                        s.completed
                    );
                }
                Err(_) => out.push_str(",,,,,,error\n"),
            }
        }
        out
    }
}

fn run_dir(out: &Path, cell: &str, repetition: usize) -> PathBuf {
    out.join("runs").join(format!("{cell}-r{repetition}"))
}

fn execute_run(
    backend: &Backend,
    spec: &ExperimentSpec,
    config: &DecodeConfig,
    cell: &str,
    repetition: usize,
) -> Result<RunStats, HarnessError> {
    let predictor = backend.instance(config.seed)?;
    let prompt = backend.prompt(&spec.prompt, config.seed)?;
    let result = decode(predictor.as_ref(), config, &prompt)?;
    let dir = run_dir(&spec.out, cell, repetition);
    write_file(&dir.join("trace.jsonl"), &result.trace.to_jsonl(&result.trace_header(predictor.as_ref(), config)))?;
    write_file(&dir.join("summary.json"), &(result.summary_json() + "\n"))?;
    stats_of(&result, config.tau)
}

fn stats_of(result: &DecodeResult, tau: f64) -> Result<RunStats, HarnessError> {
    let report = failure_rates(&result.trace, tau)?;
    Ok(RunStats {
        steps: result.steps_used,
        nfe: result.denoise_calls,
        position_evals: result.position_evaluations,
        late_overhead_rate: report.late_overhead_rate,
        premature_rate: report.premature_rate,
        mean_block_size: result.mean_block_size(),
        completed: result.completed(),
    })
}

/// Runs every cell and repetition, writing per-run traces and summaries and
/// `aggregate.csv` under `spec.out`. Failing runs become `error` rows.
pub fn run(spec: &ExperimentSpec) -> Result<ExperimentReport, HarnessError> {
    fs::create_dir_all(&spec.out).map_err(io_err(&spec.out))?;
    let backend = Backend::build(&spec.predictor);
    let vocab = backend.as_ref().ok().map(|b| b.vocabulary().clone());

    struct Job {
        cell: String,
        repetition: usize,
        seed: u64,
        config: Result<DecodeConfig, String>,
    }
    let mut jobs = Vec::new();
    for cell in &spec.cells {
        let parsed = match &vocab {
            Some(v) => DecodeConfig::from_pairs(cell.pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())), v)
                .map_err(|e| e.to_string()),
            None => Err("predictor unavailable".to_string()),
        };
        if let Ok(cfg) = &parsed {
            write_file(
                &spec.out.join("cells").join(format!("{}.cfg", cell.id)),
                &cfg.to_text(vocab.as_ref().expect("vocab")),
            )?;
        }
        for repetition in 0..spec.repetitions {
            let cell_seed = parsed.as_ref().map_or(0, |c| c.seed);
            let seed = run_seed(spec.experiment_seed, cell_seed, repetition);
            let config = parsed.clone().map(|c| DecodeConfig { seed, ..c });
            jobs.push(Job { cell: cell.id.clone(), repetition, seed, config });
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs)
        .build()
        .map_err(|e| HarnessError::Invalid(format!("thread pool: {e}")))?;
    let runs: Vec<RunOutcome> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let stats = match (&backend, &job.config) {
                    (Err(e), _) => Err(e.to_string()),
                    (_, Err(e)) => Err(e.clone()),
                    (Ok(b), Ok(cfg)) => execute_run(b, spec, cfg, &job.cell, job.repetition).map_err(|e| e.to_string()),
                };
                match &stats {
                    Ok(_) => info!("{} r{} done", job.cell, job.repetition),
                    Err(e) => warn!("{} r{} failed: {e}", job.cell, job.repetition),
                }
                RunOutcome {
                    cell: job.cell.clone(),
                    repetition: job.repetition,
                    seed: job.seed,
                    config: job.config.clone().ok(),
                    stats,
                }
            })
            .collect()
    });

    let report = ExperimentReport { out: spec.out.clone(), runs };
    write_file(&spec.out.join("aggregate.csv"), &report.aggregate_csv())?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AnalysisThresholds {
    /// Event threshold; defaults to each trace's recorded `tau`.
    pub tau: Option<f64>,
    pub regimes: RegimeThresholds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub analyzed: Vec<PathBuf>,
    pub skipped: Vec<(PathBuf, String)>,
}

fn collect_traces(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    let mut entries: Vec<PathBuf> =
        fs::read_dir(dir).map_err(io_err(dir))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_traces(&p, out)?;
        } else if p.extension().is_some_and(|e| e == "jsonl") {
            out.push(p);
        }
    }
    Ok(())
}

#[derive(Default)]
struct Fig3Cell {
    traces: usize,
    steps: usize,
    late: usize,
    premature: usize,
}

/// Runs the metrics over every `*.jsonl` trace under `trace_dir` and writes
/// per-trace reports plus `failures.csv` and `fig3.csv` into `out`.
/// Unreadable traces are skipped and logged.
pub fn analyze(trace_dir: &Path, out: &Path, th: AnalysisThresholds) -> Result<AnalysisReport, HarnessError> {
    let mut files = Vec::new();
    collect_traces(trace_dir, &mut files)?;
    let mut report = AnalysisReport { analyzed: Vec::new(), skipped: Vec::new() };
    let mut rows = String::from(
        "trace,scheduler,b0,steps,late_overhead_steps,premature_steps,late_overhead_rate,premature_rate\n",
    );
    let mut fig3: BTreeMap<(String, usize), Fig3Cell> = BTreeMap::new();

    for path in files {
        let loaded = fs::File::open(&path)
            .map_err(|e| e.to_string())
            .and_then(|f| read_trace(BufReader::new(f)).map_err(|e| e.to_string()));
        let (header, trace) = match loaded {
            Ok(t) => t,
            Err(reason) => {
                warn!("skipping {}: {reason}", path.display());
                report.skipped.push((path, reason));
                continue;
            }
        };
        let tau = th.tau.or(header.config.as_ref().map(|c| c.tau)).unwrap_or(crate::config::DEFAULT_TAU);
        let analysis = failure_rates(&trace, tau).and_then(|f| segment_regimes(&trace, th.regimes).map(|m| (f, m)));
        let (failures, regimes) = match analysis {
            Ok(a) => a,
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                report.skipped.push((path, e.to_string()));
                continue;
            }
        };
        let rel = path.strip_prefix(trace_dir).unwrap_or(&path).with_extension("");
        let name = rel.to_string_lossy().replace(['/', '\\'], "__");
        let widths = vb_width_series(&regimes);
        let dir = out.join(&name);
        write_file(&dir.join("steps.csv"), &step_report_csv(&trace, &failures, &widths))?;
        write_file(&dir.join("regimes.csv"), &regimes_csv(&regimes))?;
        write_file(&dir.join("heatmap.csv"), &heatmap_csv(&trace))?;
        let mut vb = String::from("step,vb_width\n");
        for (t, w) in widths.iter().enumerate() {
            let _ = writeln!(vb, "{t},{w}");
        }
        write_file(&dir.join("vb_width.csv"), &vb)?;
        write_file(&dir.join("failures.json"), &(failure_json(&failures) + "\n"))?;

        let (sched, b0) =
            header.config.as_ref().map_or((String::from("unknown"), 0), |c| (c.scheduler.to_string(), c.b0));
        let _ = writeln!(
            rows,
            "{name},{sched},{b0},{},{},{},{:.6},{:.6}",
            failures.total_steps,
            failures.late_overhead_steps,
            failures.premature_steps,
            failures.late_overhead_rate,
            failures.premature_rate
        );
        let cell = fig3.entry((sched, b0)).or_default();
        cell.traces += 1;
        cell.steps += failures.total_steps;
        cell.late += failures.late_overhead_steps;
        cell.premature += failures.premature_steps;
        report.analyzed.push(path);
    }
    if report.analyzed.is_empty() {
        return Err(HarnessError::NoTraces(trace_dir.to_path_buf()));
    }

    write_file(&out.join("failures.csv"), &rows)?;
    let mut f3 = String::from("scheduler,b0,traces,steps,late_overhead_rate,premature_rate\n");
    for ((sched, b0), c) in &fig3 {
        let _ = writeln!(
            f3,
            "{sched},{b0},{},{},{:.6},{:.6}",
            c.traces,
            c.steps,
            c.late as f64 / c.steps as f64,
            c.premature as f64 / c.steps as f64
        );
    }
    write_file(&out.join("fig3.csv"), &f3)?;
    Ok(report)
}

fn failure_json(report: &FailureReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub result: DecodeResult,
    /// Index of the first record that differs from the recorded trace.
    pub divergence: Option<usize>,
}

impl ReplayOutcome {
    pub fn identical(&self) -> bool {
        self.divergence.is_none()
    }
}

/// First record index where two traces differ, or their common length if
/// one is a prefix of the other.
pub fn first_divergence(a: &DecodeTrace, b: &DecodeTrace) -> Option<usize> {
    if a == b {
        return None;
    }
    Some(a.records.iter().zip(&b.records).position(|(x, y)| x != y).unwrap_or(a.len().min(b.len())))
}

/// Re-decodes a recorded trace with the trace predictor under its recorded
/// config and prompt, and compares the result with the recording.
pub fn replay(trace_path: &Path, out: Option<&Path>) -> Result<ReplayOutcome, HarnessError> {
    let predictor = load_trace_predictor(trace_path)?;
    let header = predictor.header().clone();
    let config = header.config.clone().ok_or_else(|| HarnessError::Invalid("trace header records no config".into()))?;
    let prompt = header.prompt.clone().ok_or_else(|| HarnessError::Invalid("trace header records no prompt".into()))?;
    let file = fs::File::open(trace_path).map_err(io_err(trace_path))?;
    let (_, recorded) = read_trace(BufReader::new(file))
        .map_err(|source| HarnessError::Trace { path: trace_path.to_path_buf(), source })?;

    let result = decode(&predictor, &config, &prompt)?;
    if let Some(dir) = out {
        write_file(&dir.join("trace.jsonl"), &result.trace.to_jsonl(&header))?;
        write_file(&dir.join("summary.json"), &(result.summary_json() + "\n"))?;
    }
    let divergence = first_divergence(&recorded, &result.trace);
    Ok(ReplayOutcome { result, divergence })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alternatives_expand_to_cross_product() {
        let pairs =
            vec![("b0".to_string(), "16|32".to_string()), ("scheduler".to_string(), "fixed|adaptive".to_string())];
        let rows = expand(&pairs);
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[1], vec![("b0".into(), "16".into()), ("scheduler".into(), "adaptive".into())]);
    }

    #[test]
    fn spec_sections_and_overrides() {
        let text = "predictor = synthetic\nrepetitions = 2\ntau = 0.8\n[cell]\nscheduler = fixed\nb0 = 4|8|16\n[cell]\nscheduler = adaptive\ntau = 0.7\n";
        let spec = ExperimentSpec::parse(text, Path::new("/tmp")).unwrap();
        assert_eq!(spec.cells.len(), 4);
        assert_eq!(spec.cells[3].pairs, vec![("scheduler".into(), "adaptive".into()), ("tau".into(), "0.7".into())]);
        assert_eq!(spec.repetitions, 2);
    }

    #[test]
    fn spec_errors() {
        let base = Path::new(".");
        assert!(matches!(ExperimentSpec::parse("repetitions = 0", base), Err(HarnessError::Invalid(_))));
        assert!(matches!(ExperimentSpec::parse("colour = red", base), Err(HarnessError::Spec { line: 1, .. })));
        assert!(matches!(ExperimentSpec::parse("predictor = ngram", base), Err(HarnessError::Invalid(_))));
        assert!(matches!(ExperimentSpec::parse("[cell]\nout = x", base), Err(HarnessError::Spec { line: 2, .. })));
        assert!(matches!(ExperimentSpec::parse("[sweep]\nb0 = 1", base), Err(HarnessError::Spec { .. })));
    }

    #[test]
    fn seeds_ignore_cell_position() {
        assert_eq!(run_seed(7, 0, 1), run_seed(7, 0, 1));
        assert_ne!(run_seed(7, 0, 1), run_seed(7, 0, 2));
        assert_ne!(run_seed(7, 0, 1), run_seed(8, 0, 1));
    }
}
