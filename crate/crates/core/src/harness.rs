//! Pipeline orchestration: adapt → run → score → report, with persistence
//! under a work directory, content-hash idempotence and resumable runs.
//!
//! Layout:
//!   corpus.normalized.jsonl
//!   traces/<record>/<input>.trace.jsonl, build.json, analysis.json
//!   problems.jsonl, problems.meta.json
//!   runs/<experiment>/meta.json, metrics.json, report.md, report.csv
//!   runs/<experiment>/r<i>/meta.json, responses.jsonl, judgments.jsonl, metrics.json

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analyzer;
use crate::builder::{self, BuildConfig, ProblemInstance};
use crate::corpus::{self, BenchmarkRecord, CorpusError, CorpusFormat};
use crate::gateway::{Backend, Gateway, GatewayError, ModelConfig, RawResponse};
use crate::grader::{self, GradeEnv, Judgment};
use crate::metrics::{self, AggregateMetrics, RunMetrics, METRIC_FIELDS};
use crate::promptkit::{self, Strategy, DEFAULT_SHOTS, TEMPLATE_VERSION};
use crate::sandbox::ResourceLimits;
use crate::tracer;

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("backend failure: {0}")]
    Backend(GatewayError),
    #[error("partial failure: {0}")]
    Partial(String),
    #[error("incomplete run {run}: {} judgment(s) missing, e.g. {}", .missing.len(), .missing.first().map(String::as_str).unwrap_or(""))]
    IncompleteRun { run: String, missing: Vec<String> },
    #[error("{path} was produced under configuration {found}, expected {expected}")]
    HashMismatch {
        path: String,
        expected: String,
        found: String,
    },
    #[error("no metrics found: {0}")]
    NoMetrics(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Corpus(_) | HarnessError::HashMismatch { .. } => 2,
            HarnessError::Partial(_) | HarnessError::IncompleteRun { .. } | HarnessError::NoMetrics(_) => 3,
            HarnessError::Backend(_) => 4,
            HarnessError::Io { .. } => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub format: CorpusFormat,
    pub workdir: PathBuf,
    pub model: ModelConfig,
    pub strategy: Strategy,
    pub shots: usize,
    pub site_budget: usize,
    pub runs: usize,
    pub seed: u64,
    pub workers: usize,
    pub limits: ResourceLimits,
    pub emit_analysis: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            format: CorpusFormat::HumanevalLike,
            workdir: PathBuf::from("reval-work"),
            model: ModelConfig::default(),
            strategy: Strategy::Fewshot,
            shots: DEFAULT_SHOTS,
            site_budget: BuildConfig::default().site_budget,
            runs: 3,
            seed: 0,
            workers: 4,
            limits: ResourceLimits::default(),
            emit_analysis: false,
        }
    }
}

/// Settings accepted from a configuration file; every key is optional and
/// command-line flags take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub corpus: Option<PathBuf>,
    pub format: Option<String>,
    pub workdir: Option<PathBuf>,
    pub backend: Option<String>,
    pub model: Option<String>,
    pub endpoint: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub rate_limit: Option<u32>,
    pub retries: Option<u32>,
    pub fixed_text: Option<String>,
    pub transcript: Option<PathBuf>,
    pub strategy: Option<String>,
    pub shots: Option<usize>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub site_budget: Option<usize>,
    pub workers: Option<usize>,
    pub timeout: Option<f64>,
    pub max_steps: Option<u64>,
    pub emit_analysis: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    /// Overlays `other` (higher precedence) on `self`.
    pub fn merged(self, other: FileConfig) -> FileConfig {
        macro_rules! pick {
            ($($f:ident),*) => { FileConfig { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(
            corpus,
            format,
            workdir,
            backend,
            model,
            endpoint,
            temperature,
            max_tokens,
            rate_limit,
            retries,
            fixed_text,
            transcript,
            strategy,
            shots,
            runs,
            seed,
            site_budget,
            workers,
            timeout,
            max_steps,
            emit_analysis
        )
    }

    pub fn resolve(self) -> Result<RunConfig, HarnessError> {
        let bad = |what: &str, e: String| HarnessError::Config(format!("{what}: {e}"));
        let mut c = RunConfig::default();
        c.corpus = self.corpus;
        if let Some(f) = self.format {
            c.format = f.parse().map_err(|e: String| bad("format", e))?;
        }
        if let Some(w) = self.workdir {
            c.workdir = w;
        }
        if let Some(b) = self.backend {
            c.model.backend = b.parse().map_err(|e: String| bad("backend", e))?;
        }
        c.model.model_name = self.model.unwrap_or_else(|| c.model.backend.to_string());
        c.model.endpoint_url = self.endpoint;
        if let Some(t) = self.temperature {
            c.model.temperature = t;
        }
        if let Some(m) = self.max_tokens {
            c.model.max_tokens = m;
        }
        if let Some(r) = self.rate_limit {
            c.model.rate_limit = r;
        }
        if let Some(r) = self.retries {
            c.model.retries = r;
        }
        c.model.fixed_text = self.fixed_text;
        c.model.transcript = self.transcript;
        if let Some(s) = self.strategy {
            c.strategy = s.parse().map_err(|e: String| bad("strategy", e))?;
        }
        if let Some(s) = self.shots {
            c.shots = s;
        }
        if let Some(r) = self.runs {
            c.runs = r;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c.model.seed = c.seed;
        if let Some(b) = self.site_budget {
            c.site_budget = b;
        }
        if let Some(w) = self.workers {
            c.workers = w;
        }
        if let Some(t) = self.timeout {
            c.limits.wall_seconds = t;
        }
        if let Some(m) = self.max_steps {
            c.limits.max_steps = m;
        }
        c.emit_analysis = self.emit_analysis.unwrap_or(false);
        c.validate()?;
        Ok(c)
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.runs == 0 {
            return Err(HarnessError::Config("runs must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(HarnessError::Config("workers must be at least 1".into()));
        }
        if !(self.limits.wall_seconds > 0.0) {
            return Err(HarnessError::Config("timeout must be positive".into()));
        }
        self.model.validate().map_err(|e| HarnessError::Config(e.to_string()))
    }

    fn pool(&self) -> Result<rayon::ThreadPool, HarnessError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn problems_path(&self) -> PathBuf {
        self.workdir.join("problems.jsonl")
    }

    fn problems_meta_path(&self) -> PathBuf {
        self.workdir.join("problems.meta.json")
    }

    /// Identity of the model-side settings: equal settings share a results
    /// directory and may resume each other's work.
    pub fn experiment_hash(&self, problems_hash: &str) -> String {
        let m = &self.model;
        sha256_hex(
            json!({
                "problems": problems_hash,
                "backend": m.backend,
                "model": m.model_name,
                "endpoint": m.endpoint_url,
                "temperature": m.temperature,
                "max_tokens": m.max_tokens,
                "seed": self.seed,
                "fixed_text": m.fixed_text,
                "transcript": m.transcript.as_ref().map(|p| file_hash(p).unwrap_or_default()),
                "strategy": self.strategy,
                "shots": self.shots,
                "template": TEMPLATE_VERSION,
            })
            .to_string()
            .as_bytes(),
        )
    }

    pub fn experiment_id(&self, problems_hash: &str) -> String {
        let name: String = self
            .model
            .model_name
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        format!(
            "{name}-{}-{}",
            self.strategy,
            &self.experiment_hash(problems_hash)[..12]
        )
    }
}

// ---------------------------------------------------------------- plumbing

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_hash(path: &Path) -> Option<String> {
    fs::read(path).ok().map(|b| sha256_hex(&b))
}

/// Writes via a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("serializable");
        buf.push(b'\n');
    }
    buf
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => out.push(v),
            // a torn final line from an interrupted append
            Err(e) => log::warn!("{}:{}: ignoring unreadable line: {e}", path.display(), n + 1),
        }
    }
    Ok(out)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Directory name for a record id (`HumanEval/59` → `HumanEval_59`).
pub fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

// ------------------------------------------------------------------- adapt

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordBuild {
    content_hash: String,
    skipped: Option<String>,
    problems: Vec<ProblemInstance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemsMeta {
    pub config_hash: String,
    pub tool_version: String,
    pub site_budget: usize,
    pub records: usize,
    pub admissible_records: usize,
    pub instances: usize,
    pub skipped: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdaptSummary {
    pub records: usize,
    pub rebuilt: usize,
    pub reused: usize,
    pub instances: usize,
    pub skipped: Vec<(String, String)>,
}

fn record_hash(record: &BenchmarkRecord, config: &RunConfig) -> String {
    let record_json = serde_json::to_string(record).expect("serializable");
    sha256_hex(
        json!({
            "record": record_json,
            "site_budget": config.site_budget,
            "max_steps": config.limits.max_steps,
            "wall_seconds": config.limits.wall_seconds,
            "tool": TOOL_VERSION,
        })
        .to_string()
        .as_bytes(),
    )
}

fn build_record(record: &BenchmarkRecord, config: &RunConfig, dir: &Path) -> Result<RecordBuild, HarnessError> {
    let content_hash = record_hash(record, config);
    let skip = |reason: String| {
        log::warn!("{}: skipped: {reason}", record.record_id);
        Ok(RecordBuild {
            content_hash: content_hash.clone(),
            skipped: Some(reason),
            problems: Vec::new(),
        })
    };
    let report = corpus::validate_record(record);
    if !report.is_valid() {
        return skip(report.violations.join("; "));
    }
    let program = record.program_text();
    let parsed = match analyzer::parse_program(&program) {
        Ok(p) => p,
        Err(e) => return skip(e.to_string()),
    };
    let table = parsed.table();
    let graph = parsed.blocks(&table);
    if config.emit_analysis {
        write_json(
            &dir.join("analysis.json"),
            &json!({"statements": table, "blocks": graph}),
        )?;
    }
    let build_config = BuildConfig {
        site_budget: config.site_budget,
    };
    let mut problems = Vec::new();
    let mut reasons = Vec::new();
    for input in &record.test_inputs {
        let trace = match tracer::trace_input(record, input, &config.limits) {
            Ok(t) => t,
            Err(e) => {
                reasons.push(format!("{}: {e}", input.input_id));
                continue;
            }
        };
        write_atomic(
            &dir.join(format!("{}.trace.jsonl", safe_name(&input.input_id))),
            trace.to_wire().as_bytes(),
        )?;
        match builder::build_problems(record, &trace, &table, &graph, &build_config) {
            Ok(ps) => problems.extend(ps),
            Err(e) => reasons.push(format!("{}: {e}", input.input_id)),
        }
    }
    for r in &reasons {
        log::info!("{}: {r}", record.record_id);
    }
    if problems.is_empty() {
        let why = if reasons.is_empty() {
            "no inputs".to_string()
        } else {
            reasons.join("; ")
        };
        return skip(why);
    }
    Ok(RecordBuild {
        content_hash,
        skipped: None,
        problems,
    })
}

/// Normalizes the corpus, traces every input, and writes the problem set.
/// Records whose build inputs are unchanged are reused from disk.
pub fn cmd_adapt(config: &RunConfig) -> Result<AdaptSummary, HarnessError> {
    let corpus_path = config
        .corpus
        .as_ref()
        .ok_or_else(|| HarnessError::Config("--corpus is required for adapt".into()))?;
    let records = corpus::load_corpus(corpus_path, config.format)?;
    fs::create_dir_all(&config.workdir).map_err(io_err(&config.workdir))?;
    let normalized = config.workdir.join("corpus.normalized.jsonl");
    corpus::write_normalized(&normalized, &records).map_err(io_err(&normalized))?;

    let traces = config.workdir.join("traces");
    let names: HashSet<String> = records.iter().map(|r| safe_name(&r.record_id)).collect();
    if names.len() != records.len() {
        return Err(HarnessError::Config("record ids collide after path sanitizing".into()));
    }
    let builds: Vec<Result<(RecordBuild, bool), HarnessError>> = config.pool()?.install(|| {
        records
            .par_iter()
            .map(|record| {
                let dir = traces.join(safe_name(&record.record_id));
                let cache = dir.join("build.json");
                let hash = record_hash(record, config);
                if let Ok(prev) = read_json::<RecordBuild>(&cache) {
                    if prev.content_hash == hash {
                        return Ok((prev, false));
                    }
                }
                fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                let build = build_record(record, config, &dir)?;
                write_json(&cache, &build)?;
                Ok((build, true))
            })
            .collect()
    });

    let mut all = Vec::new();
    let mut skipped = Vec::new();
    let mut hashes = Vec::new();
    let (mut rebuilt, mut reused) = (0, 0);
    for (record, build) in records.iter().zip(builds) {
        let (build, fresh) = build?;
        if fresh {
            rebuilt += 1;
        } else {
            reused += 1;
        }
        hashes.push(build.content_hash.clone());
        if let Some(reason) = build.skipped {
            skipped.push((record.record_id.clone(), reason));
        }
        all.extend(build.problems);
    }
    let meta = ProblemsMeta {
        config_hash: sha256_hex(hashes.join("\n").as_bytes()),
        tool_version: TOOL_VERSION.to_string(),
        site_budget: config.site_budget,
        records: records.len(),
        admissible_records: records.len() - skipped.len(),
        instances: all.len(),
        skipped: skipped.iter().cloned().collect(),
    };
    write_atomic(&config.problems_path(), &to_jsonl(&all))?;
    write_json(&config.problems_meta_path(), &meta)?;
    Ok(AdaptSummary {
        records: records.len(),
        rebuilt,
        reused,
        instances: all.len(),
        skipped,
    })
}

// --------------------------------------------------------------------- run

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_hash: String,
    pub problems_hash: String,
    pub run_index: usize,
    pub seed: u64,
    pub backend: Backend,
    pub model: String,
    pub strategy: Strategy,
    pub shots: usize,
    pub template_version: String,
    pub site_budget: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ResponseLine {
    task: builder::Task,
    key: builder::ProblemKey,
    shot_keys: Vec<String>,
    response: RawResponse,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub experiment: String,
    pub completed_runs: usize,
    pub judged: usize,
    pub resumed: usize,
    pub failures: Vec<String>,
}

pub struct Loaded {
    pub problems: Vec<ProblemInstance>,
    pub meta: ProblemsMeta,
    pub records: Vec<BenchmarkRecord>,
}

pub fn load_problems(config: &RunConfig) -> Result<Loaded, HarnessError> {
    let path = config.problems_path();
    if !path.exists() {
        return Err(HarnessError::Config(format!(
            "{} not found; run adapt first",
            path.display()
        )));
    }
    let meta: ProblemsMeta = read_json(&config.problems_meta_path())?;
    let problems: Vec<ProblemInstance> = read_jsonl(&path)?;
    if problems.len() != meta.instances {
        return Err(HarnessError::HashMismatch {
            path: path.display().to_string(),
            expected: format!("{} instances", meta.instances),
            found: format!("{} instances", problems.len()),
        });
    }
    let records: Vec<BenchmarkRecord> = read_jsonl(&config.workdir.join("corpus.normalized.jsonl"))?;
    Ok(Loaded {
        problems,
        meta,
        records,
    })
}

pub fn experiment_dir(config: &RunConfig, problems_hash: &str) -> PathBuf {
    config.workdir.join("runs").join(config.experiment_id(problems_hash))
}

fn judge_key(task: builder::Task, key: &builder::ProblemKey) -> String {
    format!("{task}|{key}")
}

/// Cuts an unterminated final line left by an interrupted append, so the next
/// append starts on a fresh line.
fn drop_torn_tail(path: &Path) -> Result<(), HarnessError> {
    let Ok(bytes) = fs::read(path) else {
        return Ok(());
    };
    if bytes.last().is_some_and(|b| *b != b'\n') {
        let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
        log::warn!("{}: dropping a torn final line", path.display());
        fs::write(path, &bytes[..keep]).map_err(io_err(path))?;
    }
    Ok(())
}

fn append_line<T: Serialize>(file: &Mutex<File>, item: &T) -> std::io::Result<()> {
    let mut line = serde_json::to_vec(item).expect("serializable");
    line.push(b'\n');
    let mut f = file.lock().expect("writer poisoned");
    f.write_all(&line)?;
    f.flush()
}

fn check_meta(path: &Path, expected: &RunMeta) -> Result<(), HarnessError> {
    if path.exists() {
        let found: RunMeta = read_json(path)?;
        if found.config_hash != expected.config_hash || found.problems_hash != expected.problems_hash {
            return Err(HarnessError::HashMismatch {
                path: path.display().to_string(),
                expected: expected.config_hash.clone(),
                found: found.config_hash,
            });
        }
    }
    Ok(())
}

/// Asks every problem once per run index and grades the answers. Completed
/// judgments survive interruption and are not asked again on resume.
pub fn cmd_run(config: &RunConfig) -> Result<RunSummary, HarnessError> {
    let loaded = load_problems(config)?;
    let problems_hash = loaded.meta.config_hash.clone();
    let exp_dir = experiment_dir(config, &problems_hash);
    let experiment = config.experiment_id(&problems_hash);
    let env = GradeEnv::new(&loaded.records, config.limits);
    if config.shots > 0 {
        promptkit::exemplar_pool().map_err(|e| HarnessError::Config(e.to_string()))?;
    }
    write_json(
        &exp_dir.join("meta.json"),
        &json!({
            "experiment": experiment,
            "config_hash": config.experiment_hash(&problems_hash),
            "problems_hash": problems_hash,
            "backend": config.model.backend,
            "model": config.model.model_name,
            "strategy": config.strategy,
            "shots": config.shots,
            "runs": config.runs,
            "seed": config.seed,
            "site_budget": loaded.meta.site_budget,
            "temperature": config.model.temperature,
            "template_version": TEMPLATE_VERSION,
        }),
    )?;

    let pool = config.pool()?;
    let mut summary = RunSummary {
        experiment,
        completed_runs: 0,
        judged: 0,
        resumed: 0,
        failures: Vec::new(),
    };
    for run_index in 0..config.runs {
        let run_dir = exp_dir.join(format!("r{run_index}"));
        fs::create_dir_all(&run_dir).map_err(io_err(&run_dir))?;
        let mut model = config.model.clone();
        model.seed = config.seed + run_index as u64;
        let meta = RunMeta {
            config_hash: config.experiment_hash(&problems_hash),
            problems_hash: problems_hash.clone(),
            run_index,
            seed: model.seed,
            backend: model.backend,
            model: model.model_name.clone(),
            strategy: config.strategy,
            shots: config.shots,
            template_version: TEMPLATE_VERSION.into(),
            site_budget: loaded.meta.site_budget,
        };
        let meta_path = run_dir.join("meta.json");
        check_meta(&meta_path, &meta)?;
        write_json(&meta_path, &meta)?;
        let final_judgments = run_dir.join("judgments.jsonl");
        if final_judgments.exists() {
            summary.completed_runs += 1;
            continue;
        }
        let gateway = Gateway::new(model).map_err(|e| match e {
            GatewayError::Config(m) => HarnessError::Config(m),
            other => HarnessError::Backend(other),
        })?;

        let partial_j = run_dir.join("judgments.partial.jsonl");
        let partial_r = run_dir.join("responses.partial.jsonl");
        drop_torn_tail(&partial_j)?;
        drop_torn_tail(&partial_r)?;
        let done: Vec<Judgment> = if partial_j.exists() {
            read_jsonl(&partial_j)?
        } else {
            Vec::new()
        };
        let done_keys: HashSet<String> = done.iter().map(|j| judge_key(j.task, &j.key)).collect();
        summary.resumed += done_keys.len();
        let open = |p: &Path| {
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map(Mutex::new)
                .map_err(io_err(p))
        };
        let jw = open(&partial_j)?;
        let rw = open(&partial_r)?;
        let halt = AtomicBool::new(false);
        let fatal: Mutex<Option<HarnessError>> = Mutex::new(None);
        let failures: Mutex<Vec<String>> = Mutex::new(Vec::new());

        pool.install(|| {
            loaded
                .problems
                .par_iter()
                .filter(|p| !done_keys.contains(&judge_key(p.task, &p.key)))
                .for_each(|problem| {
                    if halt.load(Ordering::SeqCst) {
                        return;
                    }
                    let id = judge_key(problem.task, &problem.key);
                    let outcome = (|| -> Result<(), HarnessError> {
                        let shots = promptkit::select_shots(problem, config.shots)
                            .map_err(|e| HarnessError::Config(e.to_string()))?;
                        let prompt = promptkit::render_prompt(problem, config.strategy, &shots)
                            .map_err(|e| HarnessError::Config(e.to_string()))?;
                        let response = gateway.complete(problem, &prompt).map_err(HarnessError::Backend)?;
                        let parsed = grader::parse_answer_for(problem, &response.text);
                        let judgment =
                            grader::grade(problem, &parsed, &env).map_err(|e| HarnessError::Partial(e.to_string()))?;
                        append_line(
                            &rw,
                            &ResponseLine {
                                task: problem.task,
                                key: problem.key.clone(),
                                shot_keys: prompt.shot_keys,
                                response,
                            },
                        )
                        .map_err(io_err(&partial_r))?;
                        append_line(&jw, &judgment).map_err(io_err(&partial_j))?;
                        Ok(())
                    })();
                    match outcome {
                        Ok(()) => {}
                        Err(HarnessError::Backend(GatewayError::TranscriptMiss(k))) => {
                            failures.lock().unwrap().push(format!("no transcript entry for {k}"));
                        }
                        Err(e @ (HarnessError::Backend(_) | HarnessError::Io { .. } | HarnessError::Config(_))) => {
                            halt.store(true, Ordering::SeqCst);
                            fatal.lock().unwrap().get_or_insert(e);
                        }
                        Err(e) => failures.lock().unwrap().push(format!("{id}: {e}")),
                    }
                });
        });
        drop((jw, rw));
        if let Some(e) = fatal.into_inner().unwrap() {
            log::error!(
                "run {run_index} halted; completed judgments kept in {}",
                partial_j.display()
            );
            return Err(e);
        }
        let run_failures = failures.into_inner().unwrap();
        if !run_failures.is_empty() {
            summary
                .failures
                .extend(run_failures.iter().map(|f| format!("r{run_index}: {f}")));
            continue;
        }
        finalize_run(&loaded.problems, &run_dir)?;
        summary.completed_runs += 1;
        summary.judged += loaded.problems.len();
    }
    if !summary.failures.is_empty() {
        return Err(HarnessError::Partial(format!(
            "{} problem(s) unanswered: {}",
            summary.failures.len(),
            summary.failures.iter().take(3).cloned().collect::<Vec<_>>().join("; ")
        )));
    }
    Ok(summary)
}

/// Orders the run's judgments and responses by problem order and moves them
/// into their final files.
fn finalize_run(problems: &[ProblemInstance], run_dir: &Path) -> Result<(), HarnessError> {
    let partial_j = run_dir.join("judgments.partial.jsonl");
    let partial_r = run_dir.join("responses.partial.jsonl");
    let judgments: Vec<Judgment> = read_jsonl(&partial_j)?;
    let responses: Vec<ResponseLine> = read_jsonl(&partial_r)?;
    let mut by_j: BTreeMap<String, Judgment> = judgments.into_iter().map(|j| (judge_key(j.task, &j.key), j)).collect();
    let mut by_r: BTreeMap<String, ResponseLine> =
        responses.into_iter().map(|r| (judge_key(r.task, &r.key), r)).collect();
    let mut js = Vec::with_capacity(problems.len());
    let mut rs = Vec::with_capacity(problems.len());
    let mut missing = Vec::new();
    for p in problems {
        let k = judge_key(p.task, &p.key);
        match by_j.remove(&k) {
            Some(j) => js.push(j),
            None => missing.push(k.clone()),
        }
        if let Some(r) = by_r.remove(&k) {
            rs.push(r);
        }
    }
    if !missing.is_empty() {
        return Err(HarnessError::IncompleteRun {
            run: run_dir.display().to_string(),
            missing,
        });
    }
    write_atomic(&run_dir.join("responses.jsonl"), &to_jsonl(&rs))?;
    write_atomic(&run_dir.join("judgments.jsonl"), &to_jsonl(&js))?;
    let _ = fs::remove_file(partial_j);
    let _ = fs::remove_file(partial_r);
    Ok(())
}

// ------------------------------------------------------------------- score

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFile {
    pub experiment: String,
    pub model: String,
    pub strategy: Strategy,
    pub runs: Vec<RunMetrics>,
    pub aggregate: AggregateMetrics,
    pub incomplete_runs: Vec<usize>,
}

/// Computes metrics for every completed run index and their aggregate.
pub fn cmd_score(config: &RunConfig) -> Result<ScoreFile, HarnessError> {
    let loaded = load_problems(config)?;
    let problems_hash = loaded.meta.config_hash.clone();
    let exp_dir = experiment_dir(config, &problems_hash);
    let mut per_run = Vec::new();
    let mut incomplete = Vec::new();
    let mut first_missing = None;
    for run_index in 0..config.runs {
        let run_dir = exp_dir.join(format!("r{run_index}"));
        let path = run_dir.join("judgments.jsonl");
        if !path.exists() {
            incomplete.push(run_index);
            let partial = run_dir.join("judgments.partial.jsonl");
            let done: Vec<Judgment> = if partial.exists() {
                read_jsonl(&partial)?
            } else {
                Vec::new()
            };
            first_missing.get_or_insert_with(|| (run_dir.clone(), metrics::missing_judgments(&loaded.problems, &done)));
            continue;
        }
        let meta: RunMeta = read_json(&run_dir.join("meta.json"))?;
        if meta.problems_hash != problems_hash {
            return Err(HarnessError::HashMismatch {
                path: path.display().to_string(),
                expected: problems_hash,
                found: meta.problems_hash,
            });
        }
        let judgments: Vec<Judgment> = read_jsonl(&path)?;
        let m = metrics::run_metrics(&loaded.problems, &judgments).map_err(|e| match e {
            metrics::MetricsError::MissingJudgments(missing) => HarnessError::IncompleteRun {
                run: run_dir.display().to_string(),
                missing,
            },
            other => HarnessError::Partial(other.to_string()),
        })?;
        write_json(&run_dir.join("metrics.json"), &m)?;
        per_run.push(m);
    }
    if per_run.is_empty() {
        let (run, missing) = first_missing.unwrap_or_default();
        return Err(HarnessError::IncompleteRun {
            run: run.display().to_string(),
            missing,
        });
    }
    let score = ScoreFile {
        experiment: config.experiment_id(&problems_hash),
        model: config.model.model_name.clone(),
        strategy: config.strategy,
        aggregate: metrics::aggregate_runs(&per_run),
        runs: per_run,
        incomplete_runs: incomplete.clone(),
    };
    write_json(&exp_dir.join("metrics.json"), &score)?;
    if !incomplete.is_empty() {
        log::warn!("run(s) {incomplete:?} incomplete; scored the others");
    }
    Ok(score)
}

// ------------------------------------------------------------------ report

const COLUMNS: [(&str, &str); 7] = [
    ("CCP Acc", "acc_ccp"),
    ("CCP F1", "f1_ccp"),
    ("PSP", "acc_psp"),
    ("EPP", "acc_epp"),
    ("OP", "acc_op"),
    ("Acc. Avg.", "acc_avg"),
    ("IC Score", "ic_score"),
];

/// `mean±std` with one decimal; rates in [0, 1] are shown as percentages.
pub fn format_cell(field: &str, mean: f64, std: f64) -> String {
    let scale = if field == "ic_score" { 1.0 } else { 100.0 };
    format!("{:.1}±{:.1}", mean * scale, std * scale)
}

pub fn render_report(score: &ScoreFile) -> (String, String) {
    let label = format!("{} ({})", score.model, score.strategy);
    let cells: Vec<String> = COLUMNS
        .iter()
        .map(|(_, f)| {
            let s = score.aggregate.fields[*f];
            format_cell(f, s.mean, s.std)
        })
        .collect();
    let mut md = String::new();
    md.push_str(&format!("| Model | {} |\n", COLUMNS.map(|c| c.0).join(" | ")));
    md.push_str(&format!("|---|{}\n", "---|".repeat(COLUMNS.len())));
    md.push_str(&format!("| {label} | {} |\n", cells.join(" | ")));
    let first = &score.runs[0];
    md.push_str(&format!(
        "\nRuns: {}. Consistency pool N = {}, (program, input) pairs N' = {}, coverage questions = {}. Accuracies and F1 in %, IC Score in [0, 100].\n",
        score.aggregate.runs, first.n, first.n_prime, first.n_ccp
    ));
    if !score.incomplete_runs.is_empty() {
        md.push_str(&format!("Incomplete runs excluded: {:?}\n", score.incomplete_runs));
    }
    let mut csv = format!(
        "model,strategy,runs,{}\n",
        METRIC_FIELDS
            .iter()
            .flat_map(|f| [format!("{f}_mean"), format!("{f}_std")])
            .collect::<Vec<_>>()
            .join(",")
    );
    let values: Vec<String> = METRIC_FIELDS
        .iter()
        .flat_map(|f| {
            let s = score.aggregate.fields[*f];
            [format!("{:.6}", s.mean), format!("{:.6}", s.std)]
        })
        .collect();
    csv.push_str(&format!(
        "{},{},{},{}\n",
        score.model,
        score.strategy,
        score.aggregate.runs,
        values.join(",")
    ));
    (md, csv)
}

/// Renders the scored experiment as markdown and CSV tables.
pub fn cmd_report(config: &RunConfig) -> Result<(PathBuf, String), HarnessError> {
    let meta: ProblemsMeta = read_json(&config.problems_meta_path())
        .map_err(|_| HarnessError::NoMetrics(format!("no problem set in {}", config.workdir.display())))?;
    let exp_dir = experiment_dir(config, &meta.config_hash);
    let path = exp_dir.join("metrics.json");
    if !path.exists() {
        return Err(HarnessError::NoMetrics(format!(
            "{} missing; run score first",
            path.display()
        )));
    }
    let score: ScoreFile = read_json(&path)?;
    if score.runs.is_empty() {
        return Err(HarnessError::NoMetrics(format!("{} holds no runs", path.display())));
    }
    let (md, csv) = render_report(&score);
    write_atomic(&exp_dir.join("report.md"), md.as_bytes())?;
    write_atomic(&exp_dir.join("report.csv"), csv.as_bytes())?;
    Ok((exp_dir.join("report.md"), md))
}
