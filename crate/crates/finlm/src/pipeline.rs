//! Command implementations behind the `finlm` binary.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use finlm_core::corpus::{extract_sections, CorpusManifest, Document, SectionPolicy, Source};
use finlm_core::finetune::{benchmark_jobs, run_job, BenchmarkModel, EvalReport, JobResult, ModelTag, TaskName, TaskSpec};
use finlm_core::model::{grad_check, Checkpoint, GradCheckConfig, GradCheckReport, LossRecord, Pretrainer, TrainVariant};
use finlm_core::vocab::{train_vocab_from_documents, vocab_overlap, Casing, SubwordVocab, VocabTrainConfig};
use rayon::prelude::*;

use crate::config::{parse_pairs, ConfigError, PipelineConfig};
use crate::docfile::ingest_plaintext;
use crate::edgar::{DateRange, EdgarClient, EdgarConfig, RetryPolicy};
use crate::formats::{load_checkpoint, parse_loss_log, read_task, read_vocab, save_checkpoint, write_loss_log, write_vocab};
use crate::store::DocumentStore;

/// Failure of a command, split by exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad or missing settings: exit status 2.
    Config(ConfigError),
    /// Anything that went wrong while running: exit status 1.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn thread_pool(jobs: usize) -> anyhow::Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("starting worker threads")
}

fn load_vocab(path: &Path, casing: Casing) -> anyhow::Result<SubwordVocab> {
    read_vocab(path, casing).with_context(|| format!("reading vocabulary {}", path.display()))
}

fn load_store_documents(cfg: &PipelineConfig) -> CliResult<Vec<Document>> {
    let store = DocumentStore::open(cfg.existing("store")?).map_err(anyhow::Error::from)?;
    let docs = store.load_documents().map_err(anyhow::Error::from)?;
    if docs.is_empty() {
        return Err(anyhow!("store {} holds no documents", store.root().display()).into());
    }
    Ok(docs)
}

/// Path of the loss log written next to a checkpoint.
pub fn loss_log_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("loss.tsv")
}

pub struct CorpusSummary {
    pub added: usize,
    pub dropped: usize,
    pub manifest: CorpusManifest,
}

/// Ingests document-record files and/or fetches and sections EDGAR filings
/// into the store, then rewrites the manifest.
pub fn build_corpus(cfg: &PipelineConfig) -> CliResult<CorpusSummary> {
    let root = cfg.required_path("store")?;
    if cfg.input.is_none() && cfg.ciks.is_empty() {
        return Err(ConfigError::Missing("input").into());
    }
    let input = cfg.input.as_ref().map(|_| cfg.existing("input")).transpose()?;
    let range = if cfg.ciks.is_empty() {
        None
    } else {
        if cfg.user_agent.trim().is_empty() {
            return Err(ConfigError::Missing("user_agent").into());
        }
        Some(DateRange::new(&cfg.start_date, &cfg.end_date).map_err(|e| ConfigError::Value {
            key: "start_date/end_date".into(),
            value: format!("{}..{}", cfg.start_date, cfg.end_date),
            message: e.to_string(),
        })?)
    };

    let store = if root.exists() { DocumentStore::open(root) } else { DocumentStore::create(root) };
    let store = store.map_err(anyhow::Error::from)?;
    let writer = store.writer().map_err(anyhow::Error::from)?;
    let (mut added, mut dropped) = (0, 0);

    if let Some(path) = input {
        let report = ingest_plaintext(path, cfg.source, cfg.strict).with_context(|| format!("ingesting {}", path.display()))?;
        for (line, msg) in &report.skipped {
            log::warn!("{}:{line}: skipped record: {msg}", path.display());
        }
        dropped += report.skipped.len();
        let name = if cfg.corpus_name.is_empty() {
            path.file_stem().and_then(|s| s.to_str()).unwrap_or("records").to_string()
        } else {
            cfg.corpus_name.clone()
        };
        writer.write_documents(&name, &report.documents).map_err(anyhow::Error::from)?;
        added += report.documents.len();
    }

    if let Some(range) = range {
        let mut ec = EdgarConfig::new(cfg.user_agent.clone());
        ec.requests_per_second = cfg.rps;
        ec.retry = RetryPolicy {
            max_retries: cfg.max_retries,
            ..RetryPolicy::default()
        };
        let mut client = EdgarClient::live(ec).context("configuring the EDGAR client")?;
        let mut filings = Vec::new();
        for item in client.fetch_edgar(&cfg.ciks, &cfg.forms, range, &writer) {
            match item {
                Ok(f) => filings.push(f),
                Err(e) if cfg.strict => return Err(anyhow::Error::from(e).into()),
                Err(e) => log::warn!("{e}"),
            }
        }
        let policy = if cfg.fulltext_fallback { SectionPolicy::FullTextFallback } else { SectionPolicy::Strict };
        let sectioned: Vec<_> = thread_pool(cfg.jobs)?.install(|| filings.par_iter().map(|f| extract_sections(f, policy)).collect());
        let mut docs = Vec::new();
        for r in sectioned {
            match r {
                Ok(d) => docs.push(d),
                Err(e) => {
                    log::warn!("dropping filing: {e}");
                    dropped += 1;
                }
            }
        }
        let name = if cfg.corpus_name.is_empty() { "edgar".to_string() } else { cfg.corpus_name.clone() };
        writer.write_documents(&name, &docs).map_err(anyhow::Error::from)?;
        added += docs.len();
    }
    let manifest = writer.refresh_manifest().map_err(anyhow::Error::from)?;
    Ok(CorpusSummary { added, dropped, manifest })
}

pub fn train_vocab(cfg: &PipelineConfig) -> CliResult<SubwordVocab> {
    let out = cfg.required_path("out")?;
    let docs = load_store_documents(cfg)?;
    let mut tc = VocabTrainConfig::new(cfg.vocab_size, cfg.casing);
    tc.min_pair_frequency = cfg.min_pair_frequency;
    let vocab = train_vocab_from_documents(&docs, &tc).context("training the vocabulary")?;
    write_vocab(out, &vocab).with_context(|| format!("writing {}", out.display()))?;
    Ok(vocab)
}

pub struct PretrainSummary {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossRecord>,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
}

fn save_progress(ckpt_path: &Path, log_path: &Path, ckpt: &Checkpoint, log: &[LossRecord]) -> anyhow::Result<()> {
    save_checkpoint(ckpt_path, ckpt).with_context(|| format!("writing {}", ckpt_path.display()))?;
    let file = fs::File::create(log_path).with_context(|| format!("writing {}", log_path.display()))?;
    write_loss_log(BufWriter::new(file), log)?;
    Ok(())
}

/// Pretrains from scratch, continues an existing checkpoint, or resumes an
/// interrupted run of either.
pub fn pretrain(cfg: &PipelineConfig) -> CliResult<PretrainSummary> {
    let vocab_path = cfg.existing("vocab")?;
    let out = cfg.required_path("out")?.to_path_buf();
    let resume = cfg.resume.as_ref().map(|_| cfg.existing("resume")).transpose()?;
    let variant = cfg.schedule.variant;
    let source = match (variant, resume) {
        (TrainVariant::ContinueFromCheckpoint, None) => Some(cfg.existing("checkpoint")?),
        _ => None,
    };
    let docs = load_store_documents(cfg)?;
    let vocab = load_vocab(vocab_path, cfg.casing)?;
    let policy = cfg.mask_policy();

    let (mut trainer, mut log) = if let Some(path) = resume {
        let ckpt = load_checkpoint(path).with_context(|| format!("reading {}", path.display()))?;
        let schedule = match ckpt.variant {
            TrainVariant::FromScratch => cfg.schedule,
            TrainVariant::ContinueFromCheckpoint => cfg.continue_schedule(),
        };
        let step = ckpt.global_step;
        let prior = match fs::read_to_string(loss_log_path(path)) {
            Ok(text) => parse_loss_log(&text).map_err(anyhow::Error::from)?,
            Err(_) => Vec::new(),
        };
        let prior: Vec<LossRecord> = prior.into_iter().filter(|r| r.step <= step).collect();
        if prior.len() as u64 != step {
            log::warn!("loss log for {} covers {} of {step} completed steps", path.display(), prior.len());
        }
        let t = Pretrainer::resume(ckpt, &docs, &vocab, schedule, &policy, cfg.pretrain_options())
            .context("resuming pretraining")?;
        (t, prior)
    } else if let Some(path) = source {
        let src = load_checkpoint(path).with_context(|| format!("reading {}", path.display()))?;
        let t = Pretrainer::continue_from(&src, &docs, &vocab, &policy, cfg.continue_options()).context("continuing pretraining")?;
        (t, Vec::new())
    } else {
        let model = cfg.model_config(vocab.len());
        let t = Pretrainer::from_scratch(&docs, &vocab, model, cfg.schedule, &policy, cfg.pretrain_options())
            .context("setting up pretraining")?;
        (t, Vec::new())
    };

    let log_path = loss_log_path(&out);
    while !trainer.is_done() && (cfg.stop_after == 0 || trainer.global_step() < cfg.stop_after) {
        let r = trainer.step().context("pretraining")?;
        if r.step % 50 == 0 || r.step == 1 {
            log::info!("step {} mlm {:.4} nsp {:.4} lr {:.3e}", r.step, r.mlm_loss, r.nsp_loss, r.lr);
        }
        log.push(r);
        if cfg.save_every > 0 && trainer.global_step() % cfg.save_every == 0 && !trainer.is_done() {
            save_progress(&out, &log_path, &trainer.checkpoint(), &log)?;
        }
    }
    let checkpoint = trainer.checkpoint();
    save_progress(&out, &log_path, &checkpoint, &log)?;
    Ok(PretrainSummary {
        checkpoint,
        log,
        checkpoint_path: out,
        log_path,
    })
}

/// A model entered in a benchmark plan.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanModel {
    pub tag: ModelTag,
    pub checkpoint: PathBuf,
    pub vocab: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanTask {
    pub name: TaskName,
    pub file: PathBuf,
}

/// A benchmark plan: `model = family, casing, corpus|-, checkpoint, vocab`
/// and `task = name, file` lines, plus any pipeline settings.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkPlan {
    pub models: Vec<PlanModel>,
    pub tasks: Vec<PlanTask>,
    pub settings: Vec<(usize, String, String)>,
}

impl BenchmarkPlan {
    pub fn parse(text: &str, origin: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut plan = BenchmarkPlan {
            models: Vec::new(),
            tasks: Vec::new(),
            settings: Vec::new(),
        };
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_relative() { base.join(p) } else { p.to_path_buf() }
        };
        for (line, key, value) in parse_pairs(text, origin)? {
            let bad = |message: String| ConfigError::Syntax {
                origin: origin.into(),
                line,
                message,
            };
            let fields: Vec<&str> = value.split(',').map(str::trim).collect();
            match key.as_str() {
                "model" => {
                    let [family, casing, corpus, ckpt, vocab] = fields[..] else {
                        return Err(bad("expected `model = family, casing, corpus|-, checkpoint, vocab`".into()));
                    };
                    let casing: Casing = casing.parse().map_err(|e| bad(format!("{e}")))?;
                    let mut tag = ModelTag::new(family, casing);
                    if corpus != "-" && !corpus.is_empty() {
                        tag = tag.with_corpus(corpus);
                    }
                    plan.models.push(PlanModel {
                        tag,
                        checkpoint: resolve(ckpt),
                        vocab: resolve(vocab),
                    });
                }
                "task" => {
                    let [name, file] = fields[..] else {
                        return Err(bad("expected `task = name, file`".into()));
                    };
                    let name: TaskName = name.parse().map_err(|e| bad(format!("{e}")))?;
                    plan.tasks.push(PlanTask { name, file: resolve(file) });
                }
                _ => plan.settings.push((line, key, value)),
            }
        }
        if plan.models.is_empty() {
            return Err(ConfigError::Missing("model"));
        }
        if plan.tasks.is_empty() {
            return Err(ConfigError::Missing("task"));
        }
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.into(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, &path.display().to_string(), base)
    }
}

struct LoadedModel {
    tag: ModelTag,
    checkpoint: Checkpoint,
    vocab: SubwordVocab,
}

/// Fine-tunes and scores every (model, task, repetition) job on a pool of
/// `cfg.jobs` threads and assembles the report.
fn run_matrix(cfg: &PipelineConfig, models: &[LoadedModel], tasks: &[TaskSpec]) -> anyhow::Result<EvalReport> {
    let bench: Vec<BenchmarkModel<'_>> = models
        .iter()
        .map(|m| BenchmarkModel {
            tag: &m.tag,
            checkpoint: &m.checkpoint,
            vocab: &m.vocab,
        })
        .collect();
    let plan = cfg.split_plan();
    let ft = cfg.finetune_config();
    let jobs = benchmark_jobs(bench.len(), tasks, &plan)?;
    log::info!("{} fine-tuning jobs on {} thread(s)", jobs.len(), cfg.jobs.max(1));
    let results: Vec<JobResult> = thread_pool(cfg.jobs)?.install(|| {
        jobs.par_iter()
            .map(|job| {
                let r = run_job(&bench, tasks, job, &ft)?;
                log::info!(
                    "{} / {} / split {}: {:.4}",
                    bench[job.model].tag.family,
                    tasks[job.task].name().as_str(),
                    job.repetition + 1,
                    r.accuracy
                );
                Ok::<_, anyhow::Error>(r)
            })
            .collect::<anyhow::Result<_>>()
    })?;
    Ok(EvalReport::assemble(&bench, tasks, &results))
}

fn load_model(tag: ModelTag, ckpt: &Path, vocab: &Path) -> anyhow::Result<LoadedModel> {
    let checkpoint = load_checkpoint(ckpt).with_context(|| format!("reading {}", ckpt.display()))?;
    let vocab = load_vocab(vocab, tag.casing)?;
    Ok(LoadedModel { tag, checkpoint, vocab })
}

fn model_tag(cfg: &PipelineConfig) -> ModelTag {
    let tag = ModelTag::new(cfg.family.clone(), cfg.casing);
    if cfg.corpus_tag.is_empty() { tag } else { tag.with_corpus(cfg.corpus_tag.clone()) }
}

/// Runs the repeated-split protocol for one checkpoint on one task.
pub fn finetune(cfg: &PipelineConfig) -> CliResult<EvalReport> {
    let ckpt = cfg.existing("checkpoint")?;
    let vocab = cfg.existing("vocab")?;
    let task_file = cfg.existing("task_file")?;
    let model = load_model(model_tag(cfg), ckpt, vocab)?;
    let task = read_task(task_file, cfg.task).with_context(|| format!("reading {}", task_file.display()))?;
    Ok(run_matrix(cfg, &[model], &[task])?)
}

/// Runs every model of a plan against every task of it.
pub fn benchmark(cfg: &PipelineConfig, plan: &BenchmarkPlan) -> CliResult<EvalReport> {
    for m in &plan.models {
        for (key, p) in [("checkpoint", &m.checkpoint), ("vocab", &m.vocab)] {
            if !p.exists() {
                return Err(ConfigError::NotFound { key, path: p.clone() }.into());
            }
        }
    }
    for t in &plan.tasks {
        if !t.file.exists() {
            return Err(ConfigError::NotFound {
                key: "task",
                path: t.file.clone(),
            }
            .into());
        }
    }
    let models = plan
        .models
        .iter()
        .map(|m| load_model(m.tag.clone(), &m.checkpoint, &m.vocab))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let tasks = plan
        .tasks
        .iter()
        .map(|t| read_task(&t.file, Some(t.name)).with_context(|| format!("reading {}", t.file.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(run_matrix(cfg, &models, &tasks)?)
}

/// Rendered tables for a report: the variant layout, plus the corpus layout
/// when every model carries a corpus tag.
pub fn render_report(report: &EvalReport) -> String {
    let mut out = report.render_variant_table();
    if let Some(t) = report.render_corpus_table() {
        out.push('\n');
        out.push_str(&t);
    }
    out
}

/// Writes `<out>` (TSV) and `<out>.txt` (rendered tables).
pub fn write_report(out: &Path, report: &EvalReport) -> anyhow::Result<PathBuf> {
    fs::write(out, report.to_tsv()).with_context(|| format!("writing {}", out.display()))?;
    let rendered = out.with_extension("txt");
    fs::write(&rendered, render_report(report)).with_context(|| format!("writing {}", rendered.display()))?;
    Ok(rendered)
}

pub fn gradcheck(cfg: &PipelineConfig) -> CliResult<GradCheckReport> {
    let report = grad_check(&GradCheckConfig {
        tolerance: cfg.grad_tolerance,
        ..GradCheckConfig::default()
    })
    .context("running the gradient check")?;
    Ok(report)
}

pub fn render_gradcheck(report: &GradCheckReport, tolerance: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "checked scalars   {}", report.checks.len());
    let _ = writeln!(s, "max rel error     {:.3e} (tolerance {tolerance:.1e})", report.max_rel_error);
    let _ = writeln!(s, "median rel error  {:.3e}", report.median_rel_error);
    let _ = writeln!(s, "zero violations   {}", report.zero_violations);
    for c in report.worst(5) {
        let _ = writeln!(
            s,
            "  {}[{}] analytic {:+.6e} numeric {:+.6e} rel {:.2e}",
            c.tensor, c.index, c.analytic, c.numeric, c.rel_error
        );
    }
    let _ = writeln!(s, "{}", if report.passed { "PASS" } else { "FAIL" });
    s
}

/// Per-source corpus statistics recounted from the stored documents.
pub fn stats(cfg: &PipelineConfig) -> CliResult<String> {
    let store = DocumentStore::open(cfg.existing("store")?).map_err(anyhow::Error::from)?;
    let docs = store.load_documents().map_err(anyhow::Error::from)?;
    let manifest = CorpusManifest::from_documents(&docs);
    if let Ok(stored) = store.read_manifest() {
        if stored != manifest {
            log::warn!("manifest.tsv is stale; run build-corpus to refresh it");
        }
    }
    let mut s = String::new();
    let _ = writeln!(s, "{:<20}{:>12}{:>12}{:>16}", "source", "documents", "sentences", "tokens");
    let mut sentences_total = 0;
    for src in [Source::CorporateReports, Source::EarningsCalls, Source::AnalystReports] {
        let Some(e) = manifest.entry(src) else { continue };
        let sentences: usize = docs.iter().filter(|d| d.source() == src).map(|d| d.sentence_count()).sum();
        sentences_total += sentences;
        let _ = writeln!(s, "{:<20}{:>12}{:>12}{:>16}", src.as_str(), e.document_count, sentences, e.token_estimate);
    }
    let _ = writeln!(s, "{:<20}{:>12}{:>12}{:>16}", "total", docs.len(), sentences_total, manifest.total_tokens);
    Ok(s)
}

pub fn overlap(a: &Path, b: &Path, casing: Casing) -> CliResult<f64> {
    for p in [a, b] {
        if !p.exists() {
            return Err(ConfigError::NotFound { key: "vocab", path: p.into() }.into());
        }
    }
    let va = load_vocab(a, casing)?;
    let vb = load_vocab(b, casing)?;
    Ok(vocab_overlap(&va, &vb))
}
