use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use finlm::config::{ConfigError, PipelineConfig};
use finlm::pipeline::{self, BenchmarkPlan, CliError, CliResult};
use finlm::store::manifest_tsv;

/// Domain-adaptive BERT pretraining pipeline for financial text.
#[derive(Parser)]
#[command(name = "finlm", version)]
struct Cli {
    /// key = value configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Output path of the command.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Override any setting.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest document-record files and/or fetch and section EDGAR filings.
    BuildCorpus {
        #[arg(long)]
        store: Option<PathBuf>,
        /// Document-record file to ingest.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Source of the ingested records.
        #[arg(long)]
        source: Option<String>,
        /// Comma-separated CIKs to fetch from EDGAR.
        #[arg(long)]
        ciks: Option<String>,
        #[arg(long)]
        forms: Option<String>,
        #[arg(long)]
        start: Option<String>,
        #[arg(long)]
        end: Option<String>,
        #[arg(long)]
        user_agent: Option<String>,
        /// Request-rate ceiling.
        #[arg(long)]
        rps: Option<u32>,
        /// Name of the document file written to the store.
        #[arg(long)]
        name: Option<String>,
        /// Keep filings without item headings as full text.
        #[arg(long)]
        fulltext_fallback: bool,
        /// Skip malformed records and failed fetches instead of aborting.
        #[arg(long)]
        lenient: bool,
    },
    /// Train a subword vocabulary over the store.
    TrainVocab {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        casing: Option<String>,
    },
    /// Pretrain from scratch, continue a checkpoint, or resume a run.
    Pretrain {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        casing: Option<String>,
        /// scratch or continue.
        #[arg(long)]
        variant: Option<String>,
        /// Source checkpoint of a continuation.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Interrupted checkpoint to resume.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Phase-1 steps.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        save_every: Option<u64>,
        /// Stop after this many completed steps, leaving a resumable checkpoint.
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Run the repeated-split fine-tuning protocol for one checkpoint and task.
    Finetune {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        casing: Option<String>,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        task_file: Option<PathBuf>,
    },
    /// Run every model of a plan against every task of it.
    Benchmark {
        #[arg(long, value_name = "FILE")]
        plan: PathBuf,
    },
    /// Check analytic gradients against finite differences on a tiny model.
    Gradcheck {
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Per-source document, sentence and token counts.
    Stats {
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Jaccard overlap of two vocabularies.
    VocabOverlap {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        casing: Option<String>,
    },
}

type Overrides = Vec<(&'static str, String)>;

fn push<T: ToString>(o: &mut Overrides, key: &'static str, v: &Option<T>) {
    if let Some(v) = v {
        o.push((key, v.to_string()));
    }
}

fn push_path(o: &mut Overrides, key: &'static str, v: &Option<PathBuf>) {
    push(o, key, &v.as_ref().map(|p| p.display().to_string()));
}

fn command_overrides(cmd: &Command) -> Overrides {
    let mut o = Overrides::new();
    match cmd {
        Command::BuildCorpus {
            store,
            input,
            source,
            ciks,
            forms,
            start,
            end,
            user_agent,
            rps,
            name,
            fulltext_fallback,
            lenient,
        } => {
            push_path(&mut o, "store", store);
            push_path(&mut o, "input", input);
            push(&mut o, "source", source);
            push(&mut o, "ciks", ciks);
            push(&mut o, "forms", forms);
            push(&mut o, "start_date", start);
            push(&mut o, "end_date", end);
            push(&mut o, "user_agent", user_agent);
            push(&mut o, "rps", rps);
            push(&mut o, "corpus_name", name);
            if *fulltext_fallback {
                o.push(("fulltext_fallback", "true".into()));
            }
            if *lenient {
                o.push(("strict", "false".into()));
            }
        }
        Command::TrainVocab { store, size, casing } => {
            push_path(&mut o, "store", store);
            push(&mut o, "vocab_size", size);
            push(&mut o, "casing", casing);
        }
        Command::Pretrain {
            store,
            vocab,
            casing,
            variant,
            checkpoint,
            resume,
            steps,
            save_every,
            stop_after,
        } => {
            push_path(&mut o, "store", store);
            push_path(&mut o, "vocab", vocab);
            push(&mut o, "casing", casing);
            push(&mut o, "variant", variant);
            push_path(&mut o, "checkpoint", checkpoint);
            push_path(&mut o, "resume", resume);
            push(&mut o, "phase1_steps", steps);
            push(&mut o, "save_every", save_every);
            push(&mut o, "stop_after", stop_after);
        }
        Command::Finetune {
            checkpoint,
            vocab,
            casing,
            task,
            task_file,
        } => {
            push_path(&mut o, "checkpoint", checkpoint);
            push_path(&mut o, "vocab", vocab);
            push(&mut o, "casing", casing);
            push(&mut o, "task", task);
            push_path(&mut o, "task_file", task_file);
        }
        Command::Gradcheck { tol } => push(&mut o, "grad_tolerance", tol),
        Command::Stats { store } => push_path(&mut o, "store", store),
        Command::VocabOverlap { casing, .. } => push(&mut o, "casing", casing),
        Command::Benchmark { .. } => {}
    }
    o
}

fn resolve(cli: &Cli) -> Result<(PipelineConfig, Option<BenchmarkPlan>), ConfigError> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &cli.config {
        cfg.load_file(path)?;
    }
    let plan = match &cli.command {
        Command::Benchmark { plan } => {
            let p = BenchmarkPlan::load(plan)?;
            cfg.apply(&p.settings, &plan.display().to_string(), plan.parent())?;
            Some(p)
        }
        _ => None,
    };
    for (i, kv) in cli.set.iter().enumerate() {
        let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::Syntax {
            origin: "--set".into(),
            line: i + 1,
            message: format!("expected KEY=VALUE, got `{kv}`"),
        })?;
        cfg.apply(&[(i + 1, k.trim().into(), v.trim().into())], "--set", None)?;
    }
    let mut o = command_overrides(&cli.command);
    push(&mut o, "seed", &cli.seed);
    push(&mut o, "jobs", &cli.jobs);
    push_path(&mut o, "out", &cli.out);
    for (k, v) in o {
        cfg.set(k, &v)?;
    }
    if cfg.jobs == 0 {
        return Err(ConfigError::Value {
            key: "jobs".into(),
            value: "0".into(),
            message: "must be at least 1".into(),
        });
    }
    Ok((cfg, plan))
}

fn run(cli: &Cli) -> CliResult<()> {
    let (cfg, plan) = resolve(cli)?;
    if cli.print_config {
        print!("{}", cfg.render());
        return Ok(());
    }
    match &cli.command {
        Command::BuildCorpus { .. } => {
            let s = pipeline::build_corpus(&cfg)?;
            eprintln!("added {} documents, dropped {}", s.added, s.dropped);
            print!("{}", manifest_tsv(&s.manifest));
        }
        Command::TrainVocab { .. } => {
            let v = pipeline::train_vocab(&cfg)?;
            println!("wrote {} pieces to {}", v.len(), cfg.required_path("out")?.display());
        }
        Command::Pretrain { .. } => {
            let s = pipeline::pretrain(&cfg)?;
            if let Some(last) = s.log.last() {
                println!("step {} mlm {:.4} nsp {:.4}", last.step, last.mlm_loss, last.nsp_loss);
            }
            println!("checkpoint {}", s.checkpoint_path.display());
            println!("loss log {}", s.log_path.display());
        }
        Command::Finetune { .. } | Command::Benchmark { .. } => {
            let report = match &plan {
                Some(p) => pipeline::benchmark(&cfg, p)?,
                None => pipeline::finetune(&cfg)?,
            };
            print!("{}", pipeline::render_report(&report));
            if let Some(out) = &cfg.out {
                pipeline::write_report(out, &report)?;
            }
        }
        Command::Gradcheck { .. } => {
            let report = pipeline::gradcheck(&cfg)?;
            let text = pipeline::render_gradcheck(&report, cfg.grad_tolerance);
            print!("{text}");
            if let Some(out) = &cfg.out {
                std::fs::write(out, &text).map_err(|e| CliError::Runtime(e.into()))?;
            }
            if !report.passed {
                return Err(CliError::Runtime(anyhow::anyhow!("gradient check failed")));
            }
        }
        Command::Stats { .. } => print!("{}", pipeline::stats(&cfg)?),
        Command::VocabOverlap { a, b, .. } => println!("{:.6}", pipeline::overlap(a, b, cfg.casing)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
