//! Plain-text `key = value` pipeline configuration.
//!
//! Later sources override earlier ones: built-in defaults, then the config
//! file, then a benchmark plan, then command-line flags. Every run is fully
//! determined by the resolved settings, which `--print-config` emits in the
//! same format.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use finlm_core::corpus::{FormType, Source};
use finlm_core::finetune::{FineTuneConfig, SplitPlan, TaskName};
use finlm_core::model::{ContinueOptions, ModelConfig, PhasePlan, PretrainOptions, TrainSchedule, TrainVariant};
use finlm_core::tokenizer::MaskPolicy;
use finlm_core::vocab::Casing;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{origin}:{line}: {message}")]
    Syntax { origin: String, line: usize, message: String },
    #[error("{origin}: unknown setting `{key}`")]
    UnknownKey { origin: String, key: String },
    #[error("invalid value `{value}` for `{key}`: {message}")]
    Value { key: String, value: String, message: String },
    #[error("missing required setting `{0}`")]
    Missing(&'static str),
    #[error("setting `{key}`: path {} does not exist", path.display())]
    NotFound { key: &'static str, path: PathBuf },
    #[error("cannot read {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            origin: origin.into(),
            line: i + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax {
                origin: origin.into(),
                line: i + 1,
                message: "empty key".into(),
            });
        }
        out.push((i + 1, k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn variant_name(v: TrainVariant) -> &'static str {
    match v {
        TrainVariant::FromScratch => "scratch",
        TrainVariant::ContinueFromCheckpoint => "continue",
    }
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn list<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub store: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub task_file: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,

    /// Seeds model init, masking, NSP pairing, batch order, splits and
    /// fine-tuning; each consumer mixes in its own stream tag.
    pub seed: u64,
    pub jobs: usize,

    pub source: Source,
    pub strict: bool,
    pub fulltext_fallback: bool,
    pub ciks: Vec<String>,
    pub forms: Vec<FormType>,
    pub start_date: String,
    pub end_date: String,
    pub user_agent: String,
    pub rps: u32,
    pub max_retries: u32,
    pub corpus_name: String,

    pub casing: Casing,
    pub vocab_size: usize,
    pub min_pair_frequency: u64,

    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub init_std: f64,

    pub schedule: TrainSchedule,
    /// Unset means the variant's default: 1e-3 from scratch, 2e-5 when
    /// continuing a checkpoint.
    pub peak_lr: Option<f64>,
    pub warmup_fraction: f64,
    /// Write the checkpoint and loss log every this many steps; 0 only at the end.
    pub save_every: u64,
    /// Stop (and save) once this many steps are complete; 0 runs to the end.
    pub stop_after: u64,
    pub mask: MaskPolicy,

    pub task: Option<TaskName>,
    pub finetune: FineTuneConfig,
    pub split: SplitPlan,
    pub family: String,
    pub corpus_tag: String,

    pub grad_tolerance: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let m = ModelConfig::toy(0);
        PipelineConfig {
            store: None,
            vocab: None,
            checkpoint: None,
            resume: None,
            task_file: None,
            input: None,
            out: None,
            seed: 0,
            jobs: 1,
            source: Source::CorporateReports,
            strict: true,
            fulltext_fallback: false,
            ciks: Vec::new(),
            forms: vec![FormType::TenK, FormType::TenQ],
            start_date: "2019-01-01".into(),
            end_date: "2019-12-31".into(),
            user_agent: String::new(),
            rps: crate::edgar::DEFAULT_RPS,
            max_retries: crate::edgar::RetryPolicy::default().max_retries,
            corpus_name: String::new(),
            casing: Casing::Uncased,
            vocab_size: 8000,
            min_pair_frequency: 2,
            layers: m.layers,
            hidden: m.hidden,
            heads: m.heads,
            ffn: m.ffn,
            max_positions: m.max_positions,
            dropout: m.dropout,
            init_std: m.init_std,
            schedule: TrainSchedule::default(),
            peak_lr: None,
            warmup_fraction: PretrainOptions::default().warmup_fraction,
            save_every: 0,
            stop_after: 0,
            mask: MaskPolicy::default(),
            task: None,
            finetune: FineTuneConfig::default(),
            split: SplitPlan::default(),
            family: "FinBERT".into(),
            corpus_tag: String::new(),
            grad_tolerance: 1e-2,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.into(),
        value: value.into(),
        message: e.to_string(),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(ConfigError::Value {
            key: key.into(),
            value: value.into(),
            message: "expected true or false".into(),
        }),
    }
}

fn path_value(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl PipelineConfig {
    /// Every setting in print order, with its current value.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.schedule;
        let ft = &self.finetune;
        vec![
            ("store", opt_path(&self.store)),
            ("vocab", opt_path(&self.vocab)),
            ("checkpoint", opt_path(&self.checkpoint)),
            ("resume", opt_path(&self.resume)),
            ("task_file", opt_path(&self.task_file)),
            ("input", opt_path(&self.input)),
            ("out", opt_path(&self.out)),
            ("seed", self.seed.to_string()),
            ("jobs", self.jobs.to_string()),
            ("source", self.source.as_str().into()),
            ("strict", self.strict.to_string()),
            ("fulltext_fallback", self.fulltext_fallback.to_string()),
            ("ciks", self.ciks.join(",")),
            ("forms", list(&self.forms.iter().map(|f| f.edgar_name()).collect::<Vec<_>>())),
            ("start_date", self.start_date.clone()),
            ("end_date", self.end_date.clone()),
            ("user_agent", self.user_agent.clone()),
            ("rps", self.rps.to_string()),
            ("max_retries", self.max_retries.to_string()),
            ("corpus_name", self.corpus_name.clone()),
            ("casing", self.casing.as_str().into()),
            ("vocab_size", self.vocab_size.to_string()),
            ("min_pair_frequency", self.min_pair_frequency.to_string()),
            ("layers", self.layers.to_string()),
            ("hidden", self.hidden.to_string()),
            ("heads", self.heads.to_string()),
            ("ffn", self.ffn.to_string()),
            ("max_positions", self.max_positions.to_string()),
            ("dropout", self.dropout.to_string()),
            ("init_std", self.init_std.to_string()),
            ("variant", variant_name(s.variant).into()),
            ("phase1_len", s.phase1.max_len.to_string()),
            ("phase1_steps", s.phase1.steps.to_string()),
            ("phase2_len", s.phase2.max_len.to_string()),
            ("phase2_steps", s.phase2.steps.to_string()),
            ("batch_size", s.batch_size.to_string()),
            ("peak_lr", self.effective_peak_lr().to_string()),
            ("warmup_fraction", self.warmup_fraction.to_string()),
            ("save_every", self.save_every.to_string()),
            ("stop_after", self.stop_after.to_string()),
            ("mask_fraction", self.mask.mask_fraction.to_string()),
            ("mask_token_prob", self.mask.replace_mask_prob.to_string()),
            ("random_token_prob", self.mask.replace_random_prob.to_string()),
            ("keep_token_prob", self.mask.keep_prob.to_string()),
            ("task", self.task.map(|t| t.as_str().to_string()).unwrap_or_default()),
            ("ft_epochs", ft.epochs.to_string()),
            ("ft_lr", ft.learning_rate.to_string()),
            ("ft_batch_size", ft.batch_size.to_string()),
            ("ft_max_len", ft.max_len.to_string()),
            ("ft_head_init_std", ft.head_init_std.to_string()),
            ("ft_warmup_fraction", ft.warmup_fraction.to_string()),
            ("train_fraction", self.split.train_fraction.to_string()),
            ("repetitions", self.split.repetitions.to_string()),
            ("family", self.family.clone()),
            ("corpus_tag", self.corpus_tag.clone()),
            ("grad_tolerance", self.grad_tolerance.to_string()),
        ]
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
        let v = value;
        match key {
            "store" => self.store = path_value(v),
            "vocab" => self.vocab = path_value(v),
            "checkpoint" => self.checkpoint = path_value(v),
            "resume" => self.resume = path_value(v),
            "task_file" => self.task_file = path_value(v),
            "input" => self.input = path_value(v),
            "out" => self.out = path_value(v),
            "seed" => self.seed = parse(key, v)?,
            "jobs" => self.jobs = parse(key, v)?,
            "source" => self.source = parse(key, v)?,
            "strict" => self.strict = parse_bool(key, v)?,
            "fulltext_fallback" => self.fulltext_fallback = parse_bool(key, v)?,
            "ciks" => self.ciks = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect(),
            "forms" => {
                self.forms = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|f| parse(key, f))
                    .collect::<Result<_, _>>()?
            }
            "start_date" => self.start_date = v.into(),
            "end_date" => self.end_date = v.into(),
            "user_agent" => self.user_agent = v.into(),
            "rps" => self.rps = parse(key, v)?,
            "max_retries" => self.max_retries = parse(key, v)?,
            "corpus_name" => self.corpus_name = v.into(),
            "casing" => self.casing = parse(key, v)?,
            "vocab_size" => self.vocab_size = parse(key, v)?,
            "min_pair_frequency" => self.min_pair_frequency = parse(key, v)?,
            "layers" => self.layers = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "ffn" => self.ffn = parse(key, v)?,
            "max_positions" => self.max_positions = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "init_std" => self.init_std = parse(key, v)?,
            "variant" => {
                self.schedule.variant = match v {
                    "scratch" => TrainVariant::FromScratch,
                    "continue" => TrainVariant::ContinueFromCheckpoint,
                    _ => {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            value: v.into(),
                            message: "expected scratch or continue".into(),
                        })
                    }
                }
            }
            "phase1_len" => self.schedule.phase1.max_len = parse(key, v)?,
            "phase1_steps" => self.schedule.phase1.steps = parse(key, v)?,
            "phase2_len" => self.schedule.phase2.max_len = parse(key, v)?,
            "phase2_steps" => self.schedule.phase2.steps = parse(key, v)?,
            "batch_size" => self.schedule.batch_size = parse(key, v)?,
            "peak_lr" => self.peak_lr = if v.is_empty() { None } else { Some(parse(key, v)?) },
            "save_every" => self.save_every = parse(key, v)?,
            "stop_after" => self.stop_after = parse(key, v)?,
            "warmup_fraction" => self.warmup_fraction = parse(key, v)?,
            "mask_fraction" => self.mask.mask_fraction = parse(key, v)?,
            "mask_token_prob" => self.mask.replace_mask_prob = parse(key, v)?,
            "random_token_prob" => self.mask.replace_random_prob = parse(key, v)?,
            "keep_token_prob" => self.mask.keep_prob = parse(key, v)?,
            "task" => self.task = if v.is_empty() { None } else { Some(parse(key, v)?) },
            "ft_epochs" => self.finetune.epochs = parse(key, v)?,
            "ft_lr" => self.finetune.learning_rate = parse(key, v)?,
            "ft_batch_size" => self.finetune.batch_size = parse(key, v)?,
            "ft_max_len" => self.finetune.max_len = parse(key, v)?,
            "ft_head_init_std" => self.finetune.head_init_std = parse(key, v)?,
            "ft_warmup_fraction" => self.finetune.warmup_fraction = parse(key, v)?,
            "train_fraction" => self.split.train_fraction = parse(key, v)?,
            "repetitions" => self.split.repetitions = parse(key, v)?,
            "family" => self.family = v.into(),
            "corpus_tag" => self.corpus_tag = v.into(),
            "grad_tolerance" => self.grad_tolerance = parse(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Applies `pairs`, rejecting unknown keys. Relative path values are
    /// resolved against `base` when given.
    pub fn apply(&mut self, pairs: &[(usize, String, String)], origin: &str, base: Option<&Path>) -> Result<(), ConfigError> {
        for (_, k, v) in pairs {
            let v = match base {
                Some(dir) if PATH_KEYS.contains(&k.as_str()) && !v.is_empty() && Path::new(v).is_relative() => {
                    dir.join(v).display().to_string()
                }
                _ => v.clone(),
            };
            if !self.set(k, &v)? {
                return Err(ConfigError::UnknownKey {
                    origin: origin.into(),
                    key: k.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.into(),
            source,
        })?;
        let origin = path.display().to_string();
        let pairs = parse_pairs(&text, &origin)?;
        self.apply(&pairs, &origin, path.parent())
    }

    /// Path setting that must be set and exist.
    pub fn existing(&self, key: &'static str) -> Result<&Path, ConfigError> {
        let p = self.required_path(key)?;
        if !p.exists() {
            return Err(ConfigError::NotFound { key, path: p.into() });
        }
        Ok(p)
    }

    /// Path setting that must be set; it need not exist yet.
    pub fn required_path(&self, key: &'static str) -> Result<&Path, ConfigError> {
        let slot = match key {
            "store" => &self.store,
            "vocab" => &self.vocab,
            "checkpoint" => &self.checkpoint,
            "resume" => &self.resume,
            "task_file" => &self.task_file,
            "input" => &self.input,
            "out" => &self.out,
            _ => unreachable!("not a path setting: {key}"),
        };
        slot.as_deref().ok_or(ConfigError::Missing(key))
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            hidden: self.hidden,
            heads: self.heads,
            ffn: self.ffn,
            vocab_size,
            max_positions: self.max_positions,
            type_vocab: 2,
            dropout: self.dropout,
            init_std: self.init_std,
            seed: self.seed,
        }
    }

    pub fn mask_policy(&self) -> MaskPolicy {
        MaskPolicy { seed: self.seed, ..self.mask }
    }

    pub fn effective_peak_lr(&self) -> f64 {
        self.peak_lr.unwrap_or(match self.schedule.variant {
            TrainVariant::FromScratch => PretrainOptions::default().peak_lr,
            TrainVariant::ContinueFromCheckpoint => ContinueOptions::default().peak_lr,
        })
    }

    pub fn pretrain_options(&self) -> PretrainOptions {
        PretrainOptions {
            peak_lr: self.effective_peak_lr(),
            warmup_fraction: self.warmup_fraction,
            seed: self.seed,
        }
    }

    pub fn finetune_config(&self) -> FineTuneConfig {
        FineTuneConfig { seed: self.seed, ..self.finetune }
    }

    pub fn split_plan(&self) -> SplitPlan {
        SplitPlan { base_seed: self.seed, ..self.split }
    }

    pub fn continue_options(&self) -> ContinueOptions {
        ContinueOptions {
            steps: self.schedule.phase1.steps,
            peak_lr: self.effective_peak_lr(),
            max_len: self.schedule.phase1.max_len,
            batch_size: self.schedule.batch_size,
            warmup_fraction: self.warmup_fraction,
            seed: self.seed,
        }
    }

    /// The schedule a continuation run follows: phase 1 only.
    pub fn continue_schedule(&self) -> TrainSchedule {
        TrainSchedule {
            phase2: PhasePlan {
                max_len: self.schedule.phase1.max_len,
                steps: 0,
            },
            variant: TrainVariant::ContinueFromCheckpoint,
            ..self.schedule
        }
    }
}

pub const PATH_KEYS: [&str; 7] = ["store", "vocab", "checkpoint", "resume", "task_file", "input", "out"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_round_trips() {
        let mut c = PipelineConfig::default();
        c.set("vocab", "v.vocab").unwrap();
        c.set("ciks", "320193, 789019").unwrap();
        c.set("forms", "10-K").unwrap();
        c.set("variant", "continue").unwrap();
        c.set("task", "fiqa").unwrap();
        c.set("ft_lr", "0.0005").unwrap();
        let text = c.render();
        let mut d = PipelineConfig::default();
        d.apply(&parse_pairs(&text, "x").unwrap(), "x", None).unwrap();
        // The rendered file pins the variant's default learning rate.
        assert_eq!(d.peak_lr, Some(2e-5));
        assert_eq!(c.effective_peak_lr(), d.effective_peak_lr());
        d.peak_lr = None;
        assert_eq!(c, d);
        assert_eq!(d.render(), text);
    }

    #[test]
    fn comments_blanks_and_errors() {
        let pairs = parse_pairs("# c\n\nseed = 4 # trailing\nout=\n", "f").unwrap();
        assert_eq!(pairs, [(3, "seed".into(), "4".into()), (4, "out".into(), String::new())]);
        let err = parse_pairs("seed 4\n", "f.cfg").unwrap_err();
        assert_eq!(err.to_string(), "f.cfg:1: expected `key = value`, got `seed 4`");
        let mut c = PipelineConfig::default();
        let err = c.apply(&[(1, "sede".into(), "1".into())], "f.cfg", None).unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { .. }));
        assert!(matches!(c.set("seed", "x"), Err(ConfigError::Value { .. })));
        assert!(matches!(c.set("strict", "maybe"), Err(ConfigError::Value { .. })));
    }

    #[test]
    fn missing_and_relative_paths() {
        let c = PipelineConfig::default();
        let err = c.existing("vocab").unwrap_err();
        assert_eq!(err.to_string(), "missing required setting `vocab`");
        let mut c = PipelineConfig::default();
        c.apply(&[(1, "vocab".into(), "a.vocab".into())], "p", Some(Path::new("/plans"))).unwrap();
        assert_eq!(c.vocab.as_deref(), Some(Path::new("/plans/a.vocab")));
        assert!(matches!(c.existing("vocab"), Err(ConfigError::NotFound { key: "vocab", .. })));
    }
}
