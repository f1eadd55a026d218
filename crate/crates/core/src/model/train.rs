use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::encoder::{Model, PretrainBatch};
use super::optim::{AdamConfig, OptimizerState};
use super::params::ParamSet;
use super::real::argmax;
use super::{ModelConfig, ModelError};
use crate::corpus::Document;
use crate::rng::{mix, substream};
use crate::tokenizer::{build_instances, MaskPolicy, PretrainInstance};
use crate::vocab::{Fingerprint, SubwordVocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Phase128,
    Phase512,
    FineTuned,
}

impl Phase {
    pub fn code(self) -> u32 {
        match self {
            Phase::Phase128 => 0,
            Phase::Phase512 => 1,
            Phase::FineTuned => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        [Phase::Phase128, Phase::Phase512, Phase::FineTuned]
            .into_iter()
            .find(|p| p.code() == code)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainVariant {
    FromScratch,
    ContinueFromCheckpoint,
}

impl TrainVariant {
    pub fn code(self) -> u32 {
        match self {
            TrainVariant::FromScratch => 0,
            TrainVariant::ContinueFromCheckpoint => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(TrainVariant::FromScratch),
            1 => Some(TrainVariant::ContinueFromCheckpoint),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhasePlan {
    pub max_len: usize,
    pub steps: u64,
}

/// Two-phase sequence-length schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainSchedule {
    pub phase1: PhasePlan,
    pub phase2: PhasePlan,
    pub batch_size: usize,
    pub variant: TrainVariant,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            phase1: PhasePlan {
                max_len: 128,
                steps: 300,
            },
            phase2: PhasePlan {
                max_len: 512,
                steps: 0,
            },
            batch_size: 8,
            variant: TrainVariant::FromScratch,
        }
    }
}

impl TrainSchedule {
    pub fn total_steps(&self) -> u64 {
        self.phase1.steps + self.phase2.steps
    }

    fn plans(&self) -> [PhasePlan; 2] {
        [self.phase1, self.phase2]
    }

    /// Phase of a model that has completed `global_step` updates.
    pub fn phase_after(&self, global_step: u64) -> Phase {
        if global_step <= self.phase1.steps {
            Phase::Phase128
        } else {
            Phase::Phase512
        }
    }
}

/// Optimization settings shared by both phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainOptions {
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    /// Drives batch order, dropout and NSP pairing.
    pub seed: u64,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        PretrainOptions {
            peak_lr: 1e-3,
            warmup_fraction: 0.1,
            seed: 0,
        }
    }
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    /// One-based index of the completed update.
    pub step: u64,
    pub mlm_loss: f64,
    pub nsp_loss: f64,
    pub lr: f64,
}

/// Model, optimizer and progress; the pretraining-to-fine-tuning handoff unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamSet<f32>,
    pub optimizer: OptimizerState<f32>,
    pub global_step: u64,
    pub phase: Phase,
    pub variant: TrainVariant,
    pub vocab_fingerprint: Fingerprint,
}

impl Checkpoint {
    pub fn check_vocab(&self, vocab: &SubwordVocab) -> Result<(), ModelError> {
        if self.vocab_fingerprint == vocab.fingerprint() {
            Ok(())
        } else {
            Err(ModelError::VocabMismatch)
        }
    }

    pub fn model(&self) -> Result<Model<f32>, ModelError> {
        Model::from_params(self.config, self.params.clone())
    }
}

#[derive(Debug, Clone)]
pub struct PretrainRun {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossRecord>,
}

/// Stepwise MLM+NSP trainer.
///
/// Batch composition and dropout masks are pure functions of the seed and
/// the global step, so a trainer resumed from a checkpoint reproduces the
/// uninterrupted run exactly.
pub struct Pretrainer {
    model: Model<f32>,
    optimizer: OptimizerState<f32>,
    grads: ParamSet<f32>,
    schedule: TrainSchedule,
    options: PretrainOptions,
    variant: TrainVariant,
    fingerprint: Fingerprint,
    phases: [Vec<PretrainInstance>; 2],
    global_step: u64,
    order: Option<(usize, u64, Vec<usize>)>,
}

/// Instances for both phases; each phase gets its own masking and pairing draw.
fn phase_instances(
    docs: &[Document],
    vocab: &SubwordVocab,
    schedule: &TrainSchedule,
    policy: &MaskPolicy,
    seed: u64,
    max_positions: usize,
) -> Result<[Vec<PretrainInstance>; 2], ModelError> {
    let mut out: [Vec<PretrainInstance>; 2] = [Vec::new(), Vec::new()];
    for (p, plan) in schedule.plans().iter().enumerate() {
        if plan.steps == 0 {
            continue;
        }
        if plan.max_len > max_positions {
            return Err(ModelError::InvalidConfig(alloc::format!(
                "phase {} max_len {} exceeds max_positions {}",
                p + 1,
                plan.max_len,
                max_positions
            )));
        }
        let phase_policy = MaskPolicy {
            seed: mix(policy.seed, p as u64),
            ..*policy
        };
        out[p] = build_instances(docs, vocab, plan.max_len, &phase_policy, mix(seed, 0x4E5F + p as u64))?;
        if out[p].is_empty() {
            return Err(ModelError::NoInstances(p + 1));
        }
    }
    Ok(out)
}

impl Pretrainer {
    /// Trainer over a freshly initialized model.
    pub fn from_scratch(
        docs: &[Document],
        vocab: &SubwordVocab,
        config: ModelConfig,
        schedule: TrainSchedule,
        policy: &MaskPolicy,
        options: PretrainOptions,
    ) -> Result<Self, ModelError> {
        if config.vocab_size != vocab.len() {
            return Err(ModelError::InvalidConfig(alloc::format!(
                "vocab_size {} does not match vocabulary of {} pieces",
                config.vocab_size,
                vocab.len()
            )));
        }
        let model = Model::init(config)?;
        Self::assemble(model, None, 0, docs, vocab, schedule, policy, options, TrainVariant::FromScratch)
    }

    /// Resumes an interrupted run with its optimizer state; `schedule`,
    /// `policy` and `options` must match the original run.
    pub fn resume(
        checkpoint: Checkpoint,
        docs: &[Document],
        vocab: &SubwordVocab,
        schedule: TrainSchedule,
        policy: &MaskPolicy,
        options: PretrainOptions,
    ) -> Result<Self, ModelError> {
        checkpoint.check_vocab(vocab)?;
        let model = Model::from_params(checkpoint.config, checkpoint.params)?;
        if !checkpoint.optimizer.shape_matches(model.params()) || checkpoint.optimizer.step != checkpoint.global_step {
            return Err(ModelError::InvalidConfig("optimizer state does not match the parameters".into()));
        }
        let expected = AdamConfig::new(options.peak_lr, schedule.total_steps(), options.warmup_fraction);
        if checkpoint.optimizer.config != expected {
            return Err(ModelError::InvalidConfig(
                "schedule or learning rate differs from the interrupted run".into(),
            ));
        }
        Self::assemble(
            model,
            Some(checkpoint.optimizer),
            checkpoint.global_step,
            docs,
            vocab,
            schedule,
            policy,
            options,
            checkpoint.variant,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        model: Model<f32>,
        optimizer: Option<OptimizerState<f32>>,
        global_step: u64,
        docs: &[Document],
        vocab: &SubwordVocab,
        schedule: TrainSchedule,
        policy: &MaskPolicy,
        options: PretrainOptions,
        variant: TrainVariant,
    ) -> Result<Self, ModelError> {
        if schedule.batch_size == 0 {
            return Err(ModelError::InvalidConfig("batch_size must be positive".into()));
        }
        let phases = phase_instances(docs, vocab, &schedule, policy, options.seed, model.config().max_positions)?;
        let optimizer = optimizer.unwrap_or_else(|| {
            OptimizerState::new(
                AdamConfig::new(options.peak_lr, schedule.total_steps(), options.warmup_fraction),
                model.params(),
            )
        });
        Ok(Pretrainer {
            grads: model.params().zeros_like(),
            model,
            optimizer,
            schedule,
            options,
            variant,
            fingerprint: vocab.fingerprint(),
            phases,
            global_step,
            order: None,
        })
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn is_done(&self) -> bool {
        self.global_step >= self.schedule.total_steps()
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn instances(&self, phase: usize) -> &[PretrainInstance] {
        &self.phases[phase]
    }

    fn batch_indices(&mut self, phase: usize, local_step: u64) -> Vec<usize> {
        let n = self.phases[phase].len();
        let bs = self.schedule.batch_size;
        let seed = mix(self.options.seed, 0xBA7C + phase as u64);
        (0..bs)
            .map(|k| {
                let flat = local_step * bs as u64 + k as u64;
                let epoch = flat / n as u64;
                let fresh = !matches!(&self.order, Some((p, e, _)) if *p == phase && *e == epoch);
                if fresh {
                    let mut perm: Vec<usize> = (0..n).collect();
                    perm.shuffle(&mut substream(seed, epoch));
                    self.order = Some((phase, epoch, perm));
                }
                let (_, _, perm) = self.order.as_ref().expect("order set above");
                perm[(flat % n as u64) as usize]
            })
            .collect()
    }

    /// Performs one update. On error the parameters are left untouched.
    pub fn step(&mut self) -> Result<LossRecord, ModelError> {
        let s = self.global_step;
        let (phase, local) = if s < self.schedule.phase1.steps {
            (0, s)
        } else {
            (1, s - self.schedule.phase1.steps)
        };
        let idx = self.batch_indices(phase, local);
        let refs: Vec<&PretrainInstance> = idx.iter().map(|&i| &self.phases[phase][i]).collect();
        let batch = PretrainBatch::from_instances(&refs);
        let mut rng = substream(mix(self.options.seed, 0xD409), s);
        self.grads.fill_zero();
        let with_step = |e: ModelError| match e {
            ModelError::NonFinite { stage, .. } => ModelError::NonFinite { stage, step: Some(s + 1) },
            other => other,
        };
        let losses = self
            .model
            .pretrain_gradients(&batch, Some(&mut rng), &mut self.grads)
            .map_err(with_step)?;
        if !self.grads.all_finite() {
            return Err(with_step(ModelError::NonFinite {
                stage: "gradients".into(),
                step: None,
            }));
        }
        let lr = self.optimizer.update(self.model.params_mut(), &self.grads, |_| true);
        self.global_step += 1;
        Ok(LossRecord {
            step: self.global_step,
            mlm_loss: losses.mlm,
            nsp_loss: losses.nsp,
            lr,
        })
    }

    /// Steps until `global_step == until` (capped at the schedule's end).
    pub fn run_until(&mut self, until: u64) -> Result<Vec<LossRecord>, ModelError> {
        let until = until.min(self.schedule.total_steps());
        let mut log = Vec::new();
        while self.global_step < until {
            log.push(self.step()?);
        }
        Ok(log)
    }

    pub fn run_to_end(&mut self) -> Result<Vec<LossRecord>, ModelError> {
        self.run_until(self.schedule.total_steps())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: *self.model.config(),
            params: self.model.params().clone(),
            optimizer: self.optimizer.clone(),
            global_step: self.global_step,
            phase: self.schedule.phase_after(self.global_step),
            variant: self.variant,
            vocab_fingerprint: self.fingerprint,
        }
    }
}

/// Runs both phases from a fresh initialization.
pub fn pretrain(
    docs: &[Document],
    vocab: &SubwordVocab,
    config: ModelConfig,
    schedule: TrainSchedule,
    policy: &MaskPolicy,
    options: PretrainOptions,
) -> Result<PretrainRun, ModelError> {
    let mut trainer = Pretrainer::from_scratch(docs, vocab, config, schedule, policy, options)?;
    let log = trainer.run_to_end()?;
    Ok(PretrainRun {
        checkpoint: trainer.checkpoint(),
        log,
    })
}

/// Settings for further pretraining of an existing checkpoint on a new corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinueOptions {
    pub steps: u64,
    pub peak_lr: f64,
    pub max_len: usize,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub seed: u64,
}

impl Default for ContinueOptions {
    fn default() -> Self {
        ContinueOptions {
            steps: 100,
            peak_lr: 2e-5,
            max_len: 128,
            batch_size: 8,
            warmup_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Continues pretraining with the source's vocabulary and fresh optimizer
/// moments.
pub fn continue_pretrain(
    source: &Checkpoint,
    docs: &[Document],
    vocab: &SubwordVocab,
    policy: &MaskPolicy,
    opts: ContinueOptions,
) -> Result<PretrainRun, ModelError> {
    let mut trainer = Pretrainer::continue_from(source, docs, vocab, policy, opts)?;
    let log = trainer.run_to_end()?;
    Ok(PretrainRun {
        checkpoint: trainer.checkpoint(),
        log,
    })
}

impl Pretrainer {
    /// Trainer for further pretraining of `source`: a single phase, fresh
    /// optimizer, step counter from zero.
    pub fn continue_from(
        source: &Checkpoint,
        docs: &[Document],
        vocab: &SubwordVocab,
        policy: &MaskPolicy,
        opts: ContinueOptions,
    ) -> Result<Self, ModelError> {
        source.check_vocab(vocab)?;
        let model = Model::from_params(source.config, source.params.clone())?;
        let schedule = TrainSchedule {
            phase1: PhasePlan {
                max_len: opts.max_len,
                steps: opts.steps,
            },
            phase2: PhasePlan {
                max_len: opts.max_len,
                steps: 0,
            },
            batch_size: opts.batch_size,
            variant: TrainVariant::ContinueFromCheckpoint,
        };
        let options = PretrainOptions {
            peak_lr: opts.peak_lr,
            warmup_fraction: opts.warmup_fraction,
            seed: opts.seed,
        };
        Self::assemble(
            model,
            None,
            0,
            docs,
            vocab,
            schedule,
            policy,
            options,
            TrainVariant::ContinueFromCheckpoint,
        )
    }
}

/// Top-1 accuracy of the MLM head over all masked positions, in eval mode.
pub fn mlm_accuracy(model: &Model<f32>, instances: &[PretrainInstance], batch_size: usize) -> Result<f64, ModelError> {
    let vsz = model.config().vocab_size;
    let (mut correct, mut total) = (0usize, 0usize);
    for chunk in instances.chunks(batch_size.max(1)) {
        let refs: Vec<&PretrainInstance> = chunk.iter().collect();
        let batch = PretrainBatch::from_instances(&refs);
        let out = model.pretrain_forward(&batch, None)?;
        for (row, &label) in out.mlm_logits.chunks_exact(vsz).zip(&batch.mlm_labels) {
            correct += usize::from(argmax(row) == label);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}

/// Least-squares slope of the MLM loss over the last `window` log rows
/// (loss per step); negative while the loss is still falling.
pub fn loss_trend(log: &[LossRecord], window: usize) -> Option<f64> {
    let tail = &log[log.len().saturating_sub(window)..];
    if tail.len() < 2 {
        return None;
    }
    let n = tail.len() as f64;
    let mean_x = tail.iter().map(|r| r.step as f64).sum::<f64>() / n;
    let mean_y = tail.iter().map(|r| r.mlm_loss).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for r in tail {
        let dx = r.step as f64 - mean_x;
        sxy += dx * (r.mlm_loss - mean_y);
        sxx += dx * dx;
    }
    Some(sxy / sxx)
}
