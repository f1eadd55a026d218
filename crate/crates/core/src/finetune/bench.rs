use alloc::vec::Vec;

use super::report::{EvalReport, ModelTag, ReportRow};
use super::split::{make_splits, Split, SplitPlan};
use super::train::{evaluate, finetune, FineTuneConfig};
use super::{FinetuneError, LabeledExample, TaskSpec};
use crate::model::Checkpoint;
use crate::rng::mix;
use crate::vocab::SubwordVocab;

/// A pretrained checkpoint entered into a benchmark, with the vocabulary
/// it was trained with.
#[derive(Debug, Clone, Copy)]
pub struct BenchmarkModel<'a> {
    pub tag: &'a ModelTag,
    pub checkpoint: &'a Checkpoint,
    pub vocab: &'a SubwordVocab,
}

/// One fine-tune-and-evaluate unit: a model, a task and a split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchmarkJob {
    pub model: usize,
    pub task: usize,
    pub repetition: usize,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JobResult {
    pub model: usize,
    pub task: usize,
    pub repetition: usize,
    pub accuracy: f64,
}

/// The full cross product of models, tasks and split repetitions. Jobs are
/// independent and may run in any order or concurrently.
pub fn benchmark_jobs(models: usize, tasks: &[TaskSpec], plan: &SplitPlan) -> Result<Vec<BenchmarkJob>, FinetuneError> {
    let splits = tasks
        .iter()
        .map(|t| make_splits(t.len(), plan))
        .collect::<Result<Vec<_>, _>>()?;
    let mut jobs = Vec::with_capacity(models * tasks.len() * plan.repetitions);
    for model in 0..models {
        for (task, task_splits) in splits.iter().enumerate() {
            for (repetition, split) in task_splits.iter().enumerate() {
                jobs.push(BenchmarkJob {
                    model,
                    task,
                    repetition,
                    split: split.clone(),
                });
            }
        }
    }
    Ok(jobs)
}

/// Fine-tunes on the job's training side and scores its test side. The
/// fine-tuning seed depends on the task and repetition but not the model,
/// so every model sees the same head initialization and batch order.
pub fn run_job(
    models: &[BenchmarkModel<'_>],
    tasks: &[TaskSpec],
    job: &BenchmarkJob,
    cfg: &FineTuneConfig,
) -> Result<JobResult, FinetuneError> {
    let model = &models[job.model];
    let task = &tasks[job.task];
    let pick = |ids: &[usize]| -> Vec<LabeledExample> { ids.iter().map(|&i| task.examples()[i].clone()).collect() };
    let cfg = FineTuneConfig {
        seed: mix(mix(cfg.seed, task.name() as u64), job.repetition as u64),
        ..*cfg
    };
    let classifier = finetune(model.checkpoint, model.vocab, task.name(), &pick(&job.split.train), &cfg)?;
    let accuracy = evaluate(&classifier, model.vocab, &pick(&job.split.test))?;
    Ok(JobResult {
        model: job.model,
        task: job.task,
        repetition: job.repetition,
        accuracy,
    })
}

impl EvalReport {
    /// Collects job results into one row per (model, task), in model then
    /// task order, accuracies in repetition order.
    pub fn assemble(models: &[BenchmarkModel<'_>], tasks: &[TaskSpec], results: &[JobResult]) -> EvalReport {
        let mut rows = Vec::with_capacity(models.len() * tasks.len());
        for (mi, model) in models.iter().enumerate() {
            for (ti, task) in tasks.iter().enumerate() {
                let mut mine: Vec<&JobResult> = results.iter().filter(|r| r.model == mi && r.task == ti).collect();
                mine.sort_by_key(|r| r.repetition);
                rows.push(ReportRow {
                    tag: model.tag.clone(),
                    task: task.name(),
                    accuracies: mine.iter().map(|r| r.accuracy).collect(),
                });
            }
        }
        EvalReport { rows }
    }
}

/// Runs every job sequentially.
pub fn run_benchmark(
    models: &[BenchmarkModel<'_>],
    tasks: &[TaskSpec],
    plan: &SplitPlan,
    cfg: &FineTuneConfig,
) -> Result<EvalReport, FinetuneError> {
    let results = benchmark_jobs(models.len(), tasks, plan)?
        .iter()
        .map(|job| run_job(models, tasks, job, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::assemble(models, tasks, &results))
}
