//! Sentiment tasks, the repeated 90/10 split protocol, classifier
//! fine-tuning, accuracy evaluation and benchmark reports.

mod bench;
mod report;
mod split;
mod train;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

pub use bench::{benchmark_jobs, run_benchmark, run_job, BenchmarkJob, BenchmarkModel, JobResult};
pub use report::{EvalReport, ModelTag, ReportRow};
pub use split::{make_splits, Split, SplitPlan};
pub use train::{accuracy, accuracy_from_logits, encode_example, evaluate, finetune, Classifier, FineTuneConfig};

use crate::model::ModelError;

pub const TASK_FILE_MAGIC: &str = "finlm-task/1";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FinetuneError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("file holds task {found} but {expected} was requested")]
    TaskMismatch { expected: TaskName, found: TaskName },
    #[error("task {0} has no examples")]
    EmptyTask(TaskName),
    #[error("label {label} is not in the label set of {task}")]
    LabelOutsideTask { task: TaskName, label: Sentiment },
    #[error("the split protocol needs at least 10 examples, got {0}")]
    TooFewExamples(usize),
    #[error("invalid split plan: {0}")]
    InvalidPlan(&'static str),
    #[error("invalid fine-tuning config: {0}")]
    InvalidConfig(String),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("malformed report: {0}")]
    MalformedReport(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sentiment {
    Positive,
    Neutral,
    Negative,
}

impl Sentiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Positive => "positive",
            Sentiment::Neutral => "neutral",
            Sentiment::Negative => "negative",
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sentiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Sentiment::Positive, Sentiment::Neutral, Sentiment::Negative]
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| alloc::format!("unknown label `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskName {
    PhraseBank,
    FiQA,
    AnalystTone,
}

impl TaskName {
    /// Report row order.
    pub const ALL: [TaskName; 3] = [TaskName::PhraseBank, TaskName::FiQA, TaskName::AnalystTone];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskName::PhraseBank => "PhraseBank",
            TaskName::FiQA => "FiQA",
            TaskName::AnalystTone => "AnalystTone",
        }
    }

    /// Labels in class-index order.
    pub fn label_set(self) -> &'static [Sentiment] {
        match self {
            TaskName::FiQA => &[Sentiment::Positive, Sentiment::Negative],
            _ => &[Sentiment::Positive, Sentiment::Neutral, Sentiment::Negative],
        }
    }

    pub fn num_classes(self) -> usize {
        self.label_set().len()
    }

    pub fn class_index(self, label: Sentiment) -> Option<usize> {
        self.label_set().iter().position(|&l| l == label)
    }

    /// Whether the task file carries a signed score instead of a label.
    pub fn is_scored(self) -> bool {
        self == TaskName::FiQA
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskName {
    type Err = FinetuneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskName::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| FinetuneError::UnknownTask(s.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub text: String,
    pub label: Sentiment,
}

impl LabeledExample {
    pub fn new(text: impl Into<String>, label: Sentiment) -> Self {
        LabeledExample {
            text: text.into(),
            label,
        }
    }
}

/// A task with validated examples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    name: TaskName,
    examples: Vec<LabeledExample>,
    dropped_zero_scores: usize,
}

impl TaskSpec {
    pub fn new(name: TaskName, examples: Vec<LabeledExample>) -> Result<Self, FinetuneError> {
        if examples.is_empty() {
            return Err(FinetuneError::EmptyTask(name));
        }
        if let Some(bad) = examples.iter().find(|e| name.class_index(e.label).is_none()) {
            return Err(FinetuneError::LabelOutsideTask {
                task: name,
                label: bad.label,
            });
        }
        Ok(TaskSpec {
            name,
            examples,
            dropped_zero_scores: 0,
        })
    }

    pub fn name(&self) -> TaskName {
        self.name
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Scored records dropped because their score was exactly zero.
    pub fn dropped_zero_scores(&self) -> usize {
        self.dropped_zero_scores
    }

    /// Examples per class, in class-index order.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.name.num_classes()];
        for e in &self.examples {
            counts[self.name.class_index(e.label).expect("validated label")] += 1;
        }
        counts
    }

    pub fn class_labels(&self) -> Vec<usize> {
        self.examples
            .iter()
            .map(|e| self.name.class_index(e.label).expect("validated label"))
            .collect()
    }

    /// Parses a labeled-record file. Scored tasks map positive scores to
    /// `Positive`, negative to `Negative` and drop zeros.
    pub fn parse(text: &str, expected: Option<TaskName>) -> Result<Self, FinetuneError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let fmt_err = |line: usize, message: String| FinetuneError::Format { line, message };
        let (_, header) = lines.next().ok_or_else(|| fmt_err(1, "missing header".into()))?;
        let name = match header.trim_end().split_once(' ') {
            Some((TASK_FILE_MAGIC, task)) => task
                .trim()
                .parse::<TaskName>()
                .map_err(|_| fmt_err(1, alloc::format!("unknown task `{}`", task.trim())))?,
            _ => return Err(fmt_err(1, alloc::format!("expected `{TASK_FILE_MAGIC} <task>` header"))),
        };
        if let Some(expected) = expected {
            if expected != name {
                return Err(FinetuneError::TaskMismatch { expected, found: name });
            }
        }
        let mut examples = Vec::new();
        let mut dropped = 0;
        for (line, raw) in lines {
            let raw = raw.strip_suffix('\r').unwrap_or(raw);
            if raw.trim().is_empty() {
                continue;
            }
            let (text, field) = raw
                .rsplit_once('\t')
                .ok_or_else(|| fmt_err(line, "expected `text<TAB>label`".into()))?;
            let text = text.trim();
            if text.is_empty() {
                return Err(fmt_err(line, "empty text".into()));
            }
            let field = field.trim();
            let label = if name.is_scored() {
                let score: f64 = field
                    .parse()
                    .map_err(|_| fmt_err(line, alloc::format!("`{field}` is not a number")))?;
                if !(-1.0..=1.0).contains(&score) {
                    return Err(fmt_err(line, alloc::format!("score {score} outside [-1, 1]")));
                }
                if score > 0.0 {
                    Sentiment::Positive
                } else if score < 0.0 {
                    Sentiment::Negative
                } else {
                    dropped += 1;
                    continue;
                }
            } else {
                let label: Sentiment = field.parse().map_err(|m| fmt_err(line, m))?;
                if name.class_index(label).is_none() {
                    return Err(fmt_err(line, alloc::format!("label `{field}` not used by {name}")));
                }
                label
            };
            examples.push(LabeledExample::new(text, label));
        }
        let mut spec = TaskSpec::new(name, examples)?;
        spec.dropped_zero_scores = dropped;
        Ok(spec)
    }

    /// Serializes to the labeled-record format; scored tasks are written as
    /// scores of `1` and `-1`.
    pub fn to_file_string(&self) -> String {
        let mut out = alloc::format!("{TASK_FILE_MAGIC} {}\n", self.name);
        for e in &self.examples {
            out.push_str(&e.text.replace(['\t', '\n', '\r'], " "));
            out.push('\t');
            if self.name.is_scored() {
                out.push_str(if e.label == Sentiment::Positive { "1" } else { "-1" });
            } else {
                out.push_str(e.label.as_str());
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} examples)", self.name, self.examples.len())
    }
}
