use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use super::{FinetuneError, TaskName};
use crate::vocab::Casing;

/// How a benchmarked checkpoint was produced.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelTag {
    /// Model variant, e.g. `BERT` or `FinBERT-FinVocab`; for corpus
    /// ablations, the vocabulary variant.
    pub family: String,
    pub casing: Casing,
    /// Pretraining corpus subset, for corpus ablations.
    pub corpus: Option<String>,
}

impl ModelTag {
    pub fn new(family: impl Into<String>, casing: Casing) -> Self {
        ModelTag {
            family: family.into(),
            casing,
            corpus: None,
        }
    }

    pub fn with_corpus(mut self, corpus: impl Into<String>) -> Self {
        self.corpus = Some(corpus.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub tag: ModelTag,
    pub task: TaskName,
    /// Test accuracy of each split, in repetition order.
    pub accuracies: Vec<f64>,
}

impl ReportRow {
    pub fn mean(&self) -> f64 {
        if self.accuracies.is_empty() {
            return 0.0;
        }
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }
}

/// Per-split accuracies of every (model, task) pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

const NO_CORPUS: &str = "-";
const RULE: char = '-';

impl EvalReport {
    pub fn row(&self, tag: &ModelTag, task: TaskName) -> Option<&ReportRow> {
        self.rows.iter().find(|r| &r.tag == tag && r.task == task)
    }

    /// Tab-separated matrix: one row per (model, task) with the mean followed
    /// by every split's accuracy.
    pub fn to_tsv(&self) -> String {
        let reps = self.rows.iter().map(|r| r.accuracies.len()).max().unwrap_or(0);
        let mut out = String::from("family\tcasing\tcorpus\ttask\tmean");
        for r in 1..=reps {
            let _ = write!(out, "\tsplit_{r}");
        }
        out.push('\n');
        for row in &self.rows {
            let corpus = row.tag.corpus.as_deref().unwrap_or(NO_CORPUS);
            let _ = write!(out, "{}\t{}\t{}\t{}\t{}", row.tag.family, row.tag.casing, corpus, row.task, row.mean());
            for a in &row.accuracies {
                let _ = write!(out, "\t{a}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`EvalReport::to_tsv`] output, checking each stored mean
    /// against the mean of its split values.
    pub fn from_tsv(text: &str) -> Result<Self, FinetuneError> {
        let bad = |line: usize, what: &str| FinetuneError::MalformedReport(alloc::format!("line {line}: {what}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, h)) if h.starts_with("family\tcasing\tcorpus\ttask\tmean") => {}
            _ => return Err(bad(1, "missing header")),
        }
        let mut rows = Vec::new();
        for (line, raw) in lines {
            if raw.is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() < 5 {
                return Err(bad(line, "too few columns"));
            }
            let casing: Casing = fields[1].parse().map_err(|_| bad(line, "unknown casing"))?;
            let task: TaskName = fields[3].parse().map_err(|_| bad(line, "unknown task"))?;
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line, "not a number"));
            let mean = num(fields[4])?;
            let accuracies = fields[5..]
                .iter()
                .filter(|s| !s.is_empty())
                .map(|s| num(s))
                .collect::<Result<Vec<f64>, _>>()?;
            if accuracies.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(bad(line, "accuracy outside [0, 1]"));
            }
            let mut tag = ModelTag::new(fields[0], casing);
            if fields[2] != NO_CORPUS {
                tag.corpus = Some(fields[2].into());
            }
            let row = ReportRow { tag, task, accuracies };
            if (row.mean() - mean).abs() > 1e-12 {
                return Err(bad(line, "mean disagrees with split values"));
            }
            rows.push(row);
        }
        Ok(EvalReport { rows })
    }

    fn tasks(&self, rows: &[&ReportRow]) -> Vec<TaskName> {
        TaskName::ALL
            .into_iter()
            .filter(|t| rows.iter().any(|r| r.task == *t))
            .collect()
    }

    /// Tasks down, model variants across with a cased/uncased column pair
    /// each. Covers rows without a corpus tag.
    pub fn render_variant_table(&self) -> String {
        let rows: Vec<&ReportRow> = self.rows.iter().filter(|r| r.tag.corpus.is_none()).collect();
        let mut families: Vec<&str> = Vec::new();
        for r in &rows {
            if !families.contains(&r.tag.family.as_str()) {
                families.push(&r.tag.family);
            }
        }
        let groups: Vec<(&str, Vec<Casing>)> = families
            .iter()
            .map(|&f| {
                let casings = [Casing::Cased, Casing::Uncased]
                    .into_iter()
                    .filter(|c| rows.iter().any(|r| r.tag.family == f && r.tag.casing == *c))
                    .collect();
                (f, casings)
            })
            .collect();
        let tasks = self.tasks(&rows);
        let label_w = tasks.iter().map(|t| t.as_str().len()).max().unwrap_or(0);

        let mut top = pad("", label_w);
        let mut sub = pad("", label_w);
        let mut body: Vec<String> = tasks.iter().map(|t| pad(t.as_str(), label_w)).collect();
        for (family, casings) in &groups {
            let mut widths: Vec<usize> = casings.iter().map(|c| c.as_str().len().max(CELL_W)).collect();
            let inner = widths.iter().sum::<usize>() + GAP * (widths.len() - 1);
            if family.len() > inner {
                *widths.last_mut().expect("group has a column") += family.len() - inner;
            }
            let group_w = widths.iter().sum::<usize>() + GAP * (widths.len() - 1);
            top.push_str(&pad("", GAP));
            top.push_str(&pad(family, group_w));
            for (c, w) in casings.iter().zip(&widths) {
                sub.push_str(&pad("", GAP));
                sub.push_str(&pad(c.as_str(), *w));
                for (t, line) in tasks.iter().zip(body.iter_mut()) {
                    let tag = ModelTag::new(*family, *c);
                    line.push_str(&pad("", GAP));
                    line.push_str(&pad(&cell(self.row(&tag, *t)), *w));
                }
            }
        }
        let mut lines = alloc::vec![top, sub];
        lines.extend(body);
        let end = lines.len();
        frame(&lines, &[0, 1, 2, end])
    }

    /// Vocabulary groups down (tasks within each), pretraining corpora
    /// across. `None` when no row carries a corpus tag.
    pub fn render_corpus_table(&self) -> Option<String> {
        let rows: Vec<&ReportRow> = self.rows.iter().filter(|r| r.tag.corpus.is_some()).collect();
        if rows.is_empty() {
            return None;
        }
        let mut groups: Vec<(&str, Casing)> = Vec::new();
        let mut corpora: Vec<&str> = Vec::new();
        for r in &rows {
            if !groups.contains(&(r.tag.family.as_str(), r.tag.casing)) {
                groups.push((&r.tag.family, r.tag.casing));
            }
            let c = r.tag.corpus.as_deref().expect("filtered on corpus");
            if !corpora.contains(&c) {
                corpora.push(c);
            }
        }
        let mixed_casing = groups.iter().any(|g| g.1 != groups[0].1);
        let group_label = |(f, c): (&str, Casing)| {
            if mixed_casing {
                alloc::format!("{f} {c}")
            } else {
                f.to_string()
            }
        };
        let tasks = self.tasks(&rows);
        let group_w = groups.iter().map(|&g| group_label(g).len()).max().unwrap_or(0);
        let task_w = tasks.iter().map(|t| t.as_str().len()).max().unwrap_or(0);
        let widths: Vec<usize> = corpora.iter().map(|c| c.len().max(CELL_W)).collect();

        let mut header = pad("", group_w + 3 + task_w);
        for (c, w) in corpora.iter().zip(&widths) {
            header.push_str(&pad("", GAP));
            header.push_str(&pad(c, *w));
        }
        let mut lines = alloc::vec![header];
        let mut rules = alloc::vec![0, 1];
        for &(family, casing) in &groups {
            for (i, t) in tasks.iter().enumerate() {
                let label = if i == 0 { group_label((family, casing)) } else { String::new() };
                let mut line = alloc::format!("{} | {}", pad(&label, group_w), pad(t.as_str(), task_w));
                for (c, w) in corpora.iter().zip(&widths) {
                    let tag = ModelTag::new(family, casing).with_corpus(*c);
                    line.push_str(&pad("", GAP));
                    line.push_str(&pad(&cell(self.row(&tag, *t)), *w));
                }
                lines.push(line);
            }
            rules.push(lines.len());
        }
        Some(frame(&lines, &rules))
    }
}

const CELL_W: usize = 5;
const GAP: usize = 2;

fn cell(row: Option<&ReportRow>) -> String {
    row.map_or_else(|| "-".into(), |r| alloc::format!("{:.3}", r.mean()))
}

fn pad(s: &str, width: usize) -> String {
    let mut out = String::from(s);
    out.extend(core::iter::repeat_n(' ', width.saturating_sub(s.chars().count())));
    out
}

/// Joins lines, trimming trailing blanks, with a full-width rule before
/// each index in `rules` (an index equal to `lines.len()` closes the table).
fn frame(lines: &[String], rules: &[usize]) -> String {
    let width = lines.iter().map(|l| l.trim_end().chars().count()).max().unwrap_or(0);
    let rule: String = core::iter::repeat_n(RULE, width).collect();
    let mut out = String::new();
    for i in 0..=lines.len() {
        if rules.contains(&i) {
            out.push_str(&rule);
            out.push('\n');
        }
        if let Some(l) = lines.get(i) {
            out.push_str(l.trim_end());
            out.push('\n');
        }
    }
    out
}
