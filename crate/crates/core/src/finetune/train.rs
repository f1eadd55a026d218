use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::{FinetuneError, LabeledExample, TaskName};
use crate::model::real::argmax;
use crate::model::{AdamConfig, Checkpoint, InputBatch, Model, ModelError, OptimizerState};
use crate::rng::{mix, substream};
use crate::tokenizer::encode_ids;
use crate::vocab::{Fingerprint, SubwordVocab, CLS_ID, SEP_ID};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FineTuneConfig {
    /// Passes over the training examples; 0 leaves the fresh head untrained.
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_len: usize,
    pub head_init_std: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            epochs: 4,
            learning_rate: 2e-5,
            batch_size: 16,
            max_len: 128,
            head_init_std: 0.02,
            warmup_fraction: 0.1,
            seed: 0,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self, max_positions: usize) -> Result<(), FinetuneError> {
        let fail = |m: String| Err(FinetuneError::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.max_len < 3 || self.max_len > max_positions {
            return fail(alloc::format!("max_len must lie in [3, {max_positions}], got {}", self.max_len));
        }
        if !(self.head_init_std > 0.0 && self.head_init_std.is_finite()) {
            return fail("head_init_std must be positive".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return fail("warmup_fraction must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// `[CLS] text [SEP]`, with the text truncated to fit `max_len`.
pub fn encode_example(text: &str, vocab: &SubwordVocab, max_len: usize) -> Vec<u32> {
    let mut ids = encode_ids(text, vocab);
    ids.truncate(max_len.saturating_sub(2));
    let mut out = Vec::with_capacity(ids.len() + 2);
    out.push(CLS_ID);
    out.extend(ids);
    out.push(SEP_ID);
    out
}

fn input_batch(seqs: &[&[u32]]) -> InputBatch {
    let segments: Vec<Vec<u32>> = seqs.iter().map(|s| alloc::vec![0; s.len()]).collect();
    InputBatch::from_sequences(seqs.iter().copied().zip(segments.iter().map(|s| s.as_slice())))
}

/// An encoder with a K-way linear head over the pooled `[CLS]` vector.
#[derive(Debug, Clone)]
pub struct Classifier {
    model: Model<f32>,
    task: Option<TaskName>,
    max_len: usize,
    batch_size: usize,
    vocab_fingerprint: Fingerprint,
    losses: Vec<f64>,
}

fn trainable(name: &str) -> bool {
    !(name.starts_with("mlm.") || name.starts_with("nsp."))
}

impl Classifier {
    /// Fine-tunes every encoder parameter plus a fresh `num_classes`-way head
    /// on class-index labels.
    pub fn train(
        checkpoint: &Checkpoint,
        vocab: &SubwordVocab,
        num_classes: usize,
        texts: &[&str],
        labels: &[usize],
        cfg: &FineTuneConfig,
    ) -> Result<Classifier, FinetuneError> {
        checkpoint.check_vocab(vocab)?;
        cfg.validate(checkpoint.config.max_positions)?;
        if texts.len() != labels.len() {
            return Err(FinetuneError::InvalidConfig("texts and labels differ in length".into()));
        }
        let mut model = checkpoint.model()?;
        model.attach_classifier(num_classes, cfg.head_init_std, mix(cfg.seed, 0xC1A5))?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(FinetuneError::InvalidConfig(alloc::format!("label {bad} out of range")));
        }
        let encoded: Vec<Vec<u32>> = texts.iter().map(|t| encode_example(t, vocab, cfg.max_len)).collect();
        let n = encoded.len();
        let per_epoch = n.div_ceil(cfg.batch_size) as u64;
        let total = per_epoch * cfg.epochs as u64;
        let mut optimizer = OptimizerState::new(
            AdamConfig::new(cfg.learning_rate, total, cfg.warmup_fraction),
            model.params(),
        );
        let mut grads = model.params().zeros_like();
        let mut losses = Vec::with_capacity(total as usize);
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 0..cfg.epochs {
            order.sort_unstable();
            order.shuffle(&mut substream(mix(cfg.seed, 0xF17E), epoch as u64));
            for chunk in order.chunks(cfg.batch_size) {
                let step = optimizer.step;
                let seqs: Vec<&[u32]> = chunk.iter().map(|&i| encoded[i].as_slice()).collect();
                let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                let mut rng = substream(mix(cfg.seed, 0xD40F), step);
                grads.fill_zero();
                let with_step = |e: ModelError| match e {
                    ModelError::NonFinite { stage, .. } => ModelError::NonFinite {
                        stage,
                        step: Some(step + 1),
                    },
                    other => other,
                };
                let loss = model
                    .classify_gradients(&input_batch(&seqs), &batch_labels, Some(&mut rng), &mut grads)
                    .map_err(with_step)?;
                if !grads.all_finite() {
                    return Err(with_step(ModelError::NonFinite {
                        stage: "gradients".into(),
                        step: None,
                    })
                    .into());
                }
                optimizer.update(model.params_mut(), &grads, trainable);
                losses.push(loss);
            }
        }
        Ok(Classifier {
            model,
            task: None,
            max_len: cfg.max_len,
            batch_size: cfg.batch_size,
            vocab_fingerprint: vocab.fingerprint(),
            losses,
        })
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn task(&self) -> Option<TaskName> {
        self.task
    }

    pub fn num_classes(&self) -> usize {
        self.model.num_classes().expect("classifier head attached")
    }

    /// Mean training loss of each update.
    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    /// Class logits per text, eval mode.
    pub fn logits(&self, vocab: &SubwordVocab, texts: &[&str]) -> Result<Vec<Vec<f32>>, FinetuneError> {
        if vocab.fingerprint() != self.vocab_fingerprint {
            return Err(ModelError::VocabMismatch.into());
        }
        let k = self.num_classes();
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            let encoded: Vec<Vec<u32>> = chunk.iter().map(|t| encode_example(t, vocab, self.max_len)).collect();
            let seqs: Vec<&[u32]> = encoded.iter().map(|s| s.as_slice()).collect();
            let logits = self.model.classify_logits(&input_batch(&seqs))?;
            out.extend(logits.chunks_exact(k).map(|r| r.to_vec()));
        }
        Ok(out)
    }

    /// Argmax class per text, lowest index on ties.
    pub fn predict(&self, vocab: &SubwordVocab, texts: &[&str]) -> Result<Vec<usize>, FinetuneError> {
        Ok(self.logits(vocab, texts)?.iter().map(|r| argmax(r)).collect())
    }
}

/// Fine-tunes on a task's examples, labels mapped to the task's class order.
pub fn finetune(
    checkpoint: &Checkpoint,
    vocab: &SubwordVocab,
    task: TaskName,
    train: &[LabeledExample],
    cfg: &FineTuneConfig,
) -> Result<Classifier, FinetuneError> {
    let texts: Vec<&str> = train.iter().map(|e| e.text.as_str()).collect();
    let labels = class_indices(task, train)?;
    let mut classifier = Classifier::train(checkpoint, vocab, task.num_classes(), &texts, &labels, cfg)?;
    classifier.task = Some(task);
    Ok(classifier)
}

fn class_indices(task: TaskName, examples: &[LabeledExample]) -> Result<Vec<usize>, FinetuneError> {
    examples
        .iter()
        .map(|e| task.class_index(e.label).ok_or(FinetuneError::LabelOutsideTask { task, label: e.label }))
        .collect()
}

/// Fraction of predictions equal to their labels.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64, FinetuneError> {
    if labels.is_empty() {
        return Err(FinetuneError::EmptyTestSet);
    }
    assert_eq!(predictions.len(), labels.len(), "one prediction per label");
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Accuracy of row-wise argmax over `classes`-wide logit rows.
pub fn accuracy_from_logits(logits: &[f64], classes: usize, labels: &[usize]) -> Result<f64, FinetuneError> {
    let predictions: Vec<usize> = logits.chunks_exact(classes).map(argmax).collect();
    accuracy(&predictions, labels)
}

/// Test accuracy of a task classifier.
pub fn evaluate(classifier: &Classifier, vocab: &SubwordVocab, test: &[LabeledExample]) -> Result<f64, FinetuneError> {
    if test.is_empty() {
        return Err(FinetuneError::EmptyTestSet);
    }
    let task = classifier
        .task
        .ok_or_else(|| FinetuneError::InvalidConfig("classifier was not trained for a named task".into()))?;
    let labels = class_indices(task, test)?;
    let texts: Vec<&str> = test.iter().map(|e| e.text.as_str()).collect();
    accuracy(&classifier.predict(vocab, &texts)?, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_tallied_logits() {
        #[rustfmt::skip]
        let logits = [
            2.0, 1.0, 0.0,
            0.0, 3.0, 1.0,
            0.5, 0.5, 0.1, // tie: class 0
            0.0, 0.0, 4.0,
            1.0, 2.0, 3.0,
            -1.0, -2.0, -3.0,
            0.2, 0.2, 0.2, // three-way tie: class 0
            0.0, 1.0, 0.0,
            5.0, 1.0, 5.0, // tie: class 0
            0.0, 0.0, 0.1,
        ];
        let labels = [0, 1, 1, 2, 2, 0, 2, 1, 0, 1];
        // Correct: rows 0, 1, 3, 4, 5, 7, 8.
        assert_eq!(accuracy_from_logits(&logits, 3, &labels).unwrap(), 0.7);
    }

    #[test]
    fn perfect_and_empty() {
        assert_eq!(accuracy(&[1, 0, 2], &[1, 0, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[], &[]), Err(FinetuneError::EmptyTestSet));
    }
}
