use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::rng::substream;
use crate::tokenizer::{NspLabel, PretrainInstance};

fn instance(tokens: &[u32], split: usize, masked: &[(u32, u32)], nsp: NspLabel) -> PretrainInstance {
    PretrainInstance {
        token_ids: tokens.to_vec(),
        segment_ids: (0..tokens.len()).map(|i| u32::from(i >= split)).collect(),
        mlm_positions: masked.iter().map(|m| m.0).collect(),
        mlm_labels: masked.iter().map(|m| m.1).collect(),
        nsp_label: nsp,
    }
}

fn small_batch() -> Vec<PretrainInstance> {
    vec![
        instance(&[2, 7, 4, 9, 3, 11, 4, 3], 5, &[(2, 8), (6, 12)], NspLabel::IsNext),
        instance(&[2, 15, 4, 3, 6, 3], 4, &[(2, 16)], NspLabel::NotNext),
        instance(&[2, 3, 4, 3], 2, &[(2, 10)], NspLabel::IsNext),
    ]
}

fn refs(v: &[PretrainInstance]) -> Vec<&PretrainInstance> {
    v.iter().collect()
}

#[test]
fn attention_rows_sum_to_one() {
    let model = Model::<f32>::init(ModelConfig::toy(30)).unwrap();
    let insts = small_batch();
    let batch = PretrainBatch::from_instances(&refs(&insts));
    let probs = model.attention_probabilities(&batch.inputs).unwrap();
    let seq = batch.inputs.seq;
    for layer in &probs {
        for row in layer.chunks_exact(seq) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-5, "row sum {s}");
        }
    }
}

#[test]
fn padding_leaves_losses_unchanged() {
    let model = Model::<f32>::init(ModelConfig::toy(30)).unwrap();
    let insts = small_batch();
    let batch = PretrainBatch::from_instances(&refs(&insts));
    let base = model.pretrain_forward(&batch, None).unwrap().losses;
    let padded = model.pretrain_forward(&batch.pad_to(batch.inputs.seq + 13), None).unwrap().losses;
    assert!((base.mlm - padded.mlm).abs() < 1e-5);
    assert!((base.nsp - padded.nsp).abs() < 1e-5);
}

#[test]
fn eval_forward_is_deterministic() {
    let model = Model::<f32>::init(ModelConfig::toy(30)).unwrap();
    let insts = small_batch();
    let batch = PretrainBatch::from_instances(&refs(&insts));
    let a = model.pretrain_forward(&batch, None).unwrap();
    let b = model.pretrain_forward(&batch, None).unwrap();
    assert_eq!(a.mlm_logits, b.mlm_logits);
    assert_eq!(a.mlm_logits.len(), 4 * 30);
    let mut rng = substream(1, 0);
    let c = model.pretrain_forward(&batch, Some(&mut rng)).unwrap();
    assert_ne!(a.mlm_logits, c.mlm_logits);
}

#[test]
fn degenerate_instance_is_finite() {
    let model = Model::<f32>::init(ModelConfig::toy(30)).unwrap();
    let lone = instance(&[2, 3], 2, &[], NspLabel::NotNext);
    let batch = PretrainBatch::from_instances(&[&lone]).pad_to(16);
    let mut grads = model.params().zeros_like();
    let losses = model.pretrain_gradients(&batch, None, &mut grads).unwrap();
    assert!(losses.mlm.is_finite() && losses.nsp.is_finite());
    assert!(grads.all_finite());
}

#[test]
fn rejects_out_of_range_tokens_and_long_sequences() {
    let model = Model::<f32>::init(ModelConfig {
        max_positions: 8,
        ..ModelConfig::toy(30)
    })
    .unwrap();
    let bad = instance(&[2, 40, 3], 3, &[], NspLabel::IsNext);
    let r = model.pretrain_forward(&PretrainBatch::from_instances(&[&bad]), None);
    assert_eq!(r.unwrap_err(), ModelError::TokenOutOfRange(40));
    let long = instance(&[2; 9], 9, &[], NspLabel::IsNext);
    let r = model.pretrain_forward(&PretrainBatch::from_instances(&[&long]), None);
    assert!(matches!(r, Err(ModelError::SequenceTooLong { len: 9, max: 8 })));
}

#[test]
fn grad_check_passes_on_tiny_model() {
    let report = grad_check(&GradCheckConfig::default()).unwrap();
    assert!(
        report.passed,
        "max {} median {} zero {} worst {:?}",
        report.max_rel_error,
        report.median_rel_error,
        report.zero_violations,
        report.worst(5)
    );
    assert!(report.checks.len() >= 200);
}

#[test]
fn grad_check_with_zero_tolerance_fails() {
    let report = grad_check(&GradCheckConfig {
        tolerance: 0.0,
        ..GradCheckConfig::default()
    })
    .unwrap();
    assert!(!report.passed);
}

#[test]
fn classifier_gradients_match_finite_differences() {
    let cfg = tiny_config();
    let mut model = Model::<f64>::init(cfg).unwrap();
    model.attach_classifier(3, 0.2, 5).unwrap();
    let inputs = InputBatch::from_sequences([(&[2u32, 7, 9, 3][..], &[0u32, 0, 0, 0][..]), (&[2, 12, 3][..], &[0, 0, 0][..])]);
    let labels = [2usize, 0];
    let mut grads = model.params().zeros_like();
    model.classify_gradients(&inputs, &labels, None, &mut grads).unwrap();
    let h = 1e-4;
    for name in ["classifier.weight", "pooler.weight", "layer.0.ffn.in.weight", "embeddings.token"] {
        let t = model.params().index_of(name).unwrap();
        for i in [0usize, 5, 17] {
            let orig = model.params().tensors[t].data[i];
            model.params_mut().tensors[t].data[i] = orig + h;
            let p = model.classify_loss(&inputs, &labels).unwrap();
            model.params_mut().tensors[t].data[i] = orig - h;
            let m = model.classify_loss(&inputs, &labels).unwrap();
            model.params_mut().tensors[t].data[i] = orig;
            let fd = (p - m) / (2.0 * h);
            let an = grads.tensors[t].data[i];
            assert!((fd - an).abs() <= 1e-6 + 1e-4 * an.abs(), "{name}[{i}] fd {fd} analytic {an}");
        }
    }
}

#[test]
fn schedule_phase_reporting() {
    let s = TrainSchedule {
        phase1: PhasePlan { max_len: 16, steps: 3 },
        phase2: PhasePlan { max_len: 32, steps: 2 },
        ..TrainSchedule::default()
    };
    assert_eq!(s.total_steps(), 5);
    assert_eq!(s.phase_after(0), Phase::Phase128);
    assert_eq!(s.phase_after(3), Phase::Phase128);
    assert_eq!(s.phase_after(4), Phase::Phase512);
}

#[test]
fn loss_trend_is_slope() {
    let log: Vec<LossRecord> = (1..=10)
        .map(|s| LossRecord {
            step: s,
            mlm_loss: 5.0 - 0.25 * s as f64,
            nsp_loss: 0.0,
            lr: 0.0,
        })
        .collect();
    assert!((loss_trend(&log, 4).unwrap() + 0.25).abs() < 1e-12);
    assert_eq!(loss_trend(&log[..1], 4), None);
}
