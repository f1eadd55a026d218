use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;

use super::encoder::{Model, PretrainBatch};
use super::params::ParamSet;
use super::{ModelConfig, ModelError};
use crate::rng::{mix, substream};
use crate::tokenizer::{NspLabel, PretrainInstance};

/// L=1, H=8, A=2, F=32, V=20, P=16 with dropout off.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        layers: 1,
        hidden: 8,
        heads: 2,
        ffn: 32,
        vocab_size: 20,
        max_positions: 16,
        type_vocab: 2,
        dropout: 0.0,
        init_std: 0.2,
        seed: 7,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub model: ModelConfig,
    /// Number of scalar parameters to probe.
    pub samples: usize,
    /// Central-difference half step.
    pub step: f64,
    /// Bound on the worst relative error.
    pub tolerance: f64,
    /// Bound on the median relative error.
    pub median_tolerance: f64,
    /// Denominator floor so that gradients near zero are compared absolutely.
    pub floor: f64,
    /// Bound on |finite difference| where the analytic gradient is exactly 0.
    pub zero_tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            model: tiny_config(),
            samples: 256,
            step: 1e-3,
            tolerance: 1e-2,
            median_tolerance: 1e-4,
            floor: 1e-6,
            zero_tolerance: 1e-6,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Probed parameters, worst relative error first.
    pub checks: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub median_rel_error: f64,
    /// Zero-gradient parameters whose finite difference exceeded the bound.
    pub zero_violations: usize,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self, n: usize) -> &[ParamCheck] {
        &self.checks[..n.min(self.checks.len())]
    }
}

/// Two instances of unequal length so the check also covers PAD masking.
fn fixture(cfg: &ModelConfig) -> PretrainBatch {
    let v = cfg.vocab_size as u32;
    let tok = |i: u32| 5 + i % (v - 5);
    let a = PretrainInstance {
        token_ids: alloc::vec![2, tok(0), tok(3), 4, tok(7), 3, tok(2), 4, tok(11), 3],
        segment_ids: alloc::vec![0, 0, 0, 0, 0, 0, 1, 1, 1, 1],
        mlm_positions: alloc::vec![3, 7, 4],
        mlm_labels: alloc::vec![tok(5), tok(9), tok(4)],
        nsp_label: NspLabel::IsNext,
    };
    let b = PretrainInstance {
        token_ids: alloc::vec![2, tok(1), 4, 3, tok(6), 3],
        segment_ids: alloc::vec![0, 0, 0, 0, 1, 1],
        mlm_positions: alloc::vec![2],
        mlm_labels: alloc::vec![tok(8)],
        nsp_label: NspLabel::NotNext,
    };
    PretrainBatch::from_instances(&[&a, &b])
}

fn total_loss(model: &Model<f64>, batch: &PretrainBatch) -> Result<f64, ModelError> {
    Ok(model.pretrain_forward(batch, None)?.losses.total())
}

/// Compares backprop gradients of `mlm + nsp` against central finite
/// differences, entirely in f64, with dropout disabled.
pub fn grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport, ModelError> {
    let model_cfg = ModelConfig {
        dropout: 0.0,
        ..cfg.model
    };
    let mut model = Model::<f64>::init(model_cfg)?;
    let batch = fixture(&model_cfg);
    let mut grads: ParamSet<f64> = model.params().zeros_like();
    model.pretrain_gradients(&batch, None, &mut grads)?;

    let total = model.params().num_scalars();
    let n = cfg.samples.min(total);
    let mut picks: Vec<usize> = sample(&mut substream(mix(cfg.seed, 0x6C), 0), total, n).into_vec();
    picks.sort_unstable();

    let mut checks = Vec::with_capacity(n);
    let mut zero_violations = 0;
    for k in picks {
        let (t, i) = model.params().locate(k).expect("sampled index is in range");
        let original = model.params().tensors[t].data[i];
        model.params_mut().tensors[t].data[i] = original + cfg.step;
        let plus = total_loss(&model, &batch)?;
        model.params_mut().tensors[t].data[i] = original - cfg.step;
        let minus = total_loss(&model, &batch)?;
        model.params_mut().tensors[t].data[i] = original;

        let numeric = (plus - minus) / (2.0 * cfg.step);
        let analytic = grads.tensors[t].data[i];
        if analytic == 0.0 && numeric.abs() > cfg.zero_tolerance {
            zero_violations += 1;
        }
        let denom = analytic.abs().max(numeric.abs()).max(cfg.floor);
        checks.push(ParamCheck {
            tensor: model.params().tensors[t].name.clone(),
            index: i,
            analytic,
            numeric,
            rel_error: (analytic - numeric).abs() / denom,
        });
    }
    checks.sort_by(|a, b| b.rel_error.total_cmp(&a.rel_error));
    let max_rel_error = checks.first().map_or(0.0, |c| c.rel_error);
    let median_rel_error = if checks.is_empty() {
        0.0
    } else {
        let mut errs: Vec<f64> = checks.iter().map(|c| c.rel_error).collect();
        errs.sort_by(f64::total_cmp);
        let m = errs.len() / 2;
        if errs.len() % 2 == 0 {
            (errs[m - 1] + errs[m]) / 2.0
        } else {
            errs[m]
        }
    };
    let passed = !checks.is_empty()
        && cfg.tolerance > 0.0
        && max_rel_error <= cfg.tolerance
        && median_rel_error <= cfg.median_tolerance
        && zero_violations == 0;
    Ok(GradCheckReport {
        checks,
        max_rel_error,
        median_rel_error,
        zero_violations,
        passed,
    })
}
