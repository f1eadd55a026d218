use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::real::Real;
use super::{ModelConfig, ModelError};
use crate::rng::{mix, substream};

/// A named, dense, row-major parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Tensor {
            name: name.into(),
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    /// Decoupled weight decay applies to weight matrices and embedding
    /// tables, never to biases or layer-norm parameters.
    pub fn decays(&self) -> bool {
        !(self.name.ends_with(".bias") || self.name.contains(".norm."))
    }

    /// Parameters that belong to the pretraining objectives only.
    pub fn is_pretraining_head(&self) -> bool {
        self.name.starts_with("mlm.") || self.name.starts_with("nsp.")
    }
}

/// All trainable tensors of a model, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn zeros_like(&self) -> Self {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: vec![T::zero(); t.data.len()],
                })
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Element-wise conversion to another precision.
    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::of(v.f64())).collect(),
                })
                .collect(),
        }
    }

    /// Flat scalar address `(tensor, offset)` of the `k`-th scalar.
    pub fn locate(&self, mut k: usize) -> Option<(usize, usize)> {
        for (i, t) in self.tensors.iter().enumerate() {
            if k < t.data.len() {
                return Some((i, k));
            }
            k -= t.data.len();
        }
        None
    }
}

/// Tensor indices of one encoder layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerSlots {
    pub query_w: usize,
    pub query_b: usize,
    pub key_w: usize,
    pub key_b: usize,
    pub value_w: usize,
    pub value_b: usize,
    pub out_w: usize,
    pub out_b: usize,
    pub attn_norm_g: usize,
    pub attn_norm_b: usize,
    pub ffn_in_w: usize,
    pub ffn_in_b: usize,
    pub ffn_out_w: usize,
    pub ffn_out_b: usize,
    pub ffn_norm_g: usize,
    pub ffn_norm_b: usize,
}

/// Tensor indices of every role in a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Layout {
    pub token_emb: usize,
    pub position_emb: usize,
    pub segment_emb: usize,
    pub emb_norm_g: usize,
    pub emb_norm_b: usize,
    pub layers: Vec<LayerSlots>,
    pub mlm_w: usize,
    pub mlm_b: usize,
    pub mlm_norm_g: usize,
    pub mlm_norm_b: usize,
    pub mlm_out_b: usize,
    pub pooler_w: usize,
    pub pooler_b: usize,
    pub nsp_w: usize,
    pub nsp_b: usize,
    /// Present once a classification head is attached.
    pub classifier: Option<(usize, usize)>,
}

/// Names and shapes of every base tensor, in storage order.
pub fn tensor_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (h, f, v) = (cfg.hidden, cfg.ffn, cfg.vocab_size);
    let mut specs: Vec<(String, Vec<usize>)> = vec![
        ("embeddings.token".into(), vec![v, h]),
        ("embeddings.position".into(), vec![cfg.max_positions, h]),
        ("embeddings.segment".into(), vec![cfg.type_vocab, h]),
        ("embeddings.norm.gain".into(), vec![h]),
        ("embeddings.norm.bias".into(), vec![h]),
    ];
    for l in 0..cfg.layers {
        for proj in ["query", "key", "value", "output"] {
            specs.push((format!("layer.{l}.attention.{proj}.weight"), vec![h, h]));
            specs.push((format!("layer.{l}.attention.{proj}.bias"), vec![h]));
        }
        specs.push((format!("layer.{l}.attention.norm.gain"), vec![h]));
        specs.push((format!("layer.{l}.attention.norm.bias"), vec![h]));
        specs.push((format!("layer.{l}.ffn.in.weight"), vec![h, f]));
        specs.push((format!("layer.{l}.ffn.in.bias"), vec![f]));
        specs.push((format!("layer.{l}.ffn.out.weight"), vec![f, h]));
        specs.push((format!("layer.{l}.ffn.out.bias"), vec![h]));
        specs.push((format!("layer.{l}.ffn.norm.gain"), vec![h]));
        specs.push((format!("layer.{l}.ffn.norm.bias"), vec![h]));
    }
    specs.extend([
        ("mlm.transform.weight".into(), vec![h, h]),
        ("mlm.transform.bias".into(), vec![h]),
        ("mlm.norm.gain".into(), vec![h]),
        ("mlm.norm.bias".into(), vec![h]),
        ("mlm.output.bias".into(), vec![v]),
        ("pooler.weight".into(), vec![h, h]),
        ("pooler.bias".into(), vec![h]),
        ("nsp.weight".into(), vec![h, 2]),
        ("nsp.bias".into(), vec![2]),
    ]);
    specs
}

impl Layout {
    /// Resolves tensor roles by name and verifies every shape.
    pub fn resolve<T: Real>(params: &ParamSet<T>, cfg: &ModelConfig) -> Result<Layout, ModelError> {
        let find = |name: &str, shape: &[usize]| -> Result<usize, ModelError> {
            let i = params
                .index_of(name)
                .ok_or_else(|| ModelError::MissingTensor(name.into()))?;
            if params.tensors[i].shape != shape {
                return Err(ModelError::ShapeMismatch {
                    name: name.into(),
                    expected: shape.to_vec(),
                    found: params.tensors[i].shape.clone(),
                });
            }
            Ok(i)
        };
        let specs = tensor_specs(cfg);
        let mut slots = Vec::with_capacity(specs.len());
        for (name, shape) in &specs {
            slots.push(find(name, shape)?);
        }
        let mut it = slots.into_iter();
        let mut next = || it.next().expect("spec count is fixed");
        let token_emb = next();
        let position_emb = next();
        let segment_emb = next();
        let emb_norm_g = next();
        let emb_norm_b = next();
        let mut layers = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            layers.push(LayerSlots {
                query_w: next(),
                query_b: next(),
                key_w: next(),
                key_b: next(),
                value_w: next(),
                value_b: next(),
                out_w: next(),
                out_b: next(),
                attn_norm_g: next(),
                attn_norm_b: next(),
                ffn_in_w: next(),
                ffn_in_b: next(),
                ffn_out_w: next(),
                ffn_out_b: next(),
                ffn_norm_g: next(),
                ffn_norm_b: next(),
            });
        }
        let mut layout = Layout {
            token_emb,
            position_emb,
            segment_emb,
            emb_norm_g,
            emb_norm_b,
            layers,
            mlm_w: next(),
            mlm_b: next(),
            mlm_norm_g: next(),
            mlm_norm_b: next(),
            mlm_out_b: next(),
            pooler_w: next(),
            pooler_b: next(),
            nsp_w: next(),
            nsp_b: next(),
            classifier: None,
        };
        if let (Some(w), Some(b)) = (params.index_of("classifier.weight"), params.index_of("classifier.bias")) {
            let k = params.tensors[b].shape.first().copied().unwrap_or(0);
            if params.tensors[w].shape != [cfg.hidden, k] || params.tensors[b].shape.len() != 1 {
                return Err(ModelError::ShapeMismatch {
                    name: "classifier.weight".into(),
                    expected: vec![cfg.hidden, k],
                    found: params.tensors[w].shape.clone(),
                });
            }
            layout.classifier = Some((w, b));
        }
        Ok(layout)
    }
}

/// Draws from N(0, std²) truncated to two standard deviations.
fn truncated_normal(rng: &mut crate::rng::Rng, std: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

fn init_tensor<T: Real>(name: String, shape: Vec<usize>, std: f64, seed: u64, index: usize) -> Tensor<T> {
    let len = shape.iter().product();
    let data = if name.ends_with(".bias") {
        vec![T::zero(); len]
    } else if name.ends_with(".gain") {
        vec![T::one(); len]
    } else {
        let mut rng = substream(mix(seed, 0x1417), index as u64);
        (0..len).map(|_| T::of(truncated_normal(&mut rng, std))).collect()
    };
    Tensor { name, shape, data }
}

/// Fresh parameters: truncated-normal weights, zero biases, unit gains.
pub fn init_params<T: Real>(cfg: &ModelConfig) -> ParamSet<T> {
    ParamSet {
        tensors: tensor_specs(cfg)
            .into_iter()
            .enumerate()
            .map(|(i, (name, shape))| init_tensor(name, shape, cfg.init_std, cfg.seed, i))
            .collect(),
    }
}

/// Appends a freshly initialized `classes`-way head, replacing any existing one.
pub fn attach_classifier<T: Real>(params: &mut ParamSet<T>, hidden: usize, classes: usize, std: f64, seed: u64) {
    params
        .tensors
        .retain(|t| t.name != "classifier.weight" && t.name != "classifier.bias");
    let base = params.tensors.len();
    params.tensors.push(init_tensor(
        "classifier.weight".into(),
        vec![hidden, classes],
        std,
        mix(seed, 0xC1A5),
        base,
    ));
    params
        .tensors
        .push(init_tensor("classifier.bias".into(), vec![classes], std, seed, base + 1));
}
