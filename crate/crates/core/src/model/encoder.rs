//! Transformer encoder with MLM, NSP and classification heads, and the
//! matching hand-written backward pass.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::params::{attach_classifier, init_params, Layout, ParamSet, Tensor};
use super::real::{
    gelu, gelu_grad, gemm, layer_norm, layer_norm_backward, linear, linear_backward, softmax_cross_entropy,
    NormCache, Real,
};
use super::{ModelConfig, ModelError};
use crate::rng::Rng;
use crate::tokenizer::PretrainInstance;
use crate::vocab::PAD_ID;

/// Padded token batch, `batch × seq`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBatch {
    pub batch: usize,
    pub seq: usize,
    pub tokens: Vec<u32>,
    pub segments: Vec<u32>,
    /// `false` for padding; padded keys receive no attention.
    pub attend: Vec<bool>,
}

impl InputBatch {
    /// Pads `(tokens, segments)` pairs to the longest with `[PAD]`.
    pub fn from_sequences<'a, I>(seqs: I) -> Self
    where
        I: IntoIterator<Item = (&'a [u32], &'a [u32])>,
    {
        let seqs: Vec<_> = seqs.into_iter().collect();
        let seq = seqs.iter().map(|(t, _)| t.len()).max().unwrap_or(0);
        let mut batch = InputBatch {
            batch: seqs.len(),
            seq,
            tokens: Vec::with_capacity(seqs.len() * seq),
            segments: Vec::with_capacity(seqs.len() * seq),
            attend: Vec::with_capacity(seqs.len() * seq),
        };
        for (tokens, segments) in seqs {
            debug_assert_eq!(tokens.len(), segments.len());
            batch.tokens.extend_from_slice(tokens);
            batch.segments.extend_from_slice(segments);
            batch.attend.extend(core::iter::repeat_n(true, tokens.len()));
            let pad = seq - tokens.len();
            batch.tokens.extend(core::iter::repeat_n(PAD_ID, pad));
            batch.segments.extend(core::iter::repeat_n(0, pad));
            batch.attend.extend(core::iter::repeat_n(false, pad));
        }
        batch
    }

    /// Extends every row with masked `[PAD]` positions up to `seq`.
    pub fn pad_to(&self, seq: usize) -> InputBatch {
        assert!(seq >= self.seq);
        let mut out = InputBatch {
            batch: self.batch,
            seq,
            tokens: Vec::with_capacity(self.batch * seq),
            segments: Vec::with_capacity(self.batch * seq),
            attend: Vec::with_capacity(self.batch * seq),
        };
        let extra = seq - self.seq;
        for b in 0..self.batch {
            let r = b * self.seq..(b + 1) * self.seq;
            out.tokens.extend_from_slice(&self.tokens[r.clone()]);
            out.segments.extend_from_slice(&self.segments[r.clone()]);
            out.attend.extend_from_slice(&self.attend[r]);
            out.tokens.extend(core::iter::repeat_n(PAD_ID, extra));
            out.segments.extend(core::iter::repeat_n(0, extra));
            out.attend.extend(core::iter::repeat_n(false, extra));
        }
        out
    }

    fn rows(&self) -> usize {
        self.batch * self.seq
    }
}

/// Inputs and targets for one pretraining step.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainBatch {
    pub inputs: InputBatch,
    /// Flat `b * seq + t` row of each masked position.
    pub mlm_rows: Vec<usize>,
    pub mlm_labels: Vec<usize>,
    pub nsp_labels: Vec<usize>,
}

impl PretrainBatch {
    pub fn from_instances(instances: &[&PretrainInstance]) -> Self {
        let inputs = InputBatch::from_sequences(
            instances
                .iter()
                .map(|i| (i.token_ids.as_slice(), i.segment_ids.as_slice())),
        );
        let mut mlm_rows = Vec::new();
        let mut mlm_labels = Vec::new();
        for (b, inst) in instances.iter().enumerate() {
            for (&p, &label) in inst.mlm_positions.iter().zip(&inst.mlm_labels) {
                mlm_rows.push(b * inputs.seq + p as usize);
                mlm_labels.push(label as usize);
            }
        }
        PretrainBatch {
            inputs,
            mlm_rows,
            mlm_labels,
            nsp_labels: instances.iter().map(|i| i.nsp_label.class_index()).collect(),
        }
    }

    /// Same batch with extra masked padding on every row.
    pub fn pad_to(&self, seq: usize) -> PretrainBatch {
        let old = self.inputs.seq;
        PretrainBatch {
            inputs: self.inputs.pad_to(seq),
            mlm_rows: self.mlm_rows.iter().map(|r| (r / old) * seq + r % old).collect(),
            mlm_labels: self.mlm_labels.clone(),
            nsp_labels: self.nsp_labels.clone(),
        }
    }
}

/// Mean losses of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    pub mlm: f64,
    pub nsp: f64,
}

impl Losses {
    pub fn total(&self) -> f64 {
        self.mlm + self.nsp
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutput<T> {
    pub losses: Losses,
    /// `masked positions × vocab`.
    pub mlm_logits: Vec<T>,
    /// `batch × 2`.
    pub nsp_logits: Vec<T>,
}

struct LayerCache<T> {
    input: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    ctx: Vec<T>,
    attn_drop: Option<Vec<T>>,
    norm1: NormCache<T>,
    y1: Vec<T>,
    ffn_pre: Vec<T>,
    ffn_act: Vec<T>,
    ffn_drop: Option<Vec<T>>,
    norm2: NormCache<T>,
}

struct EncoderCache<T> {
    emb_norm: NormCache<T>,
    emb_drop: Option<Vec<T>>,
    layers: Vec<LayerCache<T>>,
    output: Vec<T>,
}

struct PoolCache<T> {
    cls: Vec<T>,
    pooled: Vec<T>,
}

/// Parameters plus the configuration that shapes them.
#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamSet<T>,
    layout: Layout,
}

fn dropout<T: Real>(x: &mut [T], rate: f64, rng: Option<&mut Rng>) -> Option<Vec<T>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    for (v, m) in x.iter_mut().zip(&mask) {
        *v *= *m;
    }
    Some(mask)
}

fn apply_mask<T: Real>(d: &[T], mask: &Option<Vec<T>>) -> Vec<T> {
    match mask {
        Some(m) => d.iter().zip(m).map(|(a, b)| *a * *b).collect(),
        None => d.to_vec(),
    }
}

fn check_finite<T: Real>(values: &[T], stage: &str) -> Result<(), ModelError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite {
            stage: stage.into(),
            step: None,
        })
    }
}

/// Disjoint mutable views of two tensors' data.
fn two_mut<T>(ts: &mut [Tensor<T>], i: usize, j: usize) -> (&mut [T], &mut [T]) {
    assert_ne!(i, j);
    if i < j {
        let (a, b) = ts.split_at_mut(j);
        (&mut a[i].data, &mut b[0].data)
    } else {
        let (a, b) = ts.split_at_mut(i);
        (&mut b[0].data, &mut a[j].data)
    }
}

fn gather<T: Real>(x: &[T], rows: &[usize], width: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows.len() * width);
    for &r in rows {
        out.extend_from_slice(&x[r * width..(r + 1) * width]);
    }
    out
}

fn scatter_add<T: Real>(dst: &mut [T], rows: &[usize], src: &[T], width: usize) {
    for (i, &r) in rows.iter().enumerate() {
        for (d, s) in dst[r * width..(r + 1) * width].iter_mut().zip(&src[i * width..(i + 1) * width]) {
            *d += *s;
        }
    }
}

impl<T: Real> Model<T> {
    /// Freshly initialized model.
    pub fn init(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let params = init_params(&config);
        Model::from_params(config, params)
    }

    pub fn from_params(config: ModelConfig, params: ParamSet<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::resolve(&params, &config)?;
        Ok(Model {
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet<T> {
        self.params
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Number of classes of the attached head, if any.
    pub fn num_classes(&self) -> Option<usize> {
        self.layout.classifier.map(|(_, b)| self.params.tensors[b].data.len())
    }

    /// Attaches (or replaces) a fresh `classes`-way classification head.
    pub fn attach_classifier(&mut self, classes: usize, init_std: f64, seed: u64) -> Result<(), ModelError> {
        if classes < 2 {
            return Err(ModelError::TooFewClasses(classes));
        }
        attach_classifier(&mut self.params, self.config.hidden, classes, init_std, seed);
        self.layout = Layout::resolve(&self.params, &self.config)?;
        Ok(())
    }

    fn t(&self, i: usize) -> &[T] {
        &self.params.tensors[i].data
    }

    fn validate_inputs(&self, b: &InputBatch) -> Result<(), ModelError> {
        if b.seq > self.config.max_positions {
            return Err(ModelError::SequenceTooLong {
                len: b.seq,
                max: self.config.max_positions,
            });
        }
        if let Some(&bad) = b.tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(ModelError::TokenOutOfRange(bad));
        }
        if let Some(&bad) = b.segments.iter().find(|&&s| s as usize >= self.config.type_vocab) {
            return Err(ModelError::TokenOutOfRange(bad));
        }
        Ok(())
    }

    fn encode(&self, b: &InputBatch, mut rng: Option<&mut Rng>) -> Result<EncoderCache<T>, ModelError> {
        self.validate_inputs(b)?;
        let h = self.config.hidden;
        let n = b.rows();
        let (tok, pos, seg) = (
            self.t(self.layout.token_emb),
            self.t(self.layout.position_emb),
            self.t(self.layout.segment_emb),
        );
        let mut emb = vec![T::zero(); n * h];
        for row in 0..n {
            let t = row % b.seq;
            let tk = b.tokens[row] as usize;
            let sg = b.segments[row] as usize;
            let e = &mut emb[row * h..(row + 1) * h];
            for j in 0..h {
                e[j] = tok[tk * h + j] + pos[t * h + j] + seg[sg * h + j];
            }
        }
        let (mut x, emb_norm) = layer_norm(
            &emb,
            self.t(self.layout.emb_norm_g),
            self.t(self.layout.emb_norm_b),
            h,
        );
        let emb_drop = dropout(&mut x, self.config.dropout, rng.as_deref_mut());
        check_finite(&x, "embeddings")?;

        let mut layers = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let (cache, out) = self.layer_forward(l, x, b, rng.as_deref_mut())?;
            layers.push(cache);
            x = out;
        }
        Ok(EncoderCache {
            emb_norm,
            emb_drop,
            layers,
            output: x,
        })
    }

    fn layer_forward(
        &self,
        l: usize,
        x: Vec<T>,
        b: &InputBatch,
        mut rng: Option<&mut Rng>,
    ) -> Result<(LayerCache<T>, Vec<T>), ModelError> {
        let s = self.layout.layers[l];
        let cfg = &self.config;
        let (h, f, heads) = (cfg.hidden, cfg.ffn, cfg.heads);
        let dh = h / heads;
        let (n, seq) = (b.rows(), b.seq);

        let q = linear(&x, self.t(s.query_w), self.t(s.query_b), n, h, h);
        let k = linear(&x, self.t(s.key_w), self.t(s.key_b), n, h, h);
        let v = linear(&x, self.t(s.value_w), self.t(s.value_b), n, h, h);
        let scale = T::of(1.0 / libm::sqrt(dh as f64));
        let mut probs = vec![T::zero(); b.batch * heads * seq * seq];
        let mut ctx = vec![T::zero(); n * h];
        for bi in 0..b.batch {
            let attend = &b.attend[bi * seq..(bi + 1) * seq];
            for hd in 0..heads {
                let block = &mut probs[(bi * heads + hd) * seq * seq..][..seq * seq];
                let off = bi * seq * h + hd * dh;
                T::gemm_raw(seq, dh, seq, scale, &q[off..], h, 1, &k[off..], 1, h, T::zero(), block, seq, 1);
                for row in block.chunks_exact_mut(seq) {
                    let max = row
                        .iter()
                        .zip(attend)
                        .filter(|(_, &a)| a)
                        .fold(T::neg_infinity(), |m, (v, _)| m.max(*v));
                    let mut sum = T::zero();
                    for (v, &a) in row.iter_mut().zip(attend) {
                        *v = if a { (*v - max).exp() } else { T::zero() };
                        sum += *v;
                    }
                    let inv = T::one() / sum;
                    row.iter_mut().for_each(|v| *v *= inv);
                }
                T::gemm_raw(seq, seq, dh, T::one(), block, seq, 1, &v[off..], h, 1, T::zero(), &mut ctx[off..], h, 1);
            }
        }
        let mut a = linear(&ctx, self.t(s.out_w), self.t(s.out_b), n, h, h);
        let attn_drop = dropout(&mut a, cfg.dropout, rng.as_deref_mut());
        for (av, xv) in a.iter_mut().zip(&x) {
            *av += *xv;
        }
        let (y1, norm1) = layer_norm(&a, self.t(s.attn_norm_g), self.t(s.attn_norm_b), h);

        let ffn_pre = linear(&y1, self.t(s.ffn_in_w), self.t(s.ffn_in_b), n, h, f);
        let ffn_act: Vec<T> = ffn_pre.iter().map(|&u| gelu(u)).collect();
        let mut o = linear(&ffn_act, self.t(s.ffn_out_w), self.t(s.ffn_out_b), n, f, h);
        let ffn_drop = dropout(&mut o, cfg.dropout, rng);
        for (ov, yv) in o.iter_mut().zip(&y1) {
            *ov += *yv;
        }
        let (out, norm2) = layer_norm(&o, self.t(s.ffn_norm_g), self.t(s.ffn_norm_b), h);
        check_finite(&out, &format!("layer {l}"))?;
        Ok((
            LayerCache {
                input: x,
                q,
                k,
                v,
                probs,
                ctx,
                attn_drop,
                norm1,
                y1,
                ffn_pre,
                ffn_act,
                ffn_drop,
                norm2,
            },
            out,
        ))
    }

    fn layer_backward(&self, l: usize, c: &LayerCache<T>, b: &InputBatch, dy: &[T], g: &mut ParamSet<T>) -> Vec<T> {
        let s = self.layout.layers[l];
        let cfg = &self.config;
        let (h, f, heads) = (cfg.hidden, cfg.ffn, cfg.heads);
        let dh = h / heads;
        let (n, seq) = (b.rows(), b.seq);
        let gt = &mut g.tensors;

        let d_o = {
            let (dg, db) = two_mut(gt, s.ffn_norm_g, s.ffn_norm_b);
            layer_norm_backward(dy, self.t(s.ffn_norm_g), &c.norm2, h, dg, db)
        };
        let d_ffn = apply_mask(&d_o, &c.ffn_drop);
        let mut d_act = vec![T::zero(); n * f];
        {
            let (dw, db) = two_mut(gt, s.ffn_out_w, s.ffn_out_b);
            linear_backward(&c.ffn_act, self.t(s.ffn_out_w), &d_ffn, n, f, h, dw, db, Some(&mut d_act));
        }
        let d_pre: Vec<T> = d_act.iter().zip(&c.ffn_pre).map(|(d, &u)| *d * gelu_grad(u)).collect();
        let mut d_y1 = d_o;
        {
            let (dw, db) = two_mut(gt, s.ffn_in_w, s.ffn_in_b);
            linear_backward(&c.y1, self.t(s.ffn_in_w), &d_pre, n, h, f, dw, db, Some(&mut d_y1));
        }
        let d_a = {
            let (dg, db) = two_mut(gt, s.attn_norm_g, s.attn_norm_b);
            layer_norm_backward(&d_y1, self.t(s.attn_norm_g), &c.norm1, h, dg, db)
        };
        let d_attn = apply_mask(&d_a, &c.attn_drop);
        let mut dx = d_a;
        let mut d_ctx = vec![T::zero(); n * h];
        {
            let (dw, db) = two_mut(gt, s.out_w, s.out_b);
            linear_backward(&c.ctx, self.t(s.out_w), &d_attn, n, h, h, dw, db, Some(&mut d_ctx));
        }

        let scale = T::of(1.0 / libm::sqrt(dh as f64));
        let mut dq = vec![T::zero(); n * h];
        let mut dk = vec![T::zero(); n * h];
        let mut dv = vec![T::zero(); n * h];
        let mut d_scores = vec![T::zero(); seq * seq];
        for bi in 0..b.batch {
            for hd in 0..heads {
                let p = &c.probs[(bi * heads + hd) * seq * seq..][..seq * seq];
                let off = bi * seq * h + hd * dh;
                T::gemm_raw(seq, dh, seq, T::one(), &d_ctx[off..], h, 1, &c.v[off..], 1, h, T::zero(), &mut d_scores, seq, 1);
                for (ds, pr) in d_scores.chunks_exact_mut(seq).zip(p.chunks_exact(seq)) {
                    let dot = ds.iter().zip(pr).fold(T::zero(), |acc, (d, p)| acc + *d * *p);
                    for (d, &p) in ds.iter_mut().zip(pr) {
                        *d = p * (*d - dot);
                    }
                }
                T::gemm_raw(seq, seq, dh, T::one(), p, 1, seq, &d_ctx[off..], h, 1, T::one(), &mut dv[off..], h, 1);
                T::gemm_raw(seq, seq, dh, scale, &d_scores, seq, 1, &c.k[off..], h, 1, T::one(), &mut dq[off..], h, 1);
                T::gemm_raw(seq, seq, dh, scale, &d_scores, 1, seq, &c.q[off..], h, 1, T::one(), &mut dk[off..], h, 1);
            }
        }
        for (w, bias, d) in [(s.query_w, s.query_b, &dq), (s.key_w, s.key_b, &dk), (s.value_w, s.value_b, &dv)] {
            let (dw, db) = two_mut(gt, w, bias);
            linear_backward(&c.input, self.t(w), d, n, h, h, dw, db, Some(&mut dx));
        }
        dx
    }

    fn encode_backward(&self, b: &InputBatch, cache: &EncoderCache<T>, d_out: Vec<T>, g: &mut ParamSet<T>) {
        let h = self.config.hidden;
        let mut d = d_out;
        for l in (0..self.config.layers).rev() {
            d = self.layer_backward(l, &cache.layers[l], b, &d, g);
        }
        let d = apply_mask(&d, &cache.emb_drop);
        let d_emb = {
            let (dg, db) = two_mut(&mut g.tensors, self.layout.emb_norm_g, self.layout.emb_norm_b);
            layer_norm_backward(&d, self.t(self.layout.emb_norm_g), &cache.emb_norm, h, dg, db)
        };
        for row in 0..b.rows() {
            let t = row % b.seq;
            let src = &d_emb[row * h..(row + 1) * h];
            let targets = [
                (self.layout.token_emb, b.tokens[row] as usize),
                (self.layout.position_emb, t),
                (self.layout.segment_emb, b.segments[row] as usize),
            ];
            for (tensor, idx) in targets {
                let dst = &mut g.tensors[tensor].data[idx * h..(idx + 1) * h];
                for (a, s) in dst.iter_mut().zip(src) {
                    *a += *s;
                }
            }
        }
    }

    fn pool(&self, b: &InputBatch, output: &[T]) -> PoolCache<T> {
        let h = self.config.hidden;
        let rows: Vec<usize> = (0..b.batch).map(|i| i * b.seq).collect();
        let cls = gather(output, &rows, h);
        let mut pooled = linear(&cls, self.t(self.layout.pooler_w), self.t(self.layout.pooler_b), b.batch, h, h);
        pooled.iter_mut().for_each(|v| *v = v.tanh());
        PoolCache { cls, pooled }
    }

    /// Adds the encoder-output gradient of the pooler into `d_out`.
    fn pool_backward(&self, b: &InputBatch, pc: &PoolCache<T>, d_pooled: &[T], d_out: &mut [T], g: &mut ParamSet<T>) {
        let h = self.config.hidden;
        let d_pre: Vec<T> = d_pooled
            .iter()
            .zip(&pc.pooled)
            .map(|(d, p)| *d * (T::one() - *p * *p))
            .collect();
        let mut d_cls = vec![T::zero(); b.batch * h];
        let (dw, db) = two_mut(&mut g.tensors, self.layout.pooler_w, self.layout.pooler_b);
        linear_backward(&pc.cls, self.t(self.layout.pooler_w), &d_pre, b.batch, h, h, dw, db, Some(&mut d_cls));
        let rows: Vec<usize> = (0..b.batch).map(|i| i * b.seq).collect();
        scatter_add(d_out, &rows, &d_cls, h);
    }

    fn pretrain_pass(
        &self,
        batch: &PretrainBatch,
        rng: Option<&mut Rng>,
        grads: Option<&mut ParamSet<T>>,
    ) -> Result<PretrainOutput<T>, ModelError> {
        let cfg = &self.config;
        let (h, vsz) = (cfg.hidden, cfg.vocab_size);
        let b = &batch.inputs;
        if batch.nsp_labels.len() != b.batch || batch.mlm_rows.len() != batch.mlm_labels.len() {
            return Err(ModelError::MalformedBatch("label counts do not match the batch"));
        }
        let cache = self.encode(b, rng)?;
        let lay = &self.layout;

        // MLM head on the masked rows.
        let m = batch.mlm_rows.len();
        let hm = gather(&cache.output, &batch.mlm_rows, h);
        let pre = linear(&hm, self.t(lay.mlm_w), self.t(lay.mlm_b), m, h, h);
        let act: Vec<T> = pre.iter().map(|&u| gelu(u)).collect();
        let (z, zc) = layer_norm(&act, self.t(lay.mlm_norm_g), self.t(lay.mlm_norm_b), h);
        let mut mlm_logits = vec![T::zero(); m * vsz];
        for row in mlm_logits.chunks_exact_mut(vsz) {
            row.copy_from_slice(self.t(lay.mlm_out_b));
        }
        gemm(false, true, m, h, vsz, &z, self.t(lay.token_emb), T::one(), &mut mlm_logits);
        check_finite(&mlm_logits, "mlm head")?;

        // NSP head on the pooled [CLS] row.
        let pc = self.pool(b, &cache.output);
        let nsp_logits = linear(&pc.pooled, self.t(lay.nsp_w), self.t(lay.nsp_b), b.batch, h, 2);
        check_finite(&nsp_logits, "nsp head")?;

        let mut d_mlm = grads.as_ref().map(|_| vec![T::zero(); m * vsz]);
        let mut d_nsp = grads.as_ref().map(|_| vec![T::zero(); b.batch * 2]);
        let mlm_sum = if m > 0 {
            softmax_cross_entropy(&mlm_logits, vsz, &batch.mlm_labels, 1.0 / m as f64, d_mlm.as_deref_mut())
        } else {
            0.0
        };
        let nsp_sum = softmax_cross_entropy(
            &nsp_logits,
            2,
            &batch.nsp_labels,
            1.0 / b.batch.max(1) as f64,
            d_nsp.as_deref_mut(),
        );
        let losses = Losses {
            mlm: if m > 0 { mlm_sum / m as f64 } else { 0.0 },
            nsp: nsp_sum / b.batch.max(1) as f64,
        };
        if !losses.mlm.is_finite() || !losses.nsp.is_finite() {
            return Err(ModelError::NonFinite {
                stage: "loss".into(),
                step: None,
            });
        }

        if let (Some(g), Some(d_mlm), Some(d_nsp)) = (grads, d_mlm, d_nsp) {
            let mut d_out = vec![T::zero(); b.rows() * h];
            if m > 0 {
                let gt = &mut g.tensors;
                gemm(true, false, vsz, m, h, &d_mlm, &z, T::one(), &mut gt[lay.token_emb].data);
                for row in d_mlm.chunks_exact(vsz) {
                    for (a, d) in gt[lay.mlm_out_b].data.iter_mut().zip(row) {
                        *a += *d;
                    }
                }
                let mut dz = vec![T::zero(); m * h];
                gemm(false, false, m, vsz, h, &d_mlm, self.t(lay.token_emb), T::zero(), &mut dz);
                let d_act = {
                    let (dg, db) = two_mut(gt, lay.mlm_norm_g, lay.mlm_norm_b);
                    layer_norm_backward(&dz, self.t(lay.mlm_norm_g), &zc, h, dg, db)
                };
                let d_pre: Vec<T> = d_act.iter().zip(&pre).map(|(d, &u)| *d * gelu_grad(u)).collect();
                let mut d_hm = vec![T::zero(); m * h];
                let (dw, db) = two_mut(gt, lay.mlm_w, lay.mlm_b);
                linear_backward(&hm, self.t(lay.mlm_w), &d_pre, m, h, h, dw, db, Some(&mut d_hm));
                scatter_add(&mut d_out, &batch.mlm_rows, &d_hm, h);
            }
            let mut d_pooled = vec![T::zero(); b.batch * h];
            {
                let (dw, db) = two_mut(&mut g.tensors, lay.nsp_w, lay.nsp_b);
                linear_backward(&pc.pooled, self.t(lay.nsp_w), &d_nsp, b.batch, h, 2, dw, db, Some(&mut d_pooled));
            }
            self.pool_backward(b, &pc, &d_pooled, &mut d_out, g);
            self.encode_backward(b, &cache, d_out, g);
        }

        Ok(PretrainOutput {
            losses,
            mlm_logits,
            nsp_logits,
        })
    }

    /// Forward pass; dropout is active only when `rng` is given.
    pub fn pretrain_forward(&self, batch: &PretrainBatch, rng: Option<&mut Rng>) -> Result<PretrainOutput<T>, ModelError> {
        self.pretrain_pass(batch, rng, None)
    }

    /// Forward and backward pass; gradients of `mlm + nsp` are added to `grads`.
    pub fn pretrain_gradients(
        &self,
        batch: &PretrainBatch,
        rng: Option<&mut Rng>,
        grads: &mut ParamSet<T>,
    ) -> Result<Losses, ModelError> {
        self.pretrain_pass(batch, rng, Some(grads)).map(|o| o.losses)
    }

    fn classify_pass(
        &self,
        inputs: &InputBatch,
        labels: Option<&[usize]>,
        mut rng: Option<&mut Rng>,
        grads: Option<&mut ParamSet<T>>,
    ) -> Result<(Vec<T>, f64), ModelError> {
        let (cw, cb) = self.layout.classifier.ok_or(ModelError::NoClassifier)?;
        let k = self.params.tensors[cb].data.len();
        let h = self.config.hidden;
        let cache = self.encode(inputs, rng.as_deref_mut())?;
        let pc = self.pool(inputs, &cache.output);
        let mut feats = pc.pooled.clone();
        let drop = dropout(&mut feats, self.config.dropout, rng);
        let logits = linear(&feats, self.t(cw), self.t(cb), inputs.batch, h, k);
        check_finite(&logits, "classifier")?;
        let Some(labels) = labels else {
            return Ok((logits, 0.0));
        };
        if labels.len() != inputs.batch || labels.iter().any(|&l| l >= k) {
            return Err(ModelError::MalformedBatch("labels do not match the batch"));
        }
        let mut d_logits = grads.as_ref().map(|_| vec![T::zero(); inputs.batch * k]);
        let scale = 1.0 / inputs.batch.max(1) as f64;
        let loss = softmax_cross_entropy(&logits, k, labels, scale, d_logits.as_deref_mut()) * scale;
        if let (Some(g), Some(d_logits)) = (grads, d_logits) {
            let mut d_feats = vec![T::zero(); inputs.batch * h];
            {
                let (dw, db) = two_mut(&mut g.tensors, cw, cb);
                linear_backward(&feats, self.t(cw), &d_logits, inputs.batch, h, k, dw, db, Some(&mut d_feats));
            }
            let d_pooled = apply_mask(&d_feats, &drop);
            let mut d_out = vec![T::zero(); inputs.rows() * h];
            self.pool_backward(inputs, &pc, &d_pooled, &mut d_out, g);
            self.encode_backward(inputs, &cache, d_out, g);
        }
        Ok((logits, loss))
    }

    /// Class logits, `batch × classes`, in eval mode.
    pub fn classify_logits(&self, inputs: &InputBatch) -> Result<Vec<T>, ModelError> {
        self.classify_pass(inputs, None, None, None).map(|(l, _)| l)
    }

    /// Mean cross-entropy of the classification head; gradients go to `grads`.
    pub fn classify_gradients(
        &self,
        inputs: &InputBatch,
        labels: &[usize],
        rng: Option<&mut Rng>,
        grads: &mut ParamSet<T>,
    ) -> Result<f64, ModelError> {
        self.classify_pass(inputs, Some(labels), rng, Some(grads)).map(|(_, l)| l)
    }

    /// Mean classification loss without gradients.
    pub fn classify_loss(&self, inputs: &InputBatch, labels: &[usize]) -> Result<f64, ModelError> {
        self.classify_pass(inputs, Some(labels), None, None).map(|(_, l)| l)
    }

    /// Attention probabilities of every layer in eval mode, each laid out
    /// `batch × heads × seq × seq`.
    pub fn attention_probabilities(&self, inputs: &InputBatch) -> Result<Vec<Vec<T>>, ModelError> {
        let cache = self.encode(inputs, None)?;
        Ok(cache.layers.into_iter().map(|l| l.probs).collect())
    }
}
