//! File formats: `.vocab` piece lists, `FLMI1` instance files, `FLMC1`
//! checkpoints, loss logs and labeled task files.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use finlm_core::finetune::{TaskName, TaskSpec};
use finlm_core::model::{
    AdamConfig, Checkpoint, LossRecord, ModelConfig, OptimizerState, ParamSet, Phase, Tensor, TrainVariant,
};
use finlm_core::tokenizer::{NspLabel, PretrainInstance};
use finlm_core::vocab::{Casing, SubwordVocab};

pub const INSTANCE_MAGIC: &[u8; 5] = b"FLMI1";
pub const CHECKPOINT_MAGIC: &[u8; 5] = b"FLMC1";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("not a {expected} file (bad magic)")]
    BadMagic { expected: &'static str },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Vocab(#[from] finlm_core::vocab::VocabError),
    #[error(transparent)]
    Task(#[from] finlm_core::finetune::FinetuneError),
    #[error(transparent)]
    Model(#[from] finlm_core::model::ModelError),
}

fn corrupt(msg: impl Into<String>) -> FormatError {
    FormatError::Corrupt(msg.into())
}

// ---- vocabulary ----

pub fn write_vocab(path: &Path, vocab: &SubwordVocab) -> io::Result<()> {
    fs::write(path, vocab.to_file_string())
}

pub fn read_vocab(path: &Path, casing: Casing) -> Result<SubwordVocab, FormatError> {
    let text = fs::read_to_string(path)?;
    Ok(SubwordVocab::from_lines(text.lines(), casing)?)
}

// ---- little-endian helpers ----

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("length fits in 32 bits"));
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn u32s(&mut self, v: &[u32]) {
        self.len(v.len());
        for &x in v {
            self.u32(x);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize, FormatError> {
        let n = self.u32()? as usize;
        if n > self.buf.len() - self.pos {
            return Err(corrupt(format!("length {n} at byte {} runs past the end", self.pos - 4)));
        }
        Ok(n)
    }
    fn str(&mut self) -> Result<String, FormatError> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("invalid UTF-8 name"))
    }
    fn u32s(&mut self) -> Result<Vec<u32>, FormatError> {
        let n = self.len()?;
        (0..n).map(|_| self.u32()).collect()
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

// ---- pretraining instances ----

/// Magic, instance count, then per instance a byte-length prefix and the
/// fields (token ids, segment ids, masked positions, masked labels, NSP
/// label), each list length-prefixed; all integers little-endian u32.
pub fn encode_instances(instances: &[PretrainInstance]) -> Vec<u8> {
    let mut w = Writer { buf: INSTANCE_MAGIC.to_vec() };
    w.len(instances.len());
    for inst in instances {
        let mut rec = Writer { buf: Vec::new() };
        rec.u32s(&inst.token_ids);
        rec.u32s(&inst.segment_ids);
        rec.u32s(&inst.mlm_positions);
        rec.u32s(&inst.mlm_labels);
        rec.u32(inst.nsp_label.class_index() as u32);
        w.len(rec.buf.len());
        w.buf.extend_from_slice(&rec.buf);
    }
    w.buf
}

pub fn decode_instances(bytes: &[u8]) -> Result<Vec<PretrainInstance>, FormatError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(5).ok() != Some(&INSTANCE_MAGIC[..]) {
        return Err(FormatError::BadMagic { expected: "instance" });
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let n = r.len()?;
        let mut rec = Reader { buf: r.take(n)?, pos: 0 };
        let token_ids = rec.u32s()?;
        let segment_ids = rec.u32s()?;
        let mlm_positions = rec.u32s()?;
        let mlm_labels = rec.u32s()?;
        let nsp_label = match rec.u32()? {
            0 => NspLabel::IsNext,
            1 => NspLabel::NotNext,
            x => return Err(corrupt(format!("instance {i}: NSP label {x}"))),
        };
        if !rec.done() {
            return Err(corrupt(format!("instance {i}: trailing bytes")));
        }
        out.push(PretrainInstance {
            token_ids,
            segment_ids,
            mlm_positions,
            mlm_labels,
            nsp_label,
        });
    }
    if !r.done() {
        return Err(corrupt("trailing bytes after the last instance"));
    }
    Ok(out)
}

pub fn write_instances(path: &Path, instances: &[PretrainInstance]) -> io::Result<()> {
    fs::write(path, encode_instances(instances))
}

pub fn read_instances(path: &Path) -> Result<Vec<PretrainInstance>, FormatError> {
    decode_instances(&fs::read(path)?)
}

// ---- checkpoints ----

fn put_tensors(w: &mut Writer, set: &ParamSet<f32>) {
    w.len(set.tensors.len());
    for t in &set.tensors {
        w.str(&t.name);
        w.u8(DTYPE_F32);
        w.len(t.shape.len());
        for &d in &t.shape {
            w.len(d);
        }
        for &x in &t.data {
            w.buf.extend_from_slice(&x.to_le_bytes());
        }
    }
}

fn get_tensors(r: &mut Reader<'_>) -> Result<ParamSet<f32>, FormatError> {
    let n = r.len()?;
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let name = r.str()?;
        let dtype = r.u8()?;
        if dtype != DTYPE_F32 {
            return Err(corrupt(format!("tensor `{name}` has unknown dtype {dtype}")));
        }
        let rank = r.len()?;
        let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_, _>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let count = count.filter(|c| c.checked_mul(4).is_some_and(|b| b <= r.buf.len() - r.pos));
        let count = count.ok_or_else(|| corrupt(format!("tensor `{name}` shape {shape:?} exceeds the file")))?;
        let data = r
            .take(count * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push(Tensor { name, shape, data });
    }
    Ok(ParamSet { tensors })
}

/// `FLMC1`, version, config block, progress block, named-tensor table,
/// optimizer block, then a CRC-32 of everything before it.
pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let mut w = Writer { buf: CHECKPOINT_MAGIC.to_vec() };
    w.u32(CHECKPOINT_VERSION);
    let m = &c.config;
    for v in [m.layers, m.hidden, m.heads, m.ffn, m.vocab_size, m.max_positions, m.type_vocab] {
        w.len(v);
    }
    w.f64(m.dropout);
    w.f64(m.init_std);
    w.u64(m.seed);

    w.u64(c.global_step);
    w.u32(c.phase.code());
    w.u32(c.variant.code());
    w.buf.extend_from_slice(&c.vocab_fingerprint);

    put_tensors(&mut w, &c.params);

    let o = &c.optimizer;
    for v in [o.config.beta1, o.config.beta2, o.config.eps, o.config.weight_decay, o.config.peak_lr] {
        w.f64(v);
    }
    w.u64(o.config.warmup_steps);
    w.u64(o.config.total_steps);
    w.u64(o.step);
    put_tensors(&mut w, &o.first_moment);
    put_tensors(&mut w, &o.second_moment);

    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    w.buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, FormatError> {
    if bytes.len() < 9 || &bytes[..5] != CHECKPOINT_MAGIC {
        return Err(FormatError::BadMagic { expected: "checkpoint" });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    let mut r = Reader { buf: body, pos: 5 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::Version(version));
    }
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let config = ModelConfig {
        layers: dims[0],
        hidden: dims[1],
        heads: dims[2],
        ffn: dims[3],
        vocab_size: dims[4],
        max_positions: dims[5],
        type_vocab: dims[6],
        dropout: r.f64()?,
        init_std: r.f64()?,
        seed: r.u64()?,
    };
    let global_step = r.u64()?;
    let phase = Phase::from_code(r.u32()?).ok_or_else(|| corrupt("unknown phase"))?;
    let variant = TrainVariant::from_code(r.u32()?).ok_or_else(|| corrupt("unknown variant"))?;
    let vocab_fingerprint: [u8; 32] = r.take(32)?.try_into().unwrap();
    let params = get_tensors(&mut r)?;
    let mut adam = [0f64; 5];
    for v in &mut adam {
        *v = r.f64()?;
    }
    let adam_config = AdamConfig {
        beta1: adam[0],
        beta2: adam[1],
        eps: adam[2],
        weight_decay: adam[3],
        peak_lr: adam[4],
        warmup_steps: r.u64()?,
        total_steps: r.u64()?,
    };
    let step = r.u64()?;
    let optimizer = OptimizerState {
        config: adam_config,
        step,
        first_moment: get_tensors(&mut r)?,
        second_moment: get_tensors(&mut r)?,
    };
    if !r.done() {
        return Err(corrupt("trailing bytes before the checksum"));
    }
    let ckpt = Checkpoint {
        config,
        params,
        optimizer,
        global_step,
        phase,
        variant,
        vocab_fingerprint,
    };
    // Validates shapes against the config.
    ckpt.model()?;
    if !ckpt.optimizer.shape_matches(&ckpt.params) {
        return Err(corrupt("optimizer moments do not match the parameters"));
    }
    Ok(ckpt)
}

pub fn save_checkpoint(path: &Path, c: &Checkpoint) -> io::Result<()> {
    let tmp = path.with_extension("part");
    fs::write(&tmp, encode_checkpoint(c))?;
    fs::rename(&tmp, path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, FormatError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

// ---- loss log ----

pub const LOSS_LOG_HEADER: &str = "step\tmlm_loss\tnsp_loss\tlr";

pub fn write_loss_log<W: Write>(mut out: W, log: &[LossRecord]) -> io::Result<()> {
    writeln!(out, "{LOSS_LOG_HEADER}")?;
    for r in log {
        writeln!(out, "{}\t{}\t{}\t{}", r.step, r.mlm_loss, r.nsp_loss, r.lr)?;
    }
    out.flush()
}

pub fn parse_loss_log(text: &str) -> Result<Vec<LossRecord>, FormatError> {
    let mut lines = text.lines();
    if lines.next() != Some(LOSS_LOG_HEADER) {
        return Err(corrupt("loss log header"));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            let bad = || corrupt(format!("loss log row `{l}`"));
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(LossRecord {
                step: f[0].parse().map_err(|_| bad())?,
                mlm_loss: f[1].parse().map_err(|_| bad())?,
                nsp_loss: f[2].parse().map_err(|_| bad())?,
                lr: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

// ---- tasks ----

pub fn read_task(path: &Path, expected: Option<TaskName>) -> Result<TaskSpec, FormatError> {
    let task = TaskSpec::parse(&fs::read_to_string(path)?, expected)?;
    if task.dropped_zero_scores() > 0 {
        log::warn!("{}: dropped {} zero-score records", path.display(), task.dropped_zero_scores());
    }
    Ok(task)
}

pub fn write_task(path: &Path, task: &TaskSpec) -> io::Result<()> {
    fs::write(path, task.to_file_string())
}
