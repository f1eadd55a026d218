use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng as _;

use super::encode_ids;
use crate::corpus::Document;
use crate::rng::substream;
use crate::vocab::{SubwordVocab, CLS_ID, MASK_ID, NUM_SPECIALS, PAD_ID, SEP_ID};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TokenizerError {
    #[error("max_len {0} is below the minimum of 16")]
    MaxLenTooSmall(usize),
    #[error("invalid mask policy: {0}")]
    InvalidPolicy(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NspLabel {
    IsNext,
    NotNext,
}

impl NspLabel {
    pub fn class_index(self) -> usize {
        match self {
            NspLabel::IsNext => 0,
            NspLabel::NotNext => 1,
        }
    }
}

/// Masked-LM replacement scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskPolicy {
    pub mask_fraction: f64,
    pub replace_mask_prob: f64,
    pub replace_random_prob: f64,
    pub keep_prob: f64,
    pub seed: u64,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        MaskPolicy {
            mask_fraction: 0.15,
            replace_mask_prob: 0.80,
            replace_random_prob: 0.10,
            keep_prob: 0.10,
            seed: 0,
        }
    }
}

impl MaskPolicy {
    pub fn with_seed(seed: u64) -> Self {
        MaskPolicy {
            seed,
            ..MaskPolicy::default()
        }
    }

    pub fn validate(&self) -> Result<(), TokenizerError> {
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 1.0) {
            return Err(TokenizerError::InvalidPolicy("mask_fraction must lie in (0, 1)"));
        }
        let probs = [self.replace_mask_prob, self.replace_random_prob, self.keep_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(TokenizerError::InvalidPolicy("replacement probabilities must lie in [0, 1]"));
        }
        if libm::fabs(probs.iter().sum::<f64>() - 1.0) > 1e-9 {
            return Err(TokenizerError::InvalidPolicy("replacement probabilities must sum to 1"));
        }
        Ok(())
    }

    /// Number of positions masked among `countable` content tokens.
    pub fn mask_count(&self, countable: usize) -> usize {
        let n = libm::round(self.mask_fraction * countable as f64) as usize;
        n.max(1).min(countable)
    }
}

/// A packed `[CLS] A [SEP] B [SEP]` sequence with its MLM and NSP targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PretrainInstance {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u32>,
    pub mlm_positions: Vec<u32>,
    pub mlm_labels: Vec<u32>,
    pub nsp_label: NspLabel,
}

impl PretrainInstance {
    /// Checks the structural invariants; returns the first violation found.
    pub fn check(&self, policy: &MaskPolicy, max_len: usize, vocab_size: usize) -> Result<(), &'static str> {
        let n = self.token_ids.len();
        if n > max_len {
            return Err("longer than max_len");
        }
        if self.segment_ids.len() != n {
            return Err("segment ids do not match token ids");
        }
        if self.token_ids.first() != Some(&CLS_ID) {
            return Err("position 0 is not [CLS]");
        }
        if self.token_ids.iter().any(|&t| t as usize >= vocab_size) {
            return Err("token id out of range");
        }
        let seps: Vec<usize> = (0..n).filter(|&i| self.token_ids[i] == SEP_ID).collect();
        if seps.len() != 2 || seps[1] != n - 1 {
            return Err("expected exactly two [SEP], the second one last");
        }
        let seg_ok = self
            .segment_ids
            .iter()
            .enumerate()
            .all(|(i, &s)| s == u32::from(i > seps[0]));
        if !seg_ok {
            return Err("segment ids must be 0 through the first [SEP], 1 after");
        }
        if self.mlm_positions.len() != self.mlm_labels.len() {
            return Err("mlm positions and labels differ in length");
        }
        if self.mlm_positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err("mlm positions not strictly increasing");
        }
        if self.mlm_positions.iter().any(|&p| {
            let p = p as usize;
            p == 0 || p >= n || seps.contains(&p)
        }) {
            return Err("mlm position on [CLS], [SEP] or out of range");
        }
        let countable = n - 3;
        if self.mlm_positions.len() != policy.mask_count(countable) {
            return Err("mask count does not follow the rounding rule");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Stream index for the instance seeded at sentence `sentence` of document `doc`.
fn stream_of(doc: usize, sentence: usize) -> u64 {
    ((doc as u64) << 32) | sentence as u64
}

/// Builds NSP pairs with MLM masking from documents.
///
/// Sentence `i` of a document pairs with sentence `i + 1` (label `IsNext`)
/// or, with probability one half, with a random sentence of another document
/// (`NotNext`). A single-sentence document yields one `NotNext` instance and
/// otherwise serves as a donor. Each instance draws from its own random
/// substream keyed by its document and sentence index, so output does not
/// depend on how documents are sharded.
pub fn build_instances(
    docs: &[Document],
    vocab: &SubwordVocab,
    max_len: usize,
    policy: &MaskPolicy,
    nsp_seed: u64,
) -> Result<Vec<PretrainInstance>, TokenizerError> {
    let builder = InstanceBuilder::new(tokenize_documents(docs, vocab), vocab.len(), max_len, *policy, nsp_seed)?;
    Ok((0..builder.num_docs()).flat_map(|d| builder.instances_for_doc(d)).collect())
}

/// Sentences of each document as token ids, skipping sentences that encode
/// to nothing.
pub fn tokenize_documents(docs: &[Document], vocab: &SubwordVocab) -> Vec<Vec<Vec<u32>>> {
    docs.iter()
        .map(|doc| {
            doc.sentences()
                .iter()
                .map(|s| encode_ids(s, vocab))
                .filter(|ids| !ids.is_empty())
                .collect()
        })
        .collect()
}

/// Instance generation over pre-tokenized documents; documents can be
/// processed independently and in any order.
pub struct InstanceBuilder {
    docs: Vec<Vec<Vec<u32>>>,
    donors: Vec<usize>,
    vocab_size: usize,
    max_len: usize,
    policy: MaskPolicy,
    nsp_seed: u64,
}

impl InstanceBuilder {
    pub fn new(
        docs: Vec<Vec<Vec<u32>>>,
        vocab_size: usize,
        max_len: usize,
        policy: MaskPolicy,
        nsp_seed: u64,
    ) -> Result<Self, TokenizerError> {
        if max_len < 16 {
            return Err(TokenizerError::MaxLenTooSmall(max_len));
        }
        policy.validate()?;
        let donors = (0..docs.len()).filter(|&d| !docs[d].is_empty()).collect();
        Ok(InstanceBuilder {
            docs,
            donors,
            vocab_size,
            max_len,
            policy,
            nsp_seed,
        })
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn instances_for_doc(&self, d: usize) -> Vec<PretrainInstance> {
        let sentences = &self.docs[d];
        let mut out = Vec::new();
        let pairs = if sentences.len() == 1 { 1 } else { sentences.len().saturating_sub(1) };
        for i in 0..pairs {
            let mut rng = substream(self.nsp_seed, stream_of(d, i));
            let has_next = i + 1 < sentences.len();
            let want_random = !has_next || rng.random_bool(0.5);
            let b = if want_random {
                match self.random_sentence(d, &mut rng) {
                    Some(s) => Some((s, NspLabel::NotNext)),
                    None if has_next => Some((&sentences[i + 1][..], NspLabel::IsNext)),
                    None => None,
                }
            } else {
                Some((&sentences[i + 1][..], NspLabel::IsNext))
            };
            let Some((b, label)) = b else { continue };
            out.push(self.pack(&sentences[i], b, label, stream_of(d, i)));
        }
        out
    }

    fn random_sentence<'a>(&'a self, exclude: usize, rng: &mut crate::rng::Rng) -> Option<&'a [u32]> {
        let others = self.donors.len() - usize::from(self.donors.binary_search(&exclude).is_ok());
        if others == 0 {
            return None;
        }
        let mut k = rng.random_range(0..others);
        let doc = *self
            .donors
            .iter()
            .filter(|&&d| d != exclude)
            .find(|_| {
                let hit = k == 0;
                k = k.wrapping_sub(1);
                hit
            })?;
        let sentences = &self.docs[doc];
        Some(&sentences[rng.random_range(0..sentences.len())])
    }

    fn pack(&self, a: &[u32], b: &[u32], nsp_label: NspLabel, stream: u64) -> PretrainInstance {
        let budget = self.max_len - 3;
        let (mut a_len, mut b_len) = (a.len(), b.len());
        while a_len + b_len > budget {
            if a_len > b_len {
                a_len -= 1;
            } else {
                b_len -= 1;
            }
        }
        let mut token_ids = Vec::with_capacity(a_len + b_len + 3);
        token_ids.push(CLS_ID);
        token_ids.extend_from_slice(&a[..a_len]);
        token_ids.push(SEP_ID);
        token_ids.extend_from_slice(&b[..b_len]);
        token_ids.push(SEP_ID);
        let first_sep = a_len + 1;
        let segment_ids = (0..token_ids.len()).map(|i| u32::from(i > first_sep)).collect();

        let candidates: Vec<usize> = (1..token_ids.len())
            .filter(|&i| i != first_sep && i != token_ids.len() - 1)
            .collect();
        let mut rng = substream(self.policy.seed, stream);
        let count = self.policy.mask_count(candidates.len());
        let mut chosen: Vec<usize> = index::sample(&mut rng, candidates.len(), count)
            .into_iter()
            .map(|k| candidates[k])
            .collect();
        chosen.sort_unstable();

        let mut mlm_positions = Vec::with_capacity(count);
        let mut mlm_labels = Vec::with_capacity(count);
        for pos in chosen {
            mlm_positions.push(pos as u32);
            mlm_labels.push(token_ids[pos]);
            let u: f64 = rng.random();
            if u < self.policy.replace_mask_prob {
                token_ids[pos] = MASK_ID;
            } else if u < self.policy.replace_mask_prob + self.policy.replace_random_prob {
                if self.vocab_size > NUM_SPECIALS {
                    token_ids[pos] = rng.random_range(NUM_SPECIALS as u32..self.vocab_size as u32);
                }
            }
        }
        debug_assert!(token_ids.iter().all(|&t| t != PAD_ID));
        PretrainInstance {
            token_ids,
            segment_ids,
            mlm_positions,
            mlm_labels,
            nsp_label,
        }
    }
}
