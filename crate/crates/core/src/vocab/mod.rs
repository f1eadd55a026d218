//! Subword vocabularies: normalization, WordPiece-objective training, import
//! from piece-per-line files, and vocabulary overlap.

mod normalize;
mod train;

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use hashbrown::HashMap;
use sha2::{Digest, Sha256};

pub use normalize::normalize;
pub use train::{train_vocab, train_vocab_from_documents, VocabTrainConfig};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;
/// Number of reserved pieces at the head of every vocabulary.
pub const NUM_SPECIALS: usize = 5;
pub const SPECIAL_PIECES: [&str; NUM_SPECIALS] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
pub const CONTINUATION_PREFIX: &str = "##";
pub const DEFAULT_MAX_WORD_LENGTH: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VocabError {
    #[error("corpus is empty after normalization")]
    EmptyCorpus,
    #[error("target size {target} cannot hold the {required} special and single-character pieces")]
    TargetTooSmall { target: usize, required: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("line {line}: duplicate piece `{piece}`")]
    DuplicatePiece { line: usize, piece: String },
    #[error("line {line}: empty piece")]
    EmptyPiece { line: usize },
    #[error("unknown casing `{0}`")]
    UnknownCasing(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Casing {
    Cased,
    #[default]
    Uncased,
}

impl Casing {
    pub fn as_str(self) -> &'static str {
        match self {
            Casing::Cased => "cased",
            Casing::Uncased => "uncased",
        }
    }
}

impl fmt::Display for Casing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Casing {
    type Err = VocabError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cased" => Ok(Casing::Cased),
            "uncased" => Ok(Casing::Uncased),
            _ => Err(VocabError::UnknownCasing(s.into())),
        }
    }
}

/// SHA-256 of a vocabulary's file serialization.
pub type Fingerprint = [u8; 32];

/// An ordered, immutable subword inventory.
///
/// Indices 0..5 always hold `[PAD] [UNK] [CLS] [SEP] [MASK]`.
#[derive(Clone)]
pub struct SubwordVocab {
    pieces: Vec<String>,
    id_of: HashMap<String, u32>,
    casing: Casing,
    max_word_length: usize,
}

impl fmt::Debug for SubwordVocab {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SubwordVocab")
            .field("size", &self.pieces.len())
            .field("casing", &self.casing)
            .finish()
    }
}

impl PartialEq for SubwordVocab {
    fn eq(&self, other: &Self) -> bool {
        self.pieces == other.pieces
            && self.casing == other.casing
            && self.max_word_length == other.max_word_length
    }
}

impl Eq for SubwordVocab {}

impl SubwordVocab {
    /// Builds a vocabulary from pieces that follow the specials.
    pub(crate) fn from_trained(body: Vec<String>, casing: Casing, max_word_length: usize) -> Self {
        let pieces: Vec<String> = SPECIAL_PIECES
            .iter()
            .map(|s| s.to_string())
            .chain(body)
            .collect();
        let id_of = pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i as u32))
            .collect();
        SubwordVocab {
            pieces,
            id_of,
            casing,
            max_word_length,
        }
    }

    /// Reads a piece-per-line listing (the `.vocab` file body).
    ///
    /// If the listing does not start with the five specials they are
    /// prepended, and any later occurrence of a special is folded into its
    /// reserved slot. A repeated non-special piece is an error. Line numbers in
    /// errors are 1-based.
    pub fn from_lines<'a, I>(lines: I, casing: Casing) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let lines: Vec<&str> = lines
            .into_iter()
            .map(|l| l.strip_suffix('\r').unwrap_or(l))
            .collect();
        let mut last = lines.len();
        while last > 0 && lines[last - 1].is_empty() {
            last -= 1;
        }
        let lines = &lines[..last];

        let mut body: Vec<String> = Vec::with_capacity(lines.len());
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (i, &line) in lines.iter().enumerate() {
            let line_no = i + 1;
            if line.is_empty() {
                return Err(VocabError::EmptyPiece { line: line_no });
            }
            if SPECIAL_PIECES.contains(&line) {
                if seen.insert(line, line_no).is_some() {
                    return Err(VocabError::DuplicatePiece {
                        line: line_no,
                        piece: line.into(),
                    });
                }
                continue;
            }
            if seen.insert(line, line_no).is_some() {
                return Err(VocabError::DuplicatePiece {
                    line: line_no,
                    piece: line.into(),
                });
            }
            body.push(line.into());
        }
        Ok(SubwordVocab::from_trained(body, casing, DEFAULT_MAX_WORD_LENGTH))
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.id_of.get(piece).copied()
    }

    pub fn contains(&self, piece: &str) -> bool {
        self.id_of.contains_key(piece)
    }

    pub fn casing(&self) -> Casing {
        self.casing
    }

    pub fn max_word_length(&self) -> usize {
        self.max_word_length
    }

    pub fn with_max_word_length(mut self, max_word_length: usize) -> Self {
        self.max_word_length = max_word_length;
        self
    }

    /// Pieces after the reserved specials.
    pub fn non_special_pieces(&self) -> &[String] {
        &self.pieces[NUM_SPECIALS..]
    }

    /// File serialization: one piece per line, newline-terminated.
    pub fn to_file_string(&self) -> String {
        let mut out = String::with_capacity(self.pieces.iter().map(|p| p.len() + 1).sum());
        for p in &self.pieces {
            out.push_str(p);
            out.push('\n');
        }
        out
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Sha256::digest(self.to_file_string().as_bytes()).into()
    }
}

/// Jaccard overlap of the non-special pieces: |A ∩ B| / |A ∪ B|.
///
/// Two vocabularies with no non-special pieces are identical and score 1.
pub fn vocab_overlap(a: &SubwordVocab, b: &SubwordVocab) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let shared = small
        .non_special_pieces()
        .iter()
        .filter(|p| large.id(p).is_some_and(|id| id as usize >= NUM_SPECIALS))
        .count();
    let union = a.non_special_pieces().len() + b.non_special_pieces().len() - shared;
    if union == 0 {
        1.0
    } else {
        shared as f64 / union as f64
    }
}
