//! Greedy WordPiece encoding and pretraining instance assembly.

mod instances;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

pub use instances::{build_instances, MaskPolicy, NspLabel, PretrainInstance, TokenizerError};

use crate::vocab::{normalize, SubwordVocab, CONTINUATION_PREFIX, UNK_ID};

/// Token ids with their piece strings.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub pieces: Vec<String>,
}

/// Punctuation that always forms a word of its own.
pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c as u32,
            0x00A1..=0x00BF | 0x2010..=0x2027 | 0x2030..=0x205E | 0x3000..=0x303F | 0xFF01..=0xFF0F)
}

/// Splits normalized text on whitespace and isolates punctuation characters.
pub fn split_words(text: &str) -> Vec<&str> {
    let mut words = Vec::new();
    for chunk in text.split_whitespace() {
        let mut start = 0;
        for (i, c) in chunk.char_indices() {
            if is_punctuation(c) {
                if start < i {
                    words.push(&chunk[start..i]);
                }
                let end = i + c.len_utf8();
                words.push(&chunk[i..end]);
                start = end;
            }
        }
        if start < chunk.len() {
            words.push(&chunk[start..]);
        }
    }
    words
}

/// Greedy longest-match-first segmentation of one word.
///
/// Returns `[UNK]` when some position has no matching piece or when the word
/// is longer than the vocabulary's `max_word_length` characters.
pub fn wordpiece_encode(word: &str, vocab: &SubwordVocab) -> Vec<u32> {
    if word.chars().count() > vocab.max_word_length() {
        return vec![UNK_ID];
    }
    let mut ids = Vec::new();
    let mut candidate = String::with_capacity(word.len() + 2);
    let mut start = 0;
    while start < word.len() {
        let mut end = word.len();
        let mut found = None;
        while end > start {
            candidate.clear();
            if start > 0 {
                candidate.push_str(CONTINUATION_PREFIX);
            }
            candidate.push_str(&word[start..end]);
            if let Some(id) = vocab.id(&candidate) {
                found = Some(id);
                break;
            }
            end = word[..end]
                .char_indices()
                .next_back()
                .map_or(start, |(i, _)| i);
        }
        match found {
            Some(id) => {
                ids.push(id);
                start = end;
            }
            None => return vec![UNK_ID],
        }
    }
    ids
}

/// Normalizes, splits and encodes a text.
pub fn encode(text: &str, vocab: &SubwordVocab) -> TokenSequence {
    let normalized = normalize(text, vocab.casing());
    let mut seq = TokenSequence::default();
    for word in split_words(&normalized) {
        for id in wordpiece_encode(word, vocab) {
            seq.ids.push(id);
            seq.pieces.push(vocab.piece(id).unwrap_or_default().into());
        }
    }
    seq
}

/// Token ids only.
pub fn encode_ids(text: &str, vocab: &SubwordVocab) -> Vec<u32> {
    let normalized = normalize(text, vocab.casing());
    split_words(&normalized)
        .into_iter()
        .flat_map(|w| wordpiece_encode(w, vocab))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::Casing;

    fn vocab(pieces: &[&str]) -> SubwordVocab {
        SubwordVocab::from_lines(pieces.iter().copied(), Casing::Uncased).unwrap()
    }

    #[test]
    fn splits_punctuation_off() {
        assert_eq!(
            split_words("net income, up 4.9% (y/y)"),
            ["net", "income", ",", "up", "4", ".", "9", "%", "(", "y", "/", "y", ")"]
        );
        assert!(split_words("  ").is_empty());
    }

    #[test]
    fn greedy_prefix_segmentation() {
        let v = vocab(&["un", "##able", "unable_not", "u", "##n"]);
        let ids = wordpiece_encode("unable", &v);
        let pieces: Vec<_> = ids.iter().map(|&i| v.piece(i).unwrap()).collect();
        assert_eq!(pieces, ["un", "##able"]);
    }

    #[test]
    fn whole_word_and_unknown_characters() {
        let v = vocab(&["revenue", "r", "##e"]);
        assert_eq!(wordpiece_encode("revenue", &v), [v.id("revenue").unwrap()]);
        assert_eq!(wordpiece_encode("rex", &v), [UNK_ID]);
    }

    #[test]
    fn overlong_words_are_unknown() {
        let v = vocab(&["a", "##a"]).with_max_word_length(3);
        assert_eq!(wordpiece_encode("aaa", &v).len(), 3);
        assert_eq!(wordpiece_encode("aaaa", &v), [UNK_ID]);
    }

    #[test]
    fn multibyte_characters() {
        let v = vocab(&["é", "##t", "##é", "t"]);
        let pieces: Vec<_> = wordpiece_encode("tété", &v)
            .iter()
            .map(|&i| v.piece(i).unwrap())
            .collect();
        assert_eq!(pieces, ["t", "##é", "##t", "##é"]);
    }

    #[test]
    fn encode_text() {
        let v = vocab(&["profit", "##s", "rose", "."]);
        let seq = encode("Profits rose.", &v);
        assert_eq!(seq.pieces, ["profit", "##s", "rose", "."]);
        assert_eq!(seq.ids, encode_ids("Profits rose.", &v));
    }
}
