use alloc::string::String;
use alloc::vec::Vec;

/// Lower-cased tokens that end in a period without ending a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "approx.", "e.g.", "i.e.", "inc.", "corp.", "co.", "ltd.", "llc.", "plc.", "mr.", "mrs.",
    "ms.", "dr.", "jr.", "sr.", "st.", "no.", "nos.", "vs.", "viz.", "fig.", "est.", "dept.",
    "jan.", "feb.", "mar.", "apr.", "jun.", "jul.", "aug.", "sep.", "sept.", "oct.", "nov.",
    "dec.", "u.s.", "u.k.", "n.a.", "s.a.", "cf.", "al.", "avg.", "yr.", "yrs.", "qtr.",
    "mln.", "bln.", "ref.", "sec.",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201D}', '\u{2019}'];
const OPENERS: &[char] = &['"', '\'', '(', '[', '\u{201C}', '\u{2018}'];

/// Splits text into sentences.
///
/// Boundaries follow a `.`, `!` or `?` (optionally followed by closing quotes
/// or brackets) when the next word does not start with a lowercase letter.
/// Periods ending a known abbreviation, a single-letter initial, or an item
/// number such as `Item 1.` never end a sentence. Whitespace runs inside a
/// sentence are collapsed to one space.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let mut sentences = Vec::new();
    let mut current = String::new();
    for (i, word) in words.iter().enumerate() {
        if !current.is_empty() {
            current.push(' ');
        }
        current.push_str(word);
        let prev = i.checked_sub(1).map(|p| words[p]);
        if let Some(next) = words.get(i + 1) {
            if ends_sentence(prev, word, next) {
                sentences.push(core::mem::take(&mut current));
            }
        }
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    sentences
}

fn ends_sentence(prev: Option<&str>, word: &str, next: &str) -> bool {
    let core_word = word.trim_end_matches(CLOSERS);
    let Some(last) = core_word.chars().last() else {
        return false;
    };
    if !matches!(last, '.' | '!' | '?') {
        return false;
    }
    let next_first = next.trim_start_matches(OPENERS).chars().next();
    if next_first.is_some_and(char::is_lowercase) {
        return false;
    }
    if last != '.' {
        return true;
    }
    let bare = core_word.trim_start_matches(OPENERS);
    let lowered: String = bare.chars().flat_map(char::to_lowercase).collect();
    if ABBREVIATIONS.contains(&lowered.as_str()) {
        return false;
    }
    let stem = &bare[..bare.len() - 1];
    // Initials such as "J." in "J. Smith".
    let mut stem_chars = stem.chars();
    if let (Some(c), None) = (stem_chars.next(), stem_chars.next()) {
        if c.is_alphabetic() && c.is_uppercase() {
            return false;
        }
    }
    // "Item 1." / "Part II." / "Note 7."
    if let Some(prev) = prev {
        let labelled = ["item", "part", "note"]
            .iter()
            .any(|p| prev.eq_ignore_ascii_case(p));
        if labelled && !stem.is_empty() && stem.len() <= 4 && stem.chars().all(char::is_alphanumeric) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn two_simple_sentences() {
        assert_eq!(
            segment_sentences("Revenue grew. Margins fell."),
            vec!["Revenue grew.", "Margins fell."]
        );
    }

    #[test]
    fn abbreviation_does_not_split() {
        assert_eq!(
            segment_sentences("approx. 4.9 billion tokens were used"),
            vec!["approx. 4.9 billion tokens were used"]
        );
        assert_eq!(
            segment_sentences("Apple Inc. Reported results. Fine."),
            vec!["Apple Inc. Reported results.", "Fine."]
        );
    }

    #[test]
    fn empty_input() {
        assert!(segment_sentences("").is_empty());
        assert!(segment_sentences(" \n\t ").is_empty());
    }

    #[test]
    fn question_and_exclamation_with_quotes() {
        assert_eq!(
            segment_sentences("Will demand hold? \"Yes!\" said the CFO. Thanks."),
            vec!["Will demand hold?", "\"Yes!\" said the CFO.", "Thanks."]
        );
    }

    #[test]
    fn lowercase_continuation_and_item_numbers() {
        assert_eq!(
            segment_sentences("See Item 1. Business for details. Also J. Smith spoke. then more."),
            vec!["See Item 1. Business for details.", "Also J. Smith spoke. then more."]
        );
    }

    #[test]
    fn whitespace_is_collapsed() {
        assert_eq!(
            segment_sentences("  Sales\n\nrose.\tCosts   fell. "),
            vec!["Sales rose.", "Costs fell."]
        );
    }
}
