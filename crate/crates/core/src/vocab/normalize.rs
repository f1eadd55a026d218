use alloc::string::String;

use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use super::Casing;

/// Canonical decomposition, control characters to spaces, and for uncased
/// vocabularies accent stripping plus lowercasing.
pub fn normalize(text: &str, casing: Casing) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.nfd() {
        if c.is_control() {
            out.push(' ');
            continue;
        }
        match casing {
            Casing::Cased => out.push(c),
            Casing::Uncased => {
                if !is_combining_mark(c) {
                    out.extend(c.to_lowercase());
                }
            }
        }
    }
    out
}
