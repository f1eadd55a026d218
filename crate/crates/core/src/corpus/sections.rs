use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::html::text_for_sectioning;
use super::{CorpusError, Document, RawFiling, Section, SectionId, Source};

/// What to do with a filing in which no retained item can be located.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SectionPolicy {
    /// Report [`CorpusError::NoSectionsFound`]; callers drop the filing.
    #[default]
    Strict,
    /// Keep the whole (markup-stripped) primary document as `FullText`.
    FullTextFallback,
}

/// An `Item N` heading found at the start of a line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemHeading {
    /// Byte offset of the `I` of `Item`.
    pub offset: usize,
    /// Upper-cased item label, e.g. `1A`.
    pub label: String,
}

/// All item headings in `text`, in order.
///
/// A heading is a line whose first non-blank characters are `item`
/// (any case), whitespace, an item number with an optional letter suffix, and
/// then punctuation, whitespace or the end of the line.
pub fn find_item_headings(text: &str) -> Vec<ItemHeading> {
    let mut headings = Vec::new();
    let mut line_start = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_start();
        let offset = line_start + (line.len() - trimmed.len());
        if let Some(label) = heading_label(trimmed) {
            headings.push(ItemHeading { offset, label });
        }
        line_start += line.len();
    }
    headings
}

fn heading_label(line: &str) -> Option<String> {
    let bytes = line.as_bytes();
    if bytes.len() < 5 || !bytes[..4].eq_ignore_ascii_case(b"item") {
        return None;
    }
    let after = &line[4..];
    let number = after.trim_start_matches(|c: char| c.is_whitespace() && c != '\n');
    if number.len() == after.len() {
        return None;
    }
    let digits = number.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 || digits > 2 {
        return None;
    }
    let mut end = digits;
    if number.as_bytes().get(end).is_some_and(u8::is_ascii_alphabetic) {
        end += 1;
    }
    let terminator_ok = match number[end..].chars().next() {
        None => true,
        Some(c) => c.is_whitespace() || matches!(c, '.' | ':' | '-' | '\u{2013}' | '\u{2014}' | ','),
    };
    terminator_ok.then(|| number[..end].to_ascii_uppercase())
}

/// Pulls the retained item sections out of a filing.
///
/// Each section runs from the last line-start occurrence of its heading (the
/// earlier ones are table-of-contents entries) to the next item heading of any
/// number. A section holding nothing beyond its heading line is treated as
/// missing.
pub fn extract_sections(filing: &RawFiling, policy: SectionPolicy) -> Result<Document, CorpusError> {
    if filing.body.trim().is_empty() {
        return Err(CorpusError::EmptyBody);
    }
    let text = text_for_sectioning(&filing.body);
    let headings = find_item_headings(&text);

    let mut sections = Vec::new();
    for &id in filing.form_type.retained_items() {
        let label = id.item_label().expect("retained items carry labels");
        let Some(start) = headings.iter().rposition(|h| h.label == label) else {
            continue;
        };
        let begin = headings[start].offset;
        let end = headings[start + 1..]
            .iter()
            .map(|h| h.offset)
            .find(|&o| o > begin)
            .unwrap_or(text.len());
        let span = text[begin..end].trim_end();
        let body_after_heading = span.split_once('\n').map_or("", |(_, rest)| rest);
        if body_after_heading.trim().is_empty() {
            continue;
        }
        sections.push(Section {
            id,
            text: span.to_string(),
        });
    }

    if sections.is_empty() {
        match policy {
            SectionPolicy::Strict => {
                return Err(CorpusError::NoSectionsFound {
                    accession_id: filing.accession_id.clone(),
                })
            }
            SectionPolicy::FullTextFallback => {
                let full = text.trim();
                if full.is_empty() {
                    return Err(CorpusError::NoSectionsFound {
                        accession_id: filing.accession_id.clone(),
                    });
                }
                sections.push(Section {
                    id: SectionId::FullText,
                    text: full.to_string(),
                });
            }
        }
    }
    Document::new(filing.accession_id.clone(), Source::CorporateReports, sections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FormType;

    fn filing(form_type: FormType, body: &str) -> RawFiling {
        RawFiling {
            accession_id: "0000000000-24-000001".into(),
            cik: "320193".into(),
            form_type,
            period_end: "2024-09-28".into(),
            body: body.into(),
        }
    }

    #[test]
    fn heading_labels() {
        assert_eq!(heading_label("Item 1. Business").as_deref(), Some("1"));
        assert_eq!(heading_label("ITEM 1A - Risk").as_deref(), Some("1A"));
        assert_eq!(heading_label("item\t7: MD&A").as_deref(), Some("7"));
        assert_eq!(heading_label("Item 10").as_deref(), Some("10"));
        assert_eq!(heading_label("Items 1 and 2").as_deref(), None);
        assert_eq!(heading_label("Item1. glued").as_deref(), None);
        assert_eq!(heading_label("Item 1ABC").as_deref(), None);
        assert_eq!(heading_label("Itemized list").as_deref(), None);
    }

    #[test]
    fn ten_k_spans_end_at_next_heading() {
        let body = "Item 1. Business\nWe make chips.\nItem 1A. Risk Factors\nDemand may fall.\nItem 2. Properties\nOffices.\n";
        let doc = extract_sections(&filing(FormType::TenK, body), SectionPolicy::Strict).unwrap();
        let ids: Vec<_> = doc.sections().iter().map(|s| s.id).collect();
        assert_eq!(ids, [SectionId::Item1, SectionId::Item1A]);
        assert_eq!(doc.sections()[0].text, "Item 1. Business\nWe make chips.");
        assert_eq!(doc.sections()[1].text, "Item 1A. Risk Factors\nDemand may fall.");
    }

    #[test]
    fn last_occurrence_wins_over_table_of_contents() {
        let body = "TABLE OF CONTENTS\nItem 1A. Risk Factors 12\nItem 2. Properties 20\n\nPART I\nItem 1A. Risk Factors\nSupply chains are fragile.\nItem 2. Properties\nNone.\n";
        let doc = extract_sections(&filing(FormType::TenQ, body), SectionPolicy::Strict).unwrap();
        assert_eq!(doc.sections().len(), 1);
        assert_eq!(doc.sections()[0].text, "Item 1A. Risk Factors\nSupply chains are fragile.");
    }

    #[test]
    fn no_headings_is_an_error_unless_fallback() {
        let f = filing(FormType::TenK, "Annual report without any structure.");
        assert_eq!(
            extract_sections(&f, SectionPolicy::Strict),
            Err(CorpusError::NoSectionsFound {
                accession_id: f.accession_id.clone()
            })
        );
        let doc = extract_sections(&f, SectionPolicy::FullTextFallback).unwrap();
        assert_eq!(doc.sections()[0].id, SectionId::FullText);
    }

    #[test]
    fn html_bodies_are_stripped_before_search() {
        let body = "<html><body><p><b>Item 7.</b> Management&#8217;s Discussion</p><p>Sales rose 4%.</p><p>Item 8. Financial Statements</p></body></html>";
        let doc = extract_sections(&filing(FormType::TenK, body), SectionPolicy::Strict).unwrap();
        assert_eq!(doc.sections()[0].id, SectionId::Item7);
        assert_eq!(
            doc.sections()[0].text,
            "Item 7. Management\u{2019}s Discussion\n\nSales rose 4%."
        );
    }
}
