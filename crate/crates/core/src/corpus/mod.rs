//! Financial text ingestion: filing sectioning, sentence segmentation and
//! corpus statistics.
//!
//! Everything here works on in-memory text. Fetching filings and reading or
//! writing document stores lives in the `finlm` companion crate.

mod html;
mod manifest;
mod sections;
mod sentences;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

pub use html::{looks_like_html, primary_document_text, strip_html};
pub use manifest::{CorpusManifest, ManifestEntry};
pub use sections::{extract_sections, find_item_headings, ItemHeading, SectionPolicy};
pub use sentences::{segment_sentences, ABBREVIATIONS};

/// Errors raised while building documents from raw text.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorpusError {
    #[error("filing {accession_id}: no item sections located")]
    NoSectionsFound { accession_id: String },
    #[error("filing has an empty body")]
    EmptyBody,
    #[error("document {doc_id} has no sections")]
    EmptyDocument { doc_id: String },
    #[error("document {doc_id}: section {section} is blank")]
    BlankSection { doc_id: String, section: SectionId },
    #[error("unknown {kind} `{value}`")]
    UnknownName { kind: &'static str, value: String },
}

/// Which of the three pretraining corpora a document belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Source {
    CorporateReports,
    EarningsCalls,
    AnalystReports,
}

impl Source {
    pub const ALL: [Source; 3] = [
        Source::CorporateReports,
        Source::EarningsCalls,
        Source::AnalystReports,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::CorporateReports => "CorporateReports",
            Source::EarningsCalls => "EarningsCalls",
            Source::AnalystReports => "AnalystReports",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Source::ALL
            .into_iter()
            .find(|src| src.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| CorpusError::UnknownName {
                kind: "source",
                value: s.into(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FormType {
    TenK,
    TenQ,
}

impl FormType {
    /// Form name as used by EDGAR indexes.
    pub fn edgar_name(self) -> &'static str {
        match self {
            FormType::TenK => "10-K",
            FormType::TenQ => "10-Q",
        }
    }

    /// Items retained for pretraining, in document order.
    pub fn retained_items(self) -> &'static [SectionId] {
        match self {
            FormType::TenK => &[SectionId::Item1, SectionId::Item1A, SectionId::Item7],
            FormType::TenQ => &[SectionId::Item1A],
        }
    }
}

impl FromStr for FormType {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "10-K" | "10K" | "TENK" => Ok(FormType::TenK),
            "10-Q" | "10Q" | "TENQ" => Ok(FormType::TenQ),
            _ => Err(CorpusError::UnknownName {
                kind: "form type",
                value: s.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SectionId {
    Item1,
    Item1A,
    Item7,
    FullText,
}

impl SectionId {
    pub fn as_str(self) -> &'static str {
        match self {
            SectionId::Item1 => "Item1",
            SectionId::Item1A => "Item1A",
            SectionId::Item7 => "Item7",
            SectionId::FullText => "FullText",
        }
    }

    /// The item label as printed in filings ("1", "1A", "7").
    pub fn item_label(self) -> Option<&'static str> {
        match self {
            SectionId::Item1 => Some("1"),
            SectionId::Item1A => Some("1A"),
            SectionId::Item7 => Some("7"),
            SectionId::FullText => None,
        }
    }
}

impl fmt::Display for SectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SectionId {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            SectionId::Item1,
            SectionId::Item1A,
            SectionId::Item7,
            SectionId::FullText,
        ]
        .into_iter()
        .find(|id| id.as_str().eq_ignore_ascii_case(s))
        .ok_or_else(|| CorpusError::UnknownName {
            kind: "section",
            value: s.into(),
        })
    }
}

/// A full EDGAR submission as fetched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFiling {
    pub accession_id: String,
    pub cik: String,
    pub form_type: FormType,
    /// ISO-8601 `YYYY-MM-DD`.
    pub period_end: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub id: SectionId,
    pub text: String,
}

/// A sectioned, source-tagged unit of text.
///
/// Constructed through [`Document::new`], which derives the sentence and
/// whitespace-token counts so they always agree with the section text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    doc_id: String,
    source: Source,
    sections: Vec<Section>,
    sentence_count: usize,
    token_estimate: u64,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        source: Source,
        sections: Vec<Section>,
    ) -> Result<Self, CorpusError> {
        let doc_id = doc_id.into();
        if sections.is_empty() {
            return Err(CorpusError::EmptyDocument { doc_id });
        }
        if let Some(blank) = sections.iter().find(|s| s.text.trim().is_empty()) {
            return Err(CorpusError::BlankSection {
                doc_id,
                section: blank.id,
            });
        }
        let token_estimate = sections.iter().map(|s| whitespace_tokens(&s.text)).sum();
        let sentence_count = sections
            .iter()
            .map(|s| segment_sentences(&s.text).len())
            .sum();
        Ok(Document {
            doc_id,
            source,
            sections,
            sentence_count,
            token_estimate,
        })
    }

    /// Single-section document holding free text.
    pub fn full_text(
        doc_id: impl Into<String>,
        source: Source,
        text: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        Document::new(
            doc_id,
            source,
            alloc::vec![Section {
                id: SectionId::FullText,
                text: text.into(),
            }],
        )
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn sentence_count(&self) -> usize {
        self.sentence_count
    }

    pub fn token_estimate(&self) -> u64 {
        self.token_estimate
    }

    /// Sentences of every section, in order.
    pub fn sentences(&self) -> Vec<String> {
        self.sections
            .iter()
            .flat_map(|s| segment_sentences(&s.text))
            .collect()
    }
}

/// Number of whitespace-delimited tokens.
pub fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
