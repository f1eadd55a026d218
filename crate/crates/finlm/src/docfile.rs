//! Line-delimited document records: a `finlm-docs/1` header, then one JSON
//! object per line.

use std::io::{BufRead, Write};

use finlm_core::corpus::{CorpusError, Document, Section, SectionId, Source};
use serde::{Deserialize, Serialize};

pub const DOCS_MAGIC: &str = "finlm-docs/1";

#[derive(Debug, thiserror::Error)]
pub enum DocFileError {
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct SectionRecord {
    id: String,
    text: String,
}

/// One line of a document file. Free text uses `text`; sectioned documents
/// use `sections`.
#[derive(Debug, Serialize, Deserialize)]
struct DocRecord {
    doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sections: Option<Vec<SectionRecord>>,
}

impl DocRecord {
    fn from_document(doc: &Document) -> Self {
        let secs = doc.sections();
        let free = secs.len() == 1 && secs[0].id == SectionId::FullText;
        DocRecord {
            doc_id: doc.doc_id().to_string(),
            source: Some(doc.source().as_str().to_string()),
            text: free.then(|| secs[0].text.clone()),
            sections: (!free).then(|| {
                secs.iter()
                    .map(|s| SectionRecord {
                        id: s.id.as_str().to_string(),
                        text: s.text.clone(),
                    })
                    .collect()
            }),
        }
    }

    fn into_document(self, default_source: Option<Source>) -> Result<Document, String> {
        let source = match (self.source, default_source) {
            (Some(s), expected) => {
                let s: Source = s.parse().map_err(|e: CorpusError| e.to_string())?;
                if expected.is_some_and(|e| e != s) {
                    return Err(format!("record source {s} differs from the requested {}", expected.unwrap()));
                }
                s
            }
            (None, Some(s)) => s,
            (None, None) => return Err("missing `source`".into()),
        };
        let sections = match (self.text, self.sections) {
            (Some(text), None) => vec![Section {
                id: SectionId::FullText,
                text,
            }],
            (None, Some(secs)) => secs
                .into_iter()
                .map(|s| {
                    let id = s.id.parse::<SectionId>().map_err(|e| e.to_string())?;
                    Ok(Section { id, text: s.text })
                })
                .collect::<Result<_, String>>()?,
            _ => return Err("exactly one of `text` and `sections` is required".into()),
        };
        Document::new(self.doc_id, source, sections).map_err(|e| e.to_string())
    }
}

/// Writes a header and one record per document.
pub fn write_documents<'a, W: Write>(mut out: W, docs: impl IntoIterator<Item = &'a Document>) -> std::io::Result<()> {
    writeln!(out, "{DOCS_MAGIC}")?;
    for doc in docs {
        serde_json::to_writer(&mut out, &DocRecord::from_document(doc))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Outcome of a lenient read.
#[derive(Debug, Default)]
pub struct ReadReport {
    pub documents: Vec<Document>,
    /// `(line, message)` of every skipped record.
    pub skipped: Vec<(usize, String)>,
}

/// Reads a document file. Strict mode fails on the first malformed record;
/// otherwise malformed records are skipped and listed. Records without a
/// `source` take `default_source`; records with one must agree with it.
pub fn read_documents<R: BufRead>(input: R, default_source: Option<Source>, strict: bool) -> Result<ReadReport, DocFileError> {
    let mut lines = input.lines();
    match lines.next().transpose()? {
        Some(h) if h.trim_end() == DOCS_MAGIC => {}
        _ => {
            return Err(DocFileError::Record {
                line: 1,
                message: format!("expected `{DOCS_MAGIC}` header"),
            })
        }
    }
    let mut report = ReadReport::default();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<DocRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|r| r.into_document(default_source));
        match parsed {
            Ok(doc) => report.documents.push(doc),
            Err(message) if strict => return Err(DocFileError::Record { line: line_no, message }),
            Err(message) => {
                log::warn!("skipping record on line {line_no}: {message}");
                report.skipped.push((line_no, message));
            }
        }
    }
    Ok(report)
}

/// Reads free-text fixtures (earnings calls, analyst reports) as
/// single-section documents of `source`.
pub fn ingest_plaintext(path: &std::path::Path, source: Source, strict: bool) -> Result<ReadReport, DocFileError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut report = read_documents(file, Some(source), strict)?;
    for doc in &mut report.documents {
        if doc.sections().len() != 1 || doc.sections()[0].id != SectionId::FullText {
            let text = doc.sections().iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join("\n\n");
            *doc = Document::full_text(doc.doc_id(), source, text).expect("sections were non-blank");
        }
    }
    Ok(report)
}
