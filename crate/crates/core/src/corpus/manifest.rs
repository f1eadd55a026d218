use alloc::vec::Vec;

use super::{Document, Source};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManifestEntry {
    pub source: Source,
    pub document_count: u64,
    pub token_estimate: u64,
}

/// Per-source document and whitespace-token counts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusManifest {
    /// Sources that have at least one document, in [`Source::ALL`] order.
    pub entries: Vec<ManifestEntry>,
    pub total_tokens: u64,
}

impl CorpusManifest {
    /// Tallies documents in a single pass.
    pub fn from_documents<'a, I>(docs: I) -> Self
    where
        I: IntoIterator<Item = &'a Document>,
    {
        let mut tallies = [(0u64, 0u64); Source::ALL.len()];
        for doc in docs {
            let slot = &mut tallies[doc.source() as usize];
            slot.0 += 1;
            slot.1 += doc.token_estimate();
        }
        Self::from_counts(
            Source::ALL
                .into_iter()
                .zip(tallies)
                .filter(|(_, (n, _))| *n > 0)
                .map(|(source, (document_count, token_estimate))| ManifestEntry {
                    source,
                    document_count,
                    token_estimate,
                }),
        )
    }

    /// Builds a manifest from already-aggregated rows.
    pub fn from_counts(rows: impl IntoIterator<Item = ManifestEntry>) -> Self {
        let mut entries: Vec<ManifestEntry> = rows.into_iter().collect();
        entries.sort_by_key(|e| e.source);
        let total_tokens = entries.iter().map(|e| e.token_estimate).sum();
        CorpusManifest {
            entries,
            total_tokens,
        }
    }

    pub fn entry(&self, source: Source) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.source == source)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_reports() {
        let docs = [
            Document::full_text("a", Source::CorporateReports, "one two three four five six seven eight nine ten").unwrap(),
            Document::full_text("b", Source::CorporateReports, "1 2 3 4 5 6 7 8 9 10 11 12 13 14 15").unwrap(),
        ];
        let m = CorpusManifest::from_documents(&docs);
        assert_eq!(
            m.entries,
            [ManifestEntry {
                source: Source::CorporateReports,
                document_count: 2,
                token_estimate: 25
            }]
        );
        assert_eq!(m.total_tokens, 25);
    }

    #[test]
    fn empty_store() {
        let m = CorpusManifest::from_documents(core::iter::empty());
        assert!(m.entries.is_empty());
        assert_eq!(m.total_tokens, 0);
    }
}
