//! On-disk document store: `*.docs` record files, raw filings under `raw/`,
//! and a `manifest.tsv` of per-source counts.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use finlm_core::corpus::{CorpusManifest, Document, FormType, ManifestEntry, RawFiling, Source};
use serde::{Deserialize, Serialize};

use crate::docfile::{read_documents, write_documents, DocFileError};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const DOCS_EXT: &str = "docs";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Records {
        path: PathBuf,
        #[source]
        source: DocFileError,
    },
    #[error("store {0} is locked by another writer")]
    Locked(PathBuf),
    #[error("{path} line {line}: {message}")]
    Manifest { path: PathBuf, line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    accession_id: String,
    cik: String,
    form_type: String,
    period_end: String,
    body: String,
}

/// Readable view of a store directory.
#[derive(Debug, Clone)]
pub struct DocumentStore {
    root: PathBuf,
}

impl DocumentStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::read_dir(&root).map_err(io_err(&root))?;
        Ok(DocumentStore { root })
    }

    pub fn create(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("raw")).map_err(io_err(&root))?;
        Ok(DocumentStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Document files in name order.
    pub fn document_files(&self) -> Result<Vec<PathBuf>, StoreError> {
        let mut files = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let path = entry.map_err(io_err(&self.root))?.path();
            if path.extension().is_some_and(|e| e == DOCS_EXT) {
                files.push(path);
            }
        }
        files.sort();
        Ok(files)
    }

    /// Every stored document, file by file.
    pub fn load_documents(&self) -> Result<Vec<Document>, StoreError> {
        let mut docs = Vec::new();
        for path in self.document_files()? {
            let file = File::open(&path).map_err(io_err(&path))?;
            let report = read_documents(BufReader::new(file), None, true)
                .map_err(|source| StoreError::Records { path: path.clone(), source })?;
            docs.extend(report.documents);
        }
        Ok(docs)
    }

    /// Recounts the stored documents.
    pub fn build_manifest(&self) -> Result<CorpusManifest, StoreError> {
        Ok(CorpusManifest::from_documents(&self.load_documents()?))
    }

    pub fn read_manifest(&self) -> Result<CorpusManifest, StoreError> {
        let path = self.root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        parse_manifest(&text).map_err(|(line, message)| StoreError::Manifest { path, line, message })
    }

    fn raw_path(&self, accession_id: &str) -> PathBuf {
        self.root.join("raw").join(format!("{accession_id}.json"))
    }

    pub fn has_raw(&self, accession_id: &str) -> bool {
        self.raw_path(accession_id).is_file()
    }

    pub fn load_raw(&self, accession_id: &str) -> Result<RawFiling, StoreError> {
        let path = self.raw_path(accession_id);
        let file = File::open(&path).map_err(io_err(&path))?;
        let rec: RawRecord = serde_json::from_reader(BufReader::new(file)).map_err(|e| StoreError::Io {
            path: path.clone(),
            source: e.into(),
        })?;
        let form_type = rec.form_type.parse::<FormType>().map_err(|e| StoreError::Io {
            path: path.clone(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()),
        })?;
        Ok(RawFiling {
            accession_id: rec.accession_id,
            cik: rec.cik,
            form_type,
            period_end: rec.period_end,
            body: rec.body,
        })
    }

    /// Accession ids of stored raw filings, sorted.
    pub fn raw_accessions(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join("raw");
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if path.extension().is_some_and(|e| e == "json") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Takes the single-writer lock.
    pub fn writer(&self) -> Result<StoreWriter, StoreError> {
        let lock = self.root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => Ok(StoreWriter { store: self.clone(), lock }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(StoreError::Locked(self.root.clone())),
            Err(e) => Err(io_err(&lock)(e)),
        }
    }
}

/// Exclusive write access; the lock is released on drop.
#[derive(Debug)]
pub struct StoreWriter {
    store: DocumentStore,
    lock: PathBuf,
}

impl StoreWriter {
    pub fn store(&self) -> &DocumentStore {
        &self.store
    }

    /// Writes (or replaces) `<name>.docs`.
    pub fn write_documents(&self, name: &str, docs: &[Document]) -> Result<PathBuf, StoreError> {
        let path = self.store.root.join(format!("{name}.{DOCS_EXT}"));
        let file = File::create(&path).map_err(io_err(&path))?;
        write_documents(BufWriter::new(file), docs).map_err(io_err(&path))?;
        Ok(path)
    }

    pub fn save_raw(&self, filing: &RawFiling) -> Result<(), StoreError> {
        let path = self.store.raw_path(&filing.accession_id);
        let rec = RawRecord {
            accession_id: filing.accession_id.clone(),
            cik: filing.cik.clone(),
            form_type: filing.form_type.edgar_name().to_string(),
            period_end: filing.period_end.clone(),
            body: filing.body.clone(),
        };
        let tmp = path.with_extension("json.part");
        let file = File::create(&tmp).map_err(io_err(&tmp))?;
        serde_json::to_writer(BufWriter::new(file), &rec).map_err(|e| io_err(&tmp)(e.into()))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    /// Recounts all documents and rewrites `manifest.tsv`.
    pub fn refresh_manifest(&self) -> Result<CorpusManifest, StoreError> {
        let manifest = self.store.build_manifest()?;
        let path = self.store.root.join(MANIFEST_FILE);
        fs::write(&path, manifest_tsv(&manifest)).map_err(io_err(&path))?;
        Ok(manifest)
    }
}

impl Drop for StoreWriter {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

pub fn manifest_tsv(m: &CorpusManifest) -> String {
    let mut out = String::from("source\tdoc_count\ttoken_estimate\n");
    for e in &m.entries {
        out.push_str(&format!("{}\t{}\t{}\n", e.source, e.document_count, e.token_estimate));
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<CorpusManifest, (usize, String)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, "source\tdoc_count\ttoken_estimate")) => {}
        _ => return Err((1, "bad header".into())),
    }
    let mut rows: Vec<ManifestEntry> = Vec::new();
    for (line, raw) in lines {
        if raw.is_empty() {
            continue;
        }
        let f: Vec<&str> = raw.split('\t').collect();
        if f.len() != 3 {
            return Err((line, "expected 3 columns".into()));
        }
        let source: Source = f[0].parse().map_err(|e: finlm_core::corpus::CorpusError| (line, e.to_string()))?;
        if rows.iter().any(|r| r.source == source) {
            return Err((line, format!("duplicate source {source}")));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|_| (line, format!("`{s}` is not a count")));
        rows.push(ManifestEntry {
            source,
            document_count: num(f[1])?,
            token_estimate: num(f[2])?,
        });
    }
    Ok(CorpusManifest::from_counts(rows))
}
