//! Document store shared by the agents (which write synthesized documents) and
//! the graph builder (which reads them).
//!
//! On disk a corpus is a line-delimited file with one JSON object per
//! document: `{"id", "source_kind", "title", "text", "metadata"}`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Image,
    Scholar,
    Patent,
    Wiki,
    Web,
    Synthesized,
}

impl SourceKind {
    pub const RETRIEVAL: [SourceKind; 5] = [
        SourceKind::Image,
        SourceKind::Scholar,
        SourceKind::Patent,
        SourceKind::Wiki,
        SourceKind::Web,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Image => "image",
            SourceKind::Scholar => "scholar",
            SourceKind::Patent => "patent",
            SourceKind::Wiki => "wiki",
            SourceKind::Web => "web",
            SourceKind::Synthesized => "synthesized",
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "image" => SourceKind::Image,
            "scholar" => SourceKind::Scholar,
            "patent" => SourceKind::Patent,
            "wiki" => SourceKind::Wiki,
            "web" => SourceKind::Web,
            "synthesized" => SourceKind::Synthesized,
            other => return Err(Error::Config(format!("unknown source kind {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source_kind: SourceKind,
    #[serde(default)]
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: impl Into<String>, source_kind: SourceKind, title: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            source_kind,
            title: title.into(),
            text: text.into(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }

    /// Checks the per-document invariants.
    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| Error::InvalidDocument {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.is_empty() {
            return Err(invalid("empty id"));
        }
        if self.source_kind != SourceKind::Image && self.text.is_empty() {
            return Err(invalid("text must be non-empty unless source_kind is image"));
        }
        if let Some(k) = self
            .metadata
            .keys()
            .find(|k| !k.bytes().all(|b| b.is_ascii() && !b.is_ascii_uppercase()))
        {
            return Err(invalid(&format!("metadata key {k:?} is not lowercase ASCII")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    documents: Vec<Document>,
    checksum: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestFormat {
    Jsonl,
    PlainDir,
}

impl FromStr for IngestFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(IngestFormat::Jsonl),
            "plain-dir" => Ok(IngestFormat::PlainDir),
            other => Err(Error::Config(format!("unknown ingest format {other:?}"))),
        }
    }
}

impl Corpus {
    pub fn new() -> Self {
        Corpus::from_documents(Vec::new()).expect("empty corpus is valid")
    }

    /// Builds a corpus, rejecting duplicate ids and invalid documents.
    pub fn from_documents(documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::new();
        for doc in &documents {
            doc.validate()?;
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::Conflict(doc.id.clone()));
            }
        }
        let checksum = checksum_of(&documents);
        Ok(Corpus {
            documents,
            checksum,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Hex SHA-256 over the canonical serialization of every document.
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// Returns a new corpus with `doc` appended.
    pub fn store_document(&self, doc: Document) -> Result<Corpus> {
        if self.get(&doc.id).is_some() {
            return Err(Error::Conflict(doc.id));
        }
        doc.validate()?;
        let mut documents = self.documents.clone();
        documents.push(doc);
        let checksum = checksum_of(&documents);
        Ok(Corpus {
            documents,
            checksum,
        })
    }

    pub fn ingest(path: &Path, format: IngestFormat) -> Result<Corpus> {
        match format {
            IngestFormat::Jsonl => Corpus::load(path),
            IngestFormat::PlainDir => ingest_plain_dir(path),
        }
    }

    /// Reads a line-delimited corpus file. Blank lines are skipped.
    pub fn load(path: &Path) -> Result<Corpus> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Corpus::read_from(BufReader::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn read_from(reader: impl BufRead) -> Result<Corpus> {
        let mut documents = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<reader>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            documents.push(doc);
        }
        Corpus::from_documents(documents)
    }

    pub fn write_to(&self, mut writer: impl Write) -> std::io::Result<()> {
        for doc in &self.documents {
            serde_json::to_writer(&mut writer, doc)?;
            writer.write_all(b"\n")?;
        }
        writer.flush()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    /// Concatenates corpora in order; duplicate ids across inputs are rejected.
    pub fn concat(parts: impl IntoIterator<Item = Corpus>) -> Result<Corpus> {
        Corpus::from_documents(parts.into_iter().flat_map(|c| c.documents).collect())
    }
}

fn checksum_of(documents: &[Document]) -> String {
    let mut hasher = Sha256::new();
    for doc in documents {
        hasher.update(serde_json::to_vec(doc).expect("document serializes"));
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

/// Every regular `*.txt` / `*.md` file in `dir` becomes a `web` document whose
/// id and title are the file stem. Files are taken in name order.
fn ingest_plain_dir(dir: &Path) -> Result<Corpus> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("txt") | Some("md")
                )
        })
        .collect();
    paths.sort();
    let mut documents = Vec::with_capacity(paths.len());
    for path in paths {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        documents.push(
            Document::new(stem.clone(), SourceKind::Web, stem, text)
                .with_meta("path", path.display().to_string()),
        );
    }
    Corpus::from_documents(documents)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> Document {
        Document::new(id, SourceKind::Web, id.to_uppercase(), text)
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        let c = Corpus::read_from("".as_bytes()).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn duplicate_id_is_a_conflict_naming_the_id() {
        let input = r#"{"id":"d1","source_kind":"web","text":"a"}
{"id":"d1","source_kind":"web","text":"b"}"#;
        match Corpus::read_from(input.as_bytes()) {
            Err(Error::Conflict(id)) => assert_eq!(id, "d1"),
            other => panic!("expected conflict, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let input = "{\"id\":\"d1\",\"source_kind\":\"web\",\"text\":\"a\"}\n\n{oops}\n";
        match Corpus::read_from(input.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn store_rejects_duplicates_and_updates_checksum() {
        let c0 = Corpus::new();
        let c1 = c0.store_document(doc("a", "alpha")).unwrap();
        assert_eq!(c1.len(), 1);
        assert_ne!(c0.checksum(), c1.checksum());
        assert!(matches!(c1.store_document(doc("a", "again")), Err(Error::Conflict(_))));
    }

    #[test]
    fn checksum_tracks_content() {
        let a = Corpus::from_documents(vec![doc("a", "alpha")]).unwrap();
        let b = Corpus::from_documents(vec![doc("a", "alpha")]).unwrap();
        let c = Corpus::from_documents(vec![doc("a", "alpha!")]).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn image_documents_may_have_empty_text() {
        let img = Document::new("i1", SourceKind::Image, "pfd", "").with_meta("file", "pfd.png");
        assert!(img.validate().is_ok());
        assert!(doc("w", "").validate().is_err());
    }

    #[test]
    fn uppercase_metadata_key_rejected() {
        let d = doc("a", "x").with_meta("URL", "http://x");
        assert!(d.validate().is_err());
    }

    #[test]
    fn save_load_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let c = Corpus::from_documents(vec![
            doc("a", "tab\tand \"quotes\" and ünïcode\n"),
            doc("b", "second"),
        ])
        .unwrap();
        c.save(&path).unwrap();
        let back = Corpus::load(&path).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.documents()[0].text, c.documents()[0].text);
        let dir2 = dir.path().join("again.jsonl");
        back.save(&dir2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&dir2).unwrap());
    }

    #[test]
    fn plain_dir_ingest_orders_by_name() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.txt"), "bravo").unwrap();
        fs::write(dir.path().join("a.txt"), "alpha").unwrap();
        fs::write(dir.path().join("skip.bin"), "x").unwrap();
        let c = Corpus::ingest(dir.path(), IngestFormat::PlainDir).unwrap();
        let ids: Vec<_> = c.documents().iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
    }
}
