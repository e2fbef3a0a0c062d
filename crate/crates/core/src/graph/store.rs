//! Graph persistence and statement-script export.
//!
//! The graph file is one JSON object:
//!
//! ```text
//! {"format": "graphrag-kg", "version": 1, "entities": [...], "triples": [...],
//!  "communities": [...], "partitions": [...], "summary_cache": {...}}
//! ```
//!
//! The statement script has one statement per line, nodes first:
//!
//! ```text
//! CREATE (:Entity {id: 'Material/crude oil', name: 'crude oil', type: 'Material'});
//! MATCH (a:Entity {id: '...'}), (b:Entity {id: '...'}) CREATE (a)-[:REL {predicate: 'enters', confidence: 0.5, doc: 'd1', chunk: 1}]->(b);
//! ```
//!
//! String literals are single-quoted; `\` is written `\\`, `'` is written
//! `\'`, and newline, carriage return and tab become `\n`, `\r`, `\t`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CachedSummary, Community, KnowledgeGraph, Partition};
use crate::kg_extract::{Entity, Triple};
use crate::{Error, Result};

pub const GRAPH_FORMAT: &str = "graphrag-kg";
pub const GRAPH_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    format: String,
    version: u32,
    entities: Vec<Entity>,
    triples: Vec<Triple>,
    communities: Vec<Community>,
    partitions: Vec<Partition>,
    summary_cache: BTreeMap<String, CachedSummary>,
}

#[derive(Deserialize)]
struct Header {
    format: Option<String>,
    version: Option<u32>,
}

impl KnowledgeGraph {
    pub fn to_bytes(&self) -> Vec<u8> {
        let file = GraphFile {
            format: GRAPH_FORMAT.to_string(),
            version: GRAPH_VERSION,
            entities: self.entities.values().cloned().collect(),
            triples: self.triples.clone(),
            communities: self.communities.clone(),
            partitions: self.partitions.clone(),
            summary_cache: self.summary_cache.clone(),
        };
        let mut bytes = serde_json::to_vec_pretty(&file).expect("graph serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let parse_err = |e: serde_json::Error| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        };
        let value: serde_json::Value = serde_json::from_slice(bytes).map_err(parse_err)?;
        let header: Header = serde_json::from_value(value.clone()).map_err(parse_err)?;
        if header.format.as_deref() != Some(GRAPH_FORMAT) {
            return Err(Error::GraphFile(format!(
                "not a graph file (format {:?})",
                header.format
            )));
        }
        let found = header
            .version
            .ok_or_else(|| Error::GraphFile("missing version".into()))?;
        if found != GRAPH_VERSION {
            return Err(Error::UnsupportedVersion {
                found,
                expected: GRAPH_VERSION,
            });
        }
        let file: GraphFile = serde_json::from_value(value).map_err(parse_err)?;
        let mut g = KnowledgeGraph::new(file.entities, file.triples)?;
        for p in &file.partitions {
            if g.membership_of(&p.assignment).is_err() {
                return Err(Error::GraphFile(format!("partition {} is incomplete", p.level)));
            }
        }
        for c in &file.communities {
            if c.members.iter().any(|m| g.entity(m).is_none())
                || c.induced_edges.iter().any(|&i| i >= g.triples.len())
            {
                return Err(Error::GraphFile(format!("community {} references unknown data", c.id)));
            }
        }
        g.communities = file.communities;
        g.partitions = file.partitions;
        g.summary_cache = file.summary_cache;
        Ok(g)
    }

    /// Writes the graph file atomically (temp file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        KnowledgeGraph::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized graph file, hex encoded.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn export_statements(&self) -> String {
        let mut out = String::new();
        for e in self.entities.values() {
            let _ = writeln!(
                out,
                "CREATE (:Entity {{id: {}, name: {}, type: {}}});",
                quote(&e.id),
                quote(&e.canonical_name),
                quote(&e.type_label)
            );
        }
        for t in &self.triples {
            let _ = writeln!(
                out,
                "MATCH (a:Entity {{id: {}}}), (b:Entity {{id: {}}}) CREATE (a)-[:REL {{predicate: {}, confidence: {}, doc: {}, chunk: {}}}]->(b);",
                quote(&t.subject),
                quote(&t.object),
                quote(&t.predicate),
                t.confidence,
                quote(&t.chunk_ref.doc_id),
                t.chunk_ref.index
            );
        }
        out
    }

    pub fn write_statements(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.export_statements()).map_err(|e| Error::io(path, e))
    }
}

/// Quotes a string literal for the statement dialect.
pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}
