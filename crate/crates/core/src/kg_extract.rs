//! Entity and relation extraction from contextualized chunks, and duplicate
//! entity merging.
//!
//! Extraction prompts ask for one record per line:
//!
//! ```text
//! entity | <surface> | <type>
//! relation | <subject surface> | <predicate> | <object surface> | <confidence>
//! ```
//!
//! A reply of `none` means nothing was found. Lines that do not parse are
//! dropped; a non-empty reply with no parseable line at all is an
//! [`Error::ExtractionFormat`].

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::chunking::{ChunkRef, ContextualizedChunk};
use crate::prompt::Prompt;
use crate::providers::{Embedding, EmbeddingProvider, GenerationProvider};
use crate::{Error, Result};

pub const DEFAULT_MAX_TRIPLES: usize = 20;

const EXTRACTION_MAX_TOKENS: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityMention {
    pub surface: String,
    pub type_label: String,
    pub chunk_ref: ChunkRef,
}

impl EntityMention {
    /// Id of the pre-merge entity this mention belongs to.
    pub fn entity_id(&self) -> String {
        entity_id(&self.type_label, &self.surface)
    }
}

pub fn entity_id(type_label: &str, name: &str) -> String {
    format!("{type_label}/{name}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub canonical_name: String,
    pub aliases: BTreeSet<String>,
    pub type_label: String,
    pub embedding: Embedding,
    pub provenance: BTreeSet<ChunkRef>,
    /// Embedding of each alias as first seen. Merging works on aliases, so
    /// keeping these makes repeated merges reach the same fixpoint.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub alias_embeddings: BTreeMap<String, Embedding>,
}

impl Entity {
    pub fn new(
        type_label: &str,
        name: &str,
        embedding: Embedding,
        provenance: impl IntoIterator<Item = ChunkRef>,
    ) -> Self {
        Entity {
            id: entity_id(type_label, name),
            canonical_name: name.to_string(),
            aliases: BTreeSet::from([name.to_string()]),
            type_label: type_label.to_string(),
            alias_embeddings: BTreeMap::from([(name.to_string(), embedding.clone())]),
            embedding,
            provenance: provenance.into_iter().collect(),
        }
    }

    fn alias_embedding(&self, alias: &str) -> &Embedding {
        self.alias_embeddings.get(alias).unwrap_or(&self.embedding)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub chunk_ref: ChunkRef,
    pub confidence: f64,
}

fn chunk_label(cc: &ContextualizedChunk) -> String {
    cc.chunk.chunk_ref().to_string()
}

/// Splits `line` into `|`-separated trimmed fields when it starts with `tag`.
fn record_fields<'a>(line: &'a str, tag: &str) -> Option<Vec<&'a str>> {
    let line = line.trim().trim_start_matches(['-', '*']).trim();
    let mut fields = line.split('|').map(str::trim);
    if !fields.next()?.eq_ignore_ascii_case(tag) {
        return None;
    }
    Some(fields.collect())
}

fn is_empty_reply(reply: &str) -> bool {
    let t = reply.trim();
    t.is_empty() || t.eq_ignore_ascii_case("none")
}

pub fn entity_prompt(cc: &ContextualizedChunk) -> String {
    Prompt::new("extract_entities")
        .field("context", &cc.context)
        .field(
            "format",
            "one 'entity | <surface> | <type>' line per named entity, or 'none'",
        )
        .body(&cc.chunk.text)
        .render()
}

/// Parses entity lines, collapsing repeated surfaces.
pub fn parse_entities(reply: &str, chunk_ref: &ChunkRef) -> Result<Vec<EntityMention>> {
    if is_empty_reply(reply) {
        return Ok(Vec::new());
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut parsed_any = false;
    for line in reply.lines() {
        let Some(fields) = record_fields(line, "entity") else {
            continue;
        };
        let [surface, type_label] = fields[..] else {
            continue;
        };
        if surface.is_empty() || type_label.is_empty() {
            continue;
        }
        parsed_any = true;
        if seen.insert(surface.to_string()) {
            out.push(EntityMention {
                surface: surface.to_string(),
                type_label: type_label.to_string(),
                chunk_ref: chunk_ref.clone(),
            });
        }
    }
    if !parsed_any {
        return Err(Error::ExtractionFormat {
            chunk: chunk_ref.to_string(),
            message: "no entity line in reply".into(),
        });
    }
    Ok(out)
}

pub fn extract_entities(
    cc: &ContextualizedChunk,
    gen: &dyn GenerationProvider,
) -> Result<Vec<EntityMention>> {
    if cc.chunk.text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let reply = gen
        .generate(&entity_prompt(cc), EXTRACTION_MAX_TOKENS)
        .map_err(|e| Error::provider(format!("extracting entities from {}", chunk_label(cc)), e))?;
    parse_entities(&reply, &cc.chunk.chunk_ref())
}

pub fn relation_prompt(cc: &ContextualizedChunk, mentions: &[EntityMention]) -> String {
    let mut p = Prompt::new("extract_relations").field("context", &cc.context).field(
        "format",
        "one 'relation | <subject> | <predicate> | <object> | <confidence 0-1>' line per relation between the listed entities, or 'none'",
    );
    for m in mentions {
        p = p.field("entity", format!("{}|{}", m.surface, m.type_label));
    }
    p.body(&cc.chunk.text).render()
}

/// Parses relation lines whose endpoints are among `mentions` (surface match
/// ignoring case), then keeps the `max_triples` most confident ones. Ties keep
/// reply order.
pub fn parse_relations(
    reply: &str,
    mentions: &[EntityMention],
    chunk_ref: &ChunkRef,
    max_triples: usize,
) -> Result<Vec<Triple>> {
    if is_empty_reply(reply) {
        return Ok(Vec::new());
    }
    let lookup: BTreeMap<String, &EntityMention> = mentions
        .iter()
        .map(|m| (m.surface.to_lowercase(), m))
        .collect();
    let mut parsed_any = false;
    let mut triples = Vec::new();
    for line in reply.lines() {
        let Some(fields) = record_fields(line, "relation") else {
            continue;
        };
        let (s, p, o, conf) = match fields[..] {
            [s, p, o] => (s, p, o, None),
            [s, p, o, c] => (s, p, o, Some(c)),
            _ => continue,
        };
        let confidence = match conf.map(str::parse::<f64>) {
            None => 1.0,
            Some(Ok(c)) if c.is_finite() => c.clamp(0.0, 1.0),
            Some(_) => continue,
        };
        if p.is_empty() {
            continue;
        }
        parsed_any = true;
        let (Some(subj), Some(obj)) = (lookup.get(&s.to_lowercase()), lookup.get(&o.to_lowercase()))
        else {
            warn!("{chunk_ref}: relation endpoint not among mentions: {line}");
            continue;
        };
        triples.push(Triple {
            subject: subj.entity_id(),
            predicate: p.to_string(),
            object: obj.entity_id(),
            chunk_ref: chunk_ref.clone(),
            confidence,
        });
    }
    if !parsed_any {
        return Err(Error::ExtractionFormat {
            chunk: chunk_ref.to_string(),
            message: "no relation line in reply".into(),
        });
    }
    triples.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    triples.truncate(max_triples);
    Ok(triples)
}

pub fn extract_relations(
    cc: &ContextualizedChunk,
    mentions: &[EntityMention],
    gen: &dyn GenerationProvider,
    max_triples: usize,
) -> Result<Vec<Triple>> {
    if mentions.len() < 2 || max_triples == 0 {
        return Ok(Vec::new());
    }
    let reply = gen
        .generate(&relation_prompt(cc, mentions), EXTRACTION_MAX_TOKENS)
        .map_err(|e| Error::provider(format!("extracting relations from {}", chunk_label(cc)), e))?;
    parse_relations(&reply, mentions, &cc.chunk.chunk_ref(), max_triples)
}

/// One entity per distinct `(type, surface)`, embedded by surface text.
pub fn entities_from_mentions(
    mentions: &[EntityMention],
    embed: &dyn EmbeddingProvider,
) -> Result<Vec<Entity>> {
    let mut grouped: BTreeMap<(String, String), BTreeSet<ChunkRef>> = BTreeMap::new();
    for m in mentions {
        grouped
            .entry((m.type_label.clone(), m.surface.clone()))
            .or_default()
            .insert(m.chunk_ref.clone());
    }
    grouped
        .into_iter()
        .map(|((type_label, surface), refs)| {
            let e = embed
                .embed_text(&surface)
                .map_err(|e| Error::provider(format!("embedding entity {surface:?}"), e))?;
            Ok(Entity::new(&type_label, &surface, e, refs))
        })
        .collect()
}

/// Case-folds and collapses whitespace runs to single spaces.
pub fn normalize_name(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Character-level Levenshtein distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if ca == cb {
                diag
            } else {
                1 + diag.min(up).min(row[j])
            };
            diag = up;
        }
    }
    row[b.len()]
}

fn similarity_of_normalized(a: &str, b: &str) -> (f64, usize) {
    let d = levenshtein(a, b);
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return (1.0, 0);
    }
    (1.0 - d as f64 / longest as f64, d)
}

/// `1 - lev(a, b) / max(|a|, |b|)` over normalized names. Two empty strings
/// count as identical.
pub fn string_similarity(a: &str, b: &str) -> f64 {
    similarity_of_normalized(&normalize_name(a), &normalize_name(b)).0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DedupConfig {
    pub tau_sim: f64,
    pub tau_str: f64,
    pub max_edit_distance: usize,
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig {
            tau_sim: 0.9,
            tau_str: 0.8,
            max_edit_distance: 5,
        }
    }
}

impl DedupConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.tau_sim) {
            return Err(Error::Config("dedup.tau_sim must lie in [-1, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.tau_str) {
            return Err(Error::Config("dedup.tau_str must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Both thresholds and the absolute edit-distance guard must hold.
    pub fn is_duplicate(&self, name_a: &str, emb_a: &Embedding, name_b: &str, emb_b: &Embedding) -> bool {
        emb_a.cosine(emb_b) >= self.tau_sim && {
            let (sim, d) = similarity_of_normalized(&normalize_name(name_a), &normalize_name(name_b));
            sim >= self.tau_str && d <= self.max_edit_distance
        }
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi] = lo;
        }
    }
}

fn lexicographic(a: &Embedding, b: &Embedding) -> std::cmp::Ordering {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(a.dim().cmp(&b.dim()))
}

/// Merges entities whose aliases pass the duplicate test, closed
/// transitively. Only entities with the same type label are compared.
///
/// Triples are rewritten onto the merged ids; triples that become self-loops
/// or point at unknown ids are dropped, and exact duplicates on
/// `(subject, predicate, object, chunk)` collapse to the most confident one.
/// Output entities are sorted by id and triples by
/// `(subject, predicate, object, chunk)`.
pub fn merge_duplicates(
    entities: &[Entity],
    triples: &[Triple],
    cfg: &DedupConfig,
) -> (Vec<Entity>, Vec<Triple>) {
    // Atoms are (type, alias, embedding) with duplicates of the same
    // alias resolved to a single embedding chosen independently of order.
    let mut atoms: BTreeMap<(String, String), Embedding> = BTreeMap::new();
    for e in entities {
        for alias in &e.aliases {
            let emb = e.alias_embedding(alias);
            atoms
                .entry((e.type_label.clone(), alias.clone()))
                .and_modify(|cur| {
                    if lexicographic(emb, cur).is_lt() {
                        *cur = emb.clone();
                    }
                })
                .or_insert_with(|| emb.clone());
        }
    }
    let keys: Vec<(String, String)> = atoms.keys().cloned().collect();
    let index: BTreeMap<&(String, String), usize> = keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
    let normalized: Vec<String> = keys.iter().map(|(_, a)| normalize_name(a)).collect();
    let mut uf = UnionFind::new(keys.len());

    for e in entities {
        let mut it = e.aliases.iter();
        if let Some(first) = it.next() {
            let a = index[&(e.type_label.clone(), first.clone())];
            for alias in it {
                uf.union(a, index[&(e.type_label.clone(), alias.clone())]);
            }
        }
    }

    let mut start = 0;
    while start < keys.len() {
        let type_label = &keys[start].0;
        let end = start + keys[start..].iter().take_while(|k| &k.0 == type_label).count();
        for i in start..end {
            for j in i + 1..end {
                if uf.find(i) == uf.find(j) {
                    continue;
                }
                let (ei, ej) = (&atoms[&keys[i]], &atoms[&keys[j]]);
                if ei.cosine(ej) < cfg.tau_sim {
                    continue;
                }
                let (sim, d) = similarity_of_normalized(&normalized[i], &normalized[j]);
                if sim >= cfg.tau_str && d <= cfg.max_edit_distance {
                    uf.union(i, j);
                }
            }
        }
        start = end;
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..keys.len() {
        groups.entry(uf.find(i)).or_default().push(i);
    }

    let mut owner: BTreeMap<usize, usize> = BTreeMap::new();
    let mut merged: Vec<Entity> = Vec::with_capacity(groups.len());
    for members in groups.values() {
        let type_label = keys[members[0]].0.clone();
        let aliases: BTreeSet<String> = members.iter().map(|&i| keys[i].1.clone()).collect();
        let alias_embeddings: BTreeMap<String, Embedding> = members
            .iter()
            .map(|&i| (keys[i].1.clone(), atoms[&keys[i]].clone()))
            .collect();
        let dim = alias_embeddings.values().map(Embedding::dim).max().unwrap_or(0);
        let mut sum = vec![0.0; dim];
        for e in alias_embeddings.values() {
            for (s, v) in sum.iter_mut().zip(e.values()) {
                *s += v;
            }
        }
        let canonical = aliases.iter().next().cloned().unwrap_or_default();
        for &i in members {
            owner.insert(i, merged.len());
        }
        merged.push(Entity {
            id: entity_id(&type_label, &canonical),
            canonical_name: canonical,
            aliases,
            type_label,
            embedding: Embedding::normalized(sum),
            provenance: BTreeSet::new(),
            alias_embeddings,
        });
    }

    let mut id_map: BTreeMap<&str, usize> = BTreeMap::new();
    for e in entities {
        let first = e.aliases.iter().next().map(|a| index[&(e.type_label.clone(), a.clone())]);
        if let Some(atom) = first {
            let target = owner[&atom];
            merged[target].provenance.extend(e.provenance.iter().cloned());
            id_map.insert(e.id.as_str(), target);
        }
    }

    // Distinct groups can share a canonical name only when the same alias
    // carried embeddings too far apart to merge.
    let mut order: Vec<usize> = (0..merged.len()).collect();
    order.sort_by(|&a, &b| {
        merged[a]
            .id
            .cmp(&merged[b].id)
            .then_with(|| merged[a].aliases.cmp(&merged[b].aliases))
    });
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for &i in &order {
        let n = seen.entry(merged[i].id.clone()).or_insert(0);
        *n += 1;
        if *n > 1 {
            merged[i].id = format!("{}#{}", merged[i].id, n);
        }
    }

    let mut collapsed: BTreeMap<(String, String, String, ChunkRef), f64> = BTreeMap::new();
    for t in triples {
        let (Some(&s), Some(&o)) = (id_map.get(t.subject.as_str()), id_map.get(t.object.as_str()))
        else {
            warn!("dropping triple with unknown endpoint: {} -> {}", t.subject, t.object);
            continue;
        };
        if s == o {
            continue;
        }
        let key = (
            merged[s].id.clone(),
            t.predicate.clone(),
            merged[o].id.clone(),
            t.chunk_ref.clone(),
        );
        let c = collapsed.entry(key).or_insert(t.confidence);
        *c = c.max(t.confidence);
    }
    let out_triples = collapsed
        .into_iter()
        .map(|((subject, predicate, object, chunk_ref), confidence)| Triple {
            subject,
            predicate,
            object,
            chunk_ref,
            confidence,
        })
        .collect();

    merged.sort_by(|a, b| a.id.cmp(&b.id));
    (merged, out_triples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunking::{chunk_document, contextualize};
    use crate::corpus::{Document, SourceKind};
    use crate::providers::mock::{MockEmbedder, MockGenerator, ScriptedGenerator};
    use proptest::prelude::*;

    fn cc_for(text: &str) -> ContextualizedChunk {
        let d = Document::new("d1", SourceKind::Web, "Refinery", text);
        let c = &chunk_document(&d, 1024, 128).unwrap()[0];
        contextualize(&d, c, &MockGenerator::new(42), 64).unwrap()
    }

    fn unit(v: &[f64]) -> Embedding {
        Embedding::normalized(v.to_vec())
    }

    fn cref(i: usize) -> ChunkRef {
        ChunkRef {
            doc_id: "d".into(),
            index: i,
        }
    }

    /// Full-matrix edit distance, written independently of `levenshtein`.
    fn dp_lev(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut m = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in m.iter_mut().enumerate() {
            row[0] = i;
        }
        for (j, cell) in m[0].iter_mut().enumerate() {
            *cell = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let sub = m[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
                m[i][j] = sub.min(m[i - 1][j] + 1).min(m[i][j - 1] + 1);
            }
        }
        m[a.len()][b.len()]
    }

    #[test]
    fn mock_extracts_fixture_sentence() {
        let cc = cc_for("Crude oil enters the distillation column.");
        let gen = MockGenerator::new(42);
        let mentions = extract_entities(&cc, &gen).unwrap();
        let got: Vec<_> = mentions
            .iter()
            .map(|m| (m.surface.as_str(), m.type_label.as_str()))
            .collect();
        assert_eq!(got, [("crude oil", "Material"), ("distillation column", "Equipment")]);
        assert_eq!(mentions, extract_entities(&cc, &gen).unwrap());
        assert!(mentions.iter().all(|m| m.chunk_ref == cc.chunk.chunk_ref()));

        let triples = extract_relations(&cc, &mentions, &gen, 20).unwrap();
        assert_eq!(triples.len(), 1);
        assert_eq!(triples[0].subject, "Material/crude oil");
        assert_eq!(triples[0].predicate, "enters");
        assert_eq!(triples[0].object, "Equipment/distillation column");
    }

    #[test]
    fn empty_chunk_yields_nothing() {
        let mut cc = cc_for("x");
        cc.chunk.text.clear();
        assert!(extract_entities(&cc, &crate::providers::mock::Failing).unwrap().is_empty());
    }

    #[test]
    fn fewer_than_two_mentions_skip_the_provider() {
        let cc = cc_for("Crude oil is heavy.");
        let m = extract_entities(&cc, &MockGenerator::new(1)).unwrap();
        assert_eq!(m.len(), 1);
        assert!(extract_relations(&cc, &m, &crate::providers::mock::Failing, 20)
            .unwrap()
            .is_empty());
        assert!(extract_relations(&cc, &[], &crate::providers::mock::Failing, 20)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn relation_cap_keeps_most_confident() {
        let cc = cc_for("pump reactor");
        let mentions: Vec<EntityMention> = ["pump", "reactor"]
            .iter()
            .map(|s| EntityMention {
                surface: s.to_string(),
                type_label: "Equipment".into(),
                chunk_ref: cc.chunk.chunk_ref(),
            })
            .collect();
        let reply: String = (0..25)
            .map(|i| format!("relation | pump | p{i} | reactor | {:.2}\n", (i % 5) as f64 / 10.0))
            .collect();
        let gen = ScriptedGenerator::fixed(reply);
        let triples = extract_relations(&cc, &mentions, &gen, 20).unwrap();
        assert_eq!(triples.len(), 20);
        let preds: Vec<_> = triples.iter().map(|t| t.predicate.as_str()).collect();
        // Five candidates at each of 0.4, 0.3, 0.2, 0.1 survive in reply order;
        // the five at 0.0 are cut.
        assert_eq!(&preds[..5], ["p4", "p9", "p14", "p19", "p24"]);
        assert!(triples.iter().all(|t| t.confidence > 0.0));
    }

    #[test]
    fn tolerant_parsing() {
        let r = cref(1);
        let reply = "Here you go:\nentity | LiOH | Chemical\n- entity | LiOH | Chemical\nentity | broken\n";
        let m = parse_entities(reply, &r).unwrap();
        assert_eq!(m.len(), 1);
        assert!(matches!(
            parse_entities("I could not find anything", &r),
            Err(Error::ExtractionFormat { .. })
        ));
        assert!(parse_entities("None", &r).unwrap().is_empty());
    }

    #[test]
    fn relation_endpoints_must_be_mentions() {
        let r = cref(1);
        let m = vec![EntityMention {
            surface: "pump".into(),
            type_label: "Equipment".into(),
            chunk_ref: r.clone(),
        }];
        let t = parse_relations("relation | pump | feeds | tank | 0.5", &m, &r, 20).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn string_similarity_examples() {
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert!((string_similarity("kitten", "sitting") - (1.0 - 3.0 / 7.0)).abs() < 1e-12);
        assert_eq!(string_similarity("LiOH", "LiOH"), 1.0);
        assert_eq!(string_similarity("a", "b"), 0.0);
        assert_eq!(string_similarity("", ""), 1.0);
        assert_eq!(string_similarity("LiOH  production", "lioh Production"), 1.0);
    }

    #[test]
    fn identical_entities_merge() {
        let e = unit(&[1.0, 0.0]);
        let a = Entity::new("Chemical", "LiOH", e.clone(), [cref(1)]);
        let mut b = Entity::new("Chemical", "LiOH", e, [cref(2)]);
        b.id = "other".into();
        let (m, _) = merge_duplicates(&[a, b], &[], &DedupConfig::default());
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].provenance.len(), 2);
    }

    #[test]
    fn case_variants_merge_under_mock_embeddings() {
        let emb = MockEmbedder::new(42);
        let mk = |n: &str, i| Entity::new("Process", n, emb.embed_text(n).unwrap(), [cref(i)]);
        let ents = [mk("LiOH production", 1), mk("LiOH Production", 2)];
        let t = Triple {
            subject: ents[0].id.clone(),
            predicate: "uses".into(),
            object: ents[1].id.clone(),
            chunk_ref: cref(1),
            confidence: 1.0,
        };
        let (m, ts) = merge_duplicates(&ents, &[t], &DedupConfig::default());
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].canonical_name, "LiOH Production");
        assert_eq!(m[0].aliases.len(), 2);
        assert!(ts.is_empty(), "self-loop after merge is dropped");
    }

    #[test]
    fn both_thresholds_are_required() {
        let cfg = DedupConfig::default();
        let a = unit(&[1.0, 0.0]);
        let close = unit(&[0.95, (1.0f64 - 0.95 * 0.95).sqrt()]);
        assert!((a.cosine(&close) - 0.95).abs() < 1e-12);
        // High cosine, low string similarity.
        let ents = [
            Entity::new("T", "abcde", a.clone(), [cref(1)]),
            Entity::new("T", "vwxyz", close.clone(), [cref(1)]),
        ];
        assert_eq!(merge_duplicates(&ents, &[], &cfg).0.len(), 2);
        // Identical strings, orthogonal embeddings.
        let ents = [
            Entity::new("T", "pump", a.clone(), [cref(1)]),
            Entity::new("U", "pump", a.clone(), [cref(1)]),
            Entity::new("T", "Pump", unit(&[0.0, 1.0]), [cref(1)]),
        ];
        assert_eq!(merge_duplicates(&ents, &[], &cfg).0.len(), 3);
        // Ratio passes but absolute distance exceeds the guard.
        let long_a = "a".repeat(40);
        let long_b = format!("{}{}", "a".repeat(34), "b".repeat(6));
        assert!(string_similarity(&long_a, &long_b) >= 0.8);
        let ents = [
            Entity::new("T", &long_a, a.clone(), [cref(1)]),
            Entity::new("T", &long_b, a, [cref(1)]),
        ];
        assert_eq!(merge_duplicates(&ents, &[], &cfg).0.len(), 2);
    }

    #[test]
    fn triples_are_rewritten_and_collapsed() {
        let a = unit(&[1.0, 0.0]);
        let ents = [
            Entity::new("T", "pump", a.clone(), [cref(1)]),
            Entity::new("T", "Pump", a.clone(), [cref(2)]),
            Entity::new("T", "tank", unit(&[0.0, 1.0]), [cref(1)]),
        ];
        let t = |s: &str, c| Triple {
            subject: s.into(),
            predicate: "feeds".into(),
            object: "T/tank".into(),
            chunk_ref: cref(1),
            confidence: c,
        };
        let (m, ts) = merge_duplicates(&ents, &[t("T/pump", 0.4), t("T/Pump", 0.9), t("T/ghost", 1.0)], &DedupConfig::default());
        assert_eq!(m.len(), 2);
        assert_eq!(ts.len(), 1);
        assert_eq!(ts[0].subject, "T/Pump");
        assert_eq!(ts[0].confidence, 0.9);
        let ids: BTreeSet<_> = m.iter().map(|e| e.id.as_str()).collect();
        assert!(ts.iter().all(|t| ids.contains(t.subject.as_str()) && ids.contains(t.object.as_str())));
    }

    #[test]
    fn merged_embedding_is_unit_norm() {
        let ents = [
            Entity::new("T", "pump", unit(&[1.0, 0.1]), [cref(1)]),
            Entity::new("T", "pumps", unit(&[1.0, 0.0]), [cref(2)]),
        ];
        let (m, _) = merge_duplicates(&ents, &[], &DedupConfig::default());
        assert_eq!(m.len(), 1);
        assert!((m[0].embedding.norm() - 1.0).abs() < 1e-9);
        assert!(m[0].aliases.contains(&m[0].canonical_name));
    }

    fn arb_entities() -> impl Strategy<Value = Vec<Entity>> {
        let name = prop::sample::select(vec![
            "pump", "Pump", "pumps", "tank", "Tank", "tanks", "reactor", "reactors", "column",
        ]);
        let ty = prop::sample::select(vec!["A", "B"]);
        let emb = prop::sample::select(vec![0usize, 1, 2]);
        prop::collection::vec((name, ty, emb, 1usize..4), 0..12).prop_map(|specs| {
            let bases = [unit(&[1.0, 0.0, 0.0]), unit(&[1.0, 0.2, 0.0]), unit(&[0.0, 0.0, 1.0])];
            specs
                .into_iter()
                .map(|(n, t, e, c)| Entity::new(t, n, bases[e].clone(), [cref(c)]))
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn similarity_matches_dp_oracle(a in "[a-cA-C ]{0,12}", b in "[a-cA-C ]{0,12}") {
            let (na, nb) = (normalize_name(&a), normalize_name(&b));
            let longest = na.chars().count().max(nb.chars().count());
            let expected = if longest == 0 { 1.0 } else { 1.0 - dp_lev(&na, &nb) as f64 / longest as f64 };
            let s = string_similarity(&a, &b);
            prop_assert!((s - expected).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(s, string_similarity(&b, &a));
            prop_assert_eq!(s == 1.0, na == nb);
        }

        #[test]
        fn merge_is_idempotent_and_order_free(ents in arb_entities(), rot in 0usize..12) {
            let cfg = DedupConfig::default();
            let (once, _) = merge_duplicates(&ents, &[], &cfg);
            let (twice, _) = merge_duplicates(&once, &[], &cfg);
            prop_assert_eq!(&once, &twice);
            let mut perm = ents.clone();
            perm.reverse();
            if !perm.is_empty() {
                let k = rot % perm.len();
                perm.rotate_left(k);
            }
            let (shuffled, _) = merge_duplicates(&perm, &[], &cfg);
            let names = |v: &[Entity]| v.iter().map(|e| (e.canonical_name.clone(), e.aliases.clone())).collect::<Vec<_>>();
            prop_assert_eq!(names(&once), names(&shuffled));
        }
    }
}
