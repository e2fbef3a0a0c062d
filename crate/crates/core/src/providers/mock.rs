//! Deterministic offline providers.
//!
//! Every mock is a pure function of its seed and inputs:
//!
//! * [`MockEmbedder`]: lowercased alphanumeric words are feature-hashed
//!   (SHA-256 of `seed || word`, first 8 bytes, modulo [`MOCK_DIM`]) into
//!   per-bucket counts, then normalized. Image refs embed their file-name words
//!   through the same hash, so image and text vectors are comparable.
//! * [`MockGenerator`]: dispatches on the prompt's task tag. Entity and
//!   relation extraction run a pattern table over the body; context generation
//!   returns `Context for <title> part <i>`; every other task returns
//!   `[<task>#<digest>] <content>` where `<digest>` is the first 8 hex chars of
//!   SHA-256 over the seed and the body's non-empty lines, and `<content>` is
//!   those lines joined by spaces, cut to `max_tokens` words.
//! * [`FixtureSearch`]: ranks a fixed per-kind document index by mock cosine.
//! * [`MockJudge`]: token-overlap rubric, see [`MockJudge`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use log::warn;
use sha2::{Digest, Sha256};

use super::{
    Embedding, EmbeddingProvider, Feedback, GenerationProvider, JudgeProvider, ProviderError,
    SearchProvider,
};
use crate::corpus::{Corpus, Document, SourceKind};
use crate::prompt::Prompt;
use crate::vector;

pub const MOCK_DIM: usize = 256;

/// Word limit before the mock embedder truncates its input.
pub const MOCK_MAX_INPUT_WORDS: usize = 8192;

const DEFAULT_PATTERNS: &str = include_str!("../../data/mock_patterns.tsv");

/// Lowercased alphanumeric runs.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

fn seeded_hash(seed: u64, token: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(token.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone)]
pub struct MockEmbedder {
    seed: u64,
}

impl MockEmbedder {
    pub fn new(seed: u64) -> Self {
        MockEmbedder { seed }
    }

    fn embed_words(&self, words: &[String]) -> Embedding {
        let mut v = vec![0.0; MOCK_DIM];
        if words.is_empty() {
            v[(seeded_hash(self.seed, "\u{0}empty") % MOCK_DIM as u64) as usize] = 1.0;
        }
        for w in words {
            v[(seeded_hash(self.seed, w) % MOCK_DIM as u64) as usize] += 1.0;
        }
        Embedding::normalized(v)
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn dim(&self) -> usize {
        MOCK_DIM
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        let mut ws = words(text);
        if ws.len() > MOCK_MAX_INPUT_WORDS {
            warn!(
                "embedding input of {} words truncated to {}",
                ws.len(),
                MOCK_MAX_INPUT_WORDS
            );
            ws.truncate(MOCK_MAX_INPUT_WORDS);
        }
        Ok(self.embed_words(&ws))
    }

    fn embed_image(&self, image_ref: &str) -> Result<Embedding, ProviderError> {
        let name = image_ref
            .rsplit(['/', '\\'])
            .next()
            .unwrap_or_default()
            .trim();
        if name.is_empty() {
            return Err(ProviderError::MissingInput(format!(
                "cannot resolve image reference {image_ref:?}"
            )));
        }
        Ok(self.embed_words(&words(name)))
    }
}

/// Surface forms with type labels, matched greedily (longest first) over
/// lowercased words.
#[derive(Debug, Clone, Default)]
pub struct PatternTable {
    entries: Vec<(Vec<String>, String, String)>,
    by_first: HashMap<String, Vec<usize>>,
}

impl PatternTable {
    pub fn new<'a>(entries: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut table = PatternTable::default();
        for (surface, type_label) in entries {
            table.insert(surface, type_label);
        }
        table
    }

    /// Parses `surface<TAB>type` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Self {
        let mut table = PatternTable::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((surface, type_label)) = line.split_once('\t') {
                table.insert(surface.trim(), type_label.trim());
            }
        }
        table
    }

    pub fn builtin() -> Self {
        PatternTable::parse(DEFAULT_PATTERNS)
    }

    pub fn insert(&mut self, surface: &str, type_label: &str) {
        let ws = words(surface);
        if ws.is_empty() {
            return;
        }
        let idx = self.entries.len();
        self.by_first.entry(ws[0].clone()).or_default().push(idx);
        self.entries
            .push((ws, surface.to_string(), type_label.to_string()));
        let entries = &self.entries;
        if let Some(list) = self.by_first.get_mut(&entries[idx].0[0]) {
            list.sort_by(|&a, &b| entries[b].0.len().cmp(&entries[a].0.len()).then(a.cmp(&b)));
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Matches over a word sequence: `(start, end, surface, type)` spans.
    pub fn find(&self, ws: &[String]) -> Vec<(usize, usize, &str, &str)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < ws.len() {
            let hit = self.by_first.get(&ws[i]).and_then(|cands| {
                cands.iter().find(|&&c| {
                    let pat = &self.entries[c].0;
                    ws.len() - i >= pat.len() && ws[i..i + pat.len()] == pat[..]
                })
            });
            match hit {
                Some(&c) => {
                    let (pat, surface, type_label) = &self.entries[c];
                    out.push((i, i + pat.len(), surface.as_str(), type_label.as_str()));
                    i += pat.len();
                }
                None => i += 1,
            }
        }
        out
    }
}

const RELATION_STOPWORDS: [&str; 3] = ["the", "a", "an"];
const MAX_PREDICATE_WORDS: usize = 4;

#[derive(Debug, Clone)]
pub struct MockGenerator {
    seed: u64,
    patterns: Arc<PatternTable>,
}

impl MockGenerator {
    pub fn new(seed: u64) -> Self {
        MockGenerator::with_patterns(seed, PatternTable::builtin())
    }

    pub fn with_patterns(seed: u64, patterns: PatternTable) -> Self {
        MockGenerator {
            seed,
            patterns: Arc::new(patterns),
        }
    }

    fn digest(&self, lines: &[&str]) -> String {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for l in lines {
            h.update(l.as_bytes());
            h.update(b"\n");
        }
        hex::encode(&h.finalize()[..4])
    }

    fn template(&self, task: &str, body: &str, max_tokens: usize) -> String {
        let lines: Vec<&str> = body
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        let digest = self.digest(&lines);
        let content: Vec<&str> = lines
            .iter()
            .flat_map(|l| l.split_whitespace())
            .take(max_tokens)
            .collect();
        if content.is_empty() {
            format!("[{task}#{digest}]")
        } else {
            format!("[{task}#{digest}] {}", content.join(" "))
        }
    }

    fn extract_entities(&self, body: &str) -> String {
        let ws = words(body);
        let mut seen = BTreeSet::new();
        let mut lines = Vec::new();
        for (_, _, surface, type_label) in self.patterns.find(&ws) {
            if seen.insert(surface) {
                lines.push(format!("entity | {surface} | {type_label}"));
            }
        }
        if lines.is_empty() {
            "none".to_string()
        } else {
            lines.join("\n")
        }
    }

    fn extract_relations(&self, prompt: &Prompt) -> String {
        let table = PatternTable::new(prompt.get_all("entity").filter_map(|e| e.split_once('|')));
        let mut lines = Vec::new();
        for sentence in prompt.body_text().split(['.', '!', '?', ';', '\n']) {
            let ws = words(sentence);
            let spans = table.find(&ws);
            for pair in spans.windows(2) {
                let (_, a_end, a, _) = pair[0];
                let (b_start, _, b, _) = pair[1];
                if a == b || b_start <= a_end {
                    continue;
                }
                let gap = &ws[a_end..b_start];
                let predicate: Vec<&str> = gap
                    .iter()
                    .map(String::as_str)
                    .filter(|w| !RELATION_STOPWORDS.contains(w))
                    .collect();
                if predicate.is_empty() || predicate.len() > MAX_PREDICATE_WORDS {
                    continue;
                }
                let confidence = 1.0 / gap.len() as f64;
                lines.push(format!(
                    "relation | {a} | {} | {b} | {confidence:.3}",
                    predicate.join(" ")
                ));
            }
        }
        if lines.is_empty() {
            "none".to_string()
        } else {
            lines.join("\n")
        }
    }
}

impl GenerationProvider for MockGenerator {
    fn generate(&self, prompt: &str, max_tokens: usize) -> Result<String, ProviderError> {
        if prompt.trim().is_empty() {
            return Err(ProviderError::Precondition("empty prompt".into()));
        }
        let p = Prompt::parse(prompt);
        Ok(match p.task() {
            "contextualize" => format!(
                "Context for {} part {}",
                p.get("title").unwrap_or("untitled"),
                p.get("part").unwrap_or("1")
            ),
            "extract_entities" => self.extract_entities(p.body_text()),
            "extract_relations" => self.extract_relations(&p),
            task => self.template(task, p.body_text(), max_tokens),
        })
    }
}

/// Token-overlap rubric. With `Q` the query's word set, `A` the answer's word
/// list and `R` the optional reference word set:
///
/// * helpfulness = 4·|Q ∩ set(A)| / |Q|
/// * correctness = 4·|set(A) ∩ R| / |set(A)| (helpfulness when no reference)
/// * coherence   = 4·|set(A)| / |A|
/// * complexity  = 4·min(1, |set(A)| / 40)
/// * verbosity   = 4·min(1, |A| / 120)
///
/// An empty answer scores 0 everywhere.
#[derive(Debug, Clone, Default)]
pub struct MockJudge {
    reference: Option<BTreeSet<String>>,
}

impl MockJudge {
    pub fn new() -> Self {
        MockJudge::default()
    }

    pub fn with_reference(reference: &str) -> Self {
        MockJudge {
            reference: Some(words(reference).into_iter().collect()),
        }
    }
}

impl JudgeProvider for MockJudge {
    fn judge(&self, query: &str, answer: &str) -> Result<Feedback, ProviderError> {
        let a = words(answer);
        if a.is_empty() {
            return Ok(Feedback::from_scores([0.0; 5], "empty answer"));
        }
        let q: BTreeSet<String> = words(query).into_iter().collect();
        let a_set: BTreeSet<&String> = a.iter().collect();
        let helpfulness = if q.is_empty() {
            0.0
        } else {
            4.0 * q.iter().filter(|w| a_set.contains(w)).count() as f64 / q.len() as f64
        };
        let correctness = match &self.reference {
            Some(r) => 4.0 * a_set.iter().filter(|w| r.contains(**w)).count() as f64 / a_set.len() as f64,
            None => helpfulness,
        };
        let coherence = 4.0 * a_set.len() as f64 / a.len() as f64;
        let complexity = 4.0 * (a_set.len() as f64 / 40.0).min(1.0);
        let verbosity = 4.0 * (a.len() as f64 / 120.0).min(1.0);
        let missing: Vec<&str> = q
            .iter()
            .filter(|w| !a_set.contains(w))
            .map(String::as_str)
            .collect();
        let comments = if missing.is_empty() {
            "covers every query term".to_string()
        } else {
            format!("does not address: {}", missing.join(", "))
        };
        Ok(Feedback::from_scores(
            [helpfulness, correctness, coherence, complexity, verbosity],
            comments,
        ))
    }
}

/// Fixed per-kind document index searched by embedding cosine.
///
/// On disk: a directory with `manifest.json` mapping source kinds to corpus
/// files relative to the directory, e.g. `{"image": "image.jsonl"}`. Kinds
/// missing from the manifest are a configuration error at search time.
pub struct FixtureSearch {
    embed: Arc<dyn EmbeddingProvider>,
    index: BTreeMap<SourceKind, Vec<(Document, Embedding)>>,
}

impl FixtureSearch {
    pub fn new(
        embed: Arc<dyn EmbeddingProvider>,
        by_kind: BTreeMap<SourceKind, Vec<Document>>,
    ) -> Result<Self, ProviderError> {
        let mut index = BTreeMap::new();
        for (kind, docs) in by_kind {
            let mut entries = Vec::with_capacity(docs.len());
            for mut doc in docs {
                doc.source_kind = kind;
                let e = document_embedding(embed.as_ref(), &doc)?;
                entries.push((doc, e));
            }
            index.insert(kind, entries);
        }
        Ok(FixtureSearch { embed, index })
    }

    /// An index where every retrieval kind exists but holds no documents.
    pub fn empty(embed: Arc<dyn EmbeddingProvider>) -> Self {
        FixtureSearch {
            embed,
            index: SourceKind::RETRIEVAL.iter().map(|&k| (k, Vec::new())).collect(),
        }
    }

    pub fn load(dir: &Path, embed: Arc<dyn EmbeddingProvider>) -> crate::Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let raw = std::fs::read_to_string(&manifest_path)
            .map_err(|e| crate::Error::io(&manifest_path, e))?;
        let manifest: BTreeMap<String, String> = serde_json::from_str(&raw)
            .map_err(|e| crate::Error::Config(format!("{}: {e}", manifest_path.display())))?;
        let mut by_kind = BTreeMap::new();
        for (kind, file) in manifest {
            let kind: SourceKind = kind.parse()?;
            let corpus = Corpus::load(&dir.join(file))?;
            by_kind.insert(kind, corpus.documents().to_vec());
        }
        FixtureSearch::new(embed, by_kind)
            .map_err(|e| crate::Error::provider("building fixture index", e))
    }
}

/// Image documents embed their `file` metadata (or title); everything else
/// embeds `title + text`.
pub fn document_embedding(
    embed: &dyn EmbeddingProvider,
    doc: &Document,
) -> Result<Embedding, ProviderError> {
    if doc.source_kind == SourceKind::Image {
        let r = doc.metadata.get("file").unwrap_or(&doc.title);
        embed.embed_image(r)
    } else {
        embed.embed_text(&format!("{} {}", doc.title, doc.text))
    }
}

impl SearchProvider for FixtureSearch {
    fn search(
        &self,
        kind: SourceKind,
        query: &str,
        limit: usize,
    ) -> Result<Vec<Document>, ProviderError> {
        if limit == 0 {
            return Err(ProviderError::Precondition("search limit must be >= 1".into()));
        }
        let entries = self
            .index
            .get(&kind)
            .ok_or_else(|| ProviderError::Config(format!("no index for source kind {kind}")))?;
        let q = self.embed.embed_text(query)?;
        let scores: Vec<f64> = entries.iter().map(|(_, e)| q.cosine(e)).collect();
        Ok(vector::top_k_indices(&scores, limit)
            .into_iter()
            .map(|i| entries[i].0.clone())
            .collect())
    }
}

/// Replays canned responses in order, repeating the last one.
#[derive(Debug)]
pub struct ScriptedGenerator {
    responses: Vec<String>,
    next: AtomicUsize,
}

impl ScriptedGenerator {
    pub fn fixed(response: impl Into<String>) -> Self {
        ScriptedGenerator::sequence(vec![response.into()])
    }

    pub fn sequence(responses: Vec<String>) -> Self {
        assert!(!responses.is_empty(), "scripted generator needs a response");
        ScriptedGenerator {
            responses,
            next: AtomicUsize::new(0),
        }
    }
}

impl GenerationProvider for ScriptedGenerator {
    fn generate(&self, _prompt: &str, _max_tokens: usize) -> Result<String, ProviderError> {
        let i = self.next.fetch_add(1, Ordering::SeqCst);
        Ok(self.responses[i.min(self.responses.len() - 1)].clone())
    }
}

/// Replays rubric score rows in order, repeating the last one.
#[derive(Debug)]
pub struct ScriptedJudge {
    rows: Vec<[f64; 5]>,
    next: AtomicUsize,
}

impl ScriptedJudge {
    pub fn new(rows: Vec<[f64; 5]>) -> Self {
        assert!(!rows.is_empty(), "scripted judge needs a row");
        ScriptedJudge {
            rows,
            next: AtomicUsize::new(0),
        }
    }
}

impl JudgeProvider for ScriptedJudge {
    fn judge(&self, _query: &str, _answer: &str) -> Result<Feedback, ProviderError> {
        let i = self.next.fetch_add(1, Ordering::SeqCst);
        let row = self.rows[i.min(self.rows.len() - 1)];
        Ok(Feedback::from_scores(row, format!("scripted round {i}")))
    }
}

/// Fails every call with a transport error.
#[derive(Debug, Default, Clone)]
pub struct Failing;

impl Failing {
    fn err() -> ProviderError {
        ProviderError::Transport {
            attempts: 1,
            message: "simulated outage".into(),
        }
    }
}

impl GenerationProvider for Failing {
    fn generate(&self, _: &str, _: usize) -> Result<String, ProviderError> {
        Err(Failing::err())
    }
}

impl SearchProvider for Failing {
    fn search(&self, _: SourceKind, _: &str, _: usize) -> Result<Vec<Document>, ProviderError> {
        Err(Failing::err())
    }
}

impl JudgeProvider for Failing {
    fn judge(&self, _: &str, _: &str) -> Result<Feedback, ProviderError> {
        Err(Failing::err())
    }
}

/// Wraps a provider and counts calls.
#[derive(Debug)]
pub struct Counting<P> {
    inner: P,
    calls: AtomicUsize,
}

impl<P> Counting<P> {
    pub fn new(inner: P) -> Self {
        Counting {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<P: GenerationProvider> GenerationProvider for Counting<P> {
    fn generate(&self, prompt: &str, max_tokens: usize) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.generate(prompt, max_tokens)
    }
}

impl<P: JudgeProvider> JudgeProvider for Counting<P> {
    fn judge(&self, query: &str, answer: &str) -> Result<Feedback, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.judge(query, answer)
    }
}

impl<P: SearchProvider> SearchProvider for Counting<P> {
    fn search(&self, kind: SourceKind, query: &str, limit: usize) -> Result<Vec<Document>, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.search(kind, query, limit)
    }
}

/// Wraps a generator and records every prompt it sees.
#[derive(Debug)]
pub struct Recording<P> {
    inner: P,
    prompts: Mutex<Vec<String>>,
}

impl<P> Recording<P> {
    pub fn new(inner: P) -> Self {
        Recording {
            inner,
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("poisoned").clone()
    }
}

impl<P: GenerationProvider> GenerationProvider for Recording<P> {
    fn generate(&self, prompt: &str, max_tokens: usize) -> Result<String, ProviderError> {
        self.prompts.lock().expect("poisoned").push(prompt.to_string());
        self.inner.generate(prompt, max_tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embeddings_are_deterministic_unit_vectors() {
        let e = MockEmbedder::new(42);
        let a = e.embed_text("Lithium hydroxide from spodumene").unwrap();
        let b = e.embed_text("Lithium hydroxide from spodumene").unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-9);
        assert_eq!(a.dim(), MOCK_DIM);
        assert!((a.cosine(&b) - 1.0).abs() < 1e-12);
        assert!((e.embed_text("").unwrap().norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn embeddings_ignore_case_and_punctuation() {
        let e = MockEmbedder::new(7);
        assert_eq!(
            e.embed_text("LiOH production").unwrap(),
            e.embed_text("lioh, Production!").unwrap()
        );
    }

    #[test]
    fn seed_changes_embedding() {
        let a = MockEmbedder::new(1).embed_text("ammonia synthesis loop").unwrap();
        let b = MockEmbedder::new(2).embed_text("ammonia synthesis loop").unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn image_embedding_uses_file_name_words() {
        let e = MockEmbedder::new(42);
        let q = e.embed_text("distillation").unwrap();
        let pfd = e.embed_image("images/distillation_pfd.png").unwrap();
        let other = e.embed_image("images/unrelated.png").unwrap();
        assert_eq!(pfd.dim(), e.embed_text("x").unwrap().dim());
        assert!(q.cosine(&pfd) > q.cosine(&other));
        assert_eq!(pfd, e.embed_image("images/distillation_pfd.png").unwrap());
        assert!(matches!(e.embed_image(""), Err(ProviderError::MissingInput(_))));
    }

    #[test]
    fn pattern_table_prefers_longest_match() {
        let t = PatternTable::new([("oil", "Material"), ("crude oil", "Material"), ("column", "Equipment")]);
        let ws = words("Crude oil enters the column");
        let hits: Vec<_> = t.find(&ws).into_iter().map(|h| h.2).collect();
        assert_eq!(hits, ["crude oil", "column"]);
    }

    #[test]
    fn generic_template_is_stable() {
        let g = MockGenerator::new(42);
        let p = Prompt::new("summarize").body("alpha beta\n\n gamma ").render();
        let a = g.generate(&p, 100).unwrap();
        assert_eq!(a, g.generate(&p, 100).unwrap());
        assert!(a.starts_with("[summarize#"));
        assert!(a.ends_with("] alpha beta gamma"));
        let short = g.generate(&p, 2).unwrap();
        assert!(short.ends_with("] alpha beta"));
        assert!(matches!(g.generate("  ", 10), Err(ProviderError::Precondition(_))));
    }

    #[test]
    fn judge_scores_are_bounded() {
        let j = MockJudge::with_reference("crude oil enters the distillation column");
        let f = j
            .judge("where does crude oil go", "crude oil enters the distillation column")
            .unwrap();
        assert!(f.is_complete());
        assert!(f.scores.values().all(|&s| (0.0..=4.0).contains(&s)));
        assert_eq!(f.score(super::super::Rubric::Correctness), 4.0);
        let empty = j.judge("q", "").unwrap();
        assert_eq!(empty.score(super::super::Rubric::Helpfulness), 0.0);
    }

    #[test]
    fn fixture_search_ranks_by_cosine() {
        let embed: Arc<dyn EmbeddingProvider> = Arc::new(MockEmbedder::new(42));
        let docs = vec![
            Document::new("w1", SourceKind::Wiki, "Ammonia", "ammonia is made by the haber process"),
            Document::new("w2", SourceKind::Wiki, "Steel", "blast furnace iron"),
        ];
        let s = FixtureSearch::new(embed.clone(), BTreeMap::from([(SourceKind::Wiki, docs)])).unwrap();
        let hits = s.search(SourceKind::Wiki, "haber process ammonia", 1).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].id, "w1");
        assert!(matches!(s.search(SourceKind::Patent, "x", 1), Err(ProviderError::Config(_))));
        assert!(matches!(s.search(SourceKind::Wiki, "x", 0), Err(ProviderError::Precondition(_))));
        assert!(FixtureSearch::empty(embed).search(SourceKind::Web, "x", 3).unwrap().is_empty());
    }
}
