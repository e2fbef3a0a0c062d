//! Answer metrics and the open-domain QA harness.
//!
//! Texts are tokenized with the chunking tokenizer and lowercased.
//!
//! BLEU is the sentence-level form with multiple references: modified
//! (clipped) n-gram precisions `p_n` for `n = 1..=max_n`, combined by a
//! geometric mean and multiplied by the brevity penalty
//! `BP = exp(1 − r/c)` when `c ≤ r` (else 1), where `c` is the candidate
//! length and `r` the reference length closest to `c` (shorter on ties).
//! Smoothing: an order `n > 1` with zero clipped matches uses
//! `(0 + 1) / (total_n + 1)`. A candidate without unigram matches scores 0.
//!
//! ROUGE-N counts clipped n-gram overlap; ROUGE-L uses the longest common
//! subsequence. Both report precision, recall and their harmonic mean.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chunking::{chunk_document, tokenize, ChunkRef};
use crate::corpus::Corpus;
use crate::graph::KnowledgeGraph;
use crate::par::par_map;
use crate::prompt::Prompt;
use crate::providers::{Embedding, EmbeddingProvider, GenerationProvider, JudgeProvider, Rubric};
use crate::retrieve::{self, RetrieveConfig, ANSWER_MAX_TOKENS};
use crate::vector::top_k_indices;
use crate::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const ROUGE_ORDERS: [usize; 2] = [1, 2];

pub fn metric_tokens(text: &str) -> Vec<String> {
    tokenize(text).texts().into_iter().map(str::to_lowercase).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_overlap(cand: &HashMap<&[String], usize>, reference: &HashMap<&[String], usize>) -> usize {
    cand.iter()
        .map(|(g, &c)| c.min(reference.get(g).copied().unwrap_or(0)))
        .sum()
}

pub fn bleu(candidate: &str, references: &[&str], max_n: usize) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::InvalidArgument("BLEU needs at least one reference".into()));
    }
    if max_n == 0 {
        return Err(Error::InvalidArgument("BLEU max_n must be >= 1".into()));
    }
    let c = metric_tokens(candidate);
    if c.is_empty() {
        return Ok(0.0);
    }
    let refs: Vec<Vec<String>> = references.iter().map(|r| metric_tokens(r)).collect();
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand = ngram_counts(&c, n);
        let total: usize = cand.values().sum();
        // Clip each n-gram by its maximum count in any single reference.
        let ref_counts: Vec<HashMap<&[String], usize>> = refs.iter().map(|r| ngram_counts(r, n)).collect();
        let matches: usize = cand
            .iter()
            .map(|(g, &k)| {
                let max_ref = ref_counts.iter().map(|rc| rc.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
                k.min(max_ref)
            })
            .sum();
        let p = if matches > 0 {
            matches as f64 / total as f64
        } else if n > 1 {
            1.0 / (total as f64 + 1.0)
        } else {
            return Ok(0.0);
        };
        log_sum += p.ln();
    }
    let c_len = c.len() as f64;
    let r_len = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| ((r as isize - c.len() as isize).abs(), r))
        .expect("non-empty references") as f64;
    let bp = if c_len > r_len { 1.0 } else { (1.0 - r_len / c_len).exp() };
    Ok(bp * (log_sum / max_n as f64).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when the reference is too short for the metric to be defined.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub undefined: bool,
}

impl Prf {
    fn from_counts(overlap: usize, cand_total: usize, ref_total: usize) -> Prf {
        if ref_total == 0 {
            return Prf {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
                undefined: true,
            };
        }
        let precision = if cand_total == 0 { 0.0 } else { overlap as f64 / cand_total as f64 };
        let recall = overlap as f64 / ref_total as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
            undefined: false,
        }
    }
}

pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Result<Prf> {
    if n == 0 {
        return Err(Error::InvalidArgument("ROUGE-N needs n >= 1".into()));
    }
    let (c, r) = (metric_tokens(candidate), metric_tokens(reference));
    let (cc, rc) = (ngram_counts(&c, n), ngram_counts(&r, n));
    Ok(Prf::from_counts(
        clipped_overlap(&cc, &rc),
        cc.values().sum(),
        rc.values().sum(),
    ))
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    let mut cur = vec![0; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &str, reference: &str) -> Prf {
    let (c, r) = (metric_tokens(candidate), metric_tokens(reference));
    Prf::from_counts(lcs_len(&c, &r), c.len(), r.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    FactBased,
    Logical,
    Comparative,
    Causal,
    Operational,
    MultiHop,
    Procedural,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QAItem {
    pub id: String,
    pub question: String,
    pub reference: String,
    pub category: Category,
}

/// Reads one QA item per line; blank lines are skipped.
pub fn load_qa(path: &Path) -> Result<Vec<QAItem>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScores {
    pub bleu: f64,
    /// ROUGE-N F1 keyed by `n`.
    pub rouge_n: BTreeMap<usize, f64>,
    pub rouge_l: f64,
}

impl ItemScores {
    pub fn compute(answer: &str, reference: &str) -> Result<ItemScores> {
        Ok(ItemScores {
            bleu: bleu(answer, &[reference], 4)?,
            rouge_n: ROUGE_ORDERS
                .iter()
                .map(|&n| rouge_n(answer, reference, n).map(|p| (n, p.f1)))
                .collect::<Result<_>>()?,
            rouge_l: rouge_l(answer, reference).f1,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub category: Category,
    pub answer: Option<String>,
    pub scores: Option<ItemScores>,
    pub rubric: Option<BTreeMap<Rubric, f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub failed: usize,
    pub bleu: f64,
    pub rouge_n: BTreeMap<usize, f64>,
    pub rouge_l: f64,
    pub rubric: Option<BTreeMap<Rubric, f64>>,
}

impl Aggregate {
    /// Means over the items that produced scores.
    fn of(items: &[&ItemResult]) -> Aggregate {
        let scored: Vec<&ItemScores> = items.iter().filter_map(|i| i.scores.as_ref()).collect();
        let mean = |f: &dyn Fn(&ItemScores) -> f64| {
            if scored.is_empty() {
                0.0
            } else {
                scored.iter().map(|s| f(s)).sum::<f64>() / scored.len() as f64
            }
        };
        let rubrics: Vec<&BTreeMap<Rubric, f64>> = items.iter().filter_map(|i| i.rubric.as_ref()).collect();
        let rubric = (!rubrics.is_empty()).then(|| {
            Rubric::ALL
                .iter()
                .map(|&k| {
                    let s: f64 = rubrics.iter().map(|r| r.get(&k).copied().unwrap_or(0.0)).sum();
                    (k, s / rubrics.len() as f64)
                })
                .collect()
        });
        Aggregate {
            count: items.len(),
            failed: items.iter().filter(|i| i.error.is_some()).count(),
            bleu: mean(&|s| s.bleu),
            rouge_n: ROUGE_ORDERS
                .iter()
                .map(|&n| (n, mean(&|s| s.rouge_n.get(&n).copied().unwrap_or(0.0))))
                .collect(),
            rouge_l: mean(&|s| s.rouge_l),
            rubric,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pipeline: String,
    pub items: Vec<ItemResult>,
    pub per_category: BTreeMap<Category, Aggregate>,
    pub overall: Aggregate,
}

impl EvalReport {
    pub fn from_items(pipeline: &str, items: Vec<ItemResult>) -> EvalReport {
        let mut by_cat: BTreeMap<Category, Vec<&ItemResult>> = BTreeMap::new();
        for i in &items {
            by_cat.entry(i.category).or_default().push(i);
        }
        let per_category = by_cat.iter().map(|(&c, v)| (c, Aggregate::of(v))).collect();
        let overall = Aggregate::of(&items.iter().collect::<Vec<_>>());
        EvalReport {
            pipeline: pipeline.to_string(),
            items,
            per_category,
            overall,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Contract(format!("{} report: {what}", self.pipeline)));
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let rubric_ok = |r: &Option<BTreeMap<Rubric, f64>>| {
            r.as_ref()
                .is_none_or(|m| m.len() == 5 && m.values().all(|v| (0.0..=4.0).contains(v)))
        };
        for i in &self.items {
            if i.scores.is_some() == i.error.is_some() {
                return bad(format!("item {} must have exactly one of scores and error", i.id));
            }
            if let Some(s) = &i.scores {
                if !unit(s.bleu) || !unit(s.rouge_l) || !s.rouge_n.values().all(|&v| unit(v)) {
                    return bad(format!("item {} has a score outside [0, 1]", i.id));
                }
            }
            if !rubric_ok(&i.rubric) {
                return bad(format!("item {} has an invalid rubric", i.id));
            }
        }
        let aggregates = self.per_category.values().chain([&self.overall]);
        for a in aggregates {
            if !unit(a.bleu) || !unit(a.rouge_l) || !a.rouge_n.values().all(|&v| unit(v)) || !rubric_ok(&a.rubric) {
                return bad("aggregate out of range".into());
            }
        }
        if self.per_category.values().map(|a| a.count).sum::<usize>() != self.items.len()
            || self.overall.count != self.items.len()
        {
            return bad("aggregate counts do not add up".into());
        }
        Ok(())
    }
}

/// Runs `engine` on every item (in parallel) and scores the answers. Engine
/// failures mark the item as failed; the run continues.
pub fn run_odqa<F>(pipeline: &str, items: &[QAItem], engine: F, judge: Option<&dyn JudgeProvider>) -> EvalReport
where
    F: Fn(&str) -> Result<String> + Sync,
{
    let results = par_map(items, |item| {
        let failed = |e: String| ItemResult {
            id: item.id.clone(),
            category: item.category,
            answer: None,
            scores: None,
            rubric: None,
            error: Some(e),
        };
        let answer = match engine(&item.question) {
            Ok(a) => a,
            Err(e) => return failed(e.to_string()),
        };
        let scores = match ItemScores::compute(&answer, &item.reference) {
            Ok(s) => s,
            Err(e) => return failed(e.to_string()),
        };
        let rubric = judge.and_then(|j| match j.judge(&item.question, &answer) {
            Ok(fb) => Some(fb.scores),
            Err(e) => {
                log::warn!("judge failed on {}: {e}", item.id);
                None
            }
        });
        ItemResult {
            id: item.id.clone(),
            category: item.category,
            answer: Some(answer),
            scores: Some(scores),
            rubric,
            error: None,
        }
    });
    EvalReport::from_items(pipeline, results)
}

/// Chunk embeddings for the flat baseline.
pub struct FlatIndex {
    chunks: Vec<(ChunkRef, String, Embedding)>,
}

impl FlatIndex {
    pub fn build(corpus: &Corpus, window: usize, stride: usize, embed: &dyn EmbeddingProvider) -> Result<FlatIndex> {
        let mut chunks = Vec::new();
        for doc in corpus.documents() {
            for c in chunk_document(doc, window, stride)? {
                let e = embed
                    .embed_text(&c.text)
                    .map_err(|e| Error::provider(format!("embedding chunk {}", c.chunk_ref()), e))?;
                chunks.push((c.chunk_ref(), c.text, e));
            }
        }
        Ok(FlatIndex { chunks })
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Top-`k` chunks by cosine with `query`, ties by index order.
    pub fn top_k(&self, query: &Embedding, k: usize) -> Vec<(ChunkRef, f64)> {
        let scores: Vec<f64> = self.chunks.iter().map(|(_, _, e)| query.cosine(e)).collect();
        top_k_indices(&scores, k)
            .into_iter()
            .map(|i| (self.chunks[i].0.clone(), scores[i]))
            .collect()
    }

    fn text(&self, r: &ChunkRef) -> &str {
        self.chunks
            .iter()
            .find(|(c, _, _)| c == r)
            .map_or("", |(_, t, _)| t.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatAnswer {
    pub answer: String,
    pub retrieved: Vec<(ChunkRef, f64)>,
}

/// Retrieval over raw chunks without the graph.
pub fn baseline_flat_rag(
    query: &str,
    index: &FlatIndex,
    embed: &dyn EmbeddingProvider,
    gen: &dyn GenerationProvider,
    top_k: usize,
) -> Result<FlatAnswer> {
    if top_k == 0 {
        return Err(Error::InvalidArgument("flat retrieval top_k must be >= 1".into()));
    }
    let q = embed
        .embed_text(query)
        .map_err(|e| Error::provider("embedding query", e))?;
    let retrieved = index.top_k(&q, top_k);
    let mut body = format!("Question: {query}\n");
    if !retrieved.is_empty() {
        body.push_str("Passages:\n");
        for (r, _) in &retrieved {
            body.push_str(index.text(r));
            body.push('\n');
        }
    }
    let prompt = Prompt::new("answer")
        .field("instructions", "answer the question using the passages")
        .body(body)
        .render();
    let answer = gen
        .generate(&prompt, ANSWER_MAX_TOKENS)
        .map_err(|e| Error::provider("generating answer", e))?;
    Ok(FlatAnswer { answer, retrieved })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub graph: EvalReport,
    pub flat: EvalReport,
}

impl ComparisonReport {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Contract(format!("report schema version {}", self.schema_version)));
        }
        self.graph.validate()?;
        self.flat.validate()?;
        let ids = |r: &EvalReport| r.items.iter().map(|i| i.id.clone()).collect::<Vec<_>>();
        if ids(&self.graph) != ids(&self.flat) {
            return Err(Error::Contract("graph and flat reports cover different items".into()));
        }
        Ok(())
    }

    /// Plain-text table: one row per category plus an overall row.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>3} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "category", "n", "bleu:g", "bleu:f", "r1:g", "r1:f", "rl:g", "rl:f"
        );
        let row = |out: &mut String, name: &str, g: &Aggregate, f: &Aggregate| {
            let r1 = |a: &Aggregate| a.rouge_n.get(&1).copied().unwrap_or(0.0);
            let _ = writeln!(
                out,
                "{:<12} {:>3} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                name,
                g.count,
                g.bleu,
                f.bleu,
                r1(g),
                r1(f),
                g.rouge_l,
                f.rouge_l
            );
        };
        for (c, g) in &self.graph.per_category {
            if let Some(f) = self.flat.per_category.get(c) {
                let name = serde_json::to_value(c).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
                row(&mut out, &name, g, f);
            }
        }
        row(&mut out, "overall", &self.graph.overall, &self.flat.overall);
        out
    }
}

pub struct ComparisonInputs<'a> {
    pub graph: &'a KnowledgeGraph,
    pub flat: &'a FlatIndex,
    pub embed: &'a dyn EmbeddingProvider,
    pub generate: &'a dyn GenerationProvider,
    pub judge: Option<&'a dyn JudgeProvider>,
    pub retrieve: RetrieveConfig,
    pub flat_top_k: usize,
}

/// Runs the graph pipeline and the flat baseline over the same items.
pub fn compare(items: &[QAItem], inputs: &ComparisonInputs<'_>) -> Result<ComparisonReport> {
    inputs.retrieve.validate()?;
    if inputs.flat_top_k == 0 {
        return Err(Error::Config("flat top_k must be >= 1".into()));
    }
    let graph = run_odqa(
        "graph",
        items,
        |q| retrieve::query(inputs.graph, q, inputs.embed, inputs.generate, &inputs.retrieve).map(|r| r.answer),
        inputs.judge,
    );
    let flat = run_odqa(
        "flat",
        items,
        |q| baseline_flat_rag(q, inputs.flat, inputs.embed, inputs.generate, inputs.flat_top_k).map(|a| a.answer),
        inputs.judge,
    );
    Ok(ComparisonReport {
        schema_version: REPORT_SCHEMA_VERSION,
        graph,
        flat,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::corpus::{Document, SourceKind};
    use crate::providers::mock::{MockEmbedder, MockGenerator, MockJudge};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn bleu_examples() {
        assert!(close(bleu("the cat sat on the mat", &["the cat sat on the mat"], 4).unwrap(), 1.0));
        assert_eq!(bleu("x y z", &["a b c"], 4).unwrap(), 0.0);
        assert_eq!(bleu("", &["a b c"], 4).unwrap(), 0.0);
        assert!(bleu("a", &[], 4).is_err());
        // Every order matches fully; only the brevity penalty applies.
        assert!(close(bleu("a b c d", &["a b c d e"], 4).unwrap(), (1.0f64 - 5.0 / 4.0).exp()));
    }

    #[test]
    fn bleu_smoothing_and_clipping() {
        // "the the the" vs "the cat": p1 = 1/3 (clipped), p2 = 1/(2+1) smoothed.
        let expected = (((1.0f64 / 3.0).ln() + (1.0f64 / 3.0).ln()) * 0.5).exp();
        assert!(close(bleu("the the the", &["the cat"], 2).unwrap(), expected));
    }

    #[test]
    fn lcs_example() {
        let r = rouge_l("a c d", "a b c d");
        assert_eq!(r.recall, 0.75);
        assert_eq!(r.precision, 1.0);
        assert!((r.f1 - 6.0 / 7.0).abs() < 1e-15);
        assert_eq!(rouge_l("", "a b").f1, 0.0);
        assert_eq!(rouge_l("a b", "a b").f1, 1.0);
    }

    #[test]
    fn rouge_n_edges() {
        assert_eq!(rouge_n("a b c", "a b c", 2).unwrap().f1, 1.0);
        assert_eq!(rouge_n("a b", "c d", 1).unwrap().f1, 0.0);
        let short = rouge_n("a b c", "a", 2).unwrap();
        assert!(short.undefined && short.f1 == 0.0);
        assert!(rouge_n("a", "a", 0).is_err());
    }

    // Independent oracles over explicit token lists.

    fn grams(t: &[&str], n: usize) -> Vec<Vec<String>> {
        if t.len() < n {
            return vec![];
        }
        (0..=t.len() - n).map(|i| t[i..i + n].iter().map(|s| s.to_string()).collect()).collect()
    }

    fn count(list: &[Vec<String>], g: &Vec<String>) -> usize {
        list.iter().filter(|x| *x == g).count()
    }

    fn oracle_overlap(c: &[&str], r: &[&str], n: usize) -> (usize, usize, usize) {
        let (cg, rg) = (grams(c, n), grams(r, n));
        let mut uniq = cg.clone();
        uniq.sort();
        uniq.dedup();
        let overlap = uniq.iter().map(|g| count(&cg, g).min(count(&rg, g))).sum();
        (overlap, cg.len(), rg.len())
    }

    fn oracle_bleu(c: &[&str], r: &[&str], max_n: usize) -> f64 {
        if c.is_empty() {
            return 0.0;
        }
        let mut logs = 0.0;
        for n in 1..=max_n {
            let (m, t, _) = oracle_overlap(c, r, n);
            let p = match (m, n) {
                (0, 1) => return 0.0,
                (0, _) => 1.0 / (t as f64 + 1.0),
                _ => m as f64 / t as f64,
            };
            logs += p.ln();
        }
        let bp = if c.len() > r.len() { 1.0 } else { (1.0 - r.len() as f64 / c.len() as f64).exp() };
        bp * (logs / max_n as f64).exp()
    }

    fn oracle_lcs(a: &[&str], b: &[&str]) -> usize {
        let mut t = vec![vec![0; b.len() + 1]; a.len() + 1];
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                t[i][j] = if a[i - 1] == b[j - 1] { t[i - 1][j - 1] + 1 } else { t[i - 1][j].max(t[i][j - 1]) };
            }
        }
        t[a.len()][b.len()]
    }

    fn f1(p: f64, r: f64) -> f64 {
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn seq() -> impl Strategy<Value = Vec<&'static str>> {
        proptest::collection::vec(proptest::sample::select(vec!["a", "b", "c", "d", "e"]), 1..12)
    }

    proptest! {
        #[test]
        fn metrics_match_oracles(c in seq(), r in seq()) {
            let (cs, rs) = (c.join(" "), r.join(" "));
            prop_assert!(close(bleu(&cs, &[&rs], 4).unwrap(), oracle_bleu(&c, &r, 4)));
            for n in 1..=3 {
                let (m, ct, rt) = oracle_overlap(&c, &r, n);
                let got = rouge_n(&cs, &rs, n).unwrap();
                if rt == 0 {
                    prop_assert!(got.undefined);
                } else {
                    let p = if ct == 0 { 0.0 } else { m as f64 / ct as f64 };
                    let rc = m as f64 / rt as f64;
                    prop_assert!(close(got.f1, f1(p, rc)));
                    let swapped = rouge_n(&rs, &cs, n).unwrap();
                    if ct > 0 {
                        prop_assert_eq!(got.precision, swapped.recall);
                    }
                }
            }
            let l = oracle_lcs(&c, &r) as f64;
            let got = rouge_l(&cs, &rs);
            prop_assert!(close(got.f1, f1(l / c.len() as f64, l / r.len() as f64)));
        }
    }

    fn item(id: &str, cat: Category, q: &str, r: &str) -> QAItem {
        QAItem {
            id: id.into(),
            question: q.into(),
            reference: r.into(),
            category: cat,
        }
    }

    #[test]
    fn category_means_and_failures() {
        let items = vec![
            item("1", Category::Causal, "q1", "a b c d"),
            item("2", Category::Causal, "q2", "a b"),
            item("3", Category::Logical, "q3", "x"),
        ];
        let answers: BTreeMap<&str, &str> = [("q1", "a c d"), ("q2", "a b")].into();
        let report = run_odqa(
            "t",
            &items,
            |q| answers.get(q).map(|s| s.to_string()).ok_or_else(|| Error::InvalidArgument("no answer".into())),
            None,
        );
        report.validate().unwrap();
        let causal = &report.per_category[&Category::Causal];
        assert!(close(causal.rouge_l, (6.0 / 7.0 + 1.0) / 2.0));
        assert_eq!(report.per_category[&Category::Logical].failed, 1);
        assert_eq!(report.overall.failed, 1);
        let empty = run_odqa("t", &[], |_| Ok(String::new()), None);
        assert!(empty.items.is_empty() && empty.per_category.is_empty());
    }

    #[test]
    fn flat_baseline() {
        let embed = MockEmbedder::new(3);
        let gen = MockGenerator::new(3);
        let corpus = Corpus::from_documents(vec![
            Document::new("d1", SourceKind::Web, "t", "ammonia synthesis uses iron catalyst"),
            Document::new("d2", SourceKind::Web, "t", "football match results"),
            Document::new("d3", SourceKind::Web, "t", "ammonia is stored cold"),
        ])
        .unwrap();
        let idx = FlatIndex::build(&corpus, 1024, 128, &embed).unwrap();
        assert_eq!(idx.len(), 3);
        let a = baseline_flat_rag("ammonia catalyst", &idx, &embed, &gen, 2).unwrap();
        let q = embed.embed_text("ammonia catalyst").unwrap();
        let mut oracle: Vec<(f64, usize)> = idx.chunks.iter().enumerate().map(|(i, c)| (q.cosine(&c.2), i)).collect();
        oracle.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        let want: Vec<&ChunkRef> = oracle[..2].iter().map(|&(_, i)| &idx.chunks[i].0).collect();
        assert_eq!(a.retrieved.iter().map(|r| &r.0).collect::<Vec<_>>(), want);
        assert_eq!(a, baseline_flat_rag("ammonia catalyst", &idx, &embed, &gen, 2).unwrap());
        assert!(baseline_flat_rag("x", &idx, &embed, &gen, 0).is_err());
    }

    #[test]
    fn judge_rubric_is_averaged() {
        let items = vec![item("1", Category::FactBased, "ammonia", "ammonia")];
        let judge = MockJudge::new();
        let r = run_odqa("t", &items, |_| Ok("ammonia plant".into()), Some(&judge));
        r.validate().unwrap();
        assert!(r.overall.rubric.as_ref().unwrap()[&Rubric::Helpfulness] == 4.0);
    }
}
