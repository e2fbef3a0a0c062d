//! Meta-agent over per-source retrieval sub-agents.
//!
//! A task is decomposed into five retrieval subtasks (one per source kind)
//! and an aggregate subtask that depends on all of them. Each retrieval
//! subtask is handed to the registered sub-agent whose capability document is
//! closest to the subtask query. Subtasks run in dependency waves; the
//! aggregated answer is then revised against judge feedback until the judge
//! accepts it or the revision budget runs out.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Document, SourceKind};
use crate::par::par_map;
use crate::prompt::Prompt;
use crate::providers::mock::document_embedding;
use crate::providers::{
    Embedding, EmbeddingProvider, Feedback, GenerationProvider, JudgeProvider, Providers, SearchProvider,
};
use crate::vector::top_k_indices;
use crate::{Error, Result};

pub const SYNTHESIS_MAX_TOKENS: usize = 512;
pub const ANSWER_MAX_TOKENS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubtaskKind {
    Image,
    Scholar,
    Patent,
    Wiki,
    Web,
    Aggregate,
}

impl SubtaskKind {
    pub const RETRIEVAL: [SubtaskKind; 5] = [
        SubtaskKind::Image,
        SubtaskKind::Scholar,
        SubtaskKind::Patent,
        SubtaskKind::Wiki,
        SubtaskKind::Web,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SubtaskKind::Image => "image",
            SubtaskKind::Scholar => "scholar",
            SubtaskKind::Patent => "patent",
            SubtaskKind::Wiki => "wiki",
            SubtaskKind::Web => "web",
            SubtaskKind::Aggregate => "aggregate",
        }
    }

    pub fn source_kind(self) -> Option<SourceKind> {
        match self {
            SubtaskKind::Image => Some(SourceKind::Image),
            SubtaskKind::Scholar => Some(SourceKind::Scholar),
            SubtaskKind::Patent => Some(SourceKind::Patent),
            SubtaskKind::Wiki => Some(SourceKind::Wiki),
            SubtaskKind::Web => Some(SourceKind::Web),
            SubtaskKind::Aggregate => None,
        }
    }

    /// Query template; `{q}` is replaced by the task.
    fn template(self) -> &'static str {
        match self {
            SubtaskKind::Image => "process flow diagram images and schematics of {q}",
            SubtaskKind::Scholar => "research papers on reaction chemistry kinetics and operating conditions of {q}",
            SubtaskKind::Patent => "patents claiming process equipment and methods for {q}",
            SubtaskKind::Wiki => "encyclopedia overview of {q}",
            SubtaskKind::Web => "industrial web pages on plant practice suppliers and safety for {q}",
            SubtaskKind::Aggregate => "combine all retrieved material into a process description for {q}",
        }
    }
}

impl fmt::Display for SubtaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Output tag of a retrieval sub-agent: image, academic, patent, wiki, general web.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OutputTag {
    #[serde(rename = "D_I")]
    Image,
    #[serde(rename = "D_A")]
    Academic,
    #[serde(rename = "D_P")]
    Patent,
    #[serde(rename = "D_W")]
    Wiki,
    #[serde(rename = "D_G")]
    Web,
}

impl OutputTag {
    /// Aggregation order.
    pub const ORDER: [OutputTag; 5] = [
        OutputTag::Image,
        OutputTag::Academic,
        OutputTag::Patent,
        OutputTag::Wiki,
        OutputTag::Web,
    ];

    pub fn of(kind: SourceKind) -> Option<OutputTag> {
        match kind {
            SourceKind::Image => Some(OutputTag::Image),
            SourceKind::Scholar => Some(OutputTag::Academic),
            SourceKind::Patent => Some(OutputTag::Patent),
            SourceKind::Wiki => Some(OutputTag::Wiki),
            SourceKind::Web => Some(OutputTag::Web),
            SourceKind::Synthesized => None,
        }
    }

    pub fn source_kind(self) -> SourceKind {
        match self {
            OutputTag::Image => SourceKind::Image,
            OutputTag::Academic => SourceKind::Scholar,
            OutputTag::Patent => SourceKind::Patent,
            OutputTag::Wiki => SourceKind::Wiki,
            OutputTag::Web => SourceKind::Web,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OutputTag::Image => "D_I",
            OutputTag::Academic => "D_A",
            OutputTag::Patent => "D_P",
            OutputTag::Wiki => "D_W",
            OutputTag::Web => "D_G",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtask {
    pub id: String,
    pub query_text: String,
    pub kind: SubtaskKind,
    pub depends_on: BTreeSet<String>,
}

/// Subtasks with their dependency edges. Node order is insertion order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskGraph {
    nodes: Vec<Subtask>,
}

impl TaskGraph {
    /// Checks ids are unique and dependencies exist. Cycles are reported by
    /// [`schedule`].
    pub fn new(nodes: Vec<Subtask>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for n in &nodes {
            if !ids.insert(n.id.as_str()) {
                return Err(Error::Conflict(n.id.clone()));
            }
        }
        for n in &nodes {
            if let Some(d) = n.depends_on.iter().find(|d| !ids.contains(d.as_str())) {
                return Err(Error::UnknownSubtask(d.clone()));
            }
        }
        Ok(TaskGraph { nodes })
    }

    pub fn nodes(&self) -> &[Subtask] {
        &self.nodes
    }

    pub fn get(&self, id: &str) -> Option<&Subtask> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// `(dependency, dependent)` pairs.
    pub fn edges(&self) -> Vec<(String, String)> {
        self.nodes
            .iter()
            .flat_map(|n| n.depends_on.iter().map(move |d| (d.clone(), n.id.clone())))
            .collect()
    }
}

pub fn decompose(q: &str) -> Result<TaskGraph> {
    let q = q.trim();
    if q.is_empty() {
        return Err(Error::InvalidArgument("empty task".into()));
    }
    let mut nodes: Vec<Subtask> = SubtaskKind::RETRIEVAL
        .iter()
        .map(|&kind| Subtask {
            id: kind.as_str().to_string(),
            query_text: kind.template().replace("{q}", q),
            kind,
            depends_on: BTreeSet::new(),
        })
        .collect();
    let deps = nodes.iter().map(|n| n.id.clone()).collect();
    nodes.push(Subtask {
        id: SubtaskKind::Aggregate.as_str().to_string(),
        query_text: SubtaskKind::Aggregate.template().replace("{q}", q),
        kind: SubtaskKind::Aggregate,
        depends_on: deps,
    });
    TaskGraph::new(nodes)
}

/// Execution waves: wave `n` holds exactly the subtasks whose dependencies
/// all lie in earlier waves. Ids within a wave are sorted.
pub fn schedule(tg: &TaskGraph) -> Result<Vec<Vec<String>>> {
    let mut indegree: BTreeMap<&str, usize> = tg.nodes.iter().map(|n| (n.id.as_str(), n.depends_on.len())).collect();
    let mut dependents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for n in &tg.nodes {
        for d in &n.depends_on {
            dependents.entry(d.as_str()).or_default().push(n.id.as_str());
        }
    }
    let mut waves = Vec::new();
    let mut ready: Vec<&str> = indegree.iter().filter(|(_, &d)| d == 0).map(|(&id, _)| id).collect();
    let mut done = 0;
    while !ready.is_empty() {
        ready.sort_unstable();
        let mut next = Vec::new();
        for &id in &ready {
            for &dep in dependents.get(id).map(Vec::as_slice).unwrap_or(&[]) {
                let d = indegree.get_mut(dep).expect("known node");
                *d -= 1;
                if *d == 0 {
                    next.push(dep);
                }
            }
        }
        done += ready.len();
        waves.push(ready.iter().map(|s| s.to_string()).collect());
        ready = next;
    }
    if done < tg.nodes.len() {
        let stuck: BTreeSet<&str> = indegree.iter().filter(|(_, &d)| d > 0).map(|(&id, _)| id).collect();
        return Err(Error::Cycle(find_cycle(tg, &stuck)));
    }
    Ok(waves)
}

/// Walks dependencies among `stuck` nodes (each has one inside the set)
/// until a node repeats; returns that cycle with its first node repeated.
fn find_cycle(tg: &TaskGraph, stuck: &BTreeSet<&str>) -> Vec<String> {
    let start = *stuck.iter().next().expect("a cycle leaves nodes behind");
    let mut path: Vec<&str> = vec![start];
    loop {
        let cur = *path.last().expect("non-empty");
        let node = tg.get(cur).expect("known node");
        let next = node
            .depends_on
            .iter()
            .map(String::as_str)
            .find(|d| stuck.contains(d))
            .expect("stuck nodes have a stuck dependency");
        if let Some(pos) = path.iter().position(|&p| p == next) {
            // Dependencies point backwards in execution order; reverse so the
            // cycle reads in execution direction.
            let mut cycle: Vec<String> = path[pos..].iter().rev().map(|s| s.to_string()).collect();
            cycle.push(cycle[0].clone());
            return cycle;
        }
        path.push(next);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubAgentSpec {
    pub id: String,
    pub capability_doc: String,
    pub capability_embedding: Embedding,
    pub source_kind: SourceKind,
}

impl SubAgentSpec {
    pub fn new(id: &str, capability_doc: &str, source_kind: SourceKind, embed: &dyn EmbeddingProvider) -> Result<Self> {
        if capability_doc.trim().is_empty() {
            return Err(Error::InvalidArgument(format!("agent {id} has an empty capability document")));
        }
        let e = embed
            .embed_text(capability_doc)
            .map_err(|e| Error::provider(format!("embedding capability of {id}"), e))?;
        Ok(SubAgentSpec {
            id: id.to_string(),
            capability_doc: capability_doc.to_string(),
            capability_embedding: Embedding::normalized(e.into_values()),
            source_kind,
        })
    }
}

/// One sub-agent per retrieval source.
pub fn default_registry(embed: &dyn EmbeddingProvider) -> Result<Vec<SubAgentSpec>> {
    [
        ("image-agent", SourceKind::Image, "finds process flow diagram images and schematics and describes them"),
        ("patent-agent", SourceKind::Patent, "searches patents claiming process equipment and methods"),
        ("scholar-agent", SourceKind::Scholar, "reads research papers on reaction chemistry kinetics and operating conditions"),
        ("web-agent", SourceKind::Web, "searches industrial web pages on plant practice suppliers and safety"),
        ("wiki-agent", SourceKind::Wiki, "looks up encyclopedia overview articles"),
    ]
    .iter()
    .map(|(id, kind, doc)| SubAgentSpec::new(id, doc, *kind, embed))
    .collect()
}

/// Argmax of cosine against the capability embeddings; ties go to the
/// smallest agent id.
pub fn select_agent<'r>(query: &Embedding, registry: &'r [SubAgentSpec]) -> Result<(&'r SubAgentSpec, f64)> {
    let mut best: Option<(&SubAgentSpec, f64)> = None;
    for a in registry {
        let s = query.cosine(&a.capability_embedding);
        let better = match best {
            None => true,
            Some((b, bs)) => s > bs || (s == bs && a.id < b.id),
        };
        if better {
            best = Some((a, s));
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("empty agent registry".into()))
}

/// Instructions, context, and the specific query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationParams {
    pub instructions: String,
    pub context: String,
    pub specific_query: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Citation {
    pub document_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutput {
    pub subtask_id: String,
    pub tag: OutputTag,
    pub text: String,
    pub citations: Vec<Citation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubagentFailure {
    pub subtask_id: String,
    pub agent_id: String,
    pub tag: OutputTag,
    pub message: String,
}

pub type Outcome = std::result::Result<AgentOutput, SubagentFailure>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    /// Documents kept per sub-agent.
    pub top_k: usize,
    /// Candidates requested from search before re-ranking.
    pub search_limit: usize,
    pub n_max: usize,
    pub accept_threshold: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            top_k: 3,
            search_limit: 10,
            n_max: 3,
            accept_threshold: 3.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Config("agents.top_k must be >= 1".into()));
        }
        if self.search_limit < self.top_k {
            return Err(Error::Config("agents.search_limit must be >= agents.top_k".into()));
        }
        if !(0.0..=4.0).contains(&self.accept_threshold) {
            return Err(Error::Config("agents.accept_threshold must lie in [0, 4]".into()));
        }
        Ok(())
    }
}

fn synthesis_prompt(agent: &SubAgentSpec, params: &InvocationParams, docs: &[&Document]) -> String {
    let mut body = format!("Query: {}\n", params.specific_query);
    for d in docs {
        body.push_str(&format!("Source {}: {}\n", d.id, d.title));
        if let Some(f) = d.metadata.get("file") {
            body.push_str(&format!("File: {f}\n"));
        }
        if !d.text.is_empty() {
            body.push_str(&d.text);
            body.push('\n');
        }
    }
    Prompt::new("synthesize")
        .field("agent", &agent.id)
        .field("source", agent.source_kind.as_str())
        .field("instructions", &params.instructions)
        .field("context", &params.context)
        .body(body)
        .render()
}

/// Retrieves candidates for the agent's source, keeps the `top_k` closest to
/// the specific query, and synthesizes them into one text.
pub fn run_subagent(
    agent: &SubAgentSpec,
    subtask_id: &str,
    params: &InvocationParams,
    search: &dyn SearchProvider,
    embed: &dyn EmbeddingProvider,
    gen: &dyn GenerationProvider,
    cfg: &AgentConfig,
) -> Result<AgentOutput> {
    if params.specific_query.trim().is_empty() {
        return Err(Error::InvalidArgument("empty specific query".into()));
    }
    let tag = OutputTag::of(agent.source_kind)
        .ok_or_else(|| Error::Config(format!("agent {} has no retrieval source", agent.id)))?;
    let ctx = |what: &str| format!("{what} for {} ({})", agent.id, subtask_id);
    let candidates = search
        .search(agent.source_kind, &params.specific_query, cfg.search_limit.max(cfg.top_k))
        .map_err(|e| Error::provider(ctx("search"), e))?;
    if candidates.is_empty() {
        return Ok(AgentOutput {
            subtask_id: subtask_id.to_string(),
            tag,
            text: format!(
                "No {} sources were found for \"{}\"; this part of the answer is not covered.",
                agent.source_kind, params.specific_query
            ),
            citations: Vec::new(),
        });
    }
    let q = embed
        .embed_text(&params.specific_query)
        .map_err(|e| Error::provider(ctx("embedding query"), e))?;
    let scores = candidates
        .iter()
        .map(|d| document_embedding(embed, d).map(|e| q.cosine(&e)))
        .collect::<std::result::Result<Vec<f64>, _>>()
        .map_err(|e| Error::provider(ctx("embedding candidates"), e))?;
    let keep = top_k_indices(&scores, cfg.top_k);
    let docs: Vec<&Document> = keep.iter().map(|&i| &candidates[i]).collect();
    let text = gen
        .generate(&synthesis_prompt(agent, params, &docs), SYNTHESIS_MAX_TOKENS)
        .map_err(|e| Error::provider(ctx("synthesis"), e))?;
    if text.trim().is_empty() {
        return Err(Error::Contract(ctx("empty synthesis")));
    }
    Ok(AgentOutput {
        subtask_id: subtask_id.to_string(),
        tag,
        text,
        citations: keep
            .iter()
            .map(|&i| Citation {
                document_id: candidates[i].id.clone(),
                score: scores[i],
            })
            .collect(),
    })
}

pub fn aggregate_prompt(q: &str, outcomes: &[Outcome]) -> String {
    let mut body = format!("Task: {q}\n");
    let mut missing = Vec::new();
    for tag in OutputTag::ORDER {
        let mine: Vec<&Outcome> = outcomes
            .iter()
            .filter(|o| match o {
                Ok(a) => a.tag == tag,
                Err(f) => f.tag == tag,
            })
            .collect();
        let ok: Vec<&AgentOutput> = mine.iter().filter_map(|o| o.as_ref().ok()).collect();
        if ok.is_empty() {
            missing.push(tag.source_kind().as_str());
        }
        for a in ok {
            body.push_str(&format!("{} ({}):\n{}\n", tag.as_str(), tag.source_kind(), a.text));
        }
    }
    if !missing.is_empty() {
        body.push_str(&format!("Missing sources: {}\n", missing.join(", ")));
    }
    Prompt::new("aggregate")
        .field(
            "instructions",
            "combine the source summaries into one coherent process description; name any missing sources",
        )
        .body(body)
        .render()
}

/// Combines the successful outputs in tag order; failed sources are listed
/// as gaps. Fails only when no retrieval subtask succeeded.
pub fn aggregate(q: &str, outcomes: &[Outcome], gen: &dyn GenerationProvider) -> Result<String> {
    if !outcomes.iter().any(|o| o.is_ok()) {
        return Err(Error::AggregationImpossible);
    }
    gen.generate(&aggregate_prompt(q, outcomes), ANSWER_MAX_TOKENS)
        .map_err(|e| Error::provider("aggregating outputs", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrailEntry {
    pub iteration: usize,
    pub feedback: Option<Feedback>,
    /// Judge failure, when the judge could not score this iteration.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub answer: String,
    pub revisions: usize,
    pub accepted: bool,
    pub trail: Vec<TrailEntry>,
}

fn revision_prompt(q: &str, answer: &str, fb: &Feedback) -> String {
    let scores: Vec<String> = fb.scores.iter().map(|(k, v)| format!("{k}={v:.2}")).collect();
    Prompt::new("revise")
        .field("instructions", "revise the answer to address the feedback")
        .field("scores", scores.join(" "))
        .field("feedback", &fb.comments)
        .body(format!("Task: {q}\nAnswer:\n{answer}\n"))
        .render()
}

/// Judges and revises `a0` until the judge accepts (every rubric score at
/// least `accept_threshold`) or `n_max` revisions have been made. A judge
/// failure stops the loop with the current answer.
pub fn refine(
    q: &str,
    a0: String,
    judge: &dyn JudgeProvider,
    gen: &dyn GenerationProvider,
    n_max: usize,
    accept_threshold: f64,
) -> Result<Refinement> {
    let mut answer = a0;
    let mut trail = Vec::new();
    let mut revisions = 0;
    loop {
        let mut fb = match judge.judge(q, &answer) {
            Ok(fb) => fb,
            Err(e) => {
                trail.push(TrailEntry {
                    iteration: revisions,
                    feedback: None,
                    error: Some(e.to_string()),
                });
                return Ok(Refinement {
                    answer,
                    revisions,
                    accepted: false,
                    trail,
                });
            }
        };
        if !fb.is_complete() {
            return Err(Error::Contract("judge feedback is missing rubric keys".into()));
        }
        fb.accept = fb.min_score() >= accept_threshold;
        let accepted = fb.accept;
        let prompt = revision_prompt(q, &answer, &fb);
        trail.push(TrailEntry {
            iteration: revisions,
            feedback: Some(fb),
            error: None,
        });
        if accepted || revisions == n_max {
            return Ok(Refinement {
                answer,
                revisions,
                accepted,
                trail,
            });
        }
        answer = gen
            .generate(&prompt, ANSWER_MAX_TOKENS)
            .map_err(|e| Error::provider(format!("revision {}", revisions + 1), e))?;
        revisions += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub subtask_id: String,
    pub agent_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskTrace {
    pub subtask_id: String,
    pub agent_id: String,
    pub tag: OutputTag,
    pub ok: bool,
    pub citations: Vec<Citation>,
    pub error: Option<String>,
}

/// Everything `navigate` decided, in execution order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavigationTrace {
    pub query: String,
    pub task_graph: TaskGraph,
    pub waves: Vec<Vec<String>>,
    pub selections: Vec<Selection>,
    pub subtasks: Vec<SubtaskTrace>,
    pub initial_answer: String,
    pub refinement: Refinement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Navigation {
    pub document: Document,
    pub trace: NavigationTrace,
}

pub fn task_query(task: &str, chemical: &str) -> String {
    match (task.trim(), chemical.trim()) {
        (t, "") => t.to_string(),
        ("", c) => c.to_string(),
        (t, c) => format!("{t} for {c}"),
    }
}

/// Background for later waves: one line per completed output.
fn wave_context(outcomes: &[Outcome]) -> String {
    let lines: Vec<String> = outcomes
        .iter()
        .filter_map(|o| o.as_ref().ok())
        .map(|a| {
            let first: Vec<&str> = a.text.split_whitespace().take(24).collect();
            format!("{}: {}", a.tag.as_str(), first.join(" "))
        })
        .collect();
    if lines.is_empty() {
        "none".to_string()
    } else {
        lines.join(" | ")
    }
}

/// Runs the whole meta-agent loop for one task and returns the synthesized
/// document with its trace.
pub fn navigate(
    task: &str,
    chemical: &str,
    providers: &Providers,
    registry: &[SubAgentSpec],
    cfg: &AgentConfig,
) -> Result<Navigation> {
    cfg.validate()?;
    let q = task_query(task, chemical);
    let tg = decompose(&q)?;
    let waves = schedule(&tg)?;
    let embed = providers.embed.as_ref();

    let mut selections = Vec::new();
    let mut outcomes: Vec<Outcome> = Vec::new();
    let mut traces = Vec::new();
    let mut initial_answer = None;

    for wave in &waves {
        let context = wave_context(&outcomes);
        let subtasks: Vec<&Subtask> = wave.iter().map(|id| tg.get(id).expect("scheduled id")).collect();
        let (retrieval, rest): (Vec<&Subtask>, Vec<&Subtask>) =
            subtasks.into_iter().partition(|s| s.kind != SubtaskKind::Aggregate);

        let mut picks = Vec::new();
        for s in &retrieval {
            let v = embed
                .embed_text(&s.query_text)
                .map_err(|e| Error::provider(format!("embedding subtask {}", s.id), e))?;
            let (agent, score) = select_agent(&v, registry)?;
            selections.push(Selection {
                subtask_id: s.id.clone(),
                agent_id: agent.id.clone(),
                score,
            });
            picks.push((*s, agent));
        }
        let results = par_map(&picks, |(s, agent)| {
            let params = InvocationParams {
                instructions: agent.capability_doc.clone(),
                context: context.clone(),
                specific_query: s.query_text.clone(),
            };
            run_subagent(
                agent,
                &s.id,
                &params,
                providers.search.as_ref(),
                embed,
                providers.generate.as_ref(),
                cfg,
            )
        });
        for ((s, agent), r) in picks.iter().zip(results) {
            let tag = OutputTag::of(agent.source_kind).expect("registry agents retrieve");
            let outcome = r.map_err(|e| {
                log::warn!("subtask {} failed: {e}", s.id);
                SubagentFailure {
                    subtask_id: s.id.clone(),
                    agent_id: agent.id.clone(),
                    tag,
                    message: e.to_string(),
                }
            });
            traces.push(SubtaskTrace {
                subtask_id: s.id.clone(),
                agent_id: agent.id.clone(),
                tag,
                ok: outcome.is_ok(),
                citations: outcome.as_ref().map(|a| a.citations.clone()).unwrap_or_default(),
                error: outcome.as_ref().err().map(|f| f.message.clone()),
            });
            outcomes.push(outcome);
        }
        for _ in rest {
            initial_answer = Some(aggregate(&q, &outcomes, providers.generate.as_ref())?);
        }
    }

    let a0 = initial_answer.ok_or_else(|| Error::Contract("task graph has no aggregate subtask".into()))?;
    let refinement = refine(
        &q,
        a0.clone(),
        providers.judge.as_ref(),
        providers.generate.as_ref(),
        cfg.n_max,
        cfg.accept_threshold,
    )?;
    let digest = hex::encode(&Sha256::digest(q.as_bytes())[..4]);
    let document = Document::new(
        format!("synth-{digest}"),
        SourceKind::Synthesized,
        q.clone(),
        refinement.answer.clone(),
    )
    .with_meta("task", task.trim())
    .with_meta("chemical", chemical.trim())
    .with_meta("revisions", refinement.revisions.to_string());
    Ok(Navigation {
        document,
        trace: NavigationTrace {
            query: q,
            task_graph: tg,
            waves,
            selections,
            subtasks: traces,
            initial_answer: a0,
            refinement,
        },
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::providers::mock::{Counting, Failing, FixtureSearch, MockEmbedder, MockGenerator, ScriptedJudge};

    fn subtask(id: &str, deps: &[&str]) -> Subtask {
        Subtask {
            id: id.into(),
            query_text: id.into(),
            kind: SubtaskKind::Web,
            depends_on: deps.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn decomposition_shape() {
        let tg = decompose("PFD for ammonia synthesis").unwrap();
        assert_eq!(tg.nodes().len(), 6);
        assert_eq!(tg.get("aggregate").unwrap().depends_on.len(), 5);
        assert_eq!(tg, decompose("PFD for ammonia synthesis").unwrap());
        assert!(tg.nodes().iter().all(|n| n.query_text.contains("ammonia")));
        assert!(decompose("  ").is_err());
        let waves = schedule(&tg).unwrap();
        assert_eq!(waves.len(), 2);
        assert_eq!(waves[1], ["aggregate"]);
    }

    #[test]
    fn schedule_examples() {
        let chain = TaskGraph::new(vec![subtask("q1", &[]), subtask("q2", &["q1"]), subtask("q3", &["q2"])]).unwrap();
        assert_eq!(schedule(&chain).unwrap(), [["q1"], ["q2"], ["q3"]]);
        let cyc = TaskGraph::new(vec![subtask("q1", &["q2"]), subtask("q2", &["q1"])]).unwrap();
        match schedule(&cyc) {
            Err(Error::Cycle(c)) => {
                assert_eq!(c.len(), 3);
                assert_eq!(c.first(), c.last());
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            TaskGraph::new(vec![subtask("q1", &["zz"])]),
            Err(Error::UnknownSubtask(_))
        ));
    }

    #[test]
    fn selection_argmax_and_ties() {
        let mk = |id: &str, v: Vec<f64>| SubAgentSpec {
            id: id.into(),
            capability_doc: id.into(),
            capability_embedding: Embedding::normalized(v),
            source_kind: SourceKind::Web,
        };
        let reg = vec![mk("wiki", vec![0.0, 1.0]), mk("patent", vec![1.0, 0.0])];
        let (a, _) = select_agent(&Embedding::new(vec![0.9, 0.1]), &reg).unwrap();
        assert_eq!(a.id, "patent");
        let (a, _) = select_agent(&Embedding::new(vec![1.0, 1.0]), &reg).unwrap();
        assert_eq!(a.id, "patent");
        let (a, _) = select_agent(&Embedding::new(vec![-1.0, -1.0]), &reg[..1]).unwrap();
        assert_eq!(a.id, "wiki");
        assert!(select_agent(&Embedding::new(vec![1.0]), &[]).is_err());
    }

    #[test]
    fn templates_route_to_their_own_agent() {
        let embed = MockEmbedder::new(42);
        let reg = default_registry(&embed).unwrap();
        for q in ["PFD for ammonia synthesis", "LiOH production", "crude oil distillation"] {
            for s in decompose(q).unwrap().nodes().iter().filter(|s| s.kind != SubtaskKind::Aggregate) {
                let (a, _) = select_agent(&embed.embed_text(&s.query_text).unwrap(), &reg).unwrap();
                assert_eq!(Some(a.source_kind), s.kind.source_kind(), "{q}: {}", s.id);
            }
        }
    }

    fn fixture_search(embed: Arc<MockEmbedder>, docs: Vec<Document>) -> FixtureSearch {
        FixtureSearch::new(embed, [(SourceKind::Web, docs)].into()).unwrap()
    }

    #[test]
    fn subagent_keeps_the_closest_documents() {
        let embed = Arc::new(MockEmbedder::new(1));
        let docs = vec![
            Document::new("a", SourceKind::Web, "ammonia", "ammonia synthesis loop"),
            Document::new("b", SourceKind::Web, "weather", "rain tomorrow"),
            Document::new("c", SourceKind::Web, "ammonia reactor", "ammonia converter catalyst"),
            Document::new("d", SourceKind::Web, "sports", "football scores"),
        ];
        let search = fixture_search(embed.clone(), docs.clone());
        let agent = SubAgentSpec::new("web-agent", "web pages", SourceKind::Web, embed.as_ref()).unwrap();
        let params = InvocationParams {
            instructions: "i".into(),
            context: "none".into(),
            specific_query: "ammonia synthesis".into(),
        };
        let cfg = AgentConfig { top_k: 2, ..Default::default() };
        let gen = MockGenerator::new(1);
        let out = run_subagent(&agent, "web", &params, &search, embed.as_ref(), &gen, &cfg).unwrap();
        // Brute-force oracle over all four documents.
        let q = embed.embed_text("ammonia synthesis").unwrap();
        let mut oracle: Vec<(f64, &str)> = docs
            .iter()
            .map(|d| (q.cosine(&embed.embed_text(&format!("{} {}", d.title, d.text)).unwrap()), d.id.as_str()))
            .collect();
        oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        let got: Vec<&str> = out.citations.iter().map(|c| c.document_id.as_str()).collect();
        assert_eq!(got, [oracle[0].1, oracle[1].1]);
        assert_eq!(out.tag, OutputTag::Web);
        assert_eq!(out, run_subagent(&agent, "web", &params, &search, embed.as_ref(), &gen, &cfg).unwrap());

        let empty = fixture_search(embed.clone(), vec![]);
        let out = run_subagent(&agent, "web", &params, &empty, embed.as_ref(), &gen, &cfg).unwrap();
        assert!(out.citations.is_empty() && out.text.contains("No web sources"));
        assert!(run_subagent(&agent, "web", &params, &Failing, embed.as_ref(), &gen, &cfg).is_err());
    }

    fn ok(tag: OutputTag, text: &str) -> Outcome {
        Ok(AgentOutput {
            subtask_id: tag.source_kind().to_string(),
            tag,
            text: text.into(),
            citations: vec![],
        })
    }

    fn failed(tag: OutputTag) -> Outcome {
        Err(SubagentFailure {
            subtask_id: tag.source_kind().to_string(),
            agent_id: "x".into(),
            tag,
            message: "down".into(),
        })
    }

    #[test]
    fn aggregation_order_and_gaps() {
        let gen = MockGenerator::new(42);
        let all: Vec<Outcome> = OutputTag::ORDER.iter().rev().map(|&t| ok(t, t.as_str())).collect();
        let a = aggregate("Q", &all, &gen).unwrap();
        let expected_tail = "Task: Q D_I (image): D_I D_A (scholar): D_A D_P (patent): D_P D_W (wiki): D_W D_G (web): D_G";
        assert!(a.starts_with("[aggregate#") && a.ends_with(expected_tail), "{a}");
        let mut one_down = all.clone();
        one_down[0] = failed(OutputTag::Web);
        assert!(aggregate("Q", &one_down, &gen).unwrap().ends_with("Missing sources: web"));
        let none: Vec<Outcome> = OutputTag::ORDER.iter().map(|&t| failed(t)).collect();
        assert!(matches!(aggregate("Q", &none, &gen), Err(Error::AggregationImpossible)));
    }

    #[test]
    fn refinement_budget() {
        let gen = Counting::new(MockGenerator::new(1));
        let judge = Counting::new(ScriptedJudge::new(vec![[4.0; 5]]));
        let r = refine("Q", "A0".into(), &judge, &gen, 3, 3.0).unwrap();
        assert_eq!((r.answer.as_str(), r.revisions, r.trail.len()), ("A0", 0, 1));

        let gen = Counting::new(MockGenerator::new(1));
        let judge = Counting::new(ScriptedJudge::new(vec![[1.0; 5]]));
        let r = refine("Q", "A0".into(), &judge, &gen, 3, 3.0).unwrap();
        assert_eq!((r.revisions, r.accepted), (3, false));
        assert_eq!((gen.calls(), judge.calls()), (3, 4));

        let judge = ScriptedJudge::new(vec![[1.0; 5], [2.0; 5], [3.0, 3.5, 4.0, 3.0, 3.2]]);
        let r = refine("Q", "A0".into(), &judge, &MockGenerator::new(1), 3, 3.0).unwrap();
        assert_eq!((r.revisions, r.trail.len(), r.accepted), (2, 3, true));

        let r = refine("Q", "A0".into(), &Failing, &MockGenerator::new(1), 3, 3.0).unwrap();
        assert_eq!(r.answer, "A0");
        assert!(r.trail[0].error.is_some());
    }

    #[test]
    fn navigate_is_deterministic() {
        let p = Providers::mock(42);
        let reg = default_registry(p.embed.as_ref()).unwrap();
        let a = navigate("PFD", "ammonia", &p, &reg, &AgentConfig::default()).unwrap();
        let b = navigate("PFD", "ammonia", &p, &reg, &AgentConfig::default()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.document.source_kind, SourceKind::Synthesized);
        assert_eq!(a.trace.waves.len(), 2);
        assert!(a.trace.subtasks.iter().all(|s| s.ok && s.citations.is_empty()));
    }

    #[test]
    fn navigate_fails_when_every_source_fails() {
        let p = Providers::mock(42).with_search(Arc::new(Failing));
        let reg = default_registry(p.embed.as_ref()).unwrap();
        assert!(matches!(
            navigate("PFD", "ammonia", &p, &reg, &AgentConfig::default()),
            Err(Error::AggregationImpossible)
        ));
    }

    /// Random DAG on `n` nodes: node `i` may depend on any `j < i`.
    fn random_dag() -> impl Strategy<Value = Vec<Vec<usize>>> {
        (1usize..30).prop_flat_map(|n| {
            (0..n)
                .map(|i| proptest::sample::subsequence((0..i).collect::<Vec<_>>(), 0..=i.min(4)))
                .collect::<Vec<_>>()
        })
    }

    fn dag(deps: &[Vec<usize>]) -> Vec<Subtask> {
        (0..deps.len())
            .map(|i| Subtask {
                id: format!("t{i}"),
                query_text: String::new(),
                kind: SubtaskKind::Web,
                depends_on: deps[i].iter().map(|j| format!("t{j}")).collect(),
            })
            .collect()
    }

    proptest! {
        #[test]
        fn waves_respect_dependencies(deps in random_dag()) {
            let tg = TaskGraph::new(dag(&deps)).unwrap();
            let waves = schedule(&tg).unwrap();
            let wave_of: BTreeMap<&str, usize> = waves
                .iter()
                .enumerate()
                .flat_map(|(w, ids)| ids.iter().map(move |id| (id.as_str(), w)))
                .collect();
            prop_assert_eq!(wave_of.len(), deps.len());
            for n in tg.nodes() {
                let latest = n.depends_on.iter().map(|d| wave_of[d.as_str()] as isize).max().unwrap_or(-1);
                prop_assert_eq!(wave_of[n.id.as_str()] as isize, latest + 1);
            }
        }

        #[test]
        fn injected_cycles_are_rejected(deps in random_dag(), pick in any::<proptest::sample::Index>()) {
            let mut nodes = dag(&deps);
            // Node i's first dependency (or i itself) now depends on i.
            let i = pick.index(nodes.len());
            let back = nodes[i].depends_on.iter().next().cloned().unwrap_or_else(|| nodes[i].id.clone());
            let j: usize = back[1..].parse().unwrap();
            let me = nodes[i].id.clone();
            nodes[j].depends_on.insert(me);
            let tg = TaskGraph::new(nodes).unwrap();
            prop_assert!(matches!(schedule(&tg), Err(Error::Cycle(_))));
        }
    }
}
