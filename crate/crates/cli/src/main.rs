//! `graphrag` command-line driver.
//!
//! Exit codes: 0 success, 2 configuration, 3 provider, 4 data, 5 internal.

mod config;
mod error;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};
use graphrag_core::agents::{default_registry, navigate};
use graphrag_core::corpus::{Corpus, IngestFormat};
use graphrag_core::eval::{compare, load_qa, ComparisonInputs, FlatIndex};
use graphrag_core::graph::{CommunityId, KnowledgeGraph};
use graphrag_core::pipeline::build_graph;
use graphrag_core::providers::{build_providers, Providers};
use graphrag_core::retrieve::query;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "graphrag", version, about = "Knowledge-graph retrieval and agentic knowledge acquisition")]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Write stage timings and decisions as JSON to this file.
    #[arg(long, global = true)]
    trace: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Merge input files into one line-delimited corpus.
    Ingest {
        /// Corpus files (`jsonl`) or directories of .txt/.md files (`plain-dir`).
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "jsonl")]
        format: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Build the knowledge graph from a corpus.
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(short, long, default_value = "graph.json")]
        out: PathBuf,
    },
    /// List communities, optionally re-detecting them with the current config.
    Communities {
        #[arg(long, default_value = "graph.json")]
        graph: PathBuf,
        #[arg(long)]
        level: Option<usize>,
        /// Re-run community detection and summarization, then save the graph.
        #[arg(long)]
        redetect: bool,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Answer a question over the graph.
    Query {
        text: String,
        #[arg(long, default_value = "graph.json")]
        graph: PathBuf,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        max_hops: Option<usize>,
        #[arg(long)]
        max_paths: Option<usize>,
        /// Rank communities of every level, not only the finest.
        #[arg(long)]
        all_levels: bool,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the search agents for a task and synthesize a document.
    Navigate {
        #[arg(long)]
        task: String,
        #[arg(long, default_value = "")]
        chemical: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Score graph retrieval against the flat baseline on a QA set.
    Eval {
        #[arg(long, default_value = "graph.json")]
        graph: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        qa: PathBuf,
        /// Report file (JSON); the text table goes to stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write the graph as graph-database statements.
    Export {
        #[arg(long, default_value = "graph.json")]
        graph: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct Stage {
    name: &'static str,
    millis: f64,
}

#[derive(Serialize)]
struct Trace {
    command: &'static str,
    stages: Vec<Stage>,
    decisions: Value,
}

struct Timer {
    stages: Vec<Stage>,
}

impl Timer {
    fn new() -> Self {
        Timer { stages: Vec::new() }
    }

    fn stage<T>(&mut self, name: &'static str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stages.push(Stage {
            name,
            millis: start.elapsed().as_secs_f64() * 1e3,
        });
        out
    }
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|source| CliError::Output {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            match stdout.write_all(bytes).and_then(|_| stdout.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Output {
                    path: PathBuf::from("<stdout>"),
                    source: e,
                }),
                _ => Ok(()),
            }
        }
    }
}

fn json_bytes(value: &impl Serialize) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("output serializes");
    bytes.push(b'\n');
    bytes
}

fn load_graph(path: &Path) -> Result<KnowledgeGraph, CliError> {
    if !path.exists() {
        return Err(CliError::MissingGraph(path.to_path_buf()));
    }
    Ok(KnowledgeGraph::load(path)?)
}

#[derive(Serialize)]
struct CommunityRow<'a> {
    id: CommunityId,
    members: Vec<&'a str>,
    edges: usize,
    summary: Option<&'a str>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    let mut timer = Timer::new();
    let providers = || -> Result<Providers, CliError> { Ok(build_providers(&cfg.providers)?) };

    let (command, decisions) = match cli.command {
        Command::Ingest { inputs, format, out } => {
            let format: IngestFormat = format.parse()?;
            let corpus = timer.stage("ingest", || {
                let parts = inputs
                    .iter()
                    .map(|p| Corpus::ingest(p, format))
                    .collect::<graphrag_core::Result<Vec<_>>>()?;
                Corpus::concat(parts)
            })?;
            let mut buf = Vec::new();
            corpus.write_to(&mut buf).expect("writing to memory");
            write_output(out.as_deref(), &buf)?;
            eprintln!("ingested {} documents", corpus.len());
            ("ingest", json!({ "documents": corpus.len(), "checksum": corpus.checksum() }))
        }
        Command::Build { corpus, out } => {
            let p = providers()?;
            let corpus = timer.stage("load_corpus", || Corpus::load(&corpus))?;
            let (graph, stats) = timer.stage("build", || {
                build_graph(&corpus, &cfg.build(), p.generate.as_ref(), p.embed.as_ref())
            })?;
            timer.stage("save", || graph.save(&out))?;
            let checksum = graph.checksum();
            println!(
                "{} entities, {} triples, communities per level {:?}, checksum {checksum}",
                stats.entities, stats.triples, stats.communities
            );
            ("build", json!({ "stats": stats, "checksum": checksum }))
        }
        Command::Communities {
            graph: path,
            level,
            redetect,
            out,
        } => {
            let mut graph = load_graph(&path)?;
            let mut calls = 0;
            if redetect {
                let p = providers()?;
                timer.stage("detect", || graph.detect_communities(&cfg.community));
                calls = timer.stage("summarize", || graph.summarize_communities(p.generate.as_ref(), p.embed.as_ref()))?;
                graph.save(&path)?;
            }
            let rows: Vec<CommunityRow> = graph
                .communities_at(level)
                .into_iter()
                .map(|c| CommunityRow {
                    id: c.id,
                    members: c.members.iter().map(String::as_str).collect(),
                    edges: c.induced_edges.len(),
                    summary: c.summary.as_deref(),
                })
                .collect();
            write_output(out.as_deref(), &json_bytes(&rows))?;
            let modularity: Vec<f64> = graph.partitions().iter().map(|p| p.modularity).collect();
            (
                "communities",
                json!({ "redetected": redetect, "summary_calls": calls, "modularity": modularity }),
            )
        }
        Command::Query {
            text,
            graph: path,
            top_k,
            max_hops,
            max_paths,
            all_levels,
            out,
        } => {
            let graph = timer.stage("load_graph", || load_graph(&path))?;
            let p = providers()?;
            let mut rc = cfg.retrieve;
            rc.top_k = top_k.unwrap_or(rc.top_k);
            rc.max_hops = max_hops.unwrap_or(rc.max_hops);
            rc.max_paths = max_paths.unwrap_or(rc.max_paths);
            rc.all_levels |= all_levels;
            let result = timer.stage("query", || query(&graph, &text, p.embed.as_ref(), p.generate.as_ref(), &rc))?;
            write_output(out.as_deref(), &json_bytes(&result))?;
            (
                "query",
                json!({
                    "ranked_communities": result.ranked_communities,
                    "selected_communities": result.selected_communities,
                    "seeds": result.seeds,
                    "paths": result.paths.len(),
                    "low_evidence": result.low_evidence,
                }),
            )
        }
        Command::Navigate { task, chemical, out } => {
            let p = providers()?;
            let registry = default_registry(p.embed.as_ref())?;
            let nav = timer.stage("navigate", || navigate(&task, &chemical, &p, &registry, &cfg.agents))?;
            write_output(out.as_deref(), &json_bytes(&nav))?;
            ("navigate", serde_json::to_value(&nav.trace).expect("trace serializes"))
        }
        Command::Eval {
            graph: path,
            corpus,
            qa,
            out,
        } => {
            let graph = load_graph(&path)?;
            let p = providers()?;
            let corpus = Corpus::load(&corpus)?;
            let items = load_qa(&qa)?;
            let flat = timer.stage("flat_index", || {
                FlatIndex::build(&corpus, cfg.chunking.window, cfg.chunking.stride, p.embed.as_ref())
            })?;
            let judge = Arc::clone(&p.judge);
            let report = timer.stage("compare", || {
                compare(
                    &items,
                    &ComparisonInputs {
                        graph: &graph,
                        flat: &flat,
                        embed: p.embed.as_ref(),
                        generate: p.generate.as_ref(),
                        judge: cfg.eval.judge.then_some(judge.as_ref()),
                        retrieve: cfg.retrieve,
                        flat_top_k: cfg.eval.flat_top_k,
                    },
                )
            })?;
            report.validate()?;
            if let Some(out) = &out {
                write_output(Some(out), &json_bytes(&report))?;
            }
            print!("{}", report.table());
            (
                "eval",
                json!({ "items": items.len(), "graph_failed": report.graph.overall.failed, "flat_failed": report.flat.overall.failed }),
            )
        }
        Command::Export { graph: path, out } => {
            let graph = load_graph(&path)?;
            write_output(out.as_deref(), graph.export_statements().as_bytes())?;
            ("export", json!({ "entities": graph.entity_count(), "triples": graph.triples().len() }))
        }
    };

    if let Some(path) = &cli.trace {
        let trace = Trace {
            command,
            stages: timer.stages,
            decisions,
        };
        write_output(Some(path), &json_bytes(&trace))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
