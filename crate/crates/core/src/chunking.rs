//! Sliding-window chunking with generated context preambles.
//!
//! Chunk `i` (1-based) of a document with `L` tokens covers the token span
//! `[(i-1)·s, min((i-1)·s + w, L))`, and chunks are emitted while
//! `(i-1)·s < L`. Consecutive chunks therefore overlap by `w - s` tokens,
//! except that the tail chunks shrink instead of dropping tokens.

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::prompt::Prompt;
use crate::providers::GenerationProvider;
use crate::{Error, Result};

pub const DEFAULT_WINDOW: usize = 1024;
pub const DEFAULT_STRIDE: usize = 128;
pub const DEFAULT_CONTEXT_BUDGET: usize = 64;

/// Line placed between the generated context and the chunk text.
pub const CONTEXT_SEPARATOR: &str = "\n<<<chunk>>>\n";

/// A whitespace-delimited token together with the whitespace before it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub leading: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenStream {
    pub tokens: Vec<Token>,
    /// Whitespace after the last token.
    pub trailing: String,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    /// Text of tokens `[start, end)` with their inner whitespace preserved.
    pub fn span_text(&self, start: usize, end: usize) -> String {
        let mut out = String::new();
        for (i, tok) in self.tokens[start..end].iter().enumerate() {
            if i > 0 {
                out.push_str(&tok.leading);
            }
            out.push_str(&tok.text);
        }
        out
    }
}

/// Splits on Unicode whitespace; punctuation stays attached to its word.
pub fn tokenize(text: &str) -> TokenStream {
    let mut tokens = Vec::new();
    let mut leading = String::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                tokens.push(Token {
                    leading: std::mem::take(&mut leading),
                    text: std::mem::take(&mut current),
                });
            }
            leading.push(c);
        } else {
            current.push(c);
        }
    }
    if !current.is_empty() {
        tokens.push(Token {
            leading: std::mem::take(&mut leading),
            text: current,
        });
    }
    TokenStream {
        tokens,
        trailing: leading,
    }
}

pub fn detokenize(stream: &TokenStream) -> String {
    let mut out = String::new();
    for t in &stream.tokens {
        out.push_str(&t.leading);
        out.push_str(&t.text);
    }
    out.push_str(&stream.trailing);
    out
}

/// Half-open token interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    /// 1-based position within the document.
    pub index: usize,
    pub token_span: TokenSpan,
    pub text: String,
}

/// Identifies a chunk across the corpus.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChunkRef {
    pub doc_id: String,
    pub index: usize,
}

impl Chunk {
    pub fn chunk_ref(&self) -> ChunkRef {
        ChunkRef {
            doc_id: self.doc_id.clone(),
            index: self.index,
        }
    }
}

impl std::fmt::Display for ChunkRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}#{}", self.doc_id, self.index)
    }
}

/// Token spans for a document of `len` tokens.
pub fn window_spans(len: usize, window: usize, stride: usize) -> Result<Vec<TokenSpan>> {
    if window == 0 {
        return Err(Error::InvalidWindow);
    }
    if stride == 0 || stride > window {
        return Err(Error::InvalidStride { window, stride });
    }
    Ok((0..len)
        .step_by(stride)
        .map(|start| TokenSpan {
            start,
            end: (start + window).min(len),
        })
        .collect())
}

pub fn chunk_document(doc: &Document, window: usize, stride: usize) -> Result<Vec<Chunk>> {
    let stream = tokenize(&doc.text);
    let spans = window_spans(stream.len(), window, stride)?;
    Ok(spans
        .into_iter()
        .enumerate()
        .map(|(i, span)| Chunk {
            doc_id: doc.id.clone(),
            index: i + 1,
            token_span: span,
            text: stream.span_text(span.start, span.end),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextualizedChunk {
    pub chunk: Chunk,
    pub context: String,
    pub enriched_text: String,
}

/// Prompt asking for a short context that situates `chunk` within `doc`.
pub fn context_prompt(doc: &Document, chunk: &Chunk, budget: usize) -> String {
    let doc_tokens = tokenize(&doc.text);
    let excerpt_end = doc_tokens.len().min(DEFAULT_WINDOW);
    Prompt::new("contextualize")
        .field("title", &doc.title)
        .field("part", chunk.index.to_string())
        .field("budget", budget.to_string())
        .body(format!(
            "Document:\n{}\n\nChunk:\n{}",
            doc_tokens.span_text(0, excerpt_end),
            chunk.text
        ))
        .render()
}

/// Asks `gen` for the context of `chunk` and prepends it. The context is cut
/// to `budget` tokens and must not be empty.
pub fn contextualize(
    doc: &Document,
    chunk: &Chunk,
    gen: &dyn GenerationProvider,
    budget: usize,
) -> Result<ContextualizedChunk> {
    if chunk.doc_id != doc.id {
        return Err(Error::InvalidArgument(format!(
            "chunk {} does not belong to document {}",
            chunk.chunk_ref(),
            doc.id
        )));
    }
    let raw = gen
        .generate(&context_prompt(doc, chunk, budget), budget)
        .map_err(|e| Error::provider(format!("contextualizing chunk {}", chunk.chunk_ref()), e))?;
    let stream = tokenize(raw.trim());
    let context = stream.span_text(0, stream.len().min(budget));
    if context.is_empty() {
        return Err(Error::Contract(format!(
            "empty context for chunk {}",
            chunk.chunk_ref()
        )));
    }
    let enriched_text = format!("{context}{CONTEXT_SEPARATOR}{}", chunk.text);
    Ok(ContextualizedChunk {
        chunk: chunk.clone(),
        context,
        enriched_text,
    })
}
