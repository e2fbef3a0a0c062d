//! Judges built on other channels: a generation model prompted with the
//! rubric, and a human typing scores on a line-oriented reader.

use std::io::BufRead;
use std::sync::{Arc, Mutex};

use super::{Feedback, GenerationProvider, JudgeProvider, ProviderError, Rubric};
use crate::prompt::Prompt;

/// Asks a generation provider to score an answer and parses
/// `<rubric>: <score>` lines from the reply. Any line starting with
/// `comments:` is kept as the comment.
pub struct LlmJudge {
    generator: Arc<dyn GenerationProvider>,
}

impl LlmJudge {
    pub fn new(generator: Arc<dyn GenerationProvider>) -> Self {
        LlmJudge { generator }
    }
}

pub fn judge_prompt(query: &str, answer: &str) -> String {
    Prompt::new("judge")
        .field(
            "rubric",
            "score helpfulness, correctness, coherence, complexity, verbosity from 0 to 4, one '<name>: <score>' line each, then 'comments: ...'",
        )
        .body(format!("Question: {query}\nAnswer:\n{answer}"))
        .render()
}

/// Parses rubric lines; every rubric key must be present.
pub fn parse_rubric(reply: &str) -> Result<Feedback, ProviderError> {
    let mut scores: [Option<f64>; 5] = [None; 5];
    let mut comments = String::new();
    for line in reply.lines() {
        let line = line.trim().trim_start_matches(['-', '*']).trim();
        let Some((key, value)) = line.split_once(':') else {
            continue;
        };
        let key = key.trim().to_ascii_lowercase();
        if key == "comments" {
            comments = value.trim().to_string();
            continue;
        }
        if let Some(i) = Rubric::ALL.iter().position(|r| r.as_str() == key) {
            let v = value
                .split_whitespace()
                .next()
                .and_then(|t| t.split(['/', ',']).next())
                .and_then(|t| t.parse::<f64>().ok());
            scores[i] = v;
        }
    }
    let mut row = [0.0; 5];
    for (i, s) in scores.iter().enumerate() {
        row[i] = s.ok_or_else(|| {
            ProviderError::Malformed(format!("judge reply lacks a {} score", Rubric::ALL[i]))
        })?;
    }
    Ok(Feedback::from_scores(row, comments))
}

impl JudgeProvider for LlmJudge {
    fn judge(&self, query: &str, answer: &str) -> Result<Feedback, ProviderError> {
        let reply = self.generator.generate(&judge_prompt(query, answer), 256)?;
        parse_rubric(&reply)
    }
}

/// Human-in-the-loop judge. Each call prints nothing and reads one line of
/// five whitespace-separated scores, optionally followed by `# comment`.
pub struct InteractiveJudge<R> {
    reader: Mutex<R>,
}

impl<R: BufRead + Send> InteractiveJudge<R> {
    pub fn new(reader: R) -> Self {
        InteractiveJudge {
            reader: Mutex::new(reader),
        }
    }
}

impl<R: BufRead + Send> JudgeProvider for InteractiveJudge<R> {
    fn judge(&self, _query: &str, _answer: &str) -> Result<Feedback, ProviderError> {
        let mut line = String::new();
        let n = self
            .reader
            .lock()
            .map_err(|_| ProviderError::Transport {
                attempts: 1,
                message: "reader lock poisoned".into(),
            })?
            .read_line(&mut line)
            .map_err(|e| ProviderError::Transport {
                attempts: 1,
                message: e.to_string(),
            })?;
        if n == 0 {
            return Err(ProviderError::MissingInput("no more reviewer input".into()));
        }
        let (scores, comments) = line.split_once('#').unwrap_or((&line, ""));
        let values: Vec<f64> = scores
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| ProviderError::Malformed(format!("reviewer scores: {e}")))?;
        let row: [f64; 5] = values
            .try_into()
            .map_err(|_| ProviderError::Malformed("expected exactly five scores".into()))?;
        Ok(Feedback::from_scores(row, comments.trim()))
    }
}
