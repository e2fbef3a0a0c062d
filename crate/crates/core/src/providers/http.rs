//! Network-backed providers.
//!
//! Wire contract (all JSON, `Authorization: Bearer $<api_key_env>` when the
//! variable is set):
//!
//! * generation: `POST {endpoint}/chat/completions` with
//!   `{"model", "messages": [{"role": "user", "content": prompt}], "max_tokens"}`;
//!   the reply text is `choices[0].message.content`.
//! * embedding: `POST {endpoint}/embeddings` with `{"model", "input"}`; the
//!   vector is `data[0].embedding`. Images are sent to the image model as a
//!   base64 `data:` URL (or passed through when already an `http(s)` URL).
//! * search: `GET {search_endpoint}?kind=<kind>&q=<query>&limit=<n>` answering
//!   a JSON array of corpus documents.
//!
//! Transport failures, HTTP 429 and 5xx are retried up to `max_attempts`
//! times with exponential backoff. Other statuses fail immediately.

use std::time::Duration;

use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;

use super::{
    Embedding, EmbeddingProvider, GenerationProvider, ProviderConfig, ProviderError,
    SearchProvider,
};
use crate::corpus::{Document, SourceKind};

#[derive(Clone)]
pub struct HttpClient {
    agent: ureq::Agent,
    base: String,
    token: Option<String>,
    max_attempts: u32,
    backoff: Duration,
}

enum Attempt<T> {
    Done(T),
    Retry(String),
    Fatal(ProviderError),
}

impl HttpClient {
    pub fn from_config(cfg: &ProviderConfig) -> crate::Result<Self> {
        let base = cfg
            .endpoint
            .clone()
            .ok_or_else(|| crate::Error::Config("providers.endpoint is required".into()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpClient {
            agent,
            base: base.trim_end_matches('/').to_string(),
            token: std::env::var(&cfg.api_key_env).ok(),
            max_attempts: cfg.max_attempts.max(1),
            backoff: Duration::from_millis(cfg.backoff_ms),
        })
    }

    fn with_retries<T>(&self, mut once: impl FnMut() -> Attempt<T>) -> Result<T, ProviderError> {
        let mut last = String::new();
        for attempt in 0..self.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            match once() {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(msg) => {
                    log::warn!("request attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(ProviderError::Transport {
            attempts: self.max_attempts,
            message: last,
        })
    }

    fn classify<T: DeserializeOwned>(
        result: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Attempt<T> {
        match result {
            Err(e) => Attempt::Retry(e.to_string()),
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                if status == 429 || status >= 500 {
                    return Attempt::Retry(format!("HTTP {status}"));
                }
                if status >= 400 {
                    let body = resp.body_mut().read_to_string().unwrap_or_default();
                    return Attempt::Fatal(ProviderError::Transport {
                        attempts: 1,
                        message: format!("HTTP {status}: {body}"),
                    });
                }
                match resp.body_mut().read_json::<T>() {
                    Ok(v) => Attempt::Done(v),
                    Err(e) => Attempt::Fatal(ProviderError::Malformed(e.to_string())),
                }
            }
        }
    }

    fn post_json<T: DeserializeOwned>(
        &self,
        path: &str,
        body: &serde_json::Value,
    ) -> Result<T, ProviderError> {
        let url = format!("{}/{}", self.base, path);
        self.with_retries(|| {
            let mut req = self.agent.post(&url);
            if let Some(t) = &self.token {
                req = req.header("Authorization", &format!("Bearer {t}"));
            }
            Self::classify(req.send_json(body))
        })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

pub struct HttpGenerator {
    client: HttpClient,
    model: String,
}

impl HttpGenerator {
    pub fn new(client: HttpClient, model: String) -> Self {
        HttpGenerator { client, model }
    }
}

impl GenerationProvider for HttpGenerator {
    fn generate(&self, prompt: &str, max_tokens: usize) -> Result<String, ProviderError> {
        if prompt.trim().is_empty() {
            return Err(ProviderError::Precondition("empty prompt".into()));
        }
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": max_tokens,
        });
        let resp: ChatResponse = self.client.post_json("chat/completions", &body)?;
        let text = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        if text.is_empty() {
            return Err(ProviderError::Malformed("empty completion".into()));
        }
        Ok(text)
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

pub struct HttpEmbedder {
    client: HttpClient,
    model: String,
    image_model: Option<String>,
    dim: std::sync::OnceLock<usize>,
}

impl HttpEmbedder {
    pub fn new(client: HttpClient, model: String, image_model: Option<String>) -> Self {
        HttpEmbedder {
            client,
            model,
            image_model,
            dim: std::sync::OnceLock::new(),
        }
    }

    fn request(&self, model: &str, input: serde_json::Value) -> Result<Embedding, ProviderError> {
        let resp: EmbeddingResponse = self
            .client
            .post_json("embeddings", &json!({"model": model, "input": input}))?;
        let v = resp
            .data
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::Malformed("no embedding returned".into()))?
            .embedding;
        let expected = *self.dim.get_or_init(|| v.len());
        if v.len() != expected {
            return Err(ProviderError::Malformed(format!(
                "embedding dimension {} differs from {expected}",
                v.len()
            )));
        }
        Ok(Embedding::normalized(v))
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim.get().copied().unwrap_or(0)
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        self.request(&self.model, json!(text))
    }

    fn embed_image(&self, image_ref: &str) -> Result<Embedding, ProviderError> {
        let model = self
            .image_model
            .as_deref()
            .ok_or_else(|| ProviderError::Unsupported("no image embedding model configured".into()))?;
        let input = if image_ref.starts_with("http://") || image_ref.starts_with("https://") {
            image_ref.to_string()
        } else {
            let bytes = std::fs::read(image_ref)
                .map_err(|e| ProviderError::MissingInput(format!("{image_ref}: {e}")))?;
            format!(
                "data:image/png;base64,{}",
                base64::engine::general_purpose::STANDARD.encode(bytes)
            )
        };
        self.request(model, json!(input))
    }
}

pub struct HttpSearch {
    client: HttpClient,
    url: String,
}

impl HttpSearch {
    pub fn new(client: HttpClient, url: String) -> Self {
        HttpSearch { client, url }
    }
}

impl SearchProvider for HttpSearch {
    fn search(
        &self,
        kind: SourceKind,
        query: &str,
        limit: usize,
    ) -> Result<Vec<Document>, ProviderError> {
        if limit == 0 {
            return Err(ProviderError::Precondition("search limit must be >= 1".into()));
        }
        let limit_s = limit.to_string();
        let mut docs: Vec<Document> = self.client.with_retries(|| {
            let mut req = self
                .client
                .agent
                .get(&self.url)
                .query("kind", kind.as_str())
                .query("q", query)
                .query("limit", &limit_s);
            if let Some(t) = &self.client.token {
                req = req.header("Authorization", &format!("Bearer {t}"));
            }
            HttpClient::classify(req.call())
        })?;
        docs.truncate(limit);
        for d in &mut docs {
            d.source_kind = kind;
        }
        Ok(docs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    fn serve(responses: Vec<(u16, &'static str)>) -> (String, std::thread::JoinHandle<usize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut served = 0;
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = [0u8; 8192];
                let _ = stream.read(&mut buf).unwrap();
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
                served += 1;
            }
            served
        });
        (addr, handle)
    }

    fn config(endpoint: &str) -> ProviderConfig {
        ProviderConfig {
            kind: super::super::ProviderKind::Http,
            endpoint: Some(endpoint.to_string()),
            // Never pick up a real key from the developer's environment.
            api_key_env: "GRAPHRAG_TEST_UNSET_KEY".into(),
            backoff_ms: 1,
            ..Default::default()
        }
    }

    #[test]
    fn generation_retries_server_errors() {
        let (addr, handle) = serve(vec![
            (503, "{}"),
            (200, r#"{"choices":[{"message":{"content":"hello"}}]}"#),
        ]);
        let g = HttpGenerator::new(HttpClient::from_config(&config(&addr)).unwrap(), "m".into());
        assert_eq!(g.generate("hi", 8).unwrap(), "hello");
        assert_eq!(handle.join().unwrap(), 2);
    }

    #[test]
    fn embedding_is_normalized() {
        let (addr, handle) = serve(vec![(200, r#"{"data":[{"embedding":[3.0,4.0]}]}"#)]);
        let e = HttpEmbedder::new(HttpClient::from_config(&config(&addr)).unwrap(), "m".into(), None);
        let v = e.embed_text("x").unwrap();
        assert!((v.values()[0] - 0.6).abs() < 1e-12);
        assert_eq!(e.dim(), 2);
        handle.join().unwrap();
        assert!(matches!(e.embed_image("a.png"), Err(ProviderError::Unsupported(_))));
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (addr, handle) = serve(vec![(400, r#"{"error":"bad"}"#)]);
        let g = HttpGenerator::new(HttpClient::from_config(&config(&addr)).unwrap(), "m".into());
        assert!(matches!(g.generate("hi", 8), Err(ProviderError::Transport { .. })));
        assert_eq!(handle.join().unwrap(), 1);
    }

    #[test]
    fn exhausted_retries_report_attempts() {
        let (addr, handle) = serve(vec![(500, "{}"), (500, "{}"), (500, "{}")]);
        let g = HttpGenerator::new(HttpClient::from_config(&config(&addr)).unwrap(), "m".into());
        match g.generate("hi", 8) {
            Err(ProviderError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("unexpected {other:?}"),
        }
        handle.join().unwrap();
    }
}
