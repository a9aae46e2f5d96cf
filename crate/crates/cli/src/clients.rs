//! Blocking HTTP clients for an external embedder and a chat-completion LLM.
//!
//! Both hold a `reqwest::blocking::Client`, so build them outside any async
//! runtime and call them from blocking threads.

use std::time::Duration;

use saeir::interpret::{Embedder, LlmClient};
use saeir::{Error, Result};
use serde::{Deserialize, Serialize};

const TIMEOUT: Duration = Duration::from_secs(60);

fn client() -> Result<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(TIMEOUT)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("http client: {e}")))
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

/// POSTs `{"texts": [...]}` and expects `{"embeddings": [[...]]}`.
pub struct HttpEmbedder {
    http: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
    dim: usize,
    batch: usize,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, api_key: Option<String>, dim: usize) -> Result<Self> {
        Ok(HttpEmbedder {
            http: client()?,
            url: url.into(),
            api_key,
            dim,
            batch: 64,
        })
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch.max(1);
        self
    }

    fn embed_chunk(&self, texts: &[String], offset: usize) -> Result<Vec<Vec<f64>>> {
        let fail = |message: String| Error::Embedder {
            position: offset,
            message,
        };
        let mut req = self.http.post(&self.url).json(&EmbedRequest { texts });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| fail(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(fail(format!("status {status}")));
        }
        let body: EmbedResponse = resp.json().map_err(|e| fail(format!("bad response: {e}")))?;
        if body.embeddings.len() != texts.len() {
            return Err(fail(format!("expected {} embeddings, got {}", texts.len(), body.embeddings.len())));
        }
        for (i, v) in body.embeddings.iter().enumerate() {
            if v.len() != self.dim {
                return Err(Error::Embedder {
                    position: offset + i,
                    message: format!("embedding has dimension {}, expected {}", v.len(), self.dim),
                });
            }
        }
        Ok(body.embeddings)
    }
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(texts.len());
        for (i, chunk) in texts.chunks(self.batch).enumerate() {
            out.extend(self.embed_chunk(chunk, i * self.batch)?);
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: String,
}

/// OpenAI-style `/chat/completions` client with a single user message.
pub struct HttpLlm {
    http: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl HttpLlm {
    pub fn new(base_url: &str, model: impl Into<String>, api_key: Option<String>) -> Result<Self> {
        Ok(HttpLlm {
            http: client()?,
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.into(),
            api_key,
        })
    }
}

impl LlmClient for HttpLlm {
    fn complete(&self, prompt: &str) -> Result<String> {
        let body = ChatRequest {
            model: &self.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: 0.0,
        };
        let mut req = self.http.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Error::Llm(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Error::Llm(format!("status {status}")));
        }
        let reply: ChatResponse = resp.json().map_err(|e| Error::Llm(format!("bad response: {e}")))?;
        reply
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Error::Llm("reply has no choices".into()))
    }
}
