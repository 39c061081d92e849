//! Completion provider for OpenAI-style chat completion endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use tablerag_core::config::HttpSection;
use tablerag_core::gateway::{CompletionProvider, GenerationParams, PromptText, ProviderError};

#[derive(Debug, Error)]
pub enum HttpProviderError {
    #[error("environment variable `{0}` with the API token is not set")]
    MissingToken(String),
    #[error("cannot build HTTP client: {0}")]
    Client(String),
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [Message<'a>; 1],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: String,
}

/// Extracts the first choice's message text from a reply body.
pub fn parse_reply(body: &str) -> Result<String, ProviderError> {
    let reply: ChatReply =
        serde_json::from_str(body).map_err(|e| ProviderError::Unavailable(format!("malformed reply: {e}")))?;
    reply
        .choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| ProviderError::Unavailable("reply has no choices".into()))
}

pub struct HttpCompletionProvider {
    id: String,
    endpoint: String,
    model: String,
    token: String,
    client: reqwest::blocking::Client,
}

impl HttpCompletionProvider {
    /// Reads the bearer token from the environment variable the section
    /// names. Must be called outside an async context.
    pub fn from_section(section: &HttpSection) -> Result<Self, HttpProviderError> {
        let token = std::env::var(&section.token_env)
            .map_err(|_| HttpProviderError::MissingToken(section.token_env.clone()))?;
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| HttpProviderError::Client(e.to_string()))?;
        Ok(Self {
            id: format!("http:{}", section.model),
            endpoint: section.endpoint.clone(),
            model: section.model.clone(),
            token,
            client,
        })
    }
}

impl CompletionProvider for HttpCompletionProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &PromptText, params: &GenerationParams) -> Result<String, ProviderError> {
        let request = ChatRequest {
            model: &self.model,
            messages: [Message {
                role: "user",
                content: prompt.body(),
            }],
            temperature: params.temperature,
            top_p: params.top_p,
            max_tokens: params.max_output_tokens,
        };
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.token)
            .timeout(params.deadline.max(Duration::from_millis(1)))
            .json(&request)
            .send()
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        let status = response.status();
        let body = response.text().map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        if !status.is_success() {
            return Err(ProviderError::Unavailable(format!("HTTP {status}")));
        }
        parse_reply(&body)
    }
}
