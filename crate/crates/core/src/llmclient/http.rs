//! OpenAI-compatible chat-completions backend.

use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, ChatRequest, Stopwatch, TransportError};

#[derive(Debug)]
pub struct HttpBackend {
    id: String,
    model: String,
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(
        id: impl Into<String>,
        base_url: &str,
        path: &str,
        model: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        let url = format!(
            "{}/{}",
            base_url.trim_end_matches('/'),
            path.trim_start_matches('/')
        );
        Ok(HttpBackend {
            id: id.into(),
            model: model.into(),
            url,
            api_key,
            client,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

/// Request body for the chat-completions endpoint.
pub fn request_body(request: &ChatRequest) -> Value {
    let mut body = json!({
        "model": request.model,
        "messages": request.messages,
        "temperature": request.temperature,
    });
    if let Some(max) = request.max_tokens {
        body["max_tokens"] = json!(max);
    }
    body
}

/// Pulls `choices[0].message.content` out of a response body.
pub fn parse_response(body: &str) -> Result<String, TransportError> {
    let value: Value = serde_json::from_str(body)
        .map_err(|e| TransportError::Malformed(format!("response is not JSON: {e}")))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| TransportError::Malformed("missing choices[0].message.content".into()))
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn send(&self, request: &ChatRequest, _sw: &mut Stopwatch<'_>) -> Result<String, TransportError> {
        let mut req = self.client.post(&self.url).json(&request_body(request));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .text()
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        match status {
            200..=299 => parse_response(&text),
            401 | 403 => Err(TransportError::Auth(format!("HTTP {status}"))),
            429 | 500..=599 => Err(TransportError::Transient(format!("HTTP {status}"))),
            _ => Err(TransportError::Rejected {
                status,
                body: text.chars().take(200).collect(),
            }),
        }
    }
}
