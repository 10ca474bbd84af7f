//! Blocking client for chat-completion servers speaking the common
//! `POST /chat/completions` JSON shape.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::Value;

use super::{ChatEndpoint, ChatRequest, EndpointError, LlmError, ProtocolConfig};

#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    client: Client,
    url: String,
    api_key: Option<String>,
}

impl HttpEndpoint {
    /// Builds a client from the protocol; the bearer token, if any, is read
    /// from the variable named by `api_key_env`.
    pub fn new(protocol: &ProtocolConfig) -> Result<Self, LlmError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(protocol.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(format!("http client: {e}")))?;
        let api_key = std::env::var(&protocol.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(HttpEndpoint {
            client,
            url: format!("{}/chat/completions", protocol.endpoint.trim_end_matches('/')),
            api_key,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

fn retry_after(headers: &reqwest::header::HeaderMap) -> Option<Duration> {
    let v = headers.get(reqwest::header::RETRY_AFTER)?.to_str().ok()?;
    v.trim().parse::<f64>().ok().filter(|s| *s >= 0.0).map(Duration::from_secs_f64)
}

/// Text of the first choice; a null content reads as an empty reply.
pub fn extract_content(body: &Value) -> Result<String, EndpointError> {
    let message = body
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .ok_or_else(|| EndpointError::Fatal("response has no choices[0].message".into()))?;
    match message.get("content") {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Null) | None => Ok(String::new()),
        Some(other) => Err(EndpointError::Fatal(format!("unexpected content {other}"))),
    }
}

impl ChatEndpoint for HttpEndpoint {
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        let mut req = self.client.post(&self.url).json(request);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                EndpointError::Timeout
            } else {
                EndpointError::Transient(e.to_string())
            }
        })?;
        let status = resp.status();
        if status == StatusCode::TOO_MANY_REQUESTS {
            return Err(EndpointError::RateLimited { retry_after: retry_after(resp.headers()) });
        }
        if status.is_server_error() {
            return Err(EndpointError::Transient(format!("server returned {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(EndpointError::Fatal(format!("server returned {status}: {text}")));
        }
        let body: Value = resp.json().map_err(|e| {
            if e.is_timeout() {
                EndpointError::Timeout
            } else {
                EndpointError::Fatal(format!("malformed response body: {e}"))
            }
        })?;
        extract_content(&body)
    }
}
