//! Minimal blocking JSON-over-HTTP helpers shared by provider adapters.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

const BODY_LIMIT: u64 = 512 * 1024 * 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HttpError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("http {code}: {body}")]
    Status { code: u16, body: String },
    #[error("undecodable response: {0}")]
    Decode(String),
}

impl HttpError {
    /// Connection problems, throttling and server-side failures.
    pub fn is_transient(&self) -> bool {
        match self {
            HttpError::Transport(_) => true,
            HttpError::Status { code, .. } => *code == 429 || *code >= 500,
            HttpError::Decode(_) => false,
        }
    }
}

pub fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

fn finish<T: DeserializeOwned>(
    result: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
) -> Result<T, HttpError> {
    let mut resp = result.map_err(|e| HttpError::Transport(e.to_string()))?;
    let code = resp.status().as_u16();
    if !(200..300).contains(&code) {
        let body = resp
            .body_mut()
            .with_config()
            .limit(64 * 1024)
            .read_to_string()
            .unwrap_or_default();
        return Err(HttpError::Status { code, body });
    }
    resp.body_mut()
        .with_config()
        .limit(BODY_LIMIT)
        .read_json()
        .map_err(|e| HttpError::Decode(e.to_string()))
}

pub fn get_json<T: DeserializeOwned>(agent: &ureq::Agent, url: &str) -> Result<T, HttpError> {
    finish(agent.get(url).call())
}

pub fn post_json<B: Serialize, T: DeserializeOwned>(
    agent: &ureq::Agent,
    url: &str,
    headers: &[(&str, String)],
    body: &B,
) -> Result<T, HttpError> {
    let mut req = agent.post(url);
    for (k, v) in headers {
        req = req.header(*k, v.as_str());
    }
    finish(req.send_json(body))
}
