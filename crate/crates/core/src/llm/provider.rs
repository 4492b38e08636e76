//! Provider adapters: an OpenAI-compatible chat endpoint and a scripted
//! in-process provider for tests.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{GenError, GenRequest, ImageData, LlmProvider, Role};
use crate::http::{self, HttpError};
use crate::retrieval::provider::png_data_uri;

/// Chat-completions client. Images are attached to the last user message as
/// data URIs, in request order.
#[derive(Debug, Clone)]
pub struct HttpChatProvider {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatProvider {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Self {
        Self {
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
            agent: http::agent(timeout),
        }
    }

    pub fn request_body(request: &GenRequest, images: &[ImageData]) -> Value {
        let last_user = request.messages.iter().rposition(|m| m.role == Role::User);
        let messages: Vec<Value> = request
            .messages
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let role = match m.role {
                    Role::System => "system",
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                if Some(i) == last_user && !images.is_empty() {
                    let mut parts = vec![json!({"type": "text", "text": m.text})];
                    parts.extend(images.iter().map(|img| {
                        json!({"type": "image_url", "image_url": {"url": png_data_uri(&img.bytes)}})
                    }));
                    json!({"role": role, "content": parts})
                } else {
                    json!({"role": role, "content": m.text})
                }
            })
            .collect();
        json!({
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl LlmProvider for HttpChatProvider {
    fn complete(&self, request: &GenRequest, images: &[ImageData]) -> Result<String, GenError> {
        let mut headers = Vec::new();
        if let Some(key) = &self.api_key {
            headers.push(("Authorization", format!("Bearer {key}")));
        }
        let body = Self::request_body(request, images);
        let resp: ChatResponse = http::post_json(&self.agent, &self.url, &headers, &body).map_err(|e| match e {
            e if e.is_transient() => GenError::Transport(e.to_string()),
            HttpError::Decode(m) => GenError::Content(format!("malformed response: {m}")),
            e => GenError::Content(e.to_string()),
        })?;
        let choice = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| GenError::Content("response has no choices".into()))?;
        if choice.finish_reason.as_deref() == Some("content_filter") {
            return Err(GenError::Content("blocked by the provider's content filter".into()));
        }
        choice
            .message
            .content
            .ok_or_else(|| GenError::Content("response has no text content".into()))
    }
}

type Script = dyn Fn(&GenRequest, &[ImageData]) -> Result<String, GenError> + Send + Sync;

/// Answers from a closure and logs every request it receives.
pub struct ScriptedProvider {
    script: Box<Script>,
    log: Mutex<Vec<GenRequest>>,
}

impl std::fmt::Debug for ScriptedProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedProvider")
            .field("calls", &self.call_count())
            .finish()
    }
}

impl ScriptedProvider {
    pub fn new(
        script: impl Fn(&GenRequest, &[ImageData]) -> Result<String, GenError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            script: Box::new(script),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn fixed(text: &str) -> Self {
        let text = text.to_string();
        Self::new(move |_, _| Ok(text.clone()))
    }

    /// Replies in order, repeating the last reply once exhausted.
    pub fn sequence(replies: Vec<String>) -> Self {
        assert!(!replies.is_empty(), "a sequence needs at least one reply");
        let next = Arc::new(Mutex::new(0usize));
        Self::new(move |_, _| {
            let mut i = next.lock().unwrap_or_else(|p| p.into_inner());
            let reply = replies[(*i).min(replies.len() - 1)].clone();
            *i += 1;
            Ok(reply)
        })
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn calls(&self) -> Vec<GenRequest> {
        self.log.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

impl LlmProvider for ScriptedProvider {
    fn complete(&self, request: &GenRequest, images: &[ImageData]) -> Result<String, GenError> {
        self.log
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(request.clone());
        (self.script)(request, images)
    }
}
