use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatBackend, ClientConfig, Completion, CompletionRequest, LlmError, Usage};

/// Chat-completion endpoint speaking the common `/chat/completions` shape.
pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
    retry_max: u32,
    backoff: Duration,
    network_calls: AtomicUsize,
}

impl HttpBackend {
    /// Reads the API key from the environment variable named in `cfg`; a
    /// missing variable means requests go out without authorization.
    pub fn new(cfg: &ClientConfig) -> Self {
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        Self::with_key(cfg, api_key)
    }

    pub fn with_key(cfg: &ClientConfig, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_s.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            agent,
            url: format!("{}/chat/completions", cfg.endpoint_url.trim_end_matches('/')),
            api_key,
            retry_max: cfg.retry_max,
            backoff: Duration::from_millis(cfg.backoff_ms),
            network_calls: AtomicUsize::new(0),
        }
    }

    /// HTTP attempts made, including retries.
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    fn attempt(&self, body: &Value) -> Result<Completion, (bool, LlmError)> {
        self.network_calls.fetch_add(1, Ordering::SeqCst);
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {k}"));
        }
        let mut resp = req.send_json(body).map_err(|e| (true, LlmError::Transport(e.to_string())))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        match status {
            200..=299 => parse_reply(&text).map_err(|e| (false, e)),
            401 | 403 => Err((false, LlmError::Auth(format!("HTTP {status}: {}", snippet(&text))))),
            429 | 500..=599 => Err((true, LlmError::Transport(format!("HTTP {status}: {}", snippet(&text))))),
            _ => Err((false, LlmError::Transport(format!("HTTP {status}: {}", snippet(&text))))),
        }
    }
}

fn snippet(s: &str) -> &str {
    match s.char_indices().nth(200) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn parse_reply(text: &str) -> Result<Completion, LlmError> {
    let v: Value = serde_json::from_str(text).map_err(|e| LlmError::Transport(format!("bad response body: {e}")))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::Transport("response has no choices[0].message.content".into()))?;
    let usage = Usage {
        prompt_tokens: v.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        completion_tokens: v.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0),
    };
    Ok(Completion::new(content, usage))
}

impl ChatBackend for HttpBackend {
    fn call(&self, req: &CompletionRequest) -> Result<Completion, LlmError> {
        let mut body = json!({
            "model": req.model_id,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if let Some(stop) = &req.stop {
            body["stop"] = json!(stop);
        }
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(c) => return Ok(c),
                Err((true, e)) if attempt < self.retry_max => {
                    let wait = self.backoff * 2u32.saturating_pow(attempt);
                    log::warn!("attempt {} failed ({e}); retrying in {wait:?}", attempt + 1);
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Err((_, e)) => return Err(e),
            }
        }
    }

    fn describe(&self) -> String {
        format!("http({})", self.url)
    }
}
