use std::sync::{Condvar, Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{parse_completion, serialize_chat, LmBackend, LmError, LmRequest};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "PROMISE_LM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    pub model: Option<String>,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    /// Falls back to [`API_KEY_ENV`] when unset.
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: None,
            timeout_secs: 60,
            max_in_flight: 8,
            api_key: None,
        }
    }
}

struct Slots {
    used: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.limit {
            used = self.freed.wait(used).unwrap();
        }
        *used += 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// Client for a chat-completions compatible endpoint.
///
/// The underlying blocking client is created on first use so the backend can
/// be constructed from async code.
pub struct HttpBackend {
    endpoint: String,
    model: Option<String>,
    api_key: Option<String>,
    timeout: Duration,
    client: OnceLock<reqwest::blocking::Client>,
    slots: Slots,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let api_key = config
            .api_key
            .or_else(|| std::env::var(API_KEY_ENV).ok())
            .filter(|k| !k.is_empty());
        Self {
            endpoint: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            model: config.model,
            api_key,
            timeout: Duration::from_secs(config.timeout_secs.max(1)),
            client: OnceLock::new(),
            slots: Slots {
                used: Mutex::new(0),
                freed: Condvar::new(),
                limit: config.max_in_flight.max(1),
            },
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn client(&self) -> &reqwest::blocking::Client {
        self.client.get_or_init(|| {
            reqwest::blocking::Client::builder()
                .timeout(self.timeout)
                .build()
                .expect("http client construction")
        })
    }

    fn send_once(&self, body: &Value) -> Result<Value, LmError> {
        let mut req = self.client().post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| LmError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(LmError::Status {
                status: status.as_u16(),
                body,
            });
        }
        resp.json::<Value>()
            .map_err(|e| LmError::Malformed(e.to_string()))
    }
}

impl LmBackend for HttpBackend {
    fn complete(&self, request: &LmRequest) -> Result<String, LmError> {
        let mut body = serialize_chat(request);
        if let Some(model) = &self.model {
            body["model"] = Value::String(model.clone());
        }
        let _slot = self.slots.acquire();
        let response = match self.send_once(&body) {
            Err(LmError::Transport(first)) => {
                tracing::warn!(error = %first, "lm transport error, retrying once");
                self.send_once(&body)?
            }
            other => other?,
        };
        parse_completion(&response)
    }
}
