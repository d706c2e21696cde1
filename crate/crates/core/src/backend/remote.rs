use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, BackendError, Invocation, ModelId, TaskItem};

/// Environment variable holding the bearer token for remote models.
pub const REMOTE_KEY_ENV: &str = "CASCADE_REMOTE_KEY";

/// How the question and the item text are laid out as chat messages.
///
/// `{question}` and `{text}` are substituted in both templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self { system: "{question}".into(), user: "{text}".into() }
    }
}

impl PromptTemplate {
    fn render(template: &str, question: &str, text: &str) -> String {
        template.replace("{question}", question).replace("{text}", text)
    }

    pub fn messages(&self, question: &str, text: &str) -> serde_json::Value {
        json!([
            { "role": "system", "content": Self::render(&self.system, question, text) },
            { "role": "user", "content": Self::render(&self.user, question, text) },
        ])
    }
}

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    pub max_in_flight: usize,
    pub template: PromptTemplate,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        Self {
            api_key: std::env::var(REMOTE_KEY_ENV).ok(),
            timeout: Duration::from_secs(60),
            max_attempts: 3,
            initial_backoff: Duration::from_millis(250),
            max_backoff: Duration::from_secs(4),
            max_in_flight: 8,
            template: PromptTemplate::default(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Debug, Deserialize)]
struct Message {
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
}

/// Client for an OpenAI-compatible `chat/completions` route.
pub struct RemoteBackend {
    model: ModelId,
    url: String,
    client: reqwest::blocking::Client,
    opts: RemoteOptions,
    in_flight: Mutex<usize>,
    slot_freed: Condvar,
}

enum Attempt {
    Retry(BackendError),
    Fatal(BackendError),
}

impl RemoteBackend {
    pub fn new(model: ModelId, endpoint: &str, opts: RemoteOptions) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(opts.timeout)
            .build()
            .map_err(|e| BackendError::Transport { model: model.name.clone(), message: e.to_string() })?;
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        };
        Ok(Self { model, url, client, opts, in_flight: Mutex::new(0), slot_freed: Condvar::new() })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn acquire(&self) {
        let limit = self.opts.max_in_flight.max(1);
        let mut n = self.in_flight.lock().expect("in-flight counter poisoned");
        while *n >= limit {
            n = self.slot_freed.wait(n).expect("in-flight counter poisoned");
        }
        *n += 1;
    }

    fn release(&self) {
        *self.in_flight.lock().expect("in-flight counter poisoned") -= 1;
        self.slot_freed.notify_one();
    }

    fn attempt(&self, body: &serde_json::Value, item: &TaskItem) -> Result<Invocation, Attempt> {
        let name = &self.model.name;
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.opts.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                Attempt::Retry(BackendError::Timeout { model: name.clone() })
            } else {
                Attempt::Retry(BackendError::Transport { model: name.clone(), message: e.to_string() })
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            let err = BackendError::Transport { model: name.clone(), message: format!("HTTP {status}") };
            return Err(if status.is_server_error() || status.as_u16() == 429 {
                Attempt::Retry(err)
            } else {
                Attempt::Fatal(err)
            });
        }
        let text = resp.text().map_err(|e| {
            Attempt::Retry(BackendError::Transport { model: name.clone(), message: e.to_string() })
        })?;
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(BackendError::Malformed { model: name.clone(), message: e.to_string() }))?;
        let output = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| {
                Attempt::Fatal(BackendError::Malformed {
                    model: name.clone(),
                    message: "missing choices[0].message.content".into(),
                })
            })?;
        let tokens = parsed
            .usage
            .and_then(|u| u.prompt_tokens)
            .unwrap_or(item.token_count as u64);
        Ok(Invocation { output, cost: self.model.cost_for(tokens) })
    }
}

impl Backend for RemoteBackend {
    fn model(&self) -> &ModelId {
        &self.model
    }

    fn invoke(&self, question: &str, item: &TaskItem) -> Result<Invocation, BackendError> {
        let body = json!({
            "model": self.model.name,
            "messages": self.opts.template.messages(question, item.payload.as_deref().unwrap_or("")),
            "temperature": 0,
        });
        self.acquire();
        let mut backoff = self.opts.initial_backoff;
        let mut last = None;
        for attempt in 0..self.opts.max_attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(backoff);
                backoff = (backoff * 2).min(self.opts.max_backoff);
            }
            match self.attempt(&body, item) {
                Ok(inv) => {
                    self.release();
                    return Ok(inv);
                }
                Err(Attempt::Fatal(e)) => {
                    self.release();
                    return Err(e);
                }
                Err(Attempt::Retry(e)) => last = Some(e),
            }
        }
        self.release();
        Err(last.expect("at least one attempt"))
    }
}
