//! Chat-completion backends.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::GatewayError;
use crate::problem::IoMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptClass {
    ProposeThoughts,
    ProposeCode,
    GenerateProgram,
    SelfEvaluate,
    RegenerateThought,
    AnalyzeBlocks,
    GenerateTests,
}

impl PromptClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptClass::ProposeThoughts => "propose_thoughts",
            PromptClass::ProposeCode => "propose_code",
            PromptClass::GenerateProgram => "generate_program",
            PromptClass::SelfEvaluate => "self_evaluate",
            PromptClass::RegenerateThought => "regenerate_thought",
            PromptClass::AnalyzeBlocks => "analyze_blocks",
            PromptClass::GenerateTests => "generate_tests",
        }
    }
}

impl std::fmt::Display for PromptClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// Off-the-wire context describing what a request is for. Replay and mock
/// backends key on it; the HTTP backend ignores it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestMeta {
    pub class: PromptClass,
    pub problem_id: String,
    /// Stable hash of the search state the prompt was built from.
    pub fingerprint: String,
    /// 0 for the first attempt, 1 for the re-prompt after a parse failure.
    pub attempt: u32,
    /// Number of items the prompt asks for (thoughts, programs, tests, blocks).
    pub items: usize,
    pub io_mode: IoMode,
    pub entry_point: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_name: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub meta: RequestMeta,
}

impl ChatRequest {
    /// Wire body for chat-completions endpoints.
    pub fn body(&self) -> Value {
        json!({
            "model": self.model_name,
            "messages": self.messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.messages.first() {
            None => Err(GatewayError::Precondition("chat request has no messages")),
            Some(m) if m.role != Role::System => {
                Err(GatewayError::Precondition("first message must be the system prompt"))
            }
            Some(_) => Ok(()),
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError>;
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay: Duration::from_millis(500) }
    }
}

/// Live backend for any chat-completions-compatible HTTP endpoint.
pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    api_key: String,
    retry: RetryPolicy,
}

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const API_KEY_ENV: &str = "OPENAI_API_KEY";
pub const ENDPOINT_ENV: &str = "OPENAI_BASE_URL";

impl HttpBackend {
    /// Reads the credential from `key_env`; fails before any network traffic if it is unset.
    pub fn new(endpoint: impl Into<String>, key_env: &str) -> Result<Self, GatewayError> {
        let api_key = std::env::var(key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| GatewayError::Auth(key_env.to_string()))?;
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(180)))
            .build()
            .into();
        Ok(Self { agent, endpoint: endpoint.into(), api_key, retry: RetryPolicy::default() })
    }

    /// Endpoint from `OPENAI_BASE_URL` (full chat-completions URL) or the public default.
    pub fn from_env() -> Result<Self, GatewayError> {
        let endpoint = std::env::var(ENDPOINT_ENV).unwrap_or_else(|_| DEFAULT_ENDPOINT.to_string());
        Self::new(endpoint, API_KEY_ENV)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn attempt(&self, body: &Value) -> Result<String, Attempt> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(|e| Attempt::Transient(GatewayError::Transport(e.to_string())))?;
        let status = resp.status().as_u16();
        let text =
            resp.body_mut().read_to_string().map_err(|e| Attempt::Transient(GatewayError::Transport(e.to_string())))?;
        match status {
            200..=299 => {
                let v: Value = serde_json::from_str(&text)
                    .map_err(|e| Attempt::Fatal(GatewayError::Parse(format!("response body: {e}"))))?;
                v["choices"][0]["message"]["content"]
                    .as_str()
                    .map(str::to_string)
                    .ok_or_else(|| Attempt::Fatal(GatewayError::Parse("missing choices[0].message.content".into())))
            }
            401 | 403 => Err(Attempt::Fatal(GatewayError::Auth(API_KEY_ENV.into()))),
            429 => Err(Attempt::RateLimited),
            500..=599 => Err(Attempt::Transient(GatewayError::Http { status, body: text })),
            _ => Err(Attempt::Fatal(GatewayError::Http { status, body: text })),
        }
    }
}

enum Attempt {
    RateLimited,
    Transient(GatewayError),
    Fatal(GatewayError),
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let body = request.body();
        let attempts = self.retry.max_attempts.max(1);
        let mut delay = self.retry.base_delay;
        for n in 1..=attempts {
            let err = match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::RateLimited) => GatewayError::RateLimit { attempts: n },
                Err(Attempt::Transient(e)) => e,
            };
            if n == attempts {
                return Err(err);
            }
            tracing::debug!(attempt = n, error = %err, "retrying chat completion");
            std::thread::sleep(delay);
            delay *= 2;
        }
        unreachable!("loop returns on the last attempt")
    }
}

/// Offline backend producing plausible, seed-determined replies for every
/// prompt class. Useful for dry runs of the whole pipeline.
#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn rng(&self, meta: &RequestMeta) -> ChaCha8Rng {
        let mut h = self.seed ^ 0x9e37_79b9_7f4a_7c15;
        for b in meta.class.as_str().bytes().chain(meta.fingerprint.bytes()).chain([meta.attempt as u8]) {
            h = (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3);
        }
        ChaCha8Rng::seed_from_u64(h)
    }

    fn program(meta: &RequestMeta) -> String {
        match (meta.io_mode, meta.entry_point.as_deref()) {
            (IoMode::Functional, Some(entry)) => {
                format!("def {entry}(*args):\n    return args[0] if args else None\n")
            }
            _ => "import sys\nprint(sys.stdin.read().strip())\n".into(),
        }
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let meta = &request.meta;
        let mut rng = self.rng(meta);
        let reply = match meta.class {
            PromptClass::ProposeThoughts => {
                let items: Vec<Value> = (0..meta.items.max(1))
                    .map(|i| {
                        let score: f64 = (rng.random_range(0..=100) as f64) / 100.0;
                        json!({"thought": format!("Approach {}: option {}", &meta.fingerprint[..6.min(meta.fingerprint.len())], i + 1), "score": score})
                    })
                    .collect();
                format!("```json\n{}\n```", Value::Array(items))
            }
            PromptClass::ProposeCode => {
                let items: Vec<Value> = (0..meta.items.max(1))
                    .map(|_| json!({"code": Self::program(meta), "score": (rng.random_range(0..=100) as f64) / 100.0}))
                    .collect();
                format!("```json\n{}\n```", Value::Array(items))
            }
            PromptClass::GenerateProgram => format!("```python\n{}```", Self::program(meta)),
            PromptClass::SelfEvaluate => format!("{:.2}", rng.random_range(0..=100) as f64 / 100.0),
            PromptClass::RegenerateThought => {
                json!({"thought": format!("Revised approach {}", rng.random_range(0..1000))}).to_string()
            }
            PromptClass::AnalyzeBlocks => {
                let items: Vec<Value> = (0..meta.items)
                    .map(|i| json!({"block_index": i, "verdict": if rng.random_bool(0.5) { "correct" } else { "incorrect" }, "explanation": "mock verdict"}))
                    .collect();
                Value::Array(items).to_string()
            }
            PromptClass::GenerateTests => "[]".into(),
        };
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(class: PromptClass) -> RequestMeta {
        RequestMeta {
            class,
            problem_id: "p".into(),
            fingerprint: "abcdef0123".into(),
            attempt: 0,
            items: 3,
            io_mode: IoMode::StdinStdout,
            entry_point: None,
        }
    }

    fn request(class: PromptClass) -> ChatRequest {
        ChatRequest {
            model_name: "m".into(),
            messages: vec![ChatMessage::system("s"), ChatMessage::user("u")],
            temperature: 0.7,
            max_tokens: 16,
            meta: meta(class),
        }
    }

    #[test]
    fn wire_body_shape() {
        let body = request(PromptClass::GenerateProgram).body();
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "u");
        assert_eq!(body["max_tokens"], 16);
        assert!(body.get("meta").is_none());
    }

    #[test]
    fn request_validation() {
        let mut r = request(PromptClass::GenerateProgram);
        assert!(r.validate().is_ok());
        r.messages.remove(0);
        assert!(r.validate().is_err());
        r.messages.clear();
        assert!(r.validate().is_err());
    }

    #[test]
    fn mock_is_deterministic() {
        let a = MockBackend::new(7);
        let b = MockBackend::new(7);
        for class in [PromptClass::ProposeThoughts, PromptClass::SelfEvaluate, PromptClass::AnalyzeBlocks] {
            let r = request(class);
            assert_eq!(a.complete(&r).unwrap(), b.complete(&r).unwrap());
        }
    }

    #[test]
    fn missing_credential_fails_fast() {
        let err = HttpBackend::new("http://127.0.0.1:9", "TS_DEFINITELY_UNSET_KEY").err().unwrap();
        assert!(matches!(err, GatewayError::Auth(v) if v == "TS_DEFINITELY_UNSET_KEY"));
    }
}
