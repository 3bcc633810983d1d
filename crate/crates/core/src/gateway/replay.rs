//! Scripted backend for deterministic tests and fixture-driven benchmark runs.
//!
//! A fixture file is a JSON object mapping keys to a reply string or to a list
//! of replies served in order (the last one repeats once the list runs out).
//! For each request the most specific key present wins:
//!
//! 1. `"<class>:<fingerprint>"`, the prompt class plus the state fingerprint
//!    (see [`fingerprint`]);
//! 2. `"<class>@<problem_id>"`;
//! 3. `"<class>"`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::backend::{ChatBackend, ChatRequest, PromptClass};
use crate::error::GatewayError;

/// Stable 16-hex-digit hash of a problem id and the state parts a prompt was built from.
pub fn fingerprint<S: AsRef<str>>(problem_id: &str, parts: &[S]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(problem_id.as_bytes());
    for p in parts {
        hasher.update([0x1f]);
        hasher.update(p.as_ref().as_bytes());
    }
    hasher.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn exact_key(class: PromptClass, fingerprint: &str) -> String {
    format!("{class}:{fingerprint}")
}

pub fn problem_key(class: PromptClass, problem_id: &str) -> String {
    format!("{class}@{problem_id}")
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Replies {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Default)]
pub struct ReplayBackend {
    fixtures: BTreeMap<String, Vec<String>>,
    cursors: Mutex<HashMap<String, usize>>,
}

impl ReplayBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| GatewayError::FixtureFile { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
            .map_err(|e| GatewayError::FixtureFormat { path: path.to_path_buf(), reason: e.to_string() })
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let raw: BTreeMap<String, Replies> = serde_json::from_str(text)?;
        let mut backend = Self::new();
        for (k, v) in raw {
            let replies = match v {
                Replies::One(s) => vec![s],
                Replies::Many(v) => v,
            };
            backend.fixtures.insert(k, replies);
        }
        Ok(backend)
    }

    /// Appends replies under `key`.
    pub fn script(mut self, key: impl Into<String>, replies: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.fixtures.entry(key.into()).or_default().extend(replies.into_iter().map(Into::into));
        self
    }

    fn resolve(&self, request: &ChatRequest) -> Option<String> {
        let m = &request.meta;
        [exact_key(m.class, &m.fingerprint), problem_key(m.class, &m.problem_id), m.class.as_str().to_string()]
            .into_iter()
            .find(|k| self.fixtures.get(k).is_some_and(|v| !v.is_empty()))
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let key = self
            .resolve(request)
            .ok_or_else(|| GatewayError::FixtureMissing(exact_key(request.meta.class, &request.meta.fingerprint)))?;
        let replies = &self.fixtures[&key];
        let mut cursors = self.cursors.lock().expect("replay cursor lock");
        let cursor = cursors.entry(key).or_insert(0);
        let reply = replies[(*cursor).min(replies.len() - 1)].clone();
        *cursor += 1;
        Ok(reply)
    }
}
