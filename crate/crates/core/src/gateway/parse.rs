//! Extraction of structured data from free-form model replies.

use std::sync::LazyLock;

use regex::Regex;
use serde_json::Value;

static FENCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)```[ \t]*([A-Za-z0-9_+.-]*)[^\n]*\n(.*?)```").expect("valid regex"));
static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?").expect("valid regex"));

/// Contents of every fenced block, in order of appearance.
pub fn fenced_blocks(reply: &str) -> impl Iterator<Item = &str> {
    FENCE.captures_iter(reply).map(|c| c.get(2).map_or("", |m| m.as_str()))
}

/// The first fenced code block's contents.
pub fn extract_code_block(reply: &str) -> Option<String> {
    fenced_blocks(reply).next().map(|s| s.trim_end().to_string()).filter(|s| !s.trim().is_empty())
}

fn first_value_in(text: &str) -> Option<Value> {
    for (i, c) in text.char_indices() {
        if c != '[' && c != '{' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(v)) = stream.next() {
            return Some(v);
        }
    }
    None
}

/// First well-formed JSON array or object: fenced blocks are tried first, then
/// the raw reply is scanned left to right.
pub fn extract_json(reply: &str) -> Option<Value> {
    for block in fenced_blocks(reply) {
        if let Ok(v @ (Value::Array(_) | Value::Object(_))) = serde_json::from_str::<Value>(block.trim()) {
            return Some(v);
        }
    }
    first_value_in(reply)
}

/// Like [`extract_json`], but unwraps `{"items": [...]}`-style objects holding a single array.
pub fn extract_json_array(reply: &str) -> Option<Vec<Value>> {
    match extract_json(reply)? {
        Value::Array(items) => Some(items),
        Value::Object(map) => {
            let mut arrays = map.into_iter().filter_map(|(_, v)| match v {
                Value::Array(a) => Some(a),
                _ => None,
            });
            let first = arrays.next()?;
            arrays.next().is_none().then_some(first)
        }
        _ => None,
    }
}

/// The last decimal number appearing in the reply.
pub fn last_number(reply: &str) -> Option<f64> {
    NUMBER.find_iter(reply).filter_map(|m| m.as_str().parse::<f64>().ok()).filter(|v| v.is_finite()).last()
}

/// Clamp into [0, 1]; NaN maps to 0.
pub fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Number from a JSON value that may also be a numeric string.
pub fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Text from a JSON value; non-strings are rendered as JSON.
pub fn as_text(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        other => Some(other.to_string()),
    }
}
