//! Strict parsing of single-object model responses.

use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResponseError {
    #[error("response is empty")]
    Empty,
    #[error("response is not a single JSON value: {0}")]
    NotJson(String),
    #[error("response must be a JSON object, got {0}")]
    NotObject(&'static str),
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("unexpected key `{0}`")]
    UnexpectedKey(String),
    #[error("key `{key}` must be {expected}")]
    WrongKind { key: String, expected: &'static str },
    #[error("key `{key}` is out of range: {detail}")]
    OutOfRange { key: String, detail: String },
}

/// Strips surrounding whitespace and at most one fenced code block
/// (optionally tagged, e.g. ```` ```json ````).
pub fn unfence(raw: &str) -> &str {
    let trimmed = raw.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let Some(inner) = rest.strip_suffix("```") else {
        return trimmed;
    };
    // Skip the info string on the opening fence line.
    match inner.find('\n') {
        Some(newline) if !inner[..newline].contains('{') => inner[newline + 1..].trim(),
        _ => inner.trim(),
    }
}

/// Parses `raw` as exactly one JSON object whose keys are exactly `keys`.
pub fn parse_object(raw: &str, keys: &[&str]) -> Result<Map<String, Value>, ResponseError> {
    let payload = unfence(raw);
    if payload.is_empty() {
        return Err(ResponseError::Empty);
    }
    let value: Value =
        serde_json::from_str(payload).map_err(|e| ResponseError::NotJson(e.to_string()))?;
    let object = match value {
        Value::Object(object) => object,
        Value::Array(_) => return Err(ResponseError::NotObject("an array")),
        Value::String(_) => return Err(ResponseError::NotObject("a string")),
        Value::Number(_) => return Err(ResponseError::NotObject("a number")),
        Value::Bool(_) => return Err(ResponseError::NotObject("a boolean")),
        Value::Null => return Err(ResponseError::NotObject("null")),
    };
    if let Some(extra) = object.keys().find(|k| !keys.contains(&k.as_str())) {
        return Err(ResponseError::UnexpectedKey(extra.clone()));
    }
    if let Some(missing) = keys.iter().find(|k| !object.contains_key(**k)) {
        return Err(ResponseError::MissingKey(missing.to_string()));
    }
    Ok(object)
}

pub fn string_or_null(object: &Map<String, Value>, key: &str) -> Result<Option<String>, ResponseError> {
    match &object[key] {
        Value::Null => Ok(None),
        Value::String(s) => Ok(Some(s.clone())),
        _ => Err(ResponseError::WrongKind {
            key: key.to_string(),
            expected: "a string or null",
        }),
    }
}

pub fn non_empty_string(object: &Map<String, Value>, key: &str) -> Result<String, ResponseError> {
    match &object[key] {
        Value::String(s) if !s.trim().is_empty() => Ok(s.clone()),
        _ => Err(ResponseError::WrongKind {
            key: key.to_string(),
            expected: "a non-empty string",
        }),
    }
}
