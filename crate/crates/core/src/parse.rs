//! Turning free-form model responses into indicator values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::IndicatorKind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("response contains neither YES nor NO")]
    NoAnswerToken,
    #[error("response contains both YES and NO")]
    AmbiguousAnswer,
    #[error("no balanced JSON object or array in response")]
    NoJson,
    #[error("invalid JSON in response: {0}")]
    InvalidJson(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum ParsedValue {
    Binary(u8),
    Count(u64),
}

impl ParsedValue {
    pub fn as_f64(self) -> f64 {
        match self {
            ParsedValue::Binary(b) => b as f64,
            ParsedValue::Count(c) => c as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedResponse {
    pub value: ParsedValue,
    pub raw_response: String,
}

pub fn parse_response(kind: IndicatorKind, text: &str) -> Result<ParsedResponse, ParseError> {
    match kind {
        IndicatorKind::Binary => parse_binary(text),
        IndicatorKind::List => parse_list(text),
    }
}

pub fn parse_binary(text: &str) -> Result<ParsedResponse, ParseError> {
    let bit = binary_bit(text)?;
    Ok(ParsedResponse {
        value: ParsedValue::Binary(bit),
        raw_response: text.to_string(),
    })
}

fn binary_bit(text: &str) -> Result<u8, ParseError> {
    let norm = text.trim().to_uppercase();
    if let Some(first) = norm.split_whitespace().next() {
        match first.trim_end_matches(|c: char| c.is_ascii_punctuation()) {
            "YES" => return Ok(1),
            "NO" => return Ok(0),
            _ => {}
        }
    }
    let mut yes = false;
    let mut no = false;
    for word in norm.split(|c: char| !c.is_alphanumeric()) {
        match word {
            "YES" => yes = true,
            "NO" => no = true,
            _ => {}
        }
    }
    match (yes, no) {
        (true, false) => Ok(1),
        (false, true) => Ok(0),
        (true, true) => Err(ParseError::AmbiguousAnswer),
        (false, false) => Err(ParseError::NoAnswerToken),
    }
}

/// Counts the elements of the first balanced JSON container in `text`.
///
/// An array counts its elements. An object counts, per value, the length of
/// an array value or 1 for anything else; so `{"k": ["a", "b"]}` is 2 and
/// `{"a": 1, "b": 2}` is 2.
pub fn parse_list(text: &str) -> Result<ParsedResponse, ParseError> {
    let value = extract_json(text)?;
    Ok(ParsedResponse {
        value: ParsedValue::Count(count_elements(&value)),
        raw_response: text.to_string(),
    })
}

pub fn count_elements(value: &serde_json::Value) -> u64 {
    use serde_json::Value;
    match value {
        Value::Array(items) => items.len() as u64,
        Value::Object(map) => map
            .values()
            .map(|v| match v {
                Value::Array(items) => items.len() as u64,
                _ => 1,
            })
            .sum(),
        _ => 1,
    }
}

/// Finds the first balanced `{...}` or `[...]` span that is valid JSON.
///
/// Brackets inside string literals are ignored. Candidate spans that are
/// balanced but fail to parse are skipped, so prose like `[note]` before
/// the payload does not hide it.
pub fn extract_json(text: &str) -> Result<serde_json::Value, ParseError> {
    let bytes = text.as_bytes();
    let mut last_err = None;
    let mut start = 0;
    while let Some(off) = bytes[start..].iter().position(|&b| b == b'{' || b == b'[') {
        let open = start + off;
        if let Some(close) = balanced_end(bytes, open) {
            match serde_json::from_str(&text[open..=close]) {
                Ok(v) => return Ok(v),
                Err(e) => last_err = Some(e.to_string()),
            }
        }
        start = open + 1;
    }
    Err(match last_err {
        Some(e) => ParseError::InvalidJson(e),
        None => ParseError::NoJson,
    })
}

fn balanced_end(bytes: &[u8], open: usize) -> Option<usize> {
    let mut stack = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => stack.push(b'}'),
            b'[' => stack.push(b']'),
            b'}' | b']' => {
                if stack.pop() != Some(b) {
                    return None;
                }
                if stack.is_empty() {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}
