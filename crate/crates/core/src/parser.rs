//! Parsing and validation of LLM answers.

use std::collections::HashSet;
use std::fmt;

use serde::Serialize;
use serde_json::Value;

use crate::model::{PoiId, Recommendation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationClass {
    MalformedJson,
    WrongCount,
    Duplicates,
    UnknownPoi,
    MissingReason,
}

impl fmt::Display for ViolationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MalformedJson => "malformed-json",
            Self::WrongCount => "wrong-count",
            Self::Duplicates => "duplicates",
            Self::UnknownPoi => "unknown-poi",
            Self::MissingReason => "missing-reason",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub class: ViolationClass,
    pub detail: String,
}

impl Violation {
    fn new(class: ViolationClass, detail: impl Into<String>) -> Self {
        Self {
            class,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    /// Present iff `violations` is empty.
    pub recommendation: Option<Recommendation>,
    pub violations: Vec<Violation>,
    /// Ids as listed in the answer, before validation. Feeds fallback repair.
    pub raw_items: Vec<PoiId>,
}

impl ParseOutcome {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn classes(&self) -> Vec<ViolationClass> {
        self.violations.iter().map(|v| v.class).collect()
    }
}

/// Byte spans of balanced `{...}` blocks, skipping braces inside strings.
fn object_candidates(text: &str) -> impl Iterator<Item = &str> {
    let bytes = text.as_bytes();
    let starts = bytes
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == b'{')
        .map(|(i, _)| i);
    starts.filter_map(move |start| {
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        for (offset, &b) in bytes[start..].iter().enumerate() {
            if in_string {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_string = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&text[start..start + offset + 1]);
                    }
                }
                _ => {}
            }
        }
        None
    })
}

/// First balanced JSON object in `text` that parses, ignoring surrounding
/// prose and code fences.
pub fn extract_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    object_candidates(text).find_map(|s| match serde_json::from_str::<Value>(s) {
        Ok(Value::Object(map)) => Some(map),
        _ => None,
    })
}

/// Validates an answer against the output schema. Every violation is
/// reported; nothing short-circuits after the JSON is found.
pub fn parse_response(text: &str, k_out: usize, vocabulary: &HashSet<PoiId>) -> ParseOutcome {
    let mut violations = Vec::new();
    let Some(obj) = extract_json_object(text) else {
        return ParseOutcome {
            recommendation: None,
            violations: vec![Violation::new(
                ViolationClass::MalformedJson,
                "no JSON object found",
            )],
            raw_items: Vec::new(),
        };
    };

    let mut raw_items = Vec::new();
    match obj.get("recommendations") {
        Some(Value::Array(items)) => {
            let mut bad = 0;
            for item in items {
                match item.as_str().map(PoiId::new) {
                    Some(Ok(id)) => raw_items.push(id),
                    _ => bad += 1,
                }
            }
            if bad > 0 {
                violations.push(Violation::new(
                    ViolationClass::MalformedJson,
                    format!("{bad} recommendation entries are not non-empty strings"),
                ));
            }
        }
        Some(_) => violations.push(Violation::new(
            ViolationClass::MalformedJson,
            "\"recommendations\" is not an array",
        )),
        None => violations.push(Violation::new(
            ViolationClass::MalformedJson,
            "missing \"recommendations\"",
        )),
    }

    let reason = match obj.get("reason") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
        _ => {
            violations.push(Violation::new(
                ViolationClass::MissingReason,
                "missing or empty \"reason\"",
            ));
            String::new()
        }
    };

    if obj.contains_key("recommendations") && raw_items.len() != k_out {
        violations.push(Violation::new(
            ViolationClass::WrongCount,
            format!("{} of {}", raw_items.len(), k_out),
        ));
    }

    let mut seen = HashSet::new();
    let mut dupes: Vec<&str> = Vec::new();
    for id in &raw_items {
        if !seen.insert(id) && !dupes.contains(&id.as_str()) {
            dupes.push(id.as_str());
        }
    }
    if !dupes.is_empty() {
        violations.push(Violation::new(ViolationClass::Duplicates, dupes.join(", ")));
    }

    let mut unknown: Vec<&str> = Vec::new();
    for id in &raw_items {
        if !vocabulary.contains(id) && !unknown.contains(&id.as_str()) {
            unknown.push(id.as_str());
        }
    }
    if !unknown.is_empty() {
        violations.push(Violation::new(
            ViolationClass::UnknownPoi,
            unknown.join(", "),
        ));
    }

    let recommendation = if violations.is_empty() {
        Recommendation::new(raw_items.clone(), reason, k_out, vocabulary).ok()
    } else {
        None
    };
    ParseOutcome {
        recommendation,
        violations,
        raw_items,
    }
}

/// Serializes a recommendation in the answer schema.
pub fn to_response_json(rec: &Recommendation) -> String {
    serde_json::json!({
        "recommendations": rec.items().iter().map(PoiId::as_str).collect::<Vec<_>>(),
        "reason": rec.rationale(),
    })
    .to_string()
}
