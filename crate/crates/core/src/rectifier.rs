//! Review pass over a prior answer, with a deterministic repair when the
//! reviewer never produces a clean one.

use std::collections::HashSet;

use serde::Serialize;
use thiserror::Error;

use crate::llm::{LlmClient, LlmError, LlmRequest};
use crate::model::{ModelError, PoiId, Recommendation};
use crate::parser::{extract_json_object, parse_response, ViolationClass};
use crate::prompt::{build_rectifier_prompt, PromptBundle, PromptConfig, PromptError};

#[derive(Debug, Error)]
pub enum RectifyError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("fallback repair: {0}")]
    Repair(#[from] ModelError),
}

const FALLBACK_REASON: &str = "Deterministic repair: nearest unused candidates fill the list.";

/// Drops repeated and unknown ids (first occurrence wins), pads with unused
/// pool entries in pool order and truncates to `k_out`.
///
/// `pool` is expected nearest-first and fully inside `vocabulary`.
pub fn repair(
    items: &[PoiId],
    reason: &str,
    k_out: usize,
    vocabulary: &HashSet<PoiId>,
    pool: &[PoiId],
) -> Result<Recommendation, ModelError> {
    let mut seen: HashSet<&PoiId> = HashSet::new();
    let mut kept: Vec<PoiId> = Vec::with_capacity(k_out);
    for id in items {
        if vocabulary.contains(id) && seen.insert(id) {
            kept.push(id.clone());
        }
    }
    kept.truncate(k_out);
    for id in pool {
        if kept.len() >= k_out {
            break;
        }
        if vocabulary.contains(id) && seen.insert(id) {
            kept.push(id.clone());
        }
    }
    let reason = if reason.trim().is_empty() {
        FALLBACK_REASON
    } else {
        reason
    };
    Recommendation::new(kept, reason, k_out, vocabulary)
}

fn reason_of(text: &str) -> String {
    extract_json_object(text)
        .and_then(|o| o.get("reason").and_then(|r| r.as_str()).map(str::to_string))
        .unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RectifyOutcome {
    pub recommendation: Recommendation,
    /// Review calls made.
    pub rounds: usize,
    /// Violations found in each review answer.
    pub round_violations: Vec<Vec<ViolationClass>>,
    pub fallback: bool,
    pub latency_ms: u64,
}

/// Request parameters shared by every review call.
#[derive(Clone)]
pub struct Rectifier<'a> {
    pub client: &'a LlmClient,
    pub prompts: &'a PromptConfig,
    pub model_name: &'a str,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub max_rounds: usize,
}

impl Rectifier<'_> {
    /// Runs up to `max_rounds` review calls and returns the first clean
    /// answer, or the repaired latest answer when none is clean.
    pub fn rectify(
        &self,
        prior: &PromptBundle,
        prior_response: &str,
        vocabulary: &HashSet<PoiId>,
        pool: &[PoiId],
    ) -> Result<RectifyOutcome, RectifyError> {
        let k_out = prior.k_out;
        let mut latest = if prior_response.trim().is_empty() {
            "(no answer)".to_string()
        } else {
            prior_response.to_string()
        };
        let mut round_violations = Vec::new();
        let mut latency_ms = 0;
        let mut last_items = Vec::new();

        for round in 1..=self.max_rounds.max(1) {
            let review = build_rectifier_prompt(prior, &latest, self.prompts)?;
            let req = LlmRequest {
                system: review.system,
                user: review.user,
                model_name: self.model_name.to_string(),
                temperature: self.temperature,
                max_output_tokens: self.max_output_tokens,
            };
            let completion = self.client.complete(&req)?;
            latency_ms += completion.response.latency_ms;
            let parsed = parse_response(&completion.response.text, k_out, vocabulary);
            round_violations.push(parsed.classes());
            if let Some(recommendation) = parsed.recommendation {
                return Ok(RectifyOutcome {
                    recommendation,
                    rounds: round,
                    round_violations,
                    fallback: false,
                    latency_ms,
                });
            }
            last_items = parsed.raw_items;
            if !completion.response.text.trim().is_empty() {
                latest = completion.response.text;
            }
        }

        tracing::info!(
            rounds = round_violations.len(),
            "review never clean, repairing"
        );
        let recommendation = repair(&last_items, &reason_of(&latest), k_out, vocabulary, pool)?;
        Ok(RectifyOutcome {
            recommendation,
            rounds: round_violations.len(),
            round_violations,
            fallback: true,
            latency_ms,
        })
    }
}
