//! Per-query orchestration: retrieve, rerank, prompt, complete, review.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingestion::Dataset;
use crate::llm::{LlmClient, LlmError, LlmRequest, DEFAULT_MODEL};
use crate::model::{ModelError, PoiId, Recommendation, Trajectory};
use crate::parser::{parse_response, ViolationClass};
use crate::prompt::{
    build_recommendation_prompt, candidate_pool, PromptBundle, PromptConfig, PromptError,
};
use crate::rectifier::{repair, Rectifier, RectifyError};
use crate::reranker::{rerank, GdrConfig, RerankError};
use crate::retriever::{RetrievalResult, RetrieverError, TfIdfModel, TfScheme};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Retriever(#[from] RetrieverError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Rectify(#[from] RectifyError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("candidate pool has {pool} POIs but {k_out} recommendations are required")]
    PoolTooSmall { pool: usize, k_out: usize },
}

/// Which stages run. Disabled retrieval leaves the prompt without context;
/// disabled reranking keeps retrieval order; disabled review falls back to
/// parse-and-repair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    pub htr: bool,
    pub gdr: bool,
    pub alr: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            htr: true,
            gdr: true,
            alr: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Trajectories retrieved per query.
    pub k: usize,
    /// Length of the final recommendation list.
    pub k_out: usize,
    pub gdr: GdrConfig,
    pub tf: TfScheme,
    pub toggles: Toggles,
    pub max_rounds: usize,
    /// Nearest POIs offered as candidates before adding context POIs.
    pub pool_size: usize,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 10,
            k_out: 10,
            gdr: GdrConfig::default(),
            tf: TfScheme::Raw,
            toggles: Toggles::default(),
            max_rounds: 2,
            pool_size: 100,
            model_name: DEFAULT_MODEL.to_string(),
            temperature: 0.0,
            max_output_tokens: 1024,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k == 0 || self.k_out == 0 || self.max_rounds == 0 {
            return Err(PipelineError::Config(
                "k, k_out and max_rounds must be at least 1".into(),
            ));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(PipelineError::Config(
                "temperature must be non-negative".into(),
            ));
        }
        self.gdr.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub recommendation: Recommendation,
    /// Context in the order it was rendered.
    pub context: RetrievalResult,
    pub prompt: PromptBundle,
    pub first_response: String,
    /// Review calls made (0 with review disabled).
    pub rounds: usize,
    pub round_violations: Vec<Vec<ViolationClass>>,
    pub fallback: bool,
    pub latency_ms: u64,
}

/// A fitted retrieval index plus everything needed to answer queries.
pub struct Pipeline<'a> {
    dataset: &'a Dataset,
    model: TfIdfModel,
    vocabulary: HashSet<PoiId>,
    cfg: PipelineConfig,
    prompts: &'a PromptConfig,
    client: &'a LlmClient,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        dataset: &'a Dataset,
        cfg: PipelineConfig,
        prompts: &'a PromptConfig,
        client: &'a LlmClient,
    ) -> Result<Self, PipelineError> {
        cfg.validate()?;
        if dataset.vocabulary.len() < cfg.k_out {
            return Err(PipelineError::PoolTooSmall {
                pool: dataset.vocabulary.len(),
                k_out: cfg.k_out,
            });
        }
        let model = TfIdfModel::fit_with(&dataset.database, cfg.tf)?;
        Ok(Self {
            dataset,
            model,
            vocabulary: dataset.poi_set(),
            cfg,
            prompts,
            client,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    /// Context for `q` after retrieval and (optionally) reranking.
    pub fn context(&self, q: &Trajectory) -> Result<RetrievalResult, PipelineError> {
        if !self.cfg.toggles.htr {
            return Ok(RetrievalResult::default());
        }
        let retrieved = self.model.retrieve(&self.dataset.database, q, self.cfg.k)?;
        if !self.cfg.toggles.gdr {
            return Ok(retrieved);
        }
        Ok(rerank(q, retrieved, &self.cfg.gdr)?)
    }

    pub fn recommend(&self, q: &Trajectory) -> Result<QueryOutcome, PipelineError> {
        let context = self.context(q)?;
        let pool = candidate_pool(
            q,
            &context,
            &self.dataset.vocabulary,
            self.cfg.pool_size.max(self.cfg.k_out),
        );
        if pool.len() < self.cfg.k_out {
            return Err(PipelineError::PoolTooSmall {
                pool: pool.len(),
                k_out: self.cfg.k_out,
            });
        }
        let prompt = build_recommendation_prompt(q, &context, self.cfg.k_out, &pool, self.prompts)?;
        let req = LlmRequest {
            system: prompt.system.clone(),
            user: prompt.user.clone(),
            model_name: self.cfg.model_name.clone(),
            temperature: self.cfg.temperature,
            max_output_tokens: self.cfg.max_output_tokens,
        };
        let first = self.client.complete(&req)?.response;

        if self.cfg.toggles.alr {
            let rectifier = Rectifier {
                client: self.client,
                prompts: self.prompts,
                model_name: &self.cfg.model_name,
                temperature: self.cfg.temperature,
                max_output_tokens: self.cfg.max_output_tokens,
                max_rounds: self.cfg.max_rounds,
            };
            let out = rectifier.rectify(&prompt, &first.text, &self.vocabulary, &pool)?;
            return Ok(QueryOutcome {
                recommendation: out.recommendation,
                context,
                prompt,
                first_response: first.text,
                rounds: out.rounds,
                round_violations: out.round_violations,
                fallback: out.fallback,
                latency_ms: first.latency_ms + out.latency_ms,
            });
        }

        let parsed = parse_response(&first.text, self.cfg.k_out, &self.vocabulary);
        let (recommendation, fallback) = match parsed.recommendation {
            Some(r) => (r, false),
            None => {
                let reason = crate::parser::extract_json_object(&first.text)
                    .and_then(|o| o.get("reason").and_then(|v| v.as_str()).map(str::to_string))
                    .unwrap_or_default();
                (
                    repair(
                        &parsed.raw_items,
                        &reason,
                        self.cfg.k_out,
                        &self.vocabulary,
                        &pool,
                    )?,
                    true,
                )
            }
        };
        Ok(QueryOutcome {
            recommendation,
            context,
            prompt,
            first_response: first.text,
            rounds: 0,
            round_violations: Vec::new(),
            fallback,
            latency_ms: first.latency_ms,
        })
    }
}
