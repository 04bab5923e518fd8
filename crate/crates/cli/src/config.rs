//! TOML config file and flag resolution: flag, then file, then built-in
//! default.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use poi_rag::ingestion::PreprocessConfig;
use poi_rag::llm::{CorruptMode, RetryPolicy, DEFAULT_MODEL, ENV_MODEL};
use poi_rag::pipeline::{PipelineConfig, Toggles};
use poi_rag::prompt::PromptConfig;
use poi_rag::retriever::TfScheme;
use serde::{Deserialize, Serialize};

use crate::args::{PipelineArgs, PreprocessArgs, ProviderArgs, ProviderKind};

/// Every key mirrors the flag of the same name (dashes become underscores).
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub format: Option<String>,
    pub strict: Option<bool>,
    pub min_poi_interactions: Option<usize>,
    pub min_user_trajectories: Option<usize>,
    pub min_trajectory_len: Option<usize>,
    pub split_ratio: Option<f64>,
    pub session_gap_hours: Option<f64>,

    pub k: Option<usize>,
    pub k_out: Option<usize>,
    pub rho: Option<f64>,
    pub normalize_by_path: Option<bool>,
    pub tf: Option<TfScheme>,
    pub max_rounds: Option<usize>,
    pub pool_size: Option<usize>,
    pub char_budget: Option<usize>,
    pub recommend_template: Option<PathBuf>,
    pub rectify_template: Option<PathBuf>,
    pub htr: Option<bool>,
    pub gdr: Option<bool>,
    pub alr: Option<bool>,

    pub provider: Option<ProviderKind>,
    pub fixture: Option<PathBuf>,
    pub corrupt_mode: Option<CorruptMode>,
    pub recover_on_review: Option<bool>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_output_tokens: Option<u32>,
    pub timeout_secs: Option<u64>,
    pub max_attempts: Option<u32>,
    pub concurrency: Option<usize>,
    pub journal: Option<PathBuf>,

    pub ks: Option<Vec<usize>>,
    pub group_breakdown: Option<bool>,
    pub fail_fast: Option<bool>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

fn flag(set: bool, file: Option<bool>, default: bool) -> bool {
    if set {
        !default
    } else {
        file.unwrap_or(default)
    }
}

pub fn preprocess_config(args: &PreprocessArgs, file: &FileConfig) -> PreprocessConfig {
    let d = PreprocessConfig::default();
    PreprocessConfig {
        min_poi_interactions: args
            .min_poi_interactions
            .or(file.min_poi_interactions)
            .unwrap_or(d.min_poi_interactions),
        min_user_trajectories: args
            .min_user_trajectories
            .or(file.min_user_trajectories)
            .unwrap_or(d.min_user_trajectories),
        min_trajectory_len: args
            .min_trajectory_len
            .or(file.min_trajectory_len)
            .unwrap_or(d.min_trajectory_len),
        split_ratio: args
            .split_ratio
            .or(file.split_ratio)
            .unwrap_or(d.split_ratio),
        session_gap_hours: args
            .session_gap_hours
            .or(file.session_gap_hours)
            .unwrap_or(d.session_gap_hours),
    }
}

pub fn pipeline_config(
    pipe: &PipelineArgs,
    prov: &ProviderArgs,
    file: &FileConfig,
) -> PipelineConfig {
    let d = PipelineConfig::default();
    let mut gdr = d.gdr;
    gdr.rho = pipe.rho.or(file.rho).unwrap_or(gdr.rho);
    gdr.normalize_by_path = flag(pipe.normalize_by_path, file.normalize_by_path, false);
    PipelineConfig {
        k: pipe.k.or(file.k).unwrap_or(d.k),
        k_out: pipe.k_out.or(file.k_out).unwrap_or(d.k_out),
        gdr,
        tf: pipe.tf.map(Into::into).or(file.tf).unwrap_or(d.tf),
        toggles: Toggles {
            htr: flag(pipe.no_htr, file.htr, true),
            gdr: flag(pipe.no_gdr, file.gdr, true),
            alr: flag(pipe.no_alr, file.alr, true),
        },
        max_rounds: pipe.max_rounds.or(file.max_rounds).unwrap_or(d.max_rounds),
        pool_size: pipe.pool_size.or(file.pool_size).unwrap_or(d.pool_size),
        model_name: prov
            .model
            .clone()
            .or_else(|| file.model.clone())
            .or_else(|| {
                std::env::var(ENV_MODEL)
                    .ok()
                    .filter(|m| !m.trim().is_empty())
            })
            .unwrap_or_else(|| DEFAULT_MODEL.to_string()),
        temperature: prov
            .temperature
            .or(file.temperature)
            .unwrap_or(d.temperature),
        max_output_tokens: prov
            .max_output_tokens
            .or(file.max_output_tokens)
            .unwrap_or(d.max_output_tokens),
    }
}

pub fn prompt_config(pipe: &PipelineArgs, file: &FileConfig) -> Result<PromptConfig> {
    let mut cfg = PromptConfig::default();
    if let Some(b) = pipe.char_budget.or(file.char_budget) {
        cfg.char_budget = b;
    }
    let recommend = pipe
        .recommend_template
        .clone()
        .or_else(|| file.recommend_template.clone());
    let rectify = pipe
        .rectify_template
        .clone()
        .or_else(|| file.rectify_template.clone());
    Ok(cfg.with_template_files(recommend.as_deref(), rectify.as_deref())?)
}

/// Provider selection after resolution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProviderSettings {
    pub provider: ProviderKind,
    #[serde(skip)]
    pub fixture: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corrupt_mode: Option<CorruptMode>,
    pub recover_on_review: bool,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub concurrency: usize,
    #[serde(skip)]
    pub journal: Option<PathBuf>,
}

impl ProviderSettings {
    pub fn resolve(args: &ProviderArgs, file: &FileConfig) -> Result<Self> {
        let provider = args
            .provider
            .or(file.provider)
            .unwrap_or(ProviderKind::MockEcho);
        let fixture = args.fixture.clone().or_else(|| file.fixture.clone());
        if provider == ProviderKind::MockFixture && fixture.is_none() {
            bail!("--provider mock-fixture needs --fixture <journal>");
        }
        let corrupt_mode = match provider {
            ProviderKind::MockCorrupt => Some(
                args.corrupt_mode
                    .map(Into::into)
                    .or(file.corrupt_mode)
                    .unwrap_or(CorruptMode::Mixed),
            ),
            _ => None,
        };
        let concurrency = args.concurrency.or(file.concurrency).unwrap_or(4);
        if concurrency == 0 {
            bail!("--concurrency must be at least 1");
        }
        Ok(Self {
            provider,
            fixture,
            corrupt_mode,
            recover_on_review: flag(args.recover_on_review, file.recover_on_review, false),
            timeout_secs: args.timeout_secs.or(file.timeout_secs).unwrap_or(60),
            max_attempts: args
                .max_attempts
                .or(file.max_attempts)
                .unwrap_or(RetryPolicy::default().max_attempts),
            concurrency,
            journal: args.journal.clone().or_else(|| file.journal.clone()),
        })
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}
