//! Hit ratio and NDCG with a single relevant item, user activity groups and
//! the batch experiment runner.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingestion::Dataset;
use crate::llm::LlmClient;
use crate::model::{PoiId, Recommendation, UserId};
use crate::pipeline::{Pipeline, PipelineConfig, PipelineError, Toggles};
use crate::prompt::PromptConfig;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("K = {k} exceeds the list length {len}")]
    KTooLarge { k: usize, len: usize },
    #[error("K must be at least 1")]
    ZeroK,
    #[error("no results to aggregate")]
    Empty,
    #[error("query {query_id}: {source}")]
    Query {
        query_id: usize,
        source: PipelineError,
    },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

fn check_k(k: usize, len: usize) -> Result<(), EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if k > len {
        return Err(EvalError::KTooLarge { k, len });
    }
    Ok(())
}

/// 1 when the target ranks within the top `k`.
pub fn hit_from_rank(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r <= k => 1.0,
        _ => 0.0,
    }
}

/// `1 / log2(rank + 1)` within the top `k`; the ideal DCG is 1.
pub fn ndcg_from_rank(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r <= k => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    }
}

pub fn hr_at_k(rec: &Recommendation, target: &PoiId, k: usize) -> Result<f64, EvalError> {
    check_k(k, rec.items().len())?;
    Ok(hit_from_rank(rec.rank_of(target), k))
}

pub fn ndcg_at_k(rec: &Recommendation, target: &PoiId, k: usize) -> Result<f64, EvalError> {
    check_k(k, rec.items().len())?;
    Ok(ndcg_from_rank(rec.rank_of(target), k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMetrics {
    pub hr: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_k: BTreeMap<usize, KMetrics>,
    pub n_queries: usize,
    /// Queries that errored; scored as misses.
    pub n_failed: usize,
    /// Queries whose answer came from the deterministic repair.
    pub n_fallback: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_breakdown: Option<BTreeMap<String, GroupMetrics>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub n_queries: usize,
    pub per_k: BTreeMap<usize, KMetrics>,
}

/// One scored query. An empty `items` list marks a failed query.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredQuery {
    pub query_id: usize,
    pub target: PoiId,
    pub items: Vec<PoiId>,
    pub fallback: bool,
}

impl ScoredQuery {
    fn rank(&self) -> Option<usize> {
        self.items
            .iter()
            .position(|p| p == &self.target)
            .map(|i| i + 1)
    }

    fn failed(&self) -> bool {
        self.items.is_empty()
    }
}

fn per_k(results: &[&ScoredQuery], ks: &[usize]) -> BTreeMap<usize, KMetrics> {
    let n = results.len() as f64;
    ks.iter()
        .map(|&k| {
            let (hr, ndcg) = results.iter().fold((0.0, 0.0), |(h, g), q| {
                (
                    h + hit_from_rank(q.rank(), k),
                    g + ndcg_from_rank(q.rank(), k),
                )
            });
            (
                k,
                KMetrics {
                    hr: hr / n,
                    ndcg: ndcg / n,
                },
            )
        })
        .collect()
}

/// Mean HR@K and NDCG@K. Results are folded in query-id order, so the
/// outcome does not depend on input order.
pub fn aggregate(results: &[ScoredQuery], ks: &[usize]) -> Result<MetricReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    for q in results.iter().filter(|q| !q.failed()) {
        for &k in ks {
            check_k(k, q.items.len())?;
        }
    }
    let mut sorted: Vec<&ScoredQuery> = results.iter().collect();
    sorted.sort_by_key(|q| q.query_id);
    Ok(MetricReport {
        per_k: per_k(&sorted, ks),
        n_queries: results.len(),
        n_failed: results.iter().filter(|q| q.failed()).count(),
        n_fallback: results.iter().filter(|q| q.fallback).count(),
        group_breakdown: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserGroup {
    Inactive,
    Normal,
    VeryActive,
}

impl UserGroup {
    pub fn label(self) -> &'static str {
        match self {
            Self::Inactive => "inactive",
            Self::Normal => "normal",
            Self::VeryActive => "very_active",
        }
    }
}

/// Splits users by database check-in volume: the bottom 30% are inactive,
/// the top 30% very active. Equal counts are ordered by user id.
pub fn group_users(dataset: &Dataset) -> BTreeMap<UserId, UserGroup> {
    let mut counts: BTreeMap<&UserId, usize> = dataset.users.iter().map(|u| (u, 0)).collect();
    for t in &dataset.database {
        *counts.entry(t.user()).or_default() += t.len();
    }
    let mut ranked: Vec<(&UserId, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(b.0)));
    let n = ranked.len();
    let edge = n * 3 / 10;
    ranked
        .into_iter()
        .enumerate()
        .map(|(i, (u, _))| {
            let g = if i < edge {
                UserGroup::Inactive
            } else if i >= n - edge {
                UserGroup::VeryActive
            } else {
                UserGroup::Normal
            };
            (u.clone(), g)
        })
        .collect()
}

/// One line of the per-query results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub user: UserId,
    pub query_id: usize,
    pub target: PoiId,
    pub items: Vec<PoiId>,
    pub rank_of_target: Option<usize>,
    pub rounds: usize,
    pub fallback: bool,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub pipeline: PipelineConfig,
    pub ks: Vec<usize>,
    pub group_breakdown: bool,
    pub concurrency: usize,
    /// Abort on the first failed query instead of scoring it as a miss.
    pub fail_fast: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            ks: vec![1, 5, 10],
            group_breakdown: false,
            concurrency: 4,
            fail_fast: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub report: MetricReport,
    pub rows: Vec<ResultRow>,
}

impl ExperimentRun {
    /// JSON lines, one row per query in query-id order.
    pub fn results_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&serde_json::to_string(row).expect("rows serialize"));
            out.push('\n');
        }
        out
    }
}

/// Runs the pipeline over every test query and scores it.
pub fn run_experiment(
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    prompts: &PromptConfig,
    client: &LlmClient,
) -> Result<ExperimentRun, EvalError> {
    let pipeline = Pipeline::new(dataset, cfg.pipeline.clone(), prompts, client)?;
    let queries = &dataset.test;
    let next = AtomicUsize::new(0);
    let workers = cfg.concurrency.max(1).min(queries.len().max(1));

    let mut outcomes: Vec<(usize, Result<ResultRow, PipelineError>)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= queries.len() {
                            break;
                        }
                        let q = &queries[i];
                        let target = q.target().cloned().expect("test queries carry targets");
                        let row = pipeline.recommend(q).map(|out| {
                            let items = out.recommendation.items().to_vec();
                            ResultRow {
                                user: q.user().clone(),
                                query_id: i,
                                rank_of_target: items
                                    .iter()
                                    .position(|p| p == &target)
                                    .map(|r| r + 1),
                                target,
                                items,
                                rounds: out.rounds,
                                fallback: out.fallback,
                                latency_ms: out.latency_ms,
                                error: None,
                            }
                        });
                        local.push((i, row));
                    }
                    local
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    outcomes.sort_by_key(|(i, _)| *i);

    let mut rows = Vec::with_capacity(outcomes.len());
    for (i, outcome) in outcomes {
        match outcome {
            Ok(row) => rows.push(row),
            Err(source) if cfg.fail_fast => {
                return Err(EvalError::Query {
                    query_id: i,
                    source,
                })
            }
            Err(e) => {
                tracing::warn!(query_id = i, error = %e, "query failed, scoring as a miss");
                let q = &queries[i];
                rows.push(ResultRow {
                    user: q.user().clone(),
                    query_id: i,
                    target: q.target().cloned().expect("test queries carry targets"),
                    items: Vec::new(),
                    rank_of_target: None,
                    rounds: 0,
                    fallback: false,
                    latency_ms: 0,
                    error: Some(e.to_string()),
                });
            }
        }
    }

    let scored: Vec<ScoredQuery> = rows
        .iter()
        .map(|r| ScoredQuery {
            query_id: r.query_id,
            target: r.target.clone(),
            items: r.items.clone(),
            fallback: r.fallback,
        })
        .collect();
    let mut report = if scored.is_empty() {
        return Err(EvalError::Empty);
    } else {
        aggregate(&scored, &cfg.ks)?
    };

    if cfg.group_breakdown {
        let groups = group_users(dataset);
        let mut by_group: HashMap<UserGroup, Vec<&ScoredQuery>> = HashMap::new();
        for (row, q) in rows.iter().zip(&scored) {
            if let Some(&g) = groups.get(&row.user) {
                by_group.entry(g).or_default().push(q);
            }
        }
        let mut breakdown = BTreeMap::new();
        for g in [
            UserGroup::Inactive,
            UserGroup::Normal,
            UserGroup::VeryActive,
        ] {
            let qs = by_group.remove(&g).unwrap_or_default();
            let per_k = if qs.is_empty() {
                BTreeMap::new()
            } else {
                per_k(&qs, &cfg.ks)
            };
            breakdown.insert(
                g.label().to_string(),
                GroupMetrics {
                    n_queries: qs.len(),
                    per_k,
                },
            );
        }
        report.group_breakdown = Some(breakdown);
    }
    Ok(ExperimentRun { report, rows })
}

/// Component ablations, from the full pipeline down to a bare prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    Full,
    NoAlr,
    NoGdrAlr,
    NoHtrGdrAlr,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Self::Full, Self::NoAlr, Self::NoGdrAlr, Self::NoHtrGdrAlr];

    pub fn label(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoAlr => "no-alr",
            Self::NoGdrAlr => "no-gdr-alr",
            Self::NoHtrGdrAlr => "no-htr-gdr-alr",
        }
    }

    pub fn toggles(self) -> Toggles {
        match self {
            Self::Full => Toggles::default(),
            Self::NoAlr => Toggles {
                htr: true,
                gdr: true,
                alr: false,
            },
            Self::NoGdrAlr => Toggles {
                htr: true,
                gdr: false,
                alr: false,
            },
            Self::NoHtrGdrAlr => Toggles {
                htr: false,
                gdr: false,
                alr: false,
            },
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.label() == s)
            .ok_or_else(|| format!("unknown ablation `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub label: String,
    pub config: ExperimentConfig,
}

/// Expands ablations and a rho grid into labelled experiment sections. An
/// empty list leaves that axis at the base configuration.
pub fn plan_sections(
    base: &ExperimentConfig,
    ablations: &[Ablation],
    rhos: &[f64],
) -> Vec<Section> {
    let ablation_axis: Vec<Option<Ablation>> = if ablations.is_empty() {
        vec![None]
    } else {
        ablations.iter().copied().map(Some).collect()
    };
    let rho_axis: Vec<Option<f64>> = if rhos.is_empty() {
        vec![None]
    } else {
        rhos.iter().copied().map(Some).collect()
    };
    let mut out = Vec::new();
    for a in &ablation_axis {
        for r in &rho_axis {
            let mut config = base.clone();
            let mut parts = Vec::new();
            if let Some(a) = a {
                config.pipeline.toggles = a.toggles();
                parts.push(a.label().to_string());
            }
            if let Some(r) = r {
                config.pipeline.gdr.rho = *r;
                parts.push(format!("rho={r}"));
            }
            if parts.is_empty() {
                parts.push(if config.pipeline.toggles == Toggles::default() {
                    "full".to_string()
                } else {
                    "custom".to_string()
                });
            }
            out.push(Section {
                label: parts.join("/"),
                config,
            });
        }
    }
    out
}

/// Aligned plain-text table of every section's metrics.
pub fn render_table(sections: &[(String, MetricReport)]) -> String {
    let ks: Vec<usize> = sections
        .iter()
        .flat_map(|(_, r)| r.per_k.keys().copied())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut header = vec!["section".to_string(), "group".to_string(), "n".to_string()];
    for k in &ks {
        header.push(format!("HR@{k}"));
        header.push(format!("NDCG@{k}"));
    }
    let mut rows = vec![header];
    let metric_cells = |per_k: &BTreeMap<usize, KMetrics>| -> Vec<String> {
        ks.iter()
            .flat_map(|k| match per_k.get(k) {
                Some(m) => vec![format!("{:.4}", m.hr), format!("{:.4}", m.ndcg)],
                None => vec!["-".into(), "-".into()],
            })
            .collect()
    };
    for (label, report) in sections {
        let mut row = vec![label.clone(), "all".into(), report.n_queries.to_string()];
        row.extend(metric_cells(&report.per_k));
        rows.push(row);
        if let Some(groups) = &report.group_breakdown {
            for (g, m) in groups {
                let mut row = vec![label.clone(), g.clone(), m.n_queries.to_string()];
                row.extend(metric_cells(&m.per_k));
                rows.push(row);
            }
        }
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| {
                if c < 2 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
    }
    out
}
