//! Prompt rendering for the recommendation call and the review call.
//!
//! Templates are plain text with `{{name}}` placeholders. Rendering is a pure
//! function of its inputs.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use chrono::{Datelike, Duration, Timelike};
use thiserror::Error;

use crate::model::{CheckIn, GeoPoint, PoiId, Trajectory};
use crate::reranker::{haversine, MEAN_EARTH_RADIUS_KM};
use crate::retriever::RetrievalResult;

/// Header line preceding the one-line JSON array of candidate ids.
pub const CANDIDATE_HEADER: &str = "Candidate POIs (nearest to the user's last check-in first):";
/// First line of every review prompt.
pub const RECTIFIER_PREAMBLE: &str = "A user has completed the following task:";

const DEFAULT_RECOMMEND_TEMPLATE: &str = include_str!("../templates/recommend.txt");
const DEFAULT_RECTIFY_TEMPLATE: &str = include_str!("../templates/rectify.txt");

const RECOMMEND_SYSTEM: &str =
    "You are a next point-of-interest recommender for location-based services.";
const RECTIFY_SYSTEM: &str =
    "You are a meticulous reviewer of next point-of-interest recommendations.";

const RECOMMEND_PLACEHOLDERS: &[&str] = &["query", "context", "candidates", "format", "k_out"];
const RECTIFY_PLACEHOLDERS: &[&str] = &["prior_prompt", "prior_response", "format"];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("candidate pool is empty")]
    EmptyCandidatePool,
    #[error("prior response is empty")]
    EmptyResponse,
    #[error("prompt needs {needed} characters without context, budget is {budget}")]
    OverBudget { needed: usize, budget: usize },
    #[error("template: {0}")]
    Template(String),
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Text with `{{name}}` placeholders drawn from a fixed set.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    text: String,
}

impl Template {
    fn parse(text: &str, allowed: &[&str]) -> Result<Self, PromptError> {
        let mut rest = text;
        while let Some(open) = rest.find("{{") {
            let after = &rest[open + 2..];
            let close = after
                .find("}}")
                .ok_or_else(|| PromptError::Template("unterminated `{{`".into()))?;
            let name = after[..close].trim();
            if !allowed.contains(&name) {
                return Err(PromptError::Template(format!(
                    "unknown placeholder `{name}`"
                )));
            }
            rest = &after[close + 2..];
        }
        Ok(Self {
            text: text.to_string(),
        })
    }

    pub fn recommendation(text: &str) -> Result<Self, PromptError> {
        Self::parse(text, RECOMMEND_PLACEHOLDERS)
    }

    pub fn rectifier(text: &str) -> Result<Self, PromptError> {
        Self::parse(text, RECTIFY_PLACEHOLDERS)
    }

    fn render(&self, values: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.text.len() * 2);
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find("{{") {
            out.push_str(&rest[..open]);
            let after = &rest[open + 2..];
            let close = after.find("}}").expect("validated at parse");
            let name = after[..close].trim();
            if let Some((_, v)) = values.iter().find(|(k, _)| *k == name) {
                out.push_str(v);
            }
            rest = &after[close + 2..];
        }
        out.push_str(rest);
        out
    }
}

fn read_template(path: &Path) -> Result<String, PromptError> {
    std::fs::read_to_string(path).map_err(|source| PromptError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptConfig {
    /// Upper bound on the rendered user prompt, in characters.
    pub char_budget: usize,
    pub recommend: Template,
    pub rectify: Template,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            char_budget: 32_000,
            recommend: Template::recommendation(DEFAULT_RECOMMEND_TEMPLATE).expect("built-in"),
            rectify: Template::rectifier(DEFAULT_RECTIFY_TEMPLATE).expect("built-in"),
        }
    }
}

impl PromptConfig {
    pub fn with_template_files(
        mut self,
        recommend: Option<&Path>,
        rectify: Option<&Path>,
    ) -> Result<Self, PromptError> {
        if let Some(p) = recommend {
            self.recommend = Template::recommendation(&read_template(p)?)?;
        }
        if let Some(p) = rectify {
            self.rectify = Template::rectifier(&read_template(p)?)?;
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    /// Required answer shape, repeated verbatim in review prompts.
    pub expected_output_schema: String,
    pub k_out: usize,
    /// Context examples that survived the character budget.
    pub context_examples: usize,
}

pub fn output_schema(k_out: usize) -> String {
    format!(
        "Respond with one JSON object and nothing else, of the form\n\
         {{\"recommendations\": [\"<poi id>\", ...], \"reason\": \"<one sentence>\"}}\n\
         where \"recommendations\" holds exactly {k_out} distinct POI ids taken from the \
         candidate list, most likely first, and \"reason\" briefly justifies the ranking."
    )
}

fn describe_step(c: &CheckIn) -> String {
    let local = c.timestamp + Duration::minutes(c.tz_offset_min as i64);
    format!(
        "({}, {:02}:{:02}, {})",
        c.poi,
        local.hour(),
        local.minute(),
        local.weekday()
    )
}

fn render_context(ctx: &RetrievalResult, take: usize) -> String {
    if take == 0 {
        return String::new();
    }
    let mut s = String::from(
        "\nReference trajectories from similar users, most geographically consistent first. \
         Each line shows a visit history and the POI visited next:\n",
    );
    for (i, e) in ctx.entries.iter().take(take).enumerate() {
        let history: Vec<&str> = e.trajectory.pois().map(PoiId::as_str).collect();
        let next = e.trajectory.target().map_or("?", PoiId::as_str);
        s.push_str(&format!(
            "{}. [{}] -> {}\n",
            i + 1,
            history.join(", "),
            next
        ));
    }
    s.push_str(
        "Use these references only when they are relevant to this user; \
         otherwise rely on your own judgment.\n",
    );
    s
}

fn render_candidates(pool: &[PoiId]) -> String {
    let ids: Vec<&str> = pool.iter().map(PoiId::as_str).collect();
    format!(
        "{CANDIDATE_HEADER}\n{}",
        serde_json::to_string(&ids).expect("strings serialize")
    )
}

/// Renders the recommendation prompt. Context appears in the order given;
/// when the budget is exceeded, examples are dropped from the tail.
pub fn build_recommendation_prompt(
    q: &Trajectory,
    ctx: &RetrievalResult,
    k_out: usize,
    candidate_pool: &[PoiId],
    cfg: &PromptConfig,
) -> Result<PromptBundle, PromptError> {
    if candidate_pool.is_empty() {
        return Err(PromptError::EmptyCandidatePool);
    }
    let query: Vec<String> = q.steps().iter().map(describe_step).collect();
    let query = query.join("\n");
    let candidates = render_candidates(candidate_pool);
    let schema = output_schema(k_out);
    let k_text = k_out.to_string();

    let mut take = ctx.len();
    loop {
        let context = render_context(ctx, take);
        let user = cfg.recommend.render(&[
            ("query", &query),
            ("context", &context),
            ("candidates", &candidates),
            ("format", &schema),
            ("k_out", &k_text),
        ]);
        let len = user.chars().count();
        if len <= cfg.char_budget {
            return Ok(PromptBundle {
                system: RECOMMEND_SYSTEM.to_string(),
                user,
                expected_output_schema: schema,
                k_out,
                context_examples: take,
            });
        }
        if take == 0 {
            return Err(PromptError::OverBudget {
                needed: len,
                budget: cfg.char_budget,
            });
        }
        take -= 1;
    }
}

fn escape_block(text: &str, tag: &str) -> String {
    let close = format!("</{tag}>");
    text.replace(&close, &format!("<\\/{tag}>"))
}

/// Wraps a prior prompt and answer in the review instruction. Both are
/// embedded verbatim except for occurrences of their closing delimiter.
pub fn build_rectifier_prompt(
    prior: &PromptBundle,
    prior_response: &str,
    cfg: &PromptConfig,
) -> Result<PromptBundle, PromptError> {
    if prior_response.trim().is_empty() {
        return Err(PromptError::EmptyResponse);
    }
    let prompt = escape_block(&prior.user, "prompt");
    let response = escape_block(prior_response, "response");
    let user = cfg.rectify.render(&[
        ("prior_prompt", &prompt),
        ("prior_response", &response),
        ("format", &prior.expected_output_schema),
    ]);
    Ok(PromptBundle {
        system: RECTIFY_SYSTEM.to_string(),
        user,
        expected_output_schema: prior.expected_output_schema.clone(),
        k_out: prior.k_out,
        context_examples: prior.context_examples,
    })
}

/// Extracts the candidate ids listed in a rendered prompt, if any.
pub fn parse_candidate_list(prompt: &str) -> Option<Vec<String>> {
    let at = prompt.find(CANDIDATE_HEADER)?;
    let line = prompt[at + CANDIDATE_HEADER.len()..]
        .trim_start_matches(['\r', '\n'])
        .lines()
        .next()?;
    serde_json::from_str(line).ok()
}

/// The `nearest` POIs closest to the query's last check-in, unioned with
/// every POI of the query and the context, sorted by distance then id.
pub fn candidate_pool(
    q: &Trajectory,
    ctx: &RetrievalResult,
    vocabulary: &BTreeMap<PoiId, GeoPoint>,
    nearest: usize,
) -> Vec<PoiId> {
    let anchor = q.last().point;
    let dist = |p: &GeoPoint| haversine(anchor, *p, MEAN_EARTH_RADIUS_KM);
    let mut all: Vec<(f64, &PoiId)> = vocabulary.iter().map(|(id, p)| (dist(p), id)).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));

    let mut chosen: HashSet<&PoiId> = all.iter().take(nearest).map(|(_, id)| *id).collect();
    let extra = q.pois().chain(
        ctx.entries
            .iter()
            .flat_map(|e| e.trajectory.pois().chain(e.trajectory.target())),
    );
    for id in extra {
        if vocabulary.contains_key(id) {
            chosen.insert(id);
        }
    }
    all.into_iter()
        .filter(|(_, id)| chosen.contains(id))
        .map(|(_, id)| id.clone())
        .collect()
}
