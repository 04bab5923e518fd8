//! Core domain types: POIs, coordinates, check-ins, trajectories and
//! recommendation lists.

use std::collections::HashSet;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque venue identifier. Equality is exact string equality after trimming
/// surrounding whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PoiId(String);

impl PoiId {
    pub fn new(raw: impl AsRef<str>) -> Result<Self, ModelError> {
        let trimmed = raw.as_ref().trim();
        if trimmed.is_empty() {
            return Err(ModelError::EmptyPoiId);
        }
        Ok(Self(trimmed.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for PoiId {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<PoiId> for String {
    fn from(value: PoiId) -> Self {
        value.0
    }
}

impl fmt::Display for PoiId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Opaque user identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub String);

impl UserId {
    pub fn new(raw: impl AsRef<str>) -> Self {
        Self(raw.as_ref().trim().to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Latitude/longitude pair in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, ModelError> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(ModelError::Latitude(lat));
        }
        if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
            return Err(ModelError::Longitude(lon));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// One timestamped visit of a user to a POI.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckIn {
    pub user: UserId,
    pub poi: PoiId,
    pub point: GeoPoint,
    pub timestamp: DateTime<Utc>,
    /// Local offset from UTC in minutes, used only for rendering.
    pub tz_offset_min: i32,
    pub category: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("empty POI identifier")]
    EmptyPoiId,
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("invalid trajectory: {0}")]
    Trajectory(#[from] TrajectoryViolation),
    #[error("invalid recommendation: {0}")]
    Recommendation(String),
}

/// First invariant a candidate trajectory breaks.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrajectoryViolation {
    #[error("empty trajectory")]
    Empty,
    #[error("non-monotonic timestamps at step {index}")]
    NonMonotonicTimestamps { index: usize },
    #[error("mixed users at step {index}")]
    MixedUsers { index: usize },
}

/// Checks the trajectory invariants over raw parts.
pub fn validate_trajectory(user: &UserId, steps: &[CheckIn]) -> Result<(), TrajectoryViolation> {
    if steps.is_empty() {
        return Err(TrajectoryViolation::Empty);
    }
    for (index, step) in steps.iter().enumerate() {
        if &step.user != user {
            return Err(TrajectoryViolation::MixedUsers { index });
        }
        if index > 0 && step.timestamp < steps[index - 1].timestamp {
            return Err(TrajectoryViolation::NonMonotonicTimestamps { index });
        }
    }
    Ok(())
}

/// Chronologically ordered check-ins of one user, optionally labelled with
/// the POI visited next.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    user: UserId,
    steps: Vec<CheckIn>,
    target: Option<PoiId>,
}

impl Trajectory {
    pub fn new(
        user: UserId,
        steps: Vec<CheckIn>,
        target: Option<PoiId>,
    ) -> Result<Self, TrajectoryViolation> {
        validate_trajectory(&user, &steps)?;
        Ok(Self {
            user,
            steps,
            target,
        })
    }

    pub fn user(&self) -> &UserId {
        &self.user
    }

    pub fn steps(&self) -> &[CheckIn] {
        &self.steps
    }

    pub fn target(&self) -> Option<&PoiId> {
        self.target.as_ref()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.steps[0].timestamp
    }

    pub fn last(&self) -> &CheckIn {
        self.steps.last().expect("trajectory is non-empty")
    }

    pub fn points(&self) -> Vec<GeoPoint> {
        self.steps.iter().map(|s| s.point).collect()
    }

    pub fn pois(&self) -> impl Iterator<Item = &PoiId> {
        self.steps.iter().map(|s| &s.poi)
    }

    pub fn validate(&self) -> Result<(), TrajectoryViolation> {
        validate_trajectory(&self.user, &self.steps)
    }

    pub fn with_target(mut self, target: PoiId) -> Self {
        self.target = Some(target);
        self
    }

    /// Removes the final step and returns it. Fails if only one step remains.
    pub(crate) fn pop_last(&mut self) -> Option<CheckIn> {
        if self.steps.len() < 2 {
            return None;
        }
        self.steps.pop()
    }

    /// Keeps only the steps for which `keep` holds. Order is preserved, so
    /// the result is still valid unless it becomes empty.
    pub(crate) fn retain_steps(&mut self, keep: impl FnMut(&CheckIn) -> bool) {
        self.steps.retain(keep);
    }
}

/// A retrieved database trajectory together with its retrieval and
/// reranking scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextExample {
    /// Position of the trajectory in the database.
    pub index: usize,
    pub trajectory: Trajectory,
    pub similarity: f64,
    /// Set once the geographic reranker has run.
    pub dwdtw_cost: Option<f64>,
}

/// Final ordered list of distinct, known POIs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recommendation {
    items: Vec<PoiId>,
    rationale: String,
}

impl Recommendation {
    pub fn new(
        items: Vec<PoiId>,
        rationale: impl Into<String>,
        k_out: usize,
        vocabulary: &HashSet<PoiId>,
    ) -> Result<Self, ModelError> {
        if items.len() != k_out {
            return Err(ModelError::Recommendation(format!(
                "{} of {} items",
                items.len(),
                k_out
            )));
        }
        let mut seen = HashSet::with_capacity(items.len());
        for item in &items {
            if !seen.insert(item) {
                return Err(ModelError::Recommendation(format!("duplicate id {item}")));
            }
            if !vocabulary.contains(item) {
                return Err(ModelError::Recommendation(format!("unknown id {item}")));
            }
        }
        Ok(Self {
            items,
            rationale: rationale.into(),
        })
    }

    pub fn items(&self) -> &[PoiId] {
        &self.items
    }

    pub fn rationale(&self) -> &str {
        &self.rationale
    }

    /// 1-based position of `poi`, if present.
    pub fn rank_of(&self, poi: &PoiId) -> Option<usize> {
        self.items.iter().position(|p| p == poi).map(|i| i + 1)
    }
}
