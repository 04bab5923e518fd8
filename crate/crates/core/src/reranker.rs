//! Geographic reranking of retrieved trajectories.
//!
//! Candidates are scored with a recency-weighted dynamic time warping cost:
//! every matched pair `(n, l)` costs `rho^(N - n) * haversine(x_n, y_l)`, so
//! the query's latest check-ins dominate the alignment. The warping path obeys
//! the usual DTW constraints (both sequences start and end together, indices
//! never decrease, steps advance by at most one on each axis). Costs are not
//! normalised by path length unless asked to.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GeoPoint, Trajectory};
use crate::retriever::RetrievalResult;

pub const MEAN_EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Error, PartialEq)]
pub enum RerankError {
    #[error("cannot align an empty sequence")]
    EmptySequence,
    #[error("expected {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("invalid reranker config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GdrConfig {
    pub rho: f64,
    pub earth_radius_km: f64,
    /// Divide the cost by the optimal path length.
    pub normalize_by_path: bool,
}

impl Default for GdrConfig {
    fn default() -> Self {
        Self {
            rho: 0.8,
            earth_radius_km: MEAN_EARTH_RADIUS_KM,
            normalize_by_path: false,
        }
    }
}

impl GdrConfig {
    pub fn with_rho(rho: f64) -> Self {
        Self {
            rho,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RerankError> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(RerankError::Config(format!(
                "rho {} not in (0, 1)",
                self.rho
            )));
        }
        if !(self.earth_radius_km.is_finite() && self.earth_radius_km > 0.0) {
            return Err(RerankError::Config(format!(
                "earth radius {} must be positive",
                self.earth_radius_km
            )));
        }
        Ok(())
    }
}

/// Great-circle distance in kilometres.
pub fn haversine(a: GeoPoint, b: GeoPoint, radius_km: f64) -> f64 {
    let (phi_a, phi_b) = (a.lat().to_radians(), b.lat().to_radians());
    let d_phi = phi_b - phi_a;
    let d_lambda = (b.lon() - a.lon()).to_radians();
    let h =
        (d_phi / 2.0).sin().powi(2) + phi_a.cos() * phi_b.cos() * (d_lambda / 2.0).sin().powi(2);
    2.0 * radius_km * h.sqrt().clamp(0.0, 1.0).asin()
}

/// `rho^(N - n)` for `n = 1..=N`; the last weight is exactly 1.
pub fn decay_weights(n_steps: usize, rho: f64) -> Vec<f64> {
    (1..=n_steps)
        .map(|n| rho.powi((n_steps - n) as i32))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentCost {
    pub cost: f64,
    /// Matched pairs on one optimal warping path.
    pub path_length: usize,
}

/// Weighted DTW between a query and a candidate coordinate sequence. Weights
/// are indexed by query position.
pub fn dwdtw_weighted(
    query: &[GeoPoint],
    candidate: &[GeoPoint],
    weights: &[f64],
    radius_km: f64,
) -> Result<AlignmentCost, RerankError> {
    let (n, l) = (query.len(), candidate.len());
    if n == 0 || l == 0 {
        return Err(RerankError::EmptySequence);
    }
    if weights.len() != n {
        return Err(RerankError::WeightCount {
            expected: n,
            got: weights.len(),
        });
    }

    // acc[i][j]: cheapest cost of a path ending at (i, j); len[i][j]: its
    // length along the preferred predecessor.
    let mut acc = vec![vec![f64::INFINITY; l]; n];
    let mut len = vec![vec![0usize; l]; n];
    for i in 0..n {
        for j in 0..l {
            let cell = weights[i] * haversine(query[i], candidate[j], radius_km);
            if i == 0 && j == 0 {
                acc[0][0] = cell;
                len[0][0] = 1;
                continue;
            }
            // Preference on ties: diagonal, then (i - 1, j), then (i, j - 1).
            let mut best: Option<(f64, usize)> = None;
            let preds = [
                (i > 0 && j > 0).then(|| (i - 1, j - 1)),
                (i > 0).then(|| (i - 1, j)),
                (j > 0).then(|| (i, j - 1)),
            ];
            for (pi, pj) in preds.into_iter().flatten() {
                if best.is_none_or(|(c, _)| acc[pi][pj] < c) {
                    best = Some((acc[pi][pj], len[pi][pj]));
                }
            }
            let (prev, prev_len) = best.expect("at least one predecessor");
            acc[i][j] = cell + prev;
            len[i][j] = prev_len + 1;
        }
    }
    Ok(AlignmentCost {
        cost: acc[n - 1][l - 1],
        path_length: len[n - 1][l - 1],
    })
}

pub fn dwdtw(
    q: &Trajectory,
    c: &Trajectory,
    cfg: &GdrConfig,
) -> Result<AlignmentCost, RerankError> {
    let weights = decay_weights(q.len(), cfg.rho);
    dwdtw_weighted(&q.points(), &c.points(), &weights, cfg.earth_radius_km)
}

/// Reorders candidates by ascending DWDTW cost using the decay weights from
/// `cfg`.
pub fn rerank(
    q: &Trajectory,
    candidates: RetrievalResult,
    cfg: &GdrConfig,
) -> Result<RetrievalResult, RerankError> {
    cfg.validate()?;
    let weights = decay_weights(q.len(), cfg.rho);
    rerank_with_weights(q, candidates, &weights, cfg)
}

/// Same as [`rerank`] with explicit per-step query weights.
///
/// Ties on cost fall back to higher retrieval similarity, then to the
/// incoming order.
pub fn rerank_with_weights(
    q: &Trajectory,
    candidates: RetrievalResult,
    weights: &[f64],
    cfg: &GdrConfig,
) -> Result<RetrievalResult, RerankError> {
    let query = q.points();
    let mut scored = Vec::with_capacity(candidates.entries.len());
    for (rank, mut entry) in candidates.entries.into_iter().enumerate() {
        let a = dwdtw_weighted(
            &query,
            &entry.trajectory.points(),
            weights,
            cfg.earth_radius_km,
        )?;
        let cost = if cfg.normalize_by_path {
            a.cost / a.path_length as f64
        } else {
            a.cost
        };
        entry.dwdtw_cost = Some(cost);
        scored.push((rank, entry));
    }
    scored.sort_by(|(ra, a), (rb, b)| {
        let (ca, cb) = (a.dwdtw_cost.unwrap(), b.dwdtw_cost.unwrap());
        ca.total_cmp(&cb)
            .then(b.similarity.total_cmp(&a.similarity))
            .then(ra.cmp(rb))
    });
    Ok(RetrievalResult {
        entries: scored.into_iter().map(|(_, e)| e).collect(),
    })
}
