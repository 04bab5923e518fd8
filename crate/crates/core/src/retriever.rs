//! TF-IDF trajectory embedding and exhaustive cosine top-k retrieval.
//!
//! Each trajectory is a document whose tokens are the POI ids it visits.
//! Inverse document frequency is smoothed, `ln((1 + M) / (1 + df)) + 1`, and
//! every vector is L2-normalised so that a dot product is a cosine.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ContextExample, PoiId, Trajectory};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RetrieverError {
    #[error("cannot fit a TF-IDF model on an empty database")]
    EmptyDatabase,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("model was fitted on {model} documents but the database has {database}")]
    DatabaseMismatch { model: usize, database: usize },
}

/// Term-frequency weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TfScheme {
    /// Raw occurrence count.
    #[default]
    Raw,
    /// `ln(1 + count)`.
    Sublinear,
}

impl TfScheme {
    fn weight(self, count: usize) -> f64 {
        match self {
            TfScheme::Raw => count as f64,
            TfScheme::Sublinear => (count as f64).ln_1p(),
        }
    }
}

/// Sparse vector as `(dimension, weight)` pairs sorted by dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector(Vec<(usize, f64)>);

impl SparseVector {
    pub fn entries(&self) -> &[(usize, f64)] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.0, &other.0);
        let mut acc = 0.0;
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                Ordering::Less => i += 1,
                Ordering::Greater => j += 1,
                Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

/// One token per check-in: the POI id string, order preserved.
pub fn tokenize(t: &Trajectory) -> Vec<&str> {
    t.pois().map(PoiId::as_str).collect()
}

#[derive(Debug, Clone)]
pub struct TfIdfModel {
    vocab_index: HashMap<String, usize>,
    terms: Vec<String>,
    idf: Vec<f64>,
    doc_vectors: Vec<SparseVector>,
    tf: TfScheme,
}

#[derive(Serialize)]
struct ModelDump<'a> {
    vocab: &'a [String],
    idf: &'a [f64],
}

impl TfIdfModel {
    pub fn fit(database: &[Trajectory]) -> Result<Self, RetrieverError> {
        Self::fit_with(database, TfScheme::Raw)
    }

    pub fn fit_with(database: &[Trajectory], tf: TfScheme) -> Result<Self, RetrieverError> {
        if database.is_empty() {
            return Err(RetrieverError::EmptyDatabase);
        }
        let mut vocab_index: HashMap<String, usize> = HashMap::new();
        let mut terms = Vec::new();
        let mut df: Vec<usize> = Vec::new();
        let mut counts: Vec<Vec<(usize, usize)>> = Vec::with_capacity(database.len());

        for t in database {
            let mut doc: HashMap<usize, usize> = HashMap::new();
            for token in tokenize(t) {
                let idx = *vocab_index.entry(token.to_string()).or_insert_with(|| {
                    terms.push(token.to_string());
                    df.push(0);
                    terms.len() - 1
                });
                *doc.entry(idx).or_default() += 1;
            }
            for &idx in doc.keys() {
                df[idx] += 1;
            }
            let mut doc: Vec<_> = doc.into_iter().collect();
            doc.sort_unstable_by_key(|&(idx, _)| idx);
            counts.push(doc);
        }

        let m = database.len() as f64;
        let idf: Vec<f64> = df
            .iter()
            .map(|&d| ((1.0 + m) / (1.0 + d as f64)).ln() + 1.0)
            .collect();
        let mut model = Self {
            vocab_index,
            terms,
            idf,
            doc_vectors: Vec::new(),
            tf,
        };
        model.doc_vectors = counts.iter().map(|c| model.weigh(c)).collect();
        Ok(model)
    }

    fn weigh(&self, counts: &[(usize, usize)]) -> SparseVector {
        let raw: Vec<(usize, f64)> = counts
            .iter()
            .map(|&(idx, c)| (idx, self.tf.weight(c) * self.idf[idx]))
            .collect();
        let v = SparseVector(raw);
        let norm = v.norm();
        if norm == 0.0 {
            return SparseVector::default();
        }
        SparseVector(v.0.into_iter().map(|(i, w)| (i, w / norm)).collect())
    }

    /// Embeds an arbitrary trajectory; tokens outside the vocabulary are
    /// dropped and an all-unknown query yields the zero vector.
    pub fn embed_query(&self, q: &Trajectory) -> SparseVector {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for token in tokenize(q) {
            if let Some(&idx) = self.vocab_index.get(token) {
                *counts.entry(idx).or_default() += 1;
            }
        }
        let mut counts: Vec<_> = counts.into_iter().collect();
        counts.sort_unstable_by_key(|&(idx, _)| idx);
        self.weigh(&counts)
    }

    pub fn doc_vector(&self, i: usize) -> &SparseVector {
        &self.doc_vectors[i]
    }

    pub fn num_docs(&self) -> usize {
        self.doc_vectors.len()
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.vocab_index.get(term).map(|&i| self.idf[i])
    }

    pub fn vocabulary_len(&self) -> usize {
        self.terms.len()
    }

    /// JSON `{vocab, idf}` for inspection.
    pub fn dump_json(&self) -> String {
        serde_json::to_string(&ModelDump {
            vocab: &self.terms,
            idf: &self.idf,
        })
        .expect("plain data serializes")
    }

    /// Cosine similarity of `q` against every database document.
    pub fn scores(&self, q: &Trajectory) -> Vec<f64> {
        let v = self.embed_query(q);
        self.doc_vectors
            .iter()
            .map(|d| v.dot(d).clamp(0.0, 1.0))
            .collect()
    }

    /// Top-k database entries by cosine similarity, ties broken by ascending
    /// database index.
    pub fn retrieve(
        &self,
        database: &[Trajectory],
        q: &Trajectory,
        k: usize,
    ) -> Result<RetrievalResult, RetrieverError> {
        if k == 0 {
            return Err(RetrieverError::ZeroK);
        }
        if database.len() != self.doc_vectors.len() {
            return Err(RetrieverError::DatabaseMismatch {
                model: self.doc_vectors.len(),
                database: database.len(),
            });
        }
        let scores = self.scores(q);
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        order.truncate(k);
        let entries = order
            .into_iter()
            .map(|i| ContextExample {
                index: i,
                trajectory: database[i].clone(),
                similarity: scores[i],
                dwdtw_cost: None,
            })
            .collect();
        Ok(RetrievalResult { entries })
    }
}

/// Retrieved context in prompt order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalResult {
    pub entries: Vec<ContextExample>,
}

impl RetrievalResult {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }
}
