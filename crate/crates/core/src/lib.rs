//! Zero-shot next-POI recommendation: TF-IDF trajectory retrieval, geographic
//! reranking with recency-weighted DTW, LLM prompting and agentic
//! self-rectification, plus dataset preprocessing and ranking metrics.

pub mod ingestion;
pub mod model;

pub use model::{CheckIn, ContextExample, GeoPoint, PoiId, Recommendation, Trajectory, UserId};
pub mod eval;
pub mod llm;
pub mod parser;
pub mod pipeline;
pub mod prompt;
pub mod rectifier;
pub mod reranker;
pub mod retriever;
pub mod synth;
