//! On-graph retrieval tools: semantic, positional and temporal top-k.
//!
//! All three are exact scans with a bounded heap. Ties on score break by
//! ascending node id.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{embed_text, unit_similarity, EmbeddingError, EmbeddingProvider};
use crate::graph::{EntityNode, MemoryGraph, NodeId};
use crate::model::{distance_xyz, ClockTime, Embedding, ModelError, Pose, Timestamp};
use crate::scalar::Scalar;
use crate::topk::TopK;

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("query must not be empty")]
    EmptyQuery,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("non-finite coordinates")]
    NonFinite,
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Time(#[from] ModelError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// A node returned by a graph tool. `score` is cosine similarity for the
/// semantic tool, meters for the positional tool and seconds for the
/// temporal tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RetrievalHit<S: Scalar> {
    pub node_id: NodeId,
    pub label: String,
    pub pose: Pose<S>,
    pub last_seen: Timestamp<S>,
    pub score: S,
}

impl<S: Scalar> RetrievalHit<S> {
    fn from_node(n: &EntityNode<S>, score: S) -> Self {
        Self {
            node_id: n.id,
            label: n.label.clone(),
            pose: n.pose,
            last_seen: n.last_seen,
            score,
        }
    }
}

fn collect<S: Scalar>(
    g: &MemoryGraph<S>,
    k: usize,
    key: impl Fn(&EntityNode<S>) -> S,
    negate: bool,
) -> Vec<RetrievalHit<S>> {
    let nodes = g.nodes();
    let mut top = TopK::new(k);
    for (slot, n) in nodes.iter().enumerate() {
        top.push(key(n), n.id.0, slot);
    }
    top.into_sorted()
        .into_iter()
        .map(|(key, slot)| RetrievalHit::from_node(&nodes[slot], if negate { -key } else { key }))
        .collect()
}

/// Embeds `query` and returns the `k` nodes most similar to it. No
/// similarity floor is applied.
pub fn semantic_search<S: Scalar, P: EmbeddingProvider + ?Sized>(
    g: &MemoryGraph<S>,
    provider: &P,
    query: &str,
    k: usize,
) -> Result<Vec<RetrievalHit<S>>, ToolError> {
    if query.trim().is_empty() {
        return Err(ToolError::EmptyQuery);
    }
    if k == 0 {
        return Err(ToolError::ZeroK);
    }
    let q = embed_text(provider, query)?;
    semantic_search_embedding(g, &q, k)
}

/// [`semantic_search`] with a precomputed query embedding.
pub fn semantic_search_embedding<S: Scalar>(
    g: &MemoryGraph<S>,
    q: &Embedding,
    k: usize,
) -> Result<Vec<RetrievalHit<S>>, ToolError> {
    if k == 0 {
        return Err(ToolError::ZeroK);
    }
    let expected = g.config().embedding_dim;
    if q.dim() != expected {
        return Err(ToolError::DimensionMismatch {
            expected,
            actual: q.dim(),
        });
    }
    Ok(collect(
        g,
        k,
        |n| -S::of(unit_similarity(&n.embedding, q).unwrap_or(-1.0)),
        true,
    ))
}

/// The `k` nodes nearest to `(x, y, z)`.
pub fn positional_search<S: Scalar>(
    g: &MemoryGraph<S>,
    x: S,
    y: S,
    z: S,
    k: usize,
) -> Result<Vec<RetrievalHit<S>>, ToolError> {
    if !(x.is_finite() && y.is_finite() && z.is_finite()) {
        return Err(ToolError::NonFinite);
    }
    if k == 0 {
        return Err(ToolError::ZeroK);
    }
    Ok(collect(g, k, |n| distance_xyz(&n.pose, x, y, z), false))
}

/// The `k` nodes whose last sighting is closest to `hh:mm:ss` after the
/// session epoch.
pub fn temporal_search<S: Scalar>(
    g: &MemoryGraph<S>,
    hh: u32,
    mm: u32,
    ss: f64,
    k: usize,
) -> Result<Vec<RetrievalHit<S>>, ToolError> {
    let clock = ClockTime::new(hh, mm, ss)?;
    temporal_search_at(g, clock.to_timestamp(), k)
}

/// [`temporal_search`] with the reference time in session seconds.
pub fn temporal_search_at<S: Scalar>(
    g: &MemoryGraph<S>,
    t: Timestamp<S>,
    k: usize,
) -> Result<Vec<RetrievalHit<S>>, ToolError> {
    if !t.secs().is_finite() {
        return Err(ToolError::NonFinite);
    }
    if k == 0 {
        return Err(ToolError::ZeroK);
    }
    Ok(collect(g, k, |n| n.last_seen.abs_diff(t), false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{FixtureProvider, HashProvider};
    use crate::model::{Config, Label, Observation};

    const DIM: usize = 8;

    fn graph_with(
        nodes: &[(&str, f64, f64)],
        provider: &dyn EmbeddingProvider,
    ) -> MemoryGraph<f64> {
        let mut g = MemoryGraph::new(Config {
            embedding_dim: DIM,
            ..Config::default()
        });
        for (label, x, t) in nodes {
            g.ingest_observation(&Observation {
                frame_id: label.to_string(),
                pose: Pose::at(*x, 0.0, 0.0),
                time: Timestamp::new(*t).unwrap(),
                labels: vec![Label {
                    text: label.to_string(),
                    embedding: provider.embed(label).unwrap(),
                }],
                caption: None,
            })
            .unwrap();
        }
        g
    }

    #[test]
    fn semantic_exact_label_scores_one() {
        let mut f = FixtureProvider::new(HashProvider::new(1, DIM));
        f.insert("door", vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
            .unwrap();
        let g = graph_with(&[("door", 0.0, 0.0)], &f);
        let hits = semantic_search(&g, &f, "door", 5).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].label, "door");
        assert_eq!(hits[0].score, 1.0);
    }

    #[test]
    fn semantic_on_empty_graph() {
        let p = HashProvider::new(1, DIM);
        let g = graph_with(&[], &p);
        assert!(semantic_search(&g, &p, "anything", 3).unwrap().is_empty());
        assert!(matches!(
            semantic_search(&g, &p, "", 3),
            Err(ToolError::EmptyQuery)
        ));
        assert!(matches!(
            semantic_search(&g, &p, "x", 0),
            Err(ToolError::ZeroK)
        ));
    }

    #[test]
    fn positional_order() {
        let p = HashProvider::new(1, DIM);
        let g = graph_with(
            &[
                ("a", 9.0, 0.0),
                ("b", 1.0, 0.0),
                ("c", 100.0, 0.0),
                ("d", -4.0, 0.0),
            ],
            &p,
        );
        let hits = positional_search(&g, 0.0, 0.0, 0.0, 2).unwrap();
        assert_eq!(
            hits.iter().map(|h| h.label.as_str()).collect::<Vec<_>>(),
            ["b", "d"]
        );
        assert_eq!(hits[0].score, 1.0);
        let exact = positional_search(&g, 9.0, 0.0, 0.0, 1).unwrap();
        assert_eq!((exact[0].label.as_str(), exact[0].score), ("a", 0.0));
        assert!(matches!(
            positional_search(&g, f64::NAN, 0.0, 0.0, 1),
            Err(ToolError::NonFinite)
        ));
    }

    #[test]
    fn temporal_order() {
        let p = HashProvider::new(1, DIM);
        let g = graph_with(
            &[("a", 0.0, 10.0), ("b", 50.0, 100.0), ("c", 100.0, 500.0)],
            &p,
        );
        let hits = temporal_search(&g, 0, 1, 40.0, 1).unwrap();
        assert_eq!((hits[0].label.as_str(), hits[0].score), ("b", 0.0));
        let first = temporal_search(&g, 0, 0, 0.0, 3).unwrap();
        assert_eq!(first[0].label, "a");
        assert!(matches!(
            temporal_search(&g, 0, 61, 0.0, 1),
            Err(ToolError::Time(_))
        ));
        assert!(matches!(
            temporal_search(&g, 0, 0, 60.0, 1),
            Err(ToolError::Time(_))
        ));
        // hours past a day are fine
        assert_eq!(temporal_search(&g, 30, 0, 0.0, 1).unwrap()[0].label, "c");
    }
}
