//! Entity memory graph.
//!
//! Each node holds a label embedding fixed at creation, a running-mean
//! position and the last time the entity was seen. A labelled sighting
//! updates an existing node when both gates hold:
//!
//! * semantic: `cos(node.embedding, label.embedding) > δ_E`
//! * spatial:  `‖node.pose − obs.pose‖₂ ≤ δ_P` over x, y, z
//!
//! Labels in one frame are grouped by transitive similarity. A group of `k`
//! labels with `h` matching nodes updates all `h` and creates `k − h` when
//! `k ≥ h`, otherwise updates only the `k` nearest.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::unit_similarity;
use crate::model::{
    validate_observation, Config, Embedding, Observation, Pose, Timestamp, ValidationResult,
    Violation,
};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("no such node: {0}")]
    NoSuchNode(NodeId),
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("non-finite pose")]
    NonFinitePose,
    #[error("inconsistent graph state: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EntityNode<S: Scalar> {
    pub id: NodeId,
    /// Label text as first observed.
    pub label: String,
    pub embedding: Embedding,
    /// Running mean of matched sighting positions; yaw of the creating sighting.
    pub pose: Pose<S>,
    pub first_seen: Timestamp<S>,
    pub last_seen: Timestamp<S>,
    pub obs_count: u64,
}

impl<S: Scalar> EntityNode<S> {
    /// Folds one more sighting into the node: cumulative mean on x, y, z,
    /// yaw untouched, `last_seen` advanced to the later of the two times.
    pub fn apply_update(&self, p_new: &Pose<S>, t_new: Timestamp<S>) -> Result<Self, GraphError> {
        let mut next = self.clone();
        next.fold(p_new, t_new)?;
        Ok(next)
    }

    fn fold(&mut self, p_new: &Pose<S>, t_new: Timestamp<S>) -> Result<(), GraphError> {
        if !(p_new.x.is_finite() && p_new.y.is_finite() && p_new.z.is_finite()) {
            return Err(GraphError::NonFinitePose);
        }
        let n = S::of(self.obs_count as f64);
        let n1 = n + S::one();
        self.pose.x = (n * self.pose.x + p_new.x) / n1;
        self.pose.y = (n * self.pose.y + p_new.y) / n1;
        self.pose.z = (n * self.pose.z + p_new.z) / n1;
        self.obs_count += 1;
        self.last_seen = self.last_seen.max(t_new);
        Ok(())
    }
}

/// Node ids touched by one ingested observation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub created: Vec<NodeId>,
    pub updated: Vec<NodeId>,
    pub labels_processed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryGraph<S: Scalar> {
    cfg: Config,
    nodes: Vec<EntityNode<S>>,
    next_id: u64,
    /// Node pairs seen together in one frame. Metadata only; no tool reads it.
    edges: BTreeSet<(NodeId, NodeId)>,
}

impl<S: Scalar> MemoryGraph<S> {
    pub fn new(cfg: Config) -> Self {
        Self {
            cfg,
            nodes: Vec::new(),
            next_id: 1,
            edges: BTreeSet::new(),
        }
    }

    /// Rebuilds a graph from persisted parts, checking id ordering.
    pub fn from_parts(
        cfg: Config,
        nodes: Vec<EntityNode<S>>,
        edges: BTreeSet<(NodeId, NodeId)>,
        next_id: u64,
    ) -> Result<Self, GraphError> {
        let mut prev = 0u64;
        for n in &nodes {
            if n.id.0 <= prev {
                return Err(GraphError::Corrupt(format!(
                    "node ids not increasing at {}",
                    n.id
                )));
            }
            if n.embedding.dim() != cfg.embedding_dim {
                return Err(GraphError::DimensionMismatch {
                    expected: cfg.embedding_dim,
                    actual: n.embedding.dim(),
                });
            }
            if n.obs_count == 0 {
                return Err(GraphError::Corrupt(format!(
                    "node {} has zero observations",
                    n.id
                )));
            }
            prev = n.id.0;
        }
        if next_id <= prev {
            return Err(GraphError::Corrupt(format!(
                "next id {next_id} not past last node {prev}"
            )));
        }
        Ok(Self {
            cfg,
            nodes,
            next_id,
            edges,
        })
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn get_node(&self, id: NodeId) -> Result<&EntityNode<S>, GraphError> {
        self.nodes
            .binary_search_by_key(&id, |n| n.id)
            .map(|i| &self.nodes[i])
            .map_err(|_| GraphError::NoSuchNode(id))
    }

    pub fn all_nodes(&self) -> impl Iterator<Item = &EntityNode<S>> {
        self.nodes.iter()
    }

    /// Nodes in creation (id) order.
    pub fn nodes(&self) -> &[EntityNode<S>] {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(NodeId, NodeId)> {
        &self.edges
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    /// Nodes passing both gates for `(e, p)`, nearest first, id tie-break.
    pub fn find_matches(&self, e: &Embedding, p: &Pose<S>) -> Result<Vec<NodeId>, GraphError> {
        self.check_dim(e)?;
        Ok(self
            .matching_slots(e, p, &[])
            .into_iter()
            .map(|i| self.nodes[i].id)
            .collect())
    }

    fn check_dim(&self, e: &Embedding) -> Result<(), GraphError> {
        if e.dim() != self.cfg.embedding_dim {
            return Err(GraphError::DimensionMismatch {
                expected: self.cfg.embedding_dim,
                actual: e.dim(),
            });
        }
        Ok(())
    }

    /// Slots of matching nodes not yet claimed, sorted by (distance, id).
    fn matching_slots(&self, e: &Embedding, p: &Pose<S>, claimed: &[bool]) -> Vec<usize> {
        let delta_p = S::of(self.cfg.delta_p);
        let mut hits: Vec<(S, usize)> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| !claimed.get(*i).copied().unwrap_or(false))
            .filter_map(|(i, n)| {
                let d = n.pose.distance(p);
                if d > delta_p {
                    return None;
                }
                let sim = unit_similarity(&n.embedding, e).ok()?;
                (sim > self.cfg.delta_e).then_some((d, i))
            })
            .collect();
        // slot order equals id order
        hits.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .expect("finite distances")
                .then(a.1.cmp(&b.1))
        });
        hits.into_iter().map(|(_, i)| i).collect()
    }

    /// Groups label indices by transitive `sim > δ_E`, groups ordered by their
    /// first label and members in observation order.
    fn group_labels(&self, obs: &Observation<S>) -> Vec<Vec<usize>> {
        let n = obs.labels.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let sim = unit_similarity(&obs.labels[i].embedding, &obs.labels[j].embedding)
                    .expect("validated dimensions");
                if sim > self.cfg.delta_e {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        // keep the smaller index as root so the root is the first label
                        let (lo, hi) = if ri < rj { (ri, rj) } else { (rj, ri) };
                        parent[hi] = lo;
                    }
                }
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut root_slot: Vec<Option<usize>> = vec![None; n];
        for i in 0..n {
            let r = find(&mut parent, i);
            match root_slot[r] {
                Some(g) => groups[g].push(i),
                None => {
                    root_slot[r] = Some(groups.len());
                    groups.push(vec![i]);
                }
            }
        }
        groups
    }

    /// Folds one observation into the graph.
    ///
    /// Matching for every group runs against the graph as it stood before this
    /// observation; a node is claimed by at most one group per observation.
    /// The graph is untouched when an error is returned.
    pub fn ingest_observation(&mut self, obs: &Observation<S>) -> Result<IngestReport, GraphError> {
        check_observation(obs, &self.cfg)?;

        let groups = self.group_labels(obs);
        let mut claimed = vec![false; self.nodes.len()];
        let mut updates: Vec<usize> = Vec::new();
        let mut creations: Vec<usize> = Vec::new();
        for group in &groups {
            let rep = group[0];
            let matched = self.matching_slots(&obs.labels[rep].embedding, &obs.pose, &claimed);
            let (k, h) = (group.len(), matched.len());
            let take = k.min(h);
            for &slot in &matched[..take] {
                claimed[slot] = true;
                updates.push(slot);
            }
            creations.extend(std::iter::repeat_n(rep, k.saturating_sub(h)));
        }

        let mut report = IngestReport {
            labels_processed: obs.labels.len(),
            ..Default::default()
        };
        for slot in updates {
            self.nodes[slot].fold(&obs.pose, obs.time)?;
            report.updated.push(self.nodes[slot].id);
        }
        for rep in creations {
            let id = NodeId(self.next_id);
            self.next_id += 1;
            let label = &obs.labels[rep];
            self.nodes.push(EntityNode {
                id,
                label: label.text.clone(),
                embedding: label.embedding.clone(),
                pose: obs.pose,
                first_seen: obs.time,
                last_seen: obs.time,
                obs_count: 1,
            });
            report.created.push(id);
        }

        let mut touched: Vec<NodeId> = report
            .created
            .iter()
            .chain(&report.updated)
            .copied()
            .collect();
        touched.sort();
        for (i, &a) in touched.iter().enumerate() {
            for &b in &touched[i + 1..] {
                self.edges.insert((a, b));
            }
        }
        Ok(report)
    }
}

/// Rejects an observation that fails validation against `cfg`.
pub(crate) fn check_observation<S: Scalar>(
    obs: &Observation<S>,
    cfg: &Config,
) -> Result<(), GraphError> {
    let v: ValidationResult = validate_observation(obs, cfg);
    if v.is_ok() {
        return Ok(());
    }
    if let Some(Violation::DimensionMismatch {
        expected, actual, ..
    }) = v
        .violations
        .iter()
        .find(|v| matches!(v, Violation::DimensionMismatch { .. }))
    {
        return Err(GraphError::DimensionMismatch {
            expected: *expected,
            actual: *actual,
        });
    }
    Err(GraphError::InvalidObservation(v.to_string()))
}
