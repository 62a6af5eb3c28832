//! Both stores behind one lock: the entity graph and the caption store.

use std::sync::Arc;

use parking_lot::{RwLock, RwLockReadGuard};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::captions::{CaptionError, CaptionStore, RecordId};
use crate::graph::{check_observation, GraphError, IngestReport, MemoryGraph};
use crate::model::{Config, ModelError, Observation};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Caption(#[from] CaptionError),
    #[error(transparent)]
    Config(#[from] ModelError),
}

/// What one observation did to the two stores.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationReport {
    pub graph: IngestReport,
    pub caption: Option<RecordId>,
}

/// Totals over an ingest run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub observations: usize,
    pub labels_processed: usize,
    pub nodes_created: usize,
    pub nodes_updated: usize,
    pub captions_inserted: usize,
    pub node_count: usize,
    pub caption_count: usize,
    pub wall_time_secs: f64,
}

impl IngestSummary {
    pub fn add(&mut self, r: &ObservationReport) {
        self.observations += 1;
        self.labels_processed += r.graph.labels_processed;
        self.nodes_created += r.graph.created.len();
        self.nodes_updated += r.graph.updated.len();
        self.captions_inserted += usize::from(r.caption.is_some());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState<S: Scalar> {
    pub graph: MemoryGraph<S>,
    pub captions: CaptionStore<S>,
}

impl<S: Scalar> MemoryState<S> {
    pub fn new(cfg: Config) -> Result<Self, MemoryError> {
        cfg.validate()?;
        let dim = cfg.embedding_dim;
        Ok(Self {
            graph: MemoryGraph::new(cfg),
            captions: CaptionStore::new(dim),
        })
    }

    pub fn config(&self) -> &Config {
        self.graph.config()
    }

    /// Ingests one frame into both stores. Frames without a caption only touch
    /// the graph. Nothing changes if the observation is rejected.
    pub fn ingest(&mut self, obs: &Observation<S>) -> Result<ObservationReport, MemoryError> {
        check_observation(obs, self.graph.config())?;
        let graph = self.graph.ingest_observation(obs)?;
        let caption = match &obs.caption {
            Some(c) if !c.text.trim().is_empty() => Some(self.captions.insert_caption(obs)?),
            _ => None,
        };
        Ok(ObservationReport { graph, caption })
    }

    pub fn ingest_all<'a, I>(&mut self, observations: I) -> Result<IngestSummary, MemoryError>
    where
        I: IntoIterator<Item = &'a Observation<S>>,
    {
        let start = std::time::Instant::now();
        let mut summary = IngestSummary::default();
        for obs in observations {
            summary.add(&self.ingest(obs)?);
        }
        summary.node_count = self.graph.node_count();
        summary.caption_count = self.captions.len();
        summary.wall_time_secs = start.elapsed().as_secs_f64();
        Ok(summary)
    }
}

/// Single-writer, many-reader handle. Each ingest takes the write lock for one
/// whole observation, so readers never see a half-applied frame.
#[derive(Debug, Clone)]
pub struct SharedMemory<S: Scalar> {
    inner: Arc<RwLock<MemoryState<S>>>,
}

impl<S: Scalar> SharedMemory<S> {
    pub fn new(state: MemoryState<S>) -> Self {
        Self {
            inner: Arc::new(RwLock::new(state)),
        }
    }

    pub fn read(&self) -> RwLockReadGuard<'_, MemoryState<S>> {
        self.inner.read()
    }

    pub fn ingest(&self, obs: &Observation<S>) -> Result<ObservationReport, MemoryError> {
        self.inner.write().ingest(obs)
    }

    /// Replaces the whole state, e.g. after loading a snapshot.
    pub fn replace(&self, state: MemoryState<S>) {
        *self.inner.write() = state;
    }

    pub fn snapshot(&self) -> MemoryState<S> {
        self.inner.read().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{EmbeddingProvider, HashProvider};
    use crate::model::{Caption, Label, Pose, Timestamp};

    fn frame(p: &HashProvider, i: usize, caption: bool) -> Observation<f64> {
        Observation {
            frame_id: format!("f{i}"),
            pose: Pose::at(i as f64, 0.0, 0.0),
            time: Timestamp::new(2.0 * i as f64).unwrap(),
            labels: vec![Label {
                text: "cup".into(),
                embedding: p.embed("cup").unwrap(),
            }],
            caption: caption.then(|| Caption {
                text: format!("frame {i}"),
                embedding: p.embed("frame").unwrap(),
            }),
        }
    }

    #[test]
    fn ingest_fills_both_stores() {
        let p = HashProvider::new(1, 16);
        let mut m = MemoryState::<f64>::new(Config {
            embedding_dim: 16,
            ..Config::default()
        })
        .unwrap();
        let frames: Vec<_> = (0..4).map(|i| frame(&p, i, i != 2)).collect();
        let s = m.ingest_all(&frames).unwrap();
        assert_eq!(s.observations, 4);
        assert_eq!(s.captions_inserted, 3);
        assert_eq!(s.node_count, 1);
        assert_eq!(s.nodes_updated, 3);
    }

    #[test]
    fn rejects_invalid_config() {
        assert!(MemoryState::<f64>::new(Config {
            subsample_period: 0.0,
            ..Config::default()
        })
        .is_err());
    }

    #[test]
    fn concurrent_readers_see_whole_frames() {
        let p = HashProvider::new(1, 16);
        let shared = SharedMemory::new(
            MemoryState::<f64>::new(Config {
                embedding_dim: 16,
                ..Config::default()
            })
            .unwrap(),
        );
        let reader = shared.clone();
        let handle = std::thread::spawn(move || {
            for _ in 0..200 {
                let s = reader.read();
                // every frame carries one label and one caption
                let obs: u64 = s.graph.nodes().iter().map(|n| n.obs_count).sum();
                assert_eq!(obs as usize, s.captions.len());
            }
        });
        for i in 0..200 {
            shared.ingest(&frame(&p, i % 3, true)).unwrap();
        }
        handle.join().unwrap();
        assert_eq!(shared.read().captions.len(), 200);
    }
}
