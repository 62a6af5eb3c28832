//! Append-only caption store with exact top-k queries by text similarity,
//! position and time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::unit_similarity;
use crate::model::{distance_xyz, Embedding, Observation, Pose, Timestamp};
use crate::scalar::Scalar;
use crate::topk::TopK;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaptionError {
    #[error("observation {0} has no caption text")]
    EmptyCaption(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite query")]
    NonFinite,
    #[error("inconsistent caption store: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecordId(pub u64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CaptionRecord<S: Scalar> {
    pub id: RecordId,
    pub text: String,
    pub embedding: Embedding,
    pub pose: Pose<S>,
    pub time: Timestamp<S>,
}

/// A ranked caption. `score` is cosine similarity, meters or seconds
/// depending on the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CaptionHit<S: Scalar> {
    pub record_id: RecordId,
    pub text: String,
    pub pose: Pose<S>,
    pub time: Timestamp<S>,
    pub score: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionStore<S: Scalar> {
    dim: usize,
    records: Vec<CaptionRecord<S>>,
}

impl<S: Scalar> CaptionStore<S> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            records: Vec::new(),
        }
    }

    pub fn from_records(dim: usize, records: Vec<CaptionRecord<S>>) -> Result<Self, CaptionError> {
        for (i, r) in records.iter().enumerate() {
            if r.id.0 != i as u64 + 1 {
                return Err(CaptionError::Corrupt(format!(
                    "record {} at position {}",
                    r.id.0, i
                )));
            }
            if r.embedding.dim() != dim {
                return Err(CaptionError::DimensionMismatch {
                    expected: dim,
                    actual: r.embedding.dim(),
                });
            }
        }
        Ok(Self { dim, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[CaptionRecord<S>] {
        &self.records
    }

    /// Appends the observation's caption; ids start at 1.
    pub fn insert_caption(&mut self, obs: &Observation<S>) -> Result<RecordId, CaptionError> {
        let caption = match &obs.caption {
            Some(c) if !c.text.trim().is_empty() => c,
            _ => return Err(CaptionError::EmptyCaption(obs.frame_id.clone())),
        };
        if caption.embedding.dim() != self.dim {
            return Err(CaptionError::DimensionMismatch {
                expected: self.dim,
                actual: caption.embedding.dim(),
            });
        }
        let id = RecordId(self.records.len() as u64 + 1);
        self.records.push(CaptionRecord {
            id,
            text: caption.text.clone(),
            embedding: caption.embedding.clone(),
            pose: obs.pose,
            time: obs.time,
        });
        Ok(id)
    }

    fn rank(&self, k: usize, key: impl Fn(&CaptionRecord<S>) -> S) -> Vec<(S, usize)> {
        let mut top = TopK::new(k);
        for (slot, r) in self.records.iter().enumerate() {
            top.push(key(r), r.id.0, slot);
        }
        top.into_sorted()
    }

    fn hits(&self, ranked: Vec<(S, usize)>, negate: bool) -> Vec<CaptionHit<S>> {
        ranked
            .into_iter()
            .map(|(key, slot)| {
                let r = &self.records[slot];
                CaptionHit {
                    record_id: r.id,
                    text: r.text.clone(),
                    pose: r.pose,
                    time: r.time,
                    score: if negate { -key } else { key },
                }
            })
            .collect()
    }

    /// Top-k by descending cosine similarity to `q`.
    pub fn query_text(&self, q: &Embedding, k: usize) -> Result<Vec<CaptionHit<S>>, CaptionError> {
        if k == 0 {
            return Err(CaptionError::ZeroK);
        }
        if q.dim() != self.dim {
            return Err(CaptionError::DimensionMismatch {
                expected: self.dim,
                actual: q.dim(),
            });
        }
        let ranked = self.rank(k, |r| {
            -S::of(unit_similarity(&r.embedding, q).unwrap_or(-1.0))
        });
        Ok(self.hits(ranked, true))
    }

    /// Top-k by ascending distance (x, y, z) to `p`.
    pub fn query_position(
        &self,
        p: &Pose<S>,
        k: usize,
    ) -> Result<Vec<CaptionHit<S>>, CaptionError> {
        if k == 0 {
            return Err(CaptionError::ZeroK);
        }
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return Err(CaptionError::NonFinite);
        }
        let ranked = self.rank(k, |r| distance_xyz(&r.pose, p.x, p.y, p.z));
        Ok(self.hits(ranked, false))
    }

    /// Top-k by ascending `|record.time − t|`.
    pub fn query_time(
        &self,
        t: Timestamp<S>,
        k: usize,
    ) -> Result<Vec<CaptionHit<S>>, CaptionError> {
        if k == 0 {
            return Err(CaptionError::ZeroK);
        }
        if !t.secs().is_finite() {
            return Err(CaptionError::NonFinite);
        }
        let ranked = self.rank(k, |r| r.time.abs_diff(t));
        Ok(self.hits(ranked, false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{EmbeddingProvider, HashProvider};
    use crate::model::Caption;

    fn obs(p: &HashProvider, text: &str, x: f64, t: f64) -> Observation<f64> {
        Observation {
            frame_id: format!("f{t}"),
            pose: Pose::at(x, 0.0, 0.0),
            time: Timestamp::new(t).unwrap(),
            labels: vec![],
            caption: Some(Caption {
                text: text.into(),
                embedding: p.embed(text).unwrap(),
            }),
        }
    }

    #[test]
    fn ids_count_from_one() {
        let p = HashProvider::new(3, 16);
        let mut s = CaptionStore::new(16);
        assert_eq!(
            s.insert_caption(&obs(&p, "a hallway", 0.0, 0.0)).unwrap(),
            RecordId(1)
        );
        assert_eq!(
            s.insert_caption(&obs(&p, "a lab", 1.0, 2.0)).unwrap(),
            RecordId(2)
        );
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn empty_caption_rejected() {
        let p = HashProvider::new(3, 16);
        let mut s = CaptionStore::new(16);
        let mut o = obs(&p, "x", 0.0, 0.0);
        o.caption = None;
        assert!(matches!(
            s.insert_caption(&o),
            Err(CaptionError::EmptyCaption(_))
        ));
        o.caption = Some(Caption {
            text: String::new(),
            embedding: p.embed("x").unwrap(),
        });
        assert!(s.insert_caption(&o).is_err());
        assert!(s.is_empty());
    }

    #[test]
    fn single_record_always_returned() {
        let p = HashProvider::new(3, 16);
        let mut s = CaptionStore::new(16);
        s.insert_caption(&obs(&p, "a door", 4.0, 8.0)).unwrap();
        assert_eq!(s.query_text(&p.embed("zzz").unwrap(), 5).unwrap().len(), 1);
        assert_eq!(
            s.query_position(&Pose::at(100.0, 0.0, 0.0), 5)
                .unwrap()
                .len(),
            1
        );
        assert_eq!(
            s.query_time(Timestamp::new(1e6).unwrap(), 5).unwrap().len(),
            1
        );
    }

    #[test]
    fn self_similarity_ranks_first() {
        let p = HashProvider::new(3, 32);
        let mut s = CaptionStore::new(32);
        for (i, t) in ["a", "b", "c", "d"].iter().enumerate() {
            s.insert_caption(&obs(&p, t, i as f64, i as f64)).unwrap();
        }
        let q = s.records()[2].embedding.clone();
        let hits = s.query_text(&q, 2).unwrap();
        assert_eq!(hits[0].record_id, RecordId(3));
        assert!((hits[0].score - 1.0).abs() < 1e-6);
        assert!(hits[0].score >= hits[1].score);
    }

    #[test]
    fn position_and_time_ordering() {
        let p = HashProvider::new(3, 8);
        let mut s = CaptionStore::new(8);
        for (x, t) in [(9.0, 0.0), (1.0, 50.0), (4.0, 20.0), (1.0, 30.0)] {
            s.insert_caption(&obs(&p, "scene", x, t)).unwrap();
        }
        let ids =
            |h: Vec<CaptionHit<f64>>| h.into_iter().map(|h| h.record_id.0).collect::<Vec<_>>();
        assert_eq!(
            ids(s.query_position(&Pose::at(0.0, 0.0, 0.0), 3).unwrap()),
            vec![2, 4, 3]
        );
        assert_eq!(
            ids(s.query_time(Timestamp::new(25.0).unwrap(), 2).unwrap()),
            vec![3, 4]
        );
    }

    #[test]
    fn zero_k_rejected() {
        let s = CaptionStore::<f64>::new(4);
        assert_eq!(s.query_time(Timestamp::zero(), 0), Err(CaptionError::ZeroK));
        assert_eq!(
            s.query_position(&Pose::at(0.0, 0.0, 0.0), 0),
            Err(CaptionError::ZeroK)
        );
    }
}
