//! Synthetic sessions with known ground truth.
//!
//! A [`WorldSpec`] places labelled entities and a timed trajectory. The
//! generator walks the trajectory at the sampling period, reports every
//! entity within the visibility radius (optionally under a random synonym
//! and with pose jitter) and emits question items whose answers are the true
//! entity positions and last-visible times.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{unit_similarity, FixtureProvider, HashProvider};
use crate::eval::{QaItem, QaKind};
use crate::model::{Embedding, Pose, Timestamp};
use crate::replay::{LogPose, LogRecord};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("world has no entities")]
    EmptyWorld,
    #[error("trajectory needs at least two waypoints with increasing time")]
    BadTrajectory,
    #[error("invalid world: {0}")]
    Invalid(String),
}

/// Synonym triples; the first entry is the canonical label.
pub const VOCABULARY: &[[&str; 3]] = &[
    ["hydrant", "fire hydrant", "water hydrant"],
    ["bench", "park bench", "wooden bench"],
    ["bicycle", "bike", "push bike"],
    ["trash can", "garbage bin", "waste bin"],
    ["door", "doorway", "entrance door"],
    ["chair", "office chair", "desk chair"],
    ["table", "desk", "work table"],
    ["cup", "mug", "coffee cup"],
    ["plant", "potted plant", "houseplant"],
    ["laptop", "notebook computer", "portable computer"],
    ["stop sign", "traffic sign", "road sign"],
    ["car", "automobile", "sedan"],
    ["ladder", "step ladder", "stepladder"],
    ["lamp", "floor lamp", "light fixture"],
    ["backpack", "rucksack", "knapsack"],
    ["monitor", "computer screen", "display"],
    ["sofa", "couch", "settee"],
    ["printer", "laser printer", "copier"],
    ["whiteboard", "dry-erase board", "marker board"],
    ["fountain", "water fountain", "drinking fountain"],
    ["forklift", "lift truck", "pallet truck"],
    ["shelf", "bookshelf", "shelving unit"],
    ["box", "cardboard box", "carton"],
    ["umbrella", "parasol", "brolly"],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySpec {
    /// Canonical label first, then synonyms.
    pub synonyms: Vec<String>,
    pub position: [f64; 3],
}

impl EntitySpec {
    pub fn label(&self) -> &str {
        &self.synonyms[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub entities: Vec<EntitySpec>,
    pub trajectory: Vec<Waypoint>,
    pub visibility_radius: f64,
    pub period: f64,
    /// Report each sighting under a random synonym.
    pub synonym_noise: bool,
    /// Half-width in meters of uniform x/y noise on reported poses.
    pub pose_jitter: f64,
}

impl WorldSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.entities.is_empty() {
            return Err(SynthError::EmptyWorld);
        }
        if self.trajectory.len() < 2 || self.trajectory.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(SynthError::BadTrajectory);
        }
        if self.trajectory[0].t < 0.0 {
            return Err(SynthError::Invalid(
                "trajectory starts before the epoch".into(),
            ));
        }
        if self.period.is_nan() || self.period <= 0.0 {
            return Err(SynthError::Invalid("period must be positive".into()));
        }
        let bad = |v: f64, strict: bool| v.is_nan() || v < 0.0 || (strict && v == 0.0);
        if bad(self.visibility_radius, true) || bad(self.pose_jitter, false) {
            return Err(SynthError::Invalid(
                "radius must be positive and jitter non-negative".into(),
            ));
        }
        if self
            .entities
            .iter()
            .any(|e| e.synonyms.is_empty() || e.synonyms.iter().any(|s| s.trim().is_empty()))
        {
            return Err(SynthError::Invalid(
                "every entity needs non-empty labels".into(),
            ));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.trajectory.last().map(|w| w.t).unwrap_or(0.0) - self.trajectory[0].t
    }

    /// Robot position and heading at time `t`, clamped to the trajectory.
    pub fn robot_at(&self, t: f64) -> ([f64; 3], f64) {
        let tr = &self.trajectory;
        let seg = tr
            .windows(2)
            .position(|w| t <= w[1].t)
            .unwrap_or(tr.len() - 2);
        let (a, b) = (tr[seg], tr[seg + 1]);
        let u = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        let lerp = |i: usize| a.position[i] + u * (b.position[i] - a.position[i]);
        let heading = (b.position[1] - a.position[1]).atan2(b.position[0] - a.position[0]);
        ([lerp(0), lerp(1), lerp(2)], heading)
    }

    /// Fixture table holding one embedding per synonym: synonyms of one
    /// entity have pairwise similarity above `min_sim`, distinct entities are
    /// near-orthogonal.
    pub fn fixture_provider(
        &self,
        seed: u64,
        dim: usize,
        min_sim: f64,
    ) -> Result<FixtureProvider, SynthError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_F1C7);
        let mut provider = FixtureProvider::new(HashProvider::new(seed, dim));
        let random_unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        };
        let mut bases: Vec<Embedding> = Vec::new();
        for entity in &self.entities {
            let base = random_unit(&mut rng);
            let mut attempt = 0;
            let synonyms = loop {
                attempt += 1;
                if attempt > 100 {
                    return Err(SynthError::Invalid(format!(
                        "cannot build synonyms for {}",
                        entity.label()
                    )));
                }
                let embs: Vec<Embedding> = entity
                    .synonyms
                    .iter()
                    .map(|_| {
                        let noise = random_unit(&mut rng);
                        let v: Vec<f64> =
                            base.iter().zip(&noise).map(|(b, n)| b + 0.4 * n).collect();
                        Embedding::normalized_f64(&v).expect("non-zero")
                    })
                    .collect();
                let ok = embs.iter().enumerate().all(|(i, a)| {
                    embs[i + 1..]
                        .iter()
                        .all(|b| unit_similarity(a, b).expect("same dim") > min_sim)
                });
                if ok {
                    break embs;
                }
            };
            let base_e = Embedding::normalized_f64(&base).expect("non-zero");
            for other in &bases {
                if unit_similarity(&base_e, other).expect("same dim") > min_sim {
                    return Err(SynthError::Invalid("entity embeddings collide".into()));
                }
            }
            bases.push(base_e);
            for (text, e) in entity.synonyms.iter().zip(synonyms) {
                provider
                    .insert(text.clone(), e.as_slice().to_vec())
                    .map_err(|err| SynthError::Invalid(err.to_string()))?;
            }
        }
        Ok(provider)
    }

    /// A random world: `n` entities from [`VOCABULARY`] spread over a grid with
    /// `spacing` meters between cells, and a tour of duration `duration` that
    /// passes one meter from every entity. The visibility radius is 2.5 m.
    pub fn random(seed: u64, n: usize, duration: f64, spacing: f64) -> Result<Self, SynthError> {
        if n == 0 {
            return Err(SynthError::EmptyWorld);
        }
        if n > VOCABULARY.len() {
            return Err(SynthError::Invalid(format!(
                "at most {} entities",
                VOCABULARY.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vocab: Vec<&[&str; 3]> = VOCABULARY.iter().collect();
        vocab.shuffle(&mut rng);
        let cols = (n as f64).sqrt().ceil() as usize;
        let jitter = spacing * 0.2;
        let entities: Vec<EntitySpec> = (0..n)
            .map(|i| {
                let (r, c) = (i / cols, i % cols);
                // serpentine row order
                let c = if r % 2 == 1 { cols - 1 - c } else { c };
                EntitySpec {
                    synonyms: vocab[i].iter().map(|s| s.to_string()).collect(),
                    position: [
                        c as f64 * spacing + rng.gen_range(-jitter..jitter),
                        r as f64 * spacing + rng.gen_range(-jitter..jitter),
                        0.0,
                    ],
                }
            })
            .collect();
        let mut points = vec![[
            entities[0].position[0] - spacing / 2.0,
            entities[0].position[1] - 1.0,
            0.0,
        ]];
        points.extend(
            entities
                .iter()
                .map(|e| [e.position[0], e.position[1] - 1.0, 0.0]),
        );
        let lengths: Vec<f64> = points
            .windows(2)
            .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
            .collect();
        let total: f64 = lengths.iter().sum();
        let mut t = 0.0;
        let mut trajectory = vec![Waypoint {
            t: 0.0,
            position: points[0],
        }];
        for (i, len) in lengths.iter().enumerate() {
            t += duration * len / total;
            trajectory.push(Waypoint {
                t,
                position: points[i + 1],
            });
        }
        trajectory.last_mut().expect("non-empty").t = duration;
        Ok(Self {
            entities,
            trajectory,
            visibility_radius: 2.5,
            period: 2.0,
            synonym_noise: false,
            pose_jitter: 0.0,
        })
    }
}

/// Generated log plus question items.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSession {
    pub log: Vec<LogRecord>,
    pub qa: Vec<QaItem>,
    /// Per entity (same order as the world): times it was reported.
    pub sightings: Vec<Vec<f64>>,
}

pub fn generate_synthetic_session(
    seed: u64,
    world: &WorldSpec,
) -> Result<SyntheticSession, SynthError> {
    world.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = world.trajectory[0].t;
    let frames = (world.duration() / world.period + 1e-9).floor() as usize + 1;
    let mut log = Vec::with_capacity(frames);
    let mut sightings: Vec<Vec<f64>> = vec![Vec::new(); world.entities.len()];
    for i in 0..frames {
        let t = start + i as f64 * world.period;
        let (robot, heading) = world.robot_at(t);
        let mut labels = Vec::new();
        for (ei, e) in world.entities.iter().enumerate() {
            let d2: f64 = (0..3).map(|k| (e.position[k] - robot[k]).powi(2)).sum();
            if d2.sqrt() <= world.visibility_radius {
                let pick = if world.synonym_noise {
                    rng.gen_range(0..e.synonyms.len())
                } else {
                    0
                };
                labels.push(e.synonyms[pick].clone());
                sightings[ei].push(t);
            }
        }
        let (jx, jy) = if world.pose_jitter > 0.0 {
            (
                rng.gen_range(-world.pose_jitter..=world.pose_jitter),
                rng.gen_range(-world.pose_jitter..=world.pose_jitter),
            )
        } else {
            (0.0, 0.0)
        };
        let caption = if labels.is_empty() {
            "an open area with nothing notable".to_string()
        } else {
            format!("a scene showing {}", labels.join(", "))
        };
        log.push(LogRecord {
            frame_id: format!("frame-{i:05}"),
            t,
            pose: LogPose {
                x: robot[0] + jx,
                y: robot[1] + jy,
                z: robot[2],
                yaw: heading,
            },
            labels,
            caption,
            label_embeddings: None,
            caption_embedding: None,
        });
    }
    let mut qa = Vec::new();
    for (e, seen) in world.entities.iter().zip(&sightings) {
        let Some(&last) = seen.last() else { continue };
        let [x, y, z] = e.position;
        qa.push(QaItem {
            question: format!("Where is the {}?", e.label()),
            kind: QaKind::Spatial,
            gt_pose: Some(Pose::at(x, y, z)),
            gt_time: None,
        });
        qa.push(QaItem {
            question: format!("When did you last see the {}?", e.label()),
            kind: QaKind::Temporal,
            gt_pose: None,
            gt_time: Some(Timestamp::new(last).expect("non-negative")),
        });
    }
    Ok(SyntheticSession { log, qa, sightings })
}
