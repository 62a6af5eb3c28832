//! Shared domain types: poses, session timestamps, embeddings, observations
//! and engine configuration.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Tolerance on `| ‖v‖₂ − 1 |` for a stored embedding.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite value: {0}")]
    NonFinite(&'static str),
    #[error("timestamp must be non-negative, got {0}")]
    NegativeTime(f64),
    #[error("embedding has zero norm")]
    ZeroEmbedding,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("malformed time of day: {0}")]
    MalformedTime(String),
}

/// Wrap an angle into `[−π, π)`.
///
/// Angles already in range are returned unchanged, which makes the function
/// exactly idempotent.
pub fn normalize_yaw<S: Scalar>(theta: S) -> Result<S, ModelError> {
    if !theta.is_finite() {
        return Err(ModelError::NonFinite("yaw"));
    }
    let pi = S::PI();
    if theta >= -pi && theta < pi {
        return Ok(theta);
    }
    let two_pi = pi + pi;
    let mut r = (theta + pi) % two_pi;
    if r < S::zero() {
        r = r + two_pi;
    }
    let wrapped = r - pi;
    // rounding can land exactly on +π or a hair below −π
    if wrapped >= pi || wrapped < -pi {
        Ok(-pi)
    } else {
        Ok(wrapped)
    }
}

/// Robot pose in the session's map frame. Positions in meters, yaw in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Pose<S: Scalar> {
    pub x: S,
    pub y: S,
    pub z: S,
    pub yaw: S,
}

impl<S: Scalar> Pose<S> {
    /// Builds a pose, wrapping yaw into range. Rejects non-finite components.
    pub fn new(x: S, y: S, z: S, yaw: S) -> Result<Self, ModelError> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(ModelError::NonFinite("pose position"));
        }
        Ok(Self {
            x,
            y,
            z,
            yaw: normalize_yaw(yaw)?,
        })
    }

    pub fn at(x: S, y: S, z: S) -> Self {
        Self {
            x,
            y,
            z,
            yaw: S::zero(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.yaw.is_finite()
    }

    /// Euclidean distance over x, y, z. Yaw does not participate.
    pub fn distance(&self, other: &Pose<S>) -> S {
        distance_xyz(self, other.x, other.y, other.z)
    }

    pub fn position(&self) -> [S; 3] {
        [self.x, self.y, self.z]
    }
}

pub(crate) fn distance_xyz<S: Scalar>(p: &Pose<S>, x: S, y: S, z: S) -> S {
    let dx = p.x - x;
    let dy = p.y - y;
    let dz = p.z - z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Seconds since the session epoch.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent, bound = "")]
pub struct Timestamp<S: Scalar>(S);

impl<S: Scalar> Timestamp<S> {
    pub fn new(secs: S) -> Result<Self, ModelError> {
        if !secs.is_finite() {
            return Err(ModelError::NonFinite("timestamp"));
        }
        if secs < S::zero() {
            return Err(ModelError::NegativeTime(secs.as_f64()));
        }
        Ok(Self(secs))
    }

    /// Wraps a raw value without checking it; validation reports violations.
    pub fn unchecked(secs: S) -> Self {
        Self(secs)
    }

    pub fn zero() -> Self {
        Self(S::zero())
    }

    pub fn secs(self) -> S {
        self.0
    }

    /// L1 distance in seconds.
    pub fn abs_diff(self, other: Self) -> S {
        (self.0 - other.0).abs()
    }

    pub fn max(self, other: Self) -> Self {
        if other.0 > self.0 {
            other
        } else {
            self
        }
    }
}

/// Clock reading `hh:mm:ss` relative to the session epoch. Hours may exceed 23.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockTime {
    pub hh: u32,
    pub mm: u32,
    pub ss: f64,
}

impl ClockTime {
    pub fn new(hh: u32, mm: u32, ss: f64) -> Result<Self, ModelError> {
        if mm >= 60 {
            return Err(ModelError::MalformedTime(format!(
                "minutes {mm} not in 0..60"
            )));
        }
        if !ss.is_finite() || !(0.0..60.0).contains(&ss) {
            return Err(ModelError::MalformedTime(format!(
                "seconds {ss} not in [0, 60)"
            )));
        }
        Ok(Self { hh, mm, ss })
    }

    /// Parses `hh:mm:ss` (seconds may be fractional).
    pub fn parse(s: &str) -> Result<Self, ModelError> {
        let bad = || ModelError::MalformedTime(s.to_string());
        let mut parts = s.trim().split(':');
        let hh = parts
            .next()
            .ok_or_else(bad)?
            .parse::<u32>()
            .map_err(|_| bad())?;
        let mm = parts
            .next()
            .ok_or_else(bad)?
            .parse::<u32>()
            .map_err(|_| bad())?;
        let ss = parts
            .next()
            .ok_or_else(bad)?
            .parse::<f64>()
            .map_err(|_| bad())?;
        if parts.next().is_some() {
            return Err(bad());
        }
        Self::new(hh, mm, ss)
    }

    pub fn from_secs(t: f64) -> Self {
        let t = t.max(0.0);
        let hh = (t / 3600.0).floor();
        let rem = t - hh * 3600.0;
        let mm = (rem / 60.0).floor().min(59.0);
        let ss = (rem - mm * 60.0).max(0.0);
        Self {
            hh: hh as u32,
            mm: mm as u32,
            ss: if ss >= 60.0 { 59.999_999 } else { ss },
        }
    }

    pub fn to_secs(self) -> f64 {
        3600.0 * f64::from(self.hh) + 60.0 * f64::from(self.mm) + self.ss
    }

    pub fn to_timestamp<S: Scalar>(self) -> Timestamp<S> {
        Timestamp(S::of(self.to_secs()))
    }
}

impl fmt::Display for ClockTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}:{:02}:{:06.3}", self.hh, self.mm, self.ss)
    }
}

/// Dense text embedding stored as 32-bit reals.
///
/// Reductions over embeddings accumulate in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
}

/// Serialized as base-64 of little-endian 32-bit reals.
impl Serialize for Embedding {
    fn serialize<Se: serde::Serializer>(&self, s: Se) -> Result<Se::Ok, Se::Error> {
        s.serialize_str(&crate::codec::encode_f32s(&self.values))
    }
}

impl<'de> Deserialize<'de> for Embedding {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        crate::codec::decode_f32s(&s)
            .map(Self::from_raw)
            .map_err(serde::de::Error::custom)
    }
}

impl Embedding {
    /// L2-normalizes `values`. Fails on zero or non-finite input.
    pub fn normalized(values: Vec<f32>) -> Result<Self, ModelError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("embedding"));
        }
        let norm = values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            return Err(ModelError::ZeroEmbedding);
        }
        Ok(Self {
            values: values
                .into_iter()
                .map(|v| (f64::from(v) / norm) as f32)
                .collect(),
        })
    }

    /// Same as [`Embedding::normalized`] for a vector computed in `f64`.
    pub fn normalized_f64(values: &[f64]) -> Result<Self, ModelError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("embedding"));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(ModelError::ZeroEmbedding);
        }
        Ok(Self {
            values: values.iter().map(|v| (v / norm) as f32).collect(),
        })
    }

    /// Wraps values verbatim. Used by loaders of already-normalized vectors and
    /// by tests that need un-normalized input.
    pub fn from_raw(values: Vec<f32>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm() - 1.0).abs() <= NORM_TOLERANCE
    }

    /// Plain dot product with `f64` accumulation; no dimension check.
    pub(crate) fn dot(&self, other: &Embedding) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub text: String,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub text: String,
    pub embedding: Embedding,
}

/// One subsampled perception event with VLM output already attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Observation<S: Scalar> {
    pub frame_id: String,
    pub pose: Pose<S>,
    pub time: Timestamp<S>,
    pub labels: Vec<Label>,
    /// `None` when the producing log carries no caption for this frame.
    pub caption: Option<Caption>,
}

fn default_delta_p() -> f64 {
    5.0
}
fn default_delta_e() -> f64 {
    0.75
}
fn default_period() -> f64 {
    2.0
}
fn default_k() -> usize {
    5
}
fn default_iterations() -> usize {
    8
}
fn default_dim() -> usize {
    384
}
fn default_floor() -> f64 {
    0.45
}

/// Engine parameters. Serialized with defaults for omitted fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    /// Re-sighting radius in meters.
    #[serde(default = "default_delta_p")]
    pub delta_p: f64,
    /// Cosine threshold above which two labels denote one entity.
    #[serde(default = "default_delta_e")]
    pub delta_e: f64,
    /// Minimum spacing in seconds between ingested frames.
    #[serde(default = "default_period")]
    pub subsample_period: f64,
    #[serde(default = "default_k")]
    pub default_k: usize,
    #[serde(default = "default_iterations")]
    pub max_planner_iterations: usize,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    /// Top graph-hit similarity below which the rule-based planner consults
    /// the caption store.
    #[serde(default = "default_floor")]
    pub relevance_floor: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            delta_p: default_delta_p(),
            delta_e: default_delta_e(),
            subsample_period: default_period(),
            default_k: default_k(),
            max_planner_iterations: default_iterations(),
            embedding_dim: default_dim(),
            relevance_floor: default_floor(),
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if !(self.delta_p.is_finite() && self.delta_p > 0.0) {
            return bad(format!("delta_p must be > 0, got {}", self.delta_p));
        }
        if !(self.delta_e > 0.0 && self.delta_e <= 1.0) {
            return bad(format!("delta_e must be in (0, 1], got {}", self.delta_e));
        }
        if !(self.subsample_period.is_finite() && self.subsample_period > 0.0) {
            return bad(format!(
                "subsample_period must be > 0, got {}",
                self.subsample_period
            ));
        }
        if self.default_k == 0 {
            return bad("default_k must be positive".into());
        }
        if self.max_planner_iterations == 0 {
            return bad("max_planner_iterations must be positive".into());
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive".into());
        }
        if !self.relevance_floor.is_finite() {
            return bad("relevance_floor must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DimensionMismatch {
        field: String,
        expected: usize,
        actual: usize,
    },
    NotNormalized {
        field: String,
        norm: f64,
    },
    NonFinitePose,
    YawOutOfRange(f64),
    NegativeTime(f64),
    EmptyLabel(usize),
    EmptyCaption,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimensionMismatch {
                field,
                expected,
                actual,
            } => {
                write!(
                    f,
                    "dimension mismatch in {field}: expected {expected}, got {actual}"
                )
            }
            Violation::NotNormalized { field, norm } => {
                write!(f, "embedding not normalized in {field}: norm {norm}")
            }
            Violation::NonFinitePose => write!(f, "non-finite pose"),
            Violation::YawOutOfRange(y) => write!(f, "yaw out of range: {y}"),
            Violation::NegativeTime(t) => write!(f, "negative time: {t}"),
            Violation::EmptyLabel(i) => write!(f, "empty label text at index {i}"),
            Violation::EmptyCaption => write!(f, "empty caption text"),
        }
    }
}

/// Outcome of [`validate_observation`]; violations are data, not errors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationResult {
    pub violations: Vec<Violation>,
}

impl ValidationResult {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

pub fn validate_observation<S: Scalar>(obs: &Observation<S>, cfg: &Config) -> ValidationResult {
    let mut violations = Vec::new();
    let p = &obs.pose;
    if !p.is_finite() {
        violations.push(Violation::NonFinitePose);
    } else if p.yaw < -S::PI() || p.yaw >= S::PI() {
        violations.push(Violation::YawOutOfRange(p.yaw.as_f64()));
    }
    let t = obs.time.secs();
    if !t.is_finite() || t < S::zero() {
        violations.push(Violation::NegativeTime(t.as_f64()));
    }
    let mut check = |field: String, e: &Embedding| {
        if e.dim() != cfg.embedding_dim {
            violations.push(Violation::DimensionMismatch {
                field,
                expected: cfg.embedding_dim,
                actual: e.dim(),
            });
        } else if !e.is_normalized() {
            violations.push(Violation::NotNormalized {
                field,
                norm: e.norm(),
            });
        }
    };
    for (i, label) in obs.labels.iter().enumerate() {
        check(format!("labels[{i}]"), &label.embedding);
    }
    if let Some(c) = &obs.caption {
        check("caption".into(), &c.embedding);
    }
    for (i, label) in obs.labels.iter().enumerate() {
        if label.text.is_empty() {
            violations.push(Violation::EmptyLabel(i));
        }
    }
    if matches!(&obs.caption, Some(c) if c.text.is_empty()) {
        violations.push(Violation::EmptyCaption);
    }
    ValidationResult { violations }
}
