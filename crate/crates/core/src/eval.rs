//! Spatial and temporal accuracy, latency and fallback rate over a set of
//! question/answer items.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Pose, Timestamp};
use crate::router::{Outcome, Router};
use crate::scalar::Scalar;

/// An answer position within this many meters of ground truth is correct.
pub const SPATIAL_GATE_M: f64 = 25.0;
/// An answer time within this many seconds of ground truth is correct.
pub const TEMPORAL_GATE_S: f64 = 180.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no items to evaluate")]
    NoItems,
    #[error("item {index}: {msg}")]
    InvalidItem { index: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

/// L2 distance over x, y, z.
pub fn spatial_error<S: Scalar>(pred: &Pose<S>, gt: &Pose<S>) -> S {
    pred.distance(gt)
}

/// L1 distance in seconds.
pub fn temporal_error<S: Scalar>(pred: Timestamp<S>, gt: Timestamp<S>) -> S {
    pred.abs_diff(gt)
}

pub fn spatially_correct(error_m: f64) -> bool {
    error_m <= SPATIAL_GATE_M
}

pub fn temporally_correct(error_s: f64) -> bool {
    error_s <= TEMPORAL_GATE_S
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaKind {
    Spatial,
    Temporal,
    Descriptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub question: String,
    pub kind: QaKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_pose: Option<Pose<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_time: Option<Timestamp<f64>>,
}

impl QaItem {
    pub fn validate(&self) -> Result<(), String> {
        if self.question.trim().is_empty() {
            return Err("empty question".into());
        }
        match self.kind {
            QaKind::Spatial if self.gt_pose.is_none() => Err("spatial item without gt_pose".into()),
            QaKind::Temporal if self.gt_time.is_none() => {
                Err("temporal item without gt_time".into())
            }
            _ => Ok(()),
        }
    }
}

fn check_items(items: &[QaItem]) -> Result<(), EvalError> {
    for (index, item) in items.iter().enumerate() {
        item.validate()
            .map_err(|msg| EvalError::InvalidItem { index, msg })?;
    }
    Ok(())
}

/// Reads a JSON array of items.
pub fn load_qa(path: impl AsRef<Path>) -> Result<Vec<QaItem>, EvalError> {
    let items: Vec<QaItem> = serde_json::from_str(&std::fs::read_to_string(path)?)
        .map_err(|e| EvalError::Parse(e.to_string()))?;
    check_items(&items)?;
    Ok(items)
}

pub fn save_qa(items: &[QaItem], path: impl AsRef<Path>) -> Result<(), EvalError> {
    let json = serde_json::to_string_pretty(items).map_err(|e| EvalError::Parse(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub question: String,
    pub kind: QaKind,
    pub outcome: Outcome,
    pub predicted_pose: Option<Pose<f64>>,
    pub predicted_time: Option<Timestamp<f64>>,
    /// Meters for spatial items, seconds for temporal ones.
    pub error: Option<f64>,
    /// `None` for descriptive items, which are not scored.
    pub correct: Option<bool>,
    pub latency_secs: f64,
    pub used_captions: bool,
    pub tools: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Correct over all spatial items; `None` without spatial items.
    pub positional_accuracy: Option<f64>,
    pub temporal_accuracy: Option<f64>,
    /// Mean over spatial items that produced a position.
    pub mean_spatial_error: Option<f64>,
    pub mean_temporal_error: Option<f64>,
    pub mean_latency_secs: f64,
    pub fallback: f64,
    pub rows: Vec<EvalRow>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl EvalReport {
    /// Aggregates per-item rows. Unanswered items count against accuracy but
    /// are excluded from mean errors.
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let of_kind = |k: QaKind| rows.iter().filter(move |r| r.kind == k);
        let correct = |k: QaKind| of_kind(k).filter(|r| r.correct == Some(true)).count();
        let errors = |k: QaKind| of_kind(k).filter_map(|r| r.error).collect::<Vec<_>>();
        let latencies: Vec<f64> = rows.iter().map(|r| r.latency_secs).collect();
        let fallbacks = rows.iter().filter(|r| r.used_captions).count();
        Self {
            positional_accuracy: ratio(correct(QaKind::Spatial), of_kind(QaKind::Spatial).count()),
            temporal_accuracy: ratio(correct(QaKind::Temporal), of_kind(QaKind::Temporal).count()),
            mean_spatial_error: mean(&errors(QaKind::Spatial)),
            mean_temporal_error: mean(&errors(QaKind::Temporal)),
            mean_latency_secs: mean(&latencies).unwrap_or(0.0),
            fallback: ratio(fallbacks, rows.len()).unwrap_or(0.0),
            rows,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "question",
            "kind",
            "outcome",
            "pred_x",
            "pred_y",
            "pred_z",
            "pred_t",
            "error",
            "correct",
            "latency_s",
            "used_captions",
            "tools",
        ])
        .expect("in-memory csv");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let p = r.predicted_pose;
            w.write_record([
                r.question.clone(),
                format!("{:?}", r.kind).to_lowercase(),
                format!("{:?}", r.outcome).to_lowercase(),
                opt(p.map(|p| p.x)),
                opt(p.map(|p| p.y)),
                opt(p.map(|p| p.z)),
                opt(r.predicted_time.map(|t| t.secs())),
                opt(r.error),
                r.correct.map(|c| c.to_string()).unwrap_or_default(),
                r.latency_secs.to_string(),
                r.used_captions.to_string(),
                r.tools.join(" "),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }
}

fn pose_f64<S: Scalar>(p: Pose<S>) -> Pose<f64> {
    Pose {
        x: p.x.as_f64(),
        y: p.y.as_f64(),
        z: p.z.as_f64(),
        yaw: p.yaw.as_f64(),
    }
}

/// Runs every item through the router and scores it. Only the router's
/// session stats change; the memory stores are read, never written.
pub fn evaluate<S: Scalar>(
    router: &mut Router<S>,
    items: &[QaItem],
) -> Result<EvalReport, EvalError> {
    if items.is_empty() {
        return Err(EvalError::NoItems);
    }
    check_items(items)?;
    let mut rows = Vec::with_capacity(items.len());
    for item in items {
        let answer = router.answer_query(&item.question);
        let predicted_pose = answer.pose.map(pose_f64);
        let predicted_time = answer.time.map(|t| Timestamp::unchecked(t.secs().as_f64()));
        let (error, correct) = match item.kind {
            QaKind::Spatial => {
                let gt = item.gt_pose.expect("validated");
                let err = predicted_pose.map(|p| spatial_error(&p, &gt));
                (err, Some(err.is_some_and(spatially_correct)))
            }
            QaKind::Temporal => {
                let gt = item.gt_time.expect("validated");
                let err = predicted_time.map(|t| temporal_error(t, gt));
                (err, Some(err.is_some_and(temporally_correct)))
            }
            QaKind::Descriptive => (None, None),
        };
        rows.push(EvalRow {
            question: item.question.clone(),
            kind: item.kind,
            outcome: answer.outcome,
            predicted_pose,
            predicted_time,
            error,
            correct,
            latency_secs: answer.elapsed.as_secs_f64(),
            used_captions: answer.touched_captions(),
            tools: answer.trace.iter().map(|t| t.tool.clone()).collect(),
        });
    }
    Ok(EvalReport::from_rows(rows))
}
