//! Language-grounded spatial memory for mobile robots.
//!
//! Observations (pose, time, detected labels, optional caption) are folded
//! into an entity graph that merges repeated sightings of the same object,
//! and into an append-only caption store. A bounded tool-calling router
//! answers natural-language questions over both stores.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`). The
//! unsuffixed aliases at the crate root use `f64`; the `32` aliases use `f32`.

pub mod captions;
pub mod codec;
pub mod embedding;
pub mod eval;
pub mod graph;
pub mod memory;
pub mod model;
pub mod replay;
pub mod router;
pub mod scalar;
pub mod synth;
pub mod tools;
mod topk;

pub use captions::{CaptionError, RecordId};
pub use embedding::{
    cosine_similarity, unit_similarity, EmbeddingError, EmbeddingProvider, FixtureProvider,
    HashProvider,
};
pub use eval::{
    evaluate, EvalError, EvalReport, EvalRow, QaItem, QaKind, SPATIAL_GATE_M, TEMPORAL_GATE_S,
};
pub use graph::{GraphError, IngestReport, NodeId};
pub use memory::{IngestSummary, MemoryError, ObservationReport};
pub use model::{
    normalize_yaw, Caption, ClockTime, Config, Embedding, Label, ModelError, ValidationResult,
    Violation,
};
pub use replay::{LogRecord, ReplayError};
pub use router::{
    Action, Outcome, Planner, RouterError, RuleBasedPlanner, SessionStats, ToolDescriptor,
    ToolResult,
};
pub use scalar::Scalar;
pub use synth::{generate_synthetic_session, SynthError, SyntheticSession, WorldSpec};
pub use tools::ToolError;

pub type Pose = model::Pose<f64>;
pub type Timestamp = model::Timestamp<f64>;
pub type Observation = model::Observation<f64>;
pub type EntityNode = graph::EntityNode<f64>;
pub type MemoryGraph = graph::MemoryGraph<f64>;
pub type CaptionRecord = captions::CaptionRecord<f64>;
pub type CaptionHit = captions::CaptionHit<f64>;
pub type CaptionStore = captions::CaptionStore<f64>;
pub type RetrievalHit = tools::RetrievalHit<f64>;
pub type MemoryState = memory::MemoryState<f64>;
pub type SharedMemory = memory::SharedMemory<f64>;
pub type Router = router::Router<f64>;
pub type Answer = router::Answer<f64>;
pub type Reply = router::Reply<f64>;
pub type Snapshot = replay::Snapshot<f64>;

pub type Pose32 = model::Pose<f32>;
pub type Timestamp32 = model::Timestamp<f32>;
pub type Observation32 = model::Observation<f32>;
pub type EntityNode32 = graph::EntityNode<f32>;
pub type MemoryGraph32 = graph::MemoryGraph<f32>;
pub type CaptionStore32 = captions::CaptionStore<f32>;
pub type MemoryState32 = memory::MemoryState<f32>;
pub type Router32 = router::Router<f32>;
pub type Snapshot32 = replay::Snapshot<f32>;
