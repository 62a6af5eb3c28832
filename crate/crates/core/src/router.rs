//! Bounded planner loop over the retrieval tools, with per-query fallback
//! accounting.
//!
//! A [`Planner`] sees the query and every tool result so far and picks the
//! next [`Action`]. The router executes tool calls against a consistent read
//! snapshot of memory, appends results to the context and stops on an answer,
//! a give-up, or after `max_planner_iterations` actions.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::captions::CaptionHit;
use crate::embedding::{embed_text, EmbeddingProvider};
use crate::memory::{MemoryState, SharedMemory};
use crate::model::{ClockTime, Pose, Timestamp};
use crate::scalar::Scalar;
use crate::tools::{positional_search, semantic_search, temporal_search, RetrievalHit};

pub const T_SEMANTIC: &str = "t_semantic";
pub const T_POSITION: &str = "t_position";
pub const T_TIME: &str = "t_time";
pub const CAPTIONS_TEXT: &str = "captions_text";
pub const CAPTIONS_POSITION: &str = "captions_position";
pub const CAPTIONS_TIME: &str = "captions_time";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RouterError {
    #[error("tool already registered: {0}")]
    DuplicateTool(String),
    #[error("no queries recorded")]
    NoQueries,
}

/// Which store a tool reads. Queries touching [`StoreKind::Captions`] count
/// as fallbacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreKind {
    Graph,
    Captions,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Number,
    Integer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDescriptor {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ParamType,
    pub required: bool,
    pub description: String,
}

/// Machine-readable tool description an LLM adapter can advertise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub store: StoreKind,
    pub parameters: Vec<ParamDescriptor>,
}

fn param(name: &str, ty: ParamType, required: bool, description: &str) -> ParamDescriptor {
    ParamDescriptor {
        name: name.into(),
        ty,
        required,
        description: description.into(),
    }
}

pub type ToolHandler<S> =
    Box<dyn Fn(&MemoryState<S>, &Value) -> Result<Value, String> + Send + Sync>;

struct RegisteredTool<S: Scalar> {
    descriptor: ToolDescriptor,
    handler: ToolHandler<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolOutput {
    Ok(Value),
    Error(String),
}

/// One executed tool call as seen by the planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub tool: String,
    pub args: Value,
    pub store: StoreKind,
    pub output: ToolOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Reply<S: Scalar> {
    pub text: String,
    pub pose: Option<Pose<S>>,
    pub time: Option<Timestamp<S>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action<S: Scalar> {
    CallTool { name: String, args: Value },
    Answer(Reply<S>),
    GiveUp,
}

pub trait Planner<S: Scalar>: Send {
    fn next_action(&mut self, query: &str, context: &[ToolResult]) -> Action<S>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Answered,
    GaveUp,
    /// The planner hit the iteration bound without answering.
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Answer<S: Scalar> {
    pub outcome: Outcome,
    pub text: Option<String>,
    pub pose: Option<Pose<S>>,
    pub time: Option<Timestamp<S>>,
    pub trace: Vec<ToolResult>,
    #[serde(with = "duration_secs")]
    pub elapsed: Duration,
}

impl<S: Scalar> Answer<S> {
    pub fn touched_captions(&self) -> bool {
        self.trace.iter().any(|r| r.store == StoreKind::Captions)
    }

    pub fn is_answered(&self) -> bool {
        self.outcome == Outcome::Answered
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<Se: Serializer>(d: &Duration, s: Se) -> Result<Se::Ok, Se::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// Per-session query counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub n_queries: u64,
    /// Queries with at least one caption-store call.
    pub n_vector_calls: u64,
    /// Wall-clock seconds per query.
    pub latencies: Vec<f64>,
    /// Tool names called, per query.
    pub traces: Vec<Vec<String>>,
}

impl SessionStats {
    pub fn record<S: Scalar>(&mut self, answer: &Answer<S>) {
        self.n_queries += 1;
        if answer.touched_captions() {
            self.n_vector_calls += 1;
        }
        self.latencies.push(answer.elapsed.as_secs_f64());
        self.traces
            .push(answer.trace.iter().map(|r| r.tool.clone()).collect());
    }
}

/// Fraction of queries that consulted the caption store.
pub fn fallback_percentage(stats: &SessionStats) -> Result<f64, RouterError> {
    if stats.n_queries == 0 {
        return Err(RouterError::NoQueries);
    }
    Ok(stats.n_vector_calls as f64 / stats.n_queries as f64)
}

pub struct Router<S: Scalar> {
    memory: SharedMemory<S>,
    tools: BTreeMap<String, RegisteredTool<S>>,
    planner: Box<dyn Planner<S>>,
    stats: SessionStats,
    max_iterations: usize,
}

impl<S: Scalar> Router<S> {
    /// A router with no tools registered.
    pub fn bare(memory: SharedMemory<S>, planner: Box<dyn Planner<S>>) -> Self {
        let max_iterations = memory.read().config().max_planner_iterations;
        Self {
            memory,
            tools: BTreeMap::new(),
            planner,
            stats: SessionStats::default(),
            max_iterations,
        }
    }

    /// A router with the three graph tools and three caption tools mounted.
    pub fn new(
        memory: SharedMemory<S>,
        provider: Arc<dyn EmbeddingProvider>,
        planner: Box<dyn Planner<S>>,
    ) -> Self {
        Self::with_providers(memory, provider.clone(), provider, planner)
    }

    /// Like [`Router::new`] with separate encoders for entity labels and
    /// captions.
    pub fn with_providers(
        memory: SharedMemory<S>,
        label_provider: Arc<dyn EmbeddingProvider>,
        caption_provider: Arc<dyn EmbeddingProvider>,
        planner: Box<dyn Planner<S>>,
    ) -> Self {
        let mut r = Self::bare(memory, planner);
        for (descriptor, handler) in standard_tools_with(label_provider, caption_provider) {
            r.register_tool(descriptor, handler)
                .expect("standard tool names are unique");
        }
        r
    }

    pub fn register_tool(
        &mut self,
        descriptor: ToolDescriptor,
        handler: ToolHandler<S>,
    ) -> Result<(), RouterError> {
        if self.tools.contains_key(&descriptor.name) {
            return Err(RouterError::DuplicateTool(descriptor.name));
        }
        self.tools.insert(
            descriptor.name.clone(),
            RegisteredTool {
                descriptor,
                handler,
            },
        );
        Ok(())
    }

    pub fn tool_descriptors(&self) -> Vec<ToolDescriptor> {
        self.tools.values().map(|t| t.descriptor.clone()).collect()
    }

    pub fn stats(&self) -> &SessionStats {
        &self.stats
    }

    pub fn memory(&self) -> &SharedMemory<S> {
        &self.memory
    }

    pub fn max_iterations(&self) -> usize {
        self.max_iterations
    }

    pub fn set_max_iterations(&mut self, n: usize) {
        self.max_iterations = n.max(1);
    }

    /// Calls one registered tool directly, outside the planner loop. Not
    /// recorded in the session stats.
    pub fn call_tool(&self, name: &str, args: &Value) -> ToolResult {
        let (store, output) = match self.tools.get(name) {
            None => (
                StoreKind::Other,
                ToolOutput::Error(format!("unknown tool: {name}")),
            ),
            Some(tool) => {
                let state = self.memory.read();
                let out = match (tool.handler)(&state, args) {
                    Ok(v) => ToolOutput::Ok(v),
                    Err(e) => ToolOutput::Error(e),
                };
                (tool.descriptor.store, out)
            }
        };
        ToolResult {
            tool: name.to_string(),
            args: args.clone(),
            store,
            output,
        }
    }

    /// Runs the planner loop for one query and records it in the session stats.
    pub fn answer_query(&mut self, query: &str) -> Answer<S> {
        let start = Instant::now();
        let mut trace: Vec<ToolResult> = Vec::new();
        let mut answer = None;
        for _ in 0..self.max_iterations {
            match self.planner.next_action(query, &trace) {
                Action::CallTool { name, args } => {
                    let result = self.call_tool(&name, &args);
                    trace.push(result);
                }
                Action::Answer(reply) => {
                    answer = Some((Outcome::Answered, Some(reply)));
                    break;
                }
                Action::GiveUp => {
                    answer = Some((Outcome::GaveUp, None));
                    break;
                }
            }
        }
        let (outcome, reply) = answer.unwrap_or((Outcome::Truncated, None));
        let (text, pose, time) = match reply {
            Some(r) => (Some(r.text), r.pose, r.time),
            None => (None, None, None),
        };
        let answer = Answer {
            outcome,
            text,
            pose,
            time,
            trace,
            elapsed: start.elapsed(),
        };
        self.stats.record(&answer);
        answer
    }
}

fn arg_k(args: &Value, default: usize) -> Result<usize, String> {
    match args.get("k") {
        None | Some(Value::Null) => Ok(default),
        Some(v) => v
            .as_u64()
            .filter(|&k| k >= 1)
            .map(|k| k as usize)
            .ok_or_else(|| format!("k must be a positive integer, got {v}")),
    }
}

fn arg_str<'a>(args: &'a Value, name: &str) -> Result<&'a str, String> {
    args.get(name)
        .and_then(Value::as_str)
        .ok_or_else(|| format!("missing string argument `{name}`"))
}

fn arg_f64(args: &Value, name: &str) -> Result<f64, String> {
    args.get(name)
        .and_then(Value::as_f64)
        .ok_or_else(|| format!("missing numeric argument `{name}`"))
}

fn arg_u32(args: &Value, name: &str) -> Result<u32, String> {
    args.get(name)
        .and_then(Value::as_u64)
        .and_then(|v| u32::try_from(v).ok())
        .ok_or_else(|| format!("missing non-negative integer argument `{name}`"))
}

fn arg_clock(args: &Value) -> Result<ClockTime, String> {
    ClockTime::new(
        arg_u32(args, "hh")?,
        arg_u32(args, "mm")?,
        arg_f64(args, "ss")?,
    )
    .map_err(|e| e.to_string())
}

fn arg_xyz<S: Scalar>(args: &Value) -> Result<(S, S, S), String> {
    Ok((
        S::of(arg_f64(args, "x")?),
        S::of(arg_f64(args, "y")?),
        S::of(arg_f64(args, "z")?),
    ))
}

fn to_value<T: Serialize>(v: T) -> Result<Value, String> {
    serde_json::to_value(v).map_err(|e| e.to_string())
}

/// Descriptors and handlers for the six built-in tools.
pub fn standard_tools<S: Scalar>(
    provider: Arc<dyn EmbeddingProvider>,
) -> Vec<(ToolDescriptor, ToolHandler<S>)> {
    standard_tools_with(provider.clone(), provider)
}

/// [`standard_tools`] with a separate encoder for caption queries.
pub fn standard_tools_with<S: Scalar>(
    label_provider: Arc<dyn EmbeddingProvider>,
    caption_provider: Arc<dyn EmbeddingProvider>,
) -> Vec<(ToolDescriptor, ToolHandler<S>)> {
    use ParamType::*;
    let k = || {
        param(
            "k",
            Integer,
            false,
            "number of results (default from config)",
        )
    };
    let xyz = || {
        vec![
            param("x", Number, true, "x coordinate in meters"),
            param("y", Number, true, "y coordinate in meters"),
            param("z", Number, true, "z coordinate in meters"),
            k(),
        ]
    };
    let hms = || {
        vec![
            param("hh", Integer, true, "hours since session start"),
            param("mm", Integer, true, "minutes, 0-59"),
            param("ss", Number, true, "seconds, [0, 60)"),
            k(),
        ]
    };
    let desc = |name: &str, store, description: &str, parameters| ToolDescriptor {
        name: name.into(),
        description: description.into(),
        store,
        parameters,
    };

    let p_sem = label_provider;
    let p_cap = caption_provider;
    let mut out: Vec<(ToolDescriptor, ToolHandler<S>)> = Vec::new();
    out.push((
        desc(
            T_SEMANTIC,
            StoreKind::Graph,
            "Entity nodes whose label is most similar to the query text.",
            vec![
                param("query", String, true, "text to match against entity labels"),
                k(),
            ],
        ),
        Box::new(move |m: &MemoryState<S>, a: &Value| {
            let k = arg_k(a, m.config().default_k)?;
            to_value(
                semantic_search(&m.graph, p_sem.as_ref(), arg_str(a, "query")?, k)
                    .map_err(|e| e.to_string())?,
            )
        }),
    ));
    out.push((
        desc(
            T_POSITION,
            StoreKind::Graph,
            "Entity nodes nearest to a position.",
            xyz(),
        ),
        Box::new(|m: &MemoryState<S>, a: &Value| {
            let k = arg_k(a, m.config().default_k)?;
            let (x, y, z) = arg_xyz::<S>(a)?;
            to_value(positional_search(&m.graph, x, y, z, k).map_err(|e| e.to_string())?)
        }),
    ));
    out.push((
        desc(
            T_TIME,
            StoreKind::Graph,
            "Entity nodes last seen closest to a session time.",
            hms(),
        ),
        Box::new(|m: &MemoryState<S>, a: &Value| {
            let k = arg_k(a, m.config().default_k)?;
            let c = arg_clock(a)?;
            to_value(
                temporal_search::<S>(&m.graph, c.hh, c.mm, c.ss, k).map_err(|e| e.to_string())?,
            )
        }),
    ));
    out.push((
        desc(
            CAPTIONS_TEXT,
            StoreKind::Captions,
            "Scene captions most similar to the query text.",
            vec![
                param(
                    "query",
                    String,
                    true,
                    "text to match against scene captions",
                ),
                k(),
            ],
        ),
        Box::new(move |m: &MemoryState<S>, a: &Value| {
            let k = arg_k(a, m.config().default_k)?;
            let q = embed_text(p_cap.as_ref(), arg_str(a, "query")?).map_err(|e| e.to_string())?;
            to_value(m.captions.query_text(&q, k).map_err(|e| e.to_string())?)
        }),
    ));
    out.push((
        desc(
            CAPTIONS_POSITION,
            StoreKind::Captions,
            "Scene captions recorded nearest to a position.",
            xyz(),
        ),
        Box::new(|m: &MemoryState<S>, a: &Value| {
            let k = arg_k(a, m.config().default_k)?;
            let (x, y, z) = arg_xyz::<S>(a)?;
            to_value(
                m.captions
                    .query_position(&Pose::at(x, y, z), k)
                    .map_err(|e| e.to_string())?,
            )
        }),
    ));
    out.push((
        desc(
            CAPTIONS_TIME,
            StoreKind::Captions,
            "Scene captions recorded closest to a session time.",
            hms(),
        ),
        Box::new(|m: &MemoryState<S>, a: &Value| {
            let k = arg_k(a, m.config().default_k)?;
            let c = arg_clock(a)?;
            to_value(
                m.captions
                    .query_time(c.to_timestamp(), k)
                    .map_err(|e| e.to_string())?,
            )
        }),
    ));
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Intent {
    Where,
    When,
    Describe,
    Near([f64; 3]),
    At(ClockTime),
}

const STOP_WORDS: &[&str] = &[
    "a", "an", "any", "are", "at", "can", "closest", "could", "did", "do", "does", "find", "for",
    "go", "have", "i", "in", "is", "it", "last", "located", "location", "me", "my", "nearest",
    "of", "place", "please", "saw", "see", "seen", "show", "take", "tell", "that", "the", "there",
    "to", "was", "we", "were", "what", "when", "where", "which", "you", "your",
];

fn numbers_in(query: &str) -> Vec<f64> {
    query
        .split(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-'))
        .filter_map(|tok| tok.trim_matches('.').parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .collect()
}

fn clock_in(query: &str) -> Option<ClockTime> {
    query
        .split(|c: char| !(c.is_ascii_digit() || c == ':' || c == '.'))
        .filter(|tok| tok.matches(':').count() == 2)
        .find_map(|tok| ClockTime::parse(tok.trim_end_matches('.')).ok())
}

fn words(query: &str) -> Vec<String> {
    query
        .to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '\''))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Query text with question and filler words removed; the full query when
/// nothing else remains. "can" only counts as filler when it opens the
/// question, so "trash can" survives.
pub fn query_subject(query: &str) -> String {
    let kept: Vec<String> = words(query)
        .into_iter()
        .enumerate()
        .filter(|(i, w)| !STOP_WORDS.contains(&w.as_str()) || (w == "can" && *i > 0))
        .map(|(_, w)| w)
        .collect();
    if kept.is_empty() {
        query.trim().to_string()
    } else {
        kept.join(" ")
    }
}

fn classify(query: &str) -> Intent {
    if let Some(c) = clock_in(query) {
        return Intent::At(c);
    }
    let ws = words(query);
    let has = |w: &str| ws.iter().any(|x| x == w);
    let nums = numbers_in(query);
    if (has("near") || has("position") || has("around")) && nums.len() >= 3 {
        return Intent::Near([nums[0], nums[1], nums[2]]);
    }
    if has("when") || query.to_lowercase().contains("what time") {
        return Intent::When;
    }
    if ["where", "closest", "nearest", "find", "locate", "take"]
        .iter()
        .any(|w| has(w))
    {
        return Intent::Where;
    }
    Intent::Describe
}

/// Deterministic keyword planner used offline in place of an LLM.
///
/// Graph tools go first. The caption store is consulted only when the graph
/// returns nothing or the top semantic hit scores below the relevance floor.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleBasedPlanner {
    pub relevance_floor: f64,
    pub k: usize,
}

impl RuleBasedPlanner {
    pub fn new(relevance_floor: f64, k: usize) -> Self {
        Self {
            relevance_floor,
            k: k.max(1),
        }
    }

    fn graph_reply<S: Scalar>(intent: Intent, hit: &RetrievalHit<S>) -> Reply<S> {
        let p = hit.pose;
        let clock = ClockTime::from_secs(hit.last_seen.secs().as_f64());
        let text = match intent {
            Intent::When => format!("I last saw '{}' at {clock}", hit.label),
            _ => format!(
                "I found '{}' at position ({:.2}, {:.2}, {:.2})",
                hit.label, p.x, p.y, p.z
            ),
        };
        Reply {
            text,
            pose: Some(p),
            time: Some(hit.last_seen),
        }
    }

    fn caption_reply<S: Scalar>(hit: &CaptionHit<S>) -> Reply<S> {
        Reply {
            text: hit.text.clone(),
            pose: Some(hit.pose),
            time: Some(hit.time),
        }
    }

    fn fallback_call<S: Scalar>(&self, intent: Intent, query: &str) -> Action<S> {
        let args = match intent {
            Intent::Near([x, y, z]) => {
                return Action::CallTool {
                    name: CAPTIONS_POSITION.into(),
                    args: json!({"x": x, "y": y, "z": z, "k": self.k}),
                }
            }
            Intent::At(c) => {
                return Action::CallTool {
                    name: CAPTIONS_TIME.into(),
                    args: json!({"hh": c.hh, "mm": c.mm, "ss": c.ss, "k": self.k}),
                }
            }
            _ => json!({"query": query_subject(query), "k": self.k}),
        };
        Action::CallTool {
            name: CAPTIONS_TEXT.into(),
            args,
        }
    }
}

impl<S: Scalar> Planner<S> for RuleBasedPlanner {
    fn next_action(&mut self, query: &str, context: &[ToolResult]) -> Action<S> {
        let intent = classify(query);
        let Some(last) = context.last() else {
            let args = match intent {
                Intent::At(c) => {
                    return Action::CallTool {
                        name: T_TIME.into(),
                        args: json!({"hh": c.hh, "mm": c.mm, "ss": c.ss, "k": self.k}),
                    }
                }
                Intent::Near([x, y, z]) => {
                    return Action::CallTool {
                        name: T_POSITION.into(),
                        args: json!({"x": x, "y": y, "z": z, "k": self.k}),
                    }
                }
                _ => json!({"query": query_subject(query), "k": self.k}),
            };
            return Action::CallTool {
                name: T_SEMANTIC.into(),
                args,
            };
        };
        let value = match &last.output {
            ToolOutput::Ok(v) => v,
            ToolOutput::Error(_) => return Action::GiveUp,
        };
        match last.store {
            StoreKind::Graph => {
                let hits: Vec<RetrievalHit<S>> =
                    serde_json::from_value(value.clone()).unwrap_or_default();
                let Some(top) = hits.first() else {
                    return self.fallback_call(intent, query);
                };
                let relevant =
                    last.tool != T_SEMANTIC || top.score.as_f64() >= self.relevance_floor;
                if relevant {
                    Action::Answer(Self::graph_reply(intent, top))
                } else {
                    self.fallback_call(intent, query)
                }
            }
            StoreKind::Captions => {
                let hits: Vec<CaptionHit<S>> =
                    serde_json::from_value(value.clone()).unwrap_or_default();
                match hits.first() {
                    Some(top) => Action::Answer(Self::caption_reply(top)),
                    None => Action::GiveUp,
                }
            }
            StoreKind::Other => Action::GiveUp,
        }
    }
}
