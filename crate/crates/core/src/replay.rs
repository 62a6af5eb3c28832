//! Observation logs, snapshot persistence and configuration files.
//!
//! All three use JSON. Logs are JSON Lines, one [`LogRecord`] per line:
//!
//! ```text
//! {"frame_id":"f0","t":0.0,"pose":{"x":1.0,"y":2.0,"z":0.0,"yaw":0.1},"labels":["cup"],"caption":"a cup on a desk"}
//! ```
//!
//! `label_embeddings` (one per label) and `caption_embedding` may carry
//! precomputed vectors as base-64 of little-endian `f32`; missing vectors are
//! embedded with the configured provider on load. Captions should stay within
//! the producer's 1024-token budget; the engine only requires non-empty text.
//!
//! A snapshot is a four-line header followed by a JSON body:
//!
//! ```text
//! LGR-SNAPSHOT 1.0
//! scalar f64
//! length <body bytes>
//! sha256 <hex digest of body>
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::captions::{CaptionRecord, CaptionStore};
use crate::codec::decode_f32s;
use crate::embedding::{embed_text, EmbeddingProvider};
use crate::graph::{EntityNode, MemoryGraph, NodeId};
use crate::memory::MemoryState;
use crate::model::{
    validate_observation, Caption, Config, Embedding, Label, Observation, Pose, Timestamp,
};
use crate::router::SessionStats;
use crate::scalar::Scalar;

pub const SNAPSHOT_MAGIC: &str = "LGR-SNAPSHOT";
pub const FORMAT_MAJOR: u32 = 1;
pub const FORMAT_MINOR: u32 = 0;
/// Environment variable naming the config file.
pub const CONFIG_ENV: &str = "LGR_CONFIG";

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: timestamps must be non-decreasing ({t} after {prev})")]
    OutOfOrder { line: usize, t: f64, prev: f64 },
    #[error("line {line}: dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        actual: usize,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("snapshot checksum mismatch: {0}")]
    Checksum(String),
    #[error("snapshot format {found} is newer than supported {supported}")]
    Version { found: String, supported: String },
    #[error("snapshot format error: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    #[serde(default)]
    pub yaw: f64,
}

/// One line of an observation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub frame_id: String,
    pub t: f64,
    pub pose: LogPose,
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default)]
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_embeddings: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_embedding: Option<String>,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log records always serialize")
    }
}

/// Writes records as JSON Lines.
pub fn write_log<W: Write>(mut w: W, records: &[LogRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(w, "{}", r.to_line())?;
    }
    Ok(())
}

/// Streams observations out of a log: parses, checks time order, applies
/// subsampling, embeds missing vectors, normalizes yaw and validates.
///
/// A record is kept iff it is the first one or `t ≥ last_kept_t + period`.
pub struct LogStream<'a, R: BufRead, S: Scalar> {
    lines: std::io::Lines<R>,
    cfg: &'a Config,
    provider: &'a dyn EmbeddingProvider,
    caption_provider: &'a dyn EmbeddingProvider,
    line_no: usize,
    prev_t: Option<f64>,
    last_kept: Option<f64>,
    failed: bool,
    _scalar: std::marker::PhantomData<S>,
}

impl<'a, R: BufRead, S: Scalar> LogStream<'a, R, S> {
    pub fn new(
        reader: R,
        cfg: &'a Config,
        provider: &'a dyn EmbeddingProvider,
    ) -> Result<Self, ReplayError> {
        cfg.validate()
            .map_err(|e| ReplayError::Config(e.to_string()))?;
        if provider.dimension() != cfg.embedding_dim {
            return Err(ReplayError::Config(format!(
                "provider dimension {} differs from embedding_dim {}",
                provider.dimension(),
                cfg.embedding_dim
            )));
        }
        Ok(Self {
            lines: reader.lines(),
            cfg,
            provider,
            caption_provider: provider,
            line_no: 0,
            prev_t: None,
            last_kept: None,
            failed: false,
            _scalar: std::marker::PhantomData,
        })
    }

    /// Embeds captions with a separate provider; labels keep the one given
    /// to [`LogStream::new`].
    pub fn with_caption_provider(
        mut self,
        provider: &'a dyn EmbeddingProvider,
    ) -> Result<Self, ReplayError> {
        if provider.dimension() != self.cfg.embedding_dim {
            return Err(ReplayError::Config(format!(
                "caption provider dimension {} differs from embedding_dim {}",
                provider.dimension(),
                self.cfg.embedding_dim
            )));
        }
        self.caption_provider = provider;
        Ok(self)
    }

    fn vector(&self, encoded: &str) -> Result<Embedding, ReplayError> {
        let line = self.line_no;
        let values = decode_f32s(encoded).map_err(|msg| ReplayError::Malformed { line, msg })?;
        if values.len() != self.cfg.embedding_dim {
            return Err(ReplayError::DimensionMismatch {
                line,
                expected: self.cfg.embedding_dim,
                actual: values.len(),
            });
        }
        Embedding::normalized(values).map_err(|e| ReplayError::Malformed {
            line,
            msg: e.to_string(),
        })
    }

    fn embed(
        &self,
        provider: &dyn EmbeddingProvider,
        text: &str,
    ) -> Result<Embedding, ReplayError> {
        embed_text(provider, text).map_err(|e| ReplayError::Malformed {
            line: self.line_no,
            msg: e.to_string(),
        })
    }

    fn build(&self, rec: LogRecord) -> Result<Observation<S>, ReplayError> {
        let line = self.line_no;
        let bad = |msg: String| ReplayError::Malformed { line, msg };
        let pose = Pose::new(
            S::of(rec.pose.x),
            S::of(rec.pose.y),
            S::of(rec.pose.z),
            S::of(rec.pose.yaw),
        )
        .map_err(|e| bad(e.to_string()))?;
        let time = Timestamp::new(S::of(rec.t)).map_err(|e| bad(e.to_string()))?;
        if let Some(es) = &rec.label_embeddings {
            if es.len() != rec.labels.len() {
                return Err(bad(format!(
                    "{} label embeddings for {} labels",
                    es.len(),
                    rec.labels.len()
                )));
            }
        }
        let mut labels = Vec::with_capacity(rec.labels.len());
        for (i, text) in rec.labels.iter().enumerate() {
            if text.trim().is_empty() {
                return Err(bad(format!("empty label at index {i}")));
            }
            let embedding = match rec.label_embeddings.as_ref().map(|es| es[i].as_str()) {
                Some(enc) => self.vector(enc)?,
                None => self.embed(self.provider, text)?,
            };
            labels.push(Label {
                text: text.clone(),
                embedding,
            });
        }
        let caption = if rec.caption.trim().is_empty() {
            None
        } else {
            let embedding = match &rec.caption_embedding {
                Some(enc) => self.vector(enc)?,
                None => self.embed(self.caption_provider, &rec.caption)?,
            };
            Some(Caption {
                text: rec.caption,
                embedding,
            })
        };
        let obs = Observation {
            frame_id: rec.frame_id,
            pose,
            time,
            labels,
            caption,
        };
        let v = validate_observation(&obs, self.cfg);
        if !v.is_ok() {
            return Err(bad(v.to_string()));
        }
        Ok(obs)
    }

    fn next_record(&mut self) -> Option<Result<Observation<S>, ReplayError>> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LogRecord = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(e) => {
                    return Some(Err(ReplayError::Malformed {
                        line: self.line_no,
                        msg: e.to_string(),
                    }))
                }
            };
            if !rec.t.is_finite() {
                return Some(Err(ReplayError::Malformed {
                    line: self.line_no,
                    msg: "non-finite time".into(),
                }));
            }
            if let Some(prev) = self.prev_t {
                if rec.t < prev {
                    return Some(Err(ReplayError::OutOfOrder {
                        line: self.line_no,
                        t: rec.t,
                        prev,
                    }));
                }
            }
            self.prev_t = Some(rec.t);
            let keep = match self.last_kept {
                None => true,
                Some(kept) => rec.t >= kept + self.cfg.subsample_period,
            };
            if !keep {
                continue;
            }
            self.last_kept = Some(rec.t);
            return Some(self.build(rec));
        }
    }
}

impl<R: BufRead, S: Scalar> Iterator for LogStream<'_, R, S> {
    type Item = Result<Observation<S>, ReplayError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = self.next_record();
        if matches!(item, Some(Err(_))) {
            self.failed = true;
        }
        item
    }
}

/// Reads a whole log into memory; see [`LogStream`].
pub fn load_log<S: Scalar>(
    path: impl AsRef<Path>,
    cfg: &Config,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<Observation<S>>, ReplayError> {
    let reader = BufReader::new(fs::File::open(path)?);
    LogStream::new(reader, cfg, provider)?.collect()
}

pub fn parse_log<S: Scalar>(
    src: &str,
    cfg: &Config,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<Observation<S>>, ReplayError> {
    LogStream::new(src.as_bytes(), cfg, provider)?.collect()
}

/// Everything persisted about a session.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<S: Scalar> {
    pub state: MemoryState<S>,
    pub stats: SessionStats,
    /// Provider the stores were embedded with, e.g. `hash:7` or `fixture:<path>`.
    pub provider: Option<String>,
}

impl<S: Scalar> Snapshot<S> {
    pub fn new(state: MemoryState<S>) -> Self {
        Self {
            state,
            stats: SessionStats::default(),
            provider: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct SnapshotBody<S: Scalar> {
    format: String,
    config: Config,
    provider: Option<String>,
    next_node_id: u64,
    nodes: Vec<EntityNode<S>>,
    edges: Vec<(NodeId, NodeId)>,
    captions: Vec<CaptionRecord<S>>,
    stats: SessionStats,
}

fn format_version() -> String {
    format!("{FORMAT_MAJOR}.{FORMAT_MINOR}")
}

/// Serializes a snapshot; the output is a pure function of the state.
pub fn encode_snapshot<S: Scalar>(snap: &Snapshot<S>) -> Vec<u8> {
    let g = &snap.state.graph;
    let body = SnapshotBody {
        format: format_version(),
        config: g.config().clone(),
        provider: snap.provider.clone(),
        next_node_id: g.next_id(),
        nodes: g.nodes().to_vec(),
        edges: g.edges().iter().copied().collect(),
        captions: snap.state.captions.records().to_vec(),
        stats: snap.stats.clone(),
    };
    let json = serde_json::to_vec(&body).expect("snapshot body always serializes");
    let digest = hex(&Sha256::digest(&json));
    let mut out = format!(
        "{SNAPSHOT_MAGIC} {}\nscalar {}\nlength {}\nsha256 {digest}\n",
        format_version(),
        S::NAME,
        json.len()
    )
    .into_bytes();
    out.extend_from_slice(&json);
    out
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn header_line<'a>(rest: &mut &'a [u8], key: &str) -> Result<&'a str, ReplayError> {
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| ReplayError::Checksum(format!("truncated header before `{key}`")))?;
    let line = std::str::from_utf8(&rest[..end])
        .map_err(|_| ReplayError::Format("non-utf8 header".into()))?;
    *rest = &rest[end + 1..];
    line.strip_prefix(key)
        .and_then(|v| v.strip_prefix(' '))
        .ok_or_else(|| ReplayError::Format(format!("expected header `{key}`, found `{line}`")))
}

/// Parses and verifies a snapshot. Nothing is returned unless every check
/// passes.
pub fn decode_snapshot<S: Scalar>(bytes: &[u8]) -> Result<Snapshot<S>, ReplayError> {
    let mut rest = bytes;
    let version = header_line(&mut rest, SNAPSHOT_MAGIC)?;
    let (major, _minor) = version
        .split_once('.')
        .and_then(|(a, b)| Some((a.parse::<u32>().ok()?, b.parse::<u32>().ok()?)))
        .ok_or_else(|| ReplayError::Format(format!("bad version `{version}`")))?;
    if major > FORMAT_MAJOR {
        return Err(ReplayError::Version {
            found: version.to_string(),
            supported: format_version(),
        });
    }
    let scalar = header_line(&mut rest, "scalar")?;
    if scalar != S::NAME {
        return Err(ReplayError::Format(format!(
            "snapshot holds {scalar} values, expected {}",
            S::NAME
        )));
    }
    let length: usize = header_line(&mut rest, "length")?
        .parse()
        .map_err(|_| ReplayError::Format("bad length header".into()))?;
    let digest = header_line(&mut rest, "sha256")?.to_string();
    if rest.len() != length {
        return Err(ReplayError::Checksum(format!(
            "body is {} bytes, header says {length}",
            rest.len()
        )));
    }
    let actual = hex(&Sha256::digest(rest));
    if actual != digest {
        return Err(ReplayError::Checksum(format!(
            "expected {digest}, computed {actual}"
        )));
    }
    let body: SnapshotBody<S> =
        serde_json::from_slice(rest).map_err(|e| ReplayError::Format(e.to_string()))?;
    body.config
        .validate()
        .map_err(|e| ReplayError::Config(e.to_string()))?;
    let dim = body.config.embedding_dim;
    let edges: BTreeSet<(NodeId, NodeId)> = body.edges.into_iter().collect();
    let graph = MemoryGraph::from_parts(body.config, body.nodes, edges, body.next_node_id)
        .map_err(|e| ReplayError::Format(e.to_string()))?;
    let captions = CaptionStore::from_records(dim, body.captions)
        .map_err(|e| ReplayError::Format(e.to_string()))?;
    Ok(Snapshot {
        state: MemoryState { graph, captions },
        stats: body.stats,
        provider: body.provider,
    })
}

/// Writes via a temporary file and rename so readers never see a partial file.
pub fn save_snapshot<S: Scalar>(
    snap: &Snapshot<S>,
    path: impl AsRef<Path>,
) -> Result<(), ReplayError> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_snapshot(snap))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_snapshot<S: Scalar>(path: impl AsRef<Path>) -> Result<Snapshot<S>, ReplayError> {
    decode_snapshot(&fs::read(path)?)
}

/// Reads a JSON config file; omitted fields take their defaults.
pub fn load_config(path: impl AsRef<Path>) -> Result<Config, ReplayError> {
    let text = fs::read_to_string(path)?;
    let cfg: Config =
        serde_json::from_str(&text).map_err(|e| ReplayError::Config(e.to_string()))?;
    cfg.validate()
        .map_err(|e| ReplayError::Config(e.to_string()))?;
    Ok(cfg)
}
