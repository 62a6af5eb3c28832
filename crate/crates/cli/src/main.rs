//! `lgr`: ingest robot logs, query the memory and score question sets.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use lgr_core::embedding::EmbeddingProvider;
use lgr_core::eval::{evaluate, load_qa, save_qa};
use lgr_core::memory::{IngestSummary, MemoryState, SharedMemory};
use lgr_core::replay::{load_config, load_snapshot, save_snapshot, write_log, LogStream, Snapshot};
use lgr_core::router::{fallback_percentage, Router, RuleBasedPlanner, ToolOutput};
use lgr_core::synth::{generate_synthetic_session, WorldSpec};
use lgr_core::{router, ClockTime, Config, FixtureProvider, HashProvider, Timestamp};

#[derive(Parser)]
#[command(
    name = "lgr",
    version,
    about = "Language-grounded spatial memory for mobile robots"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON config file; flags below override its values.
    #[arg(long, global = true, env = "LGR_CONFIG")]
    config: Option<PathBuf>,
    /// Spatial merge radius in meters.
    #[arg(long, global = true)]
    delta_p: Option<f64>,
    /// Semantic merge threshold on cosine similarity.
    #[arg(long, global = true)]
    delta_e: Option<f64>,
    /// Ingest subsampling period in seconds.
    #[arg(long, global = true)]
    period: Option<f64>,
    /// Embedding dimension.
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Seed for the hash embedding provider and the generator.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// `hash` or `fixture:<path>`. Defaults to the provider recorded in the snapshot.
    #[arg(long, global = true)]
    provider: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a JSON Lines log into a new snapshot.
    Ingest { log: PathBuf, snapshot: PathBuf },
    /// Run one retrieval tool, or the full router with `route`.
    Query(QueryArgs),
    /// Score a question set against a snapshot.
    Eval {
        snapshot: PathBuf,
        qa: PathBuf,
        /// Also write per-question rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Store the session statistics back into the snapshot.
        #[arg(long)]
        update_stats: bool,
    },
    /// Store sizes and caption fallback rate of a snapshot.
    Stats { snapshot: PathBuf },
    /// Write a synthetic log, question set and embedding fixture.
    Generate(GenerateArgs),
    /// Print the tool descriptors as JSON.
    Tools,
}

#[derive(Args)]
struct QueryArgs {
    snapshot: PathBuf,
    /// semantic, position, time, captions-text, captions-position, captions-time or route.
    tool: String,
    #[arg(long)]
    text: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    x: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    y: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    z: Option<f64>,
    #[arg(long)]
    hh: Option<u32>,
    #[arg(long)]
    mm: Option<u32>,
    #[arg(long)]
    ss: Option<f64>,
    /// Session time as `hh:mm:ss` or seconds; alternative to --hh/--mm/--ss.
    #[arg(long)]
    t: Option<String>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory; receives session.jsonl, qa.json and fixture.tsv.
    out_dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    entities: usize,
    #[arg(long, default_value_t = 600.0)]
    duration: f64,
    #[arg(long, default_value_t = 15.0)]
    spacing: f64,
    /// Report entities under random synonyms.
    #[arg(long)]
    synonym_noise: bool,
    /// Uniform x/y noise half-width on reported poses, meters.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
}

#[derive(Debug)]
struct UnknownTool(String);

impl std::fmt::Display for UnknownTool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "unknown tool: {}", self.0)
    }
}

impl std::error::Error for UnknownTool {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UnknownTool>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Ingest { log, snapshot } => ingest(g, log, snapshot),
        Command::Query(q) => query(g, q),
        Command::Eval {
            snapshot,
            qa,
            csv,
            update_stats,
        } => eval(g, snapshot, qa, csv.as_deref(), *update_stats),
        Command::Stats { snapshot } => stats(snapshot),
        Command::Generate(a) => generate(g, a),
        Command::Tools => {
            let cfg = resolve_config(g)?;
            let provider: Arc<dyn EmbeddingProvider> =
                Arc::new(HashProvider::new(g.seed, cfg.embedding_dim));
            let memory = SharedMemory::new(MemoryState::<f64>::new(cfg)?);
            let r = Router::new(memory, provider, Box::new(RuleBasedPlanner::new(0.45, 5)));
            print_json(&r.tool_descriptors())
        }
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(v)?) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

/// Defaults, then the config file, then flags.
fn resolve_config(g: &Global) -> Result<Config> {
    let mut cfg = match &g.config {
        Some(path) => {
            load_config(path).with_context(|| format!("reading config {}", path.display()))?
        }
        None => Config::default(),
    };
    if let Some(v) = g.delta_p {
        cfg.delta_p = v;
    }
    if let Some(v) = g.delta_e {
        cfg.delta_e = v;
    }
    if let Some(v) = g.period {
        cfg.subsample_period = v;
    }
    if let Some(v) = g.dim {
        cfg.embedding_dim = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Builds a provider from `hash`, `hash:<seed>`, `fixture:<path>` or
/// `fixture@<seed>:<path>`, returning it with the canonical form stored in
/// snapshots. The fixture seed drives the hash fallback for unseen text.
fn make_provider(
    desc: &str,
    seed: u64,
    dim: usize,
) -> Result<(Arc<dyn EmbeddingProvider>, String)> {
    if desc == "hash" {
        return Ok((
            Arc::new(HashProvider::new(seed, dim)),
            format!("hash:{seed}"),
        ));
    }
    if let Some(s) = desc.strip_prefix("hash:") {
        let seed: u64 = s.parse().with_context(|| format!("bad hash seed `{s}`"))?;
        return Ok((Arc::new(HashProvider::new(seed, dim)), desc.to_string()));
    }
    let fixture = match desc.strip_prefix("fixture@") {
        Some(rest) => {
            let (s, path) = rest
                .split_once(':')
                .ok_or_else(|| anyhow!("bad provider `{desc}`"))?;
            Some((
                s.parse::<u64>()
                    .with_context(|| format!("bad fixture seed `{s}`"))?,
                path,
            ))
        }
        None => desc.strip_prefix("fixture:").map(|path| (seed, path)),
    };
    if let Some((seed, path)) = fixture {
        let p = FixtureProvider::load(path, HashProvider::new(seed, dim))
            .with_context(|| format!("loading fixture {path}"))?;
        let abs = fs::canonicalize(path).unwrap_or_else(|_| PathBuf::from(path));
        return Ok((Arc::new(p), format!("fixture@{seed}:{}", abs.display())));
    }
    bail!("unknown provider `{desc}`; expected `hash` or `fixture:<path>`")
}

fn snapshot_provider(g: &Global, snap: &Snapshot<f64>) -> Result<Arc<dyn EmbeddingProvider>> {
    let dim = snap.state.config().embedding_dim;
    let desc = g
        .provider
        .clone()
        .or_else(|| snap.provider.clone())
        .unwrap_or_else(|| "hash".into());
    Ok(make_provider(&desc, g.seed, dim)?.0)
}

fn open_snapshot(path: &Path) -> Result<Snapshot<f64>> {
    load_snapshot(path).with_context(|| format!("loading snapshot {}", path.display()))
}

fn ingest(g: &Global, log: &Path, out: &Path) -> Result<()> {
    let cfg = resolve_config(g)?;
    let (provider, desc) = make_provider(
        g.provider.as_deref().unwrap_or("hash"),
        g.seed,
        cfg.embedding_dim,
    )?;
    let file = fs::File::open(log).with_context(|| format!("opening log {}", log.display()))?;
    let stream = LogStream::<_, f64>::new(std::io::BufReader::new(file), &cfg, provider.as_ref())?;
    let mut state = MemoryState::<f64>::new(cfg.clone())?;
    let start = std::time::Instant::now();
    let mut summary = IngestSummary::default();
    for obs in stream {
        let obs = obs.with_context(|| format!("reading {}", log.display()))?;
        summary.add(&state.ingest(&obs)?);
    }
    summary.node_count = state.graph.node_count();
    summary.caption_count = state.captions.len();
    summary.wall_time_secs = start.elapsed().as_secs_f64();
    let mut snap = Snapshot::new(state);
    snap.provider = Some(desc);
    save_snapshot(&snap, out).with_context(|| format!("writing snapshot {}", out.display()))?;
    print_json(&summary)
}

fn clock_args(q: &QueryArgs) -> Result<Value> {
    if let Some(t) = &q.t {
        let c = match t.parse::<f64>() {
            Ok(secs) => {
                Timestamp::new(secs)?;
                ClockTime::from_secs(secs)
            }
            Err(_) => ClockTime::parse(t)?,
        };
        return Ok(json!({"hh": c.hh, "mm": c.mm, "ss": c.ss}));
    }
    match (q.hh, q.mm, q.ss) {
        (Some(hh), Some(mm), Some(ss)) => Ok(json!({"hh": hh, "mm": mm, "ss": ss})),
        _ => bail!("time queries need --t or all of --hh, --mm, --ss"),
    }
}

fn xyz_args(q: &QueryArgs) -> Result<Value> {
    match (q.x, q.y, q.z) {
        (Some(x), Some(y), Some(z)) => Ok(json!({"x": x, "y": y, "z": z})),
        _ => bail!("position queries need --x, --y and --z"),
    }
}

fn text_arg(q: &QueryArgs) -> Result<Value> {
    match &q.text {
        Some(t) if !t.trim().is_empty() => Ok(json!({"query": t})),
        _ => bail!("this tool needs a non-empty --text"),
    }
}

fn query(g: &Global, q: &QueryArgs) -> Result<()> {
    let tool = match q.tool.as_str() {
        "semantic" => router::T_SEMANTIC,
        "position" => router::T_POSITION,
        "time" => router::T_TIME,
        "captions-text" => router::CAPTIONS_TEXT,
        "captions-position" => router::CAPTIONS_POSITION,
        "captions-time" => router::CAPTIONS_TIME,
        "route" => "route",
        other => return Err(UnknownTool(other.to_string()).into()),
    };
    if q.k == Some(0) {
        bail!("--k must be at least 1");
    }
    let snap = open_snapshot(&q.snapshot)?;
    let provider = snapshot_provider(g, &snap)?;
    let cfg = snap.state.config().clone();
    let planner = RuleBasedPlanner::new(cfg.relevance_floor, q.k.unwrap_or(cfg.default_k));
    let mut r = Router::new(SharedMemory::new(snap.state), provider, Box::new(planner));
    if tool == "route" {
        let text = q
            .text
            .as_deref()
            .filter(|t| !t.trim().is_empty())
            .ok_or_else(|| anyhow!("route needs --text"))?;
        return print_json(&r.answer_query(text));
    }
    let mut args = match tool {
        router::T_SEMANTIC | router::CAPTIONS_TEXT => text_arg(q)?,
        router::T_POSITION | router::CAPTIONS_POSITION => xyz_args(q)?,
        _ => clock_args(q)?,
    };
    if let Some(k) = q.k {
        args["k"] = json!(k);
    }
    print_json(&call_tool(&r, tool, &args)?)
}

fn call_tool(r: &Router<f64>, tool: &str, args: &Value) -> Result<Value> {
    match r.call_tool(tool, args).output {
        ToolOutput::Ok(v) => Ok(v),
        ToolOutput::Error(e) => Err(anyhow!(e)),
    }
}

fn eval(
    g: &Global,
    snapshot: &Path,
    qa: &Path,
    csv: Option<&Path>,
    update_stats: bool,
) -> Result<()> {
    let mut snap = open_snapshot(snapshot)?;
    let provider = snapshot_provider(g, &snap)?;
    let items = load_qa(qa).with_context(|| format!("loading questions {}", qa.display()))?;
    let cfg = snap.state.config().clone();
    let memory = SharedMemory::new(snap.state.clone());
    let mut r = Router::new(
        memory,
        provider,
        Box::new(RuleBasedPlanner::new(cfg.relevance_floor, cfg.default_k)),
    );
    let report = evaluate(&mut r, &items)?;
    if let Some(path) = csv {
        fs::write(path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    if update_stats {
        let s = r.stats();
        snap.stats.n_queries += s.n_queries;
        snap.stats.n_vector_calls += s.n_vector_calls;
        snap.stats.latencies.extend_from_slice(&s.latencies);
        snap.stats.traces.extend(s.traces.iter().cloned());
        save_snapshot(&snap, snapshot)?;
    }
    print_json(&report)
}

fn stats(snapshot: &Path) -> Result<()> {
    let snap = open_snapshot(snapshot)?;
    let fallback = fallback_percentage(&snap.stats).ok();
    print_json(&json!({
        "nodes": snap.state.graph.node_count(),
        "edges": snap.state.graph.edges().len(),
        "captions": snap.state.captions.len(),
        "queries": snap.stats.n_queries,
        "vector_calls": snap.stats.n_vector_calls,
        "fallback": fallback,
        "provider": snap.provider,
    }))
}

fn generate(g: &Global, a: &GenerateArgs) -> Result<()> {
    let cfg = resolve_config(g)?;
    let mut world = WorldSpec::random(g.seed, a.entities, a.duration, a.spacing)?;
    world.synonym_noise = a.synonym_noise;
    world.pose_jitter = a.jitter;
    let session = generate_synthetic_session(g.seed, &world)?;
    let fixture = world.fixture_provider(g.seed, cfg.embedding_dim, cfg.delta_e)?;
    fs::create_dir_all(&a.out_dir)?;
    let log_path = a.out_dir.join("session.jsonl");
    let mut buf = Vec::new();
    write_log(&mut buf, &session.log)?;
    fs::write(&log_path, buf)?;
    save_qa(&session.qa, a.out_dir.join("qa.json"))?;
    fs::write(a.out_dir.join("fixture.tsv"), fixture.to_fixture_text())?;
    print_json(&json!({
        "frames": session.log.len(),
        "questions": session.qa.len(),
        "entities": world.entities.len(),
        "log": log_path,
    }))
}
