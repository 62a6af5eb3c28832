//! Independent reference implementations and random fixtures shared by the
//! integration tests and the acceptance runner.
//!
//! Nothing here calls engine ranking or merge code. Rankings are full scans
//! followed by a full sort; ingestion keeps every sighting and recomputes
//! means from scratch.

#![allow(dead_code)]

use std::collections::BTreeSet;

use lgr_core::captions::{CaptionRecord, CaptionStore, RecordId};
use lgr_core::graph::{EntityNode, MemoryGraph, NodeId};
use lgr_core::model::{Caption, Config, Embedding, Label, Observation, Pose, Timestamp};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn random_embedding<R: Rng>(rng: &mut R, dim: usize) -> Embedding {
    Embedding::normalized_f64(&random_unit(rng, dim)).unwrap()
}

/// Cosine similarity straight from the definition.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for i in 0..a.len() {
        let (x, y) = (a[i] as f64, b[i] as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na.sqrt() * nb.sqrt())
}

pub fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Full-scan oracle: scores every item, sorts all of them by
/// (`ascending ? score : −score`, id) and keeps the first `k`.
pub fn full_sort<T>(
    items: &[T],
    k: usize,
    ascending: bool,
    score: impl Fn(&T) -> f64,
    id: impl Fn(&T) -> u64,
) -> Vec<(u64, f64)> {
    let mut all: Vec<(f64, u64, f64)> = items
        .iter()
        .map(|it| {
            let s = score(it);
            (if ascending { s } else { -s }, id(it), s)
        })
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(k);
    all.into_iter().map(|(_, id, s)| (id, s)).collect()
}

/// Compares an engine ranking with an oracle ranking: identical ids in
/// identical order, scores within `tol`.
pub fn same_ranking(engine: &[(u64, f64)], oracle: &[(u64, f64)], tol: f64) -> Result<(), String> {
    if engine.len() != oracle.len() {
        return Err(format!(
            "length {} vs oracle {}",
            engine.len(),
            oracle.len()
        ));
    }
    for (i, (e, o)) in engine.iter().zip(oracle).enumerate() {
        if e.0 != o.0 {
            return Err(format!("rank {i}: id {} vs oracle {}", e.0, o.0));
        }
        if (e.1 - o.1).abs() > tol {
            return Err(format!("rank {i}: score {} vs oracle {}", e.1, o.1));
        }
    }
    Ok(())
}

/// A graph of `n` random nodes built directly from parts. Times are whole
/// seconds and positions are rounded to 0.5 m so that ties occur.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> MemoryGraph<f64> {
    let cfg = Config {
        embedding_dim: dim,
        ..Config::default()
    };
    let nodes: Vec<EntityNode<f64>> = (0..n)
        .map(|i| {
            let first = rng.gen_range(0..600) as f64;
            let last = first + rng.gen_range(0..600) as f64;
            let coord =
                |rng: &mut ChaCha8Rng| (rng.gen_range(-100.0..100.0f64) * 2.0).round() / 2.0;
            EntityNode {
                id: NodeId(i as u64 + 1),
                label: format!("entity-{i}"),
                embedding: random_embedding(rng, dim),
                pose: Pose {
                    x: coord(rng),
                    y: coord(rng),
                    z: rng.gen_range(0..3) as f64,
                    yaw: 0.0,
                },
                first_seen: Timestamp::new(first).unwrap(),
                last_seen: Timestamp::new(last).unwrap(),
                obs_count: rng.gen_range(1..20),
            }
        })
        .collect();
    MemoryGraph::from_parts(cfg, nodes, BTreeSet::new(), n as u64 + 1).unwrap()
}

pub fn random_captions(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> CaptionStore<f64> {
    let records = (0..n)
        .map(|i| CaptionRecord {
            id: RecordId(i as u64 + 1),
            text: format!("caption {i}"),
            embedding: random_embedding(rng, dim),
            pose: Pose {
                x: rng.gen_range(-100..100) as f64,
                y: rng.gen_range(-100..100) as f64,
                z: 0.0,
                yaw: 0.0,
            },
            time: Timestamp::new((i as f64 * 2.0).floor()).unwrap(),
        })
        .collect();
    CaptionStore::from_records(dim, records).unwrap()
}

/// A bank of concepts, each with several surface forms whose pairwise
/// similarity is high; distinct concepts are near-orthogonal.
pub struct ConceptBank {
    pub forms: Vec<Vec<(String, Embedding)>>,
}

impl ConceptBank {
    pub fn new(
        rng: &mut ChaCha8Rng,
        concepts: usize,
        forms: usize,
        dim: usize,
        noise: f64,
    ) -> Self {
        let forms = (0..concepts)
            .map(|c| {
                let base = random_unit(rng, dim);
                (0..forms)
                    .map(|f| {
                        let n = random_unit(rng, dim);
                        let v: Vec<f64> = base.iter().zip(&n).map(|(b, n)| b + noise * n).collect();
                        (
                            format!("concept{c}-form{f}"),
                            Embedding::normalized_f64(&v).unwrap(),
                        )
                    })
                    .collect()
            })
            .collect();
        Self { forms }
    }
}

/// Random session: labels drawn from the concept bank (repeats in one frame
/// allowed), robot wandering in a small area so the spatial gate matters.
pub fn random_session(
    rng: &mut ChaCha8Rng,
    bank: &ConceptBank,
    n_obs: usize,
    extent: f64,
) -> Vec<Observation<f64>> {
    let mut t = 0.0;
    (0..n_obs)
        .map(|i| {
            t += rng.gen_range(0..3) as f64;
            let n_labels = rng.gen_range(0..5);
            let labels = (0..n_labels)
                .map(|_| {
                    let c = rng.gen_range(0..bank.forms.len());
                    let f = rng.gen_range(0..bank.forms[c].len());
                    let (text, e) = &bank.forms[c][f];
                    Label {
                        text: text.clone(),
                        embedding: e.clone(),
                    }
                })
                .collect();
            let caption_e = bank.forms[0][0].1.clone();
            Observation {
                frame_id: format!("f{i}"),
                pose: Pose::new(
                    rng.gen_range(-extent..extent),
                    rng.gen_range(-extent..extent),
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(-3.0..3.0),
                )
                .unwrap(),
                time: Timestamp::new(t).unwrap(),
                labels,
                caption: Some(Caption {
                    text: format!("scene {i}"),
                    embedding: caption_e,
                }),
            }
        })
        .collect()
}

/// Reference node: every sighting retained.
#[derive(Debug, Clone)]
pub struct NaiveNode {
    pub label: String,
    pub embedding: Vec<f32>,
    pub yaw: f64,
    pub sightings: Vec<([f64; 3], f64)>,
}

impl NaiveNode {
    pub fn mean(&self) -> [f64; 3] {
        let n = self.sightings.len() as f64;
        let mut s = [0.0; 3];
        for (p, _) in &self.sightings {
            for i in 0..3 {
                s[i] += p[i];
            }
        }
        [s[0] / n, s[1] / n, s[2] / n]
    }

    pub fn last_seen(&self) -> f64 {
        self.sightings
            .iter()
            .map(|s| s.1)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Literal reading of the update-or-create rule. Quadratic per frame.
///
/// Per frame: labels are partitioned into connected components of the
/// "similarity above δ_E" relation, each component represented by its
/// lowest-index label. For each component in order of its representative,
/// candidate nodes are those that existed before the frame, are not yet taken
/// by an earlier component, lie within δ_P of the robot and are similar above
/// δ_E to the representative. With k labels and h candidates, the min(k, h)
/// closest candidates (lowest index on distance ties) get one sighting each
/// and k − h new nodes are created when k > h.
pub fn naive_ingest(cfg: &Config, session: &[Observation<f64>]) -> Vec<NaiveNode> {
    let mut nodes: Vec<NaiveNode> = Vec::new();
    for obs in session {
        let p = [obs.pose.x, obs.pose.y, obs.pose.z];
        let labels = &obs.labels;
        let n = labels.len();
        let mut component = vec![usize::MAX; n];
        let mut comps: Vec<Vec<usize>> = Vec::new();
        for start in 0..n {
            if component[start] != usize::MAX {
                continue;
            }
            let c = comps.len();
            let mut members = vec![start];
            component[start] = c;
            let mut frontier = vec![start];
            while let Some(i) = frontier.pop() {
                for j in 0..n {
                    if component[j] == usize::MAX
                        && cosine(
                            labels[i].embedding.as_slice(),
                            labels[j].embedding.as_slice(),
                        ) > cfg.delta_e
                    {
                        component[j] = c;
                        members.push(j);
                        frontier.push(j);
                    }
                }
            }
            members.sort();
            comps.push(members);
        }

        let existing = nodes.len();
        let means: Vec<[f64; 3]> = nodes.iter().map(NaiveNode::mean).collect();
        let mut taken = vec![false; existing];
        let mut pending: Vec<usize> = Vec::new();
        let mut fresh: Vec<NaiveNode> = Vec::new();
        for members in &comps {
            let rep = &labels[members[0]];
            let mut cands: Vec<(f64, usize)> = Vec::new();
            for idx in 0..existing {
                if taken[idx] {
                    continue;
                }
                let d = dist3(means[idx], p);
                if d <= cfg.delta_p
                    && cosine(&nodes[idx].embedding, rep.embedding.as_slice()) > cfg.delta_e
                {
                    cands.push((d, idx));
                }
            }
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let k = members.len();
            for &(_, idx) in cands.iter().take(k) {
                taken[idx] = true;
                pending.push(idx);
            }
            for _ in cands.len()..k {
                fresh.push(NaiveNode {
                    label: rep.text.clone(),
                    embedding: rep.embedding.as_slice().to_vec(),
                    yaw: obs.pose.yaw,
                    sightings: vec![(p, obs.time.secs())],
                });
            }
        }
        for idx in pending {
            nodes[idx].sightings.push((p, obs.time.secs()));
        }
        nodes.extend(fresh);
    }
    nodes
}

/// Comparable form of a node: (label, last_seen, obs_count, pose).
pub type NodeKey = (String, f64, u64, [f64; 3]);

pub fn engine_keys(g: &MemoryGraph<f64>) -> Vec<NodeKey> {
    let mut v: Vec<NodeKey> = g
        .nodes()
        .iter()
        .map(|n| {
            (
                n.label.clone(),
                n.last_seen.secs(),
                n.obs_count,
                [n.pose.x, n.pose.y, n.pose.z],
            )
        })
        .collect();
    sort_keys(&mut v);
    v
}

pub fn naive_keys(nodes: &[NaiveNode]) -> Vec<NodeKey> {
    let mut v: Vec<NodeKey> = nodes
        .iter()
        .map(|n| {
            (
                n.label.clone(),
                n.last_seen(),
                n.sightings.len() as u64,
                n.mean(),
            )
        })
        .collect();
    sort_keys(&mut v);
    v
}

fn sort_keys(v: &mut [NodeKey]) {
    v.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3[0].total_cmp(&b.3[0]))
            .then(a.3[1].total_cmp(&b.3[1]))
            .then(a.3[2].total_cmp(&b.3[2]))
    });
}

/// Multiset equality with a per-component pose tolerance. Keys are sorted,
/// so rounding may reorder entries that differ only in pose; those are paired
/// greedily.
pub fn same_nodes(engine: &[NodeKey], naive: &[NodeKey], tol: f64) -> Result<(), String> {
    if engine.len() != naive.len() {
        return Err(format!(
            "{} nodes vs reference {}",
            engine.len(),
            naive.len()
        ));
    }
    let mut used = vec![false; naive.len()];
    for e in engine {
        let hit = naive.iter().enumerate().position(|(i, r)| {
            !used[i]
                && r.0 == e.0
                && r.1 == e.1
                && r.2 == e.2
                && (0..3).all(|c| (r.3[c] - e.3[c]).abs() <= tol)
        });
        match hit {
            Some(i) => used[i] = true,
            None => return Err(format!("no reference node matches {e:?}")),
        }
    }
    Ok(())
}

/// Runs `queries` random queries against each of the six retrieval operations
/// and compares every result list with [`full_sort`].
pub fn check_retrieval(
    seed: u64,
    n_nodes: usize,
    n_captions: usize,
    queries: usize,
    dim: usize,
) -> Result<(), String> {
    use lgr_core::model::ClockTime;
    use lgr_core::tools::{positional_search, semantic_search_embedding, temporal_search};
    use rand::SeedableRng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = random_graph(&mut rng, n_nodes, dim);
    let store = random_captions(&mut rng, n_captions, dim);
    let nodes = g.nodes();
    let recs = store.records();
    let graph_ids = |hits: Vec<lgr_core::tools::RetrievalHit<f64>>| -> Vec<(u64, f64)> {
        hits.into_iter().map(|h| (h.node_id.0, h.score)).collect()
    };
    let cap_ids = |hits: Vec<lgr_core::captions::CaptionHit<f64>>| -> Vec<(u64, f64)> {
        hits.into_iter().map(|h| (h.record_id.0, h.score)).collect()
    };
    for qi in 0..queries {
        let k = rng.gen_range(1..=25);
        let ctx = |op: &str, e: String| format!("seed {seed} query {qi} {op} k={k}: {e}");

        // reuse a stored vector now and then so exact-score ties happen
        let q = if rng.gen_bool(0.1) {
            nodes[rng.gen_range(0..nodes.len())].embedding.clone()
        } else {
            random_embedding(&mut rng, dim)
        };
        let engine = graph_ids(semantic_search_embedding(&g, &q, k).map_err(|e| e.to_string())?);
        let oracle = full_sort(
            nodes,
            k,
            false,
            |n| cosine(n.embedding.as_slice(), q.as_slice()),
            |n| n.id.0,
        );
        same_ranking(&engine, &oracle, 1e-6).map_err(|e| ctx("t_semantic", e))?;

        let (x, y, z) = (
            rng.gen_range(-100..100) as f64,
            rng.gen_range(-100..100) as f64,
            rng.gen_range(0..3) as f64,
        );
        let engine = graph_ids(positional_search(&g, x, y, z, k).map_err(|e| e.to_string())?);
        let oracle = full_sort(
            nodes,
            k,
            true,
            |n| dist3([n.pose.x, n.pose.y, n.pose.z], [x, y, z]),
            |n| n.id.0,
        );
        same_ranking(&engine, &oracle, 1e-6).map_err(|e| ctx("t_position", e))?;

        let secs = rng.gen_range(0..1300) as f64;
        let c = ClockTime::from_secs(secs);
        let engine =
            graph_ids(temporal_search(&g, c.hh, c.mm, c.ss, k).map_err(|e| e.to_string())?);
        let oracle = full_sort(
            nodes,
            k,
            true,
            |n| (n.last_seen.secs() - secs).abs(),
            |n| n.id.0,
        );
        same_ranking(&engine, &oracle, 1e-6).map_err(|e| ctx("t_time", e))?;

        let q = if rng.gen_bool(0.1) {
            recs[rng.gen_range(0..recs.len())].embedding.clone()
        } else {
            random_embedding(&mut rng, dim)
        };
        let engine = cap_ids(store.query_text(&q, k).map_err(|e| e.to_string())?);
        let oracle = full_sort(
            recs,
            k,
            false,
            |r| cosine(r.embedding.as_slice(), q.as_slice()),
            |r| r.id.0,
        );
        same_ranking(&engine, &oracle, 1e-6).map_err(|e| ctx("captions_text", e))?;

        let p = Pose::at(x, y, 0.0);
        let engine = cap_ids(store.query_position(&p, k).map_err(|e| e.to_string())?);
        let oracle = full_sort(
            recs,
            k,
            true,
            |r| dist3([r.pose.x, r.pose.y, r.pose.z], [x, y, 0.0]),
            |r| r.id.0,
        );
        same_ranking(&engine, &oracle, 1e-6).map_err(|e| ctx("captions_position", e))?;

        let t = Timestamp::new(secs).unwrap();
        let engine = cap_ids(store.query_time(t, k).map_err(|e| e.to_string())?);
        let oracle = full_sort(recs, k, true, |r| (r.time.secs() - secs).abs(), |r| r.id.0);
        same_ranking(&engine, &oracle, 1e-6).map_err(|e| ctx("captions_time", e))?;
    }
    Ok(())
}

/// Replays one random session through the engine and [`naive_ingest`];
/// returns the number of merges (sightings folded into existing nodes).
pub fn check_ingest(seed: u64, n_obs: usize, dim: usize) -> Result<usize, String> {
    use lgr_core::memory::MemoryState;
    use rand::SeedableRng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bank = ConceptBank::new(&mut rng, 6, 3, dim, 0.3);
    let session = random_session(&mut rng, &bank, n_obs, 8.0);
    let cfg = Config {
        embedding_dim: dim,
        ..Config::default()
    };
    let mut m = MemoryState::<f64>::new(cfg.clone()).map_err(|e| e.to_string())?;
    let summary = m.ingest_all(&session).map_err(|e| e.to_string())?;
    let reference = naive_ingest(&cfg, &session);
    same_nodes(&engine_keys(&m.graph), &naive_keys(&reference), 1e-6)
        .map_err(|e| format!("seed {seed}: {e}"))?;
    Ok(summary.nodes_updated)
}
