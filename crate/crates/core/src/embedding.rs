//! Text-embedding providers and similarity math.
//!
//! No encoder model ships with the engine. [`HashProvider`] produces stable
//! pseudo-random unit vectors keyed on `(seed, text)`; [`FixtureProvider`]
//! serves a fixed table and falls back to hashing for unseen text. A live
//! sentence encoder plugs in by implementing [`EmbeddingProvider`].

use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Embedding, ModelError};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("fixture line {line}: {msg}")]
    Fixture { line: usize, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Cosine similarity `(a·b)/(‖a‖‖b‖)`, accumulated in `f64` and clamped to
/// `[−1, 1]`. A zero vector has similarity 0 with everything.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch(a.dim(), b.dim()));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Similarity between two stored (unit) embeddings: their dot product, clamped.
pub fn unit_similarity(a: &Embedding, b: &Embedding) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(a.dot(b).clamp(-1.0, 1.0))
}

pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;

    /// Deterministic, unit-norm embedding of `text`.
    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError>;
}

/// Embeds `text` with `provider`, rejecting empty input and checking the
/// provider honoured its dimension.
pub fn embed_text<P: EmbeddingProvider + ?Sized>(
    provider: &P,
    text: &str,
) -> Result<Embedding, EmbeddingError> {
    if text.trim().is_empty() {
        return Err(EmbeddingError::EmptyText);
    }
    let e = provider.embed(text)?;
    if e.dim() != provider.dimension() {
        return Err(EmbeddingError::DimensionMismatch(
            e.dim(),
            provider.dimension(),
        ));
    }
    Ok(e)
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based hash embedding.
///
/// Component `i` of `embed(text)` is `splitmix64(key + (i+1)·γ)` mapped to
/// `[−1, 1)`, where `key` is the first 8 bytes of `SHA-256(seed_le ‖ text)`.
/// Only integer ops, exact int→float conversion and `sqrt` are involved, so
/// output is bit-identical on every IEEE-754 platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashProvider {
    seed: u64,
    dim: usize,
}

impl HashProvider {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { seed, dim }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn key(&self, text: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(text.as_bytes());
        let digest = h.finalize();
        let mut k = [0u8; 8];
        k.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(k)
    }

    fn raw(&self, text: &str) -> Vec<f64> {
        let key = self.key(text);
        (0..self.dim as u64)
            .map(|i| {
                let bits = splitmix64(key.wrapping_add((i + 1).wrapping_mul(GOLDEN_GAMMA)));
                let unit = (bits >> 11) as f64 / (1u64 << 53) as f64;
                2.0 * unit - 1.0
            })
            .collect()
    }
}

impl EmbeddingProvider for HashProvider {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        Ok(Embedding::normalized_f64(&self.raw(text))?)
    }
}

/// Fixed text→vector table with a hash fallback for unseen text.
#[derive(Debug, Clone)]
pub struct FixtureProvider {
    table: HashMap<String, Embedding>,
    fallback: HashProvider,
}

impl FixtureProvider {
    pub fn new(fallback: HashProvider) -> Self {
        Self {
            table: HashMap::new(),
            fallback,
        }
    }

    /// Adds (or replaces) an entry; the vector is normalized on insert.
    pub fn insert(
        &mut self,
        text: impl Into<String>,
        values: Vec<f32>,
    ) -> Result<(), EmbeddingError> {
        if values.len() != self.fallback.dimension() {
            return Err(EmbeddingError::DimensionMismatch(
                values.len(),
                self.fallback.dimension(),
            ));
        }
        self.table
            .insert(text.into(), Embedding::normalized(values)?);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn contains(&self, text: &str) -> bool {
        self.table.contains_key(text)
    }

    /// Parses the fixture text format: one record per line, `text<TAB>v1,v2,…`.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse(src: &str, fallback: HashProvider) -> Result<Self, EmbeddingError> {
        let mut provider = Self::new(fallback);
        for (idx, line) in src.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| EmbeddingError::Fixture { line: line_no, msg };
            let (text, vec) = line
                .split_once('\t')
                .ok_or_else(|| err("missing tab separator".into()))?;
            if text.is_empty() {
                return Err(err("empty key".into()));
            }
            let values = vec
                .split(',')
                .map(|v| v.trim().parse::<f32>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| err(format!("bad component: {e}")))?;
            provider
                .insert(text, values)
                .map_err(|e| err(e.to_string()))?;
        }
        Ok(provider)
    }

    pub fn load(path: impl AsRef<Path>, fallback: HashProvider) -> Result<Self, EmbeddingError> {
        Self::parse(&std::fs::read_to_string(path)?, fallback)
    }

    /// Writes the table in the format [`FixtureProvider::parse`] reads, sorted by key.
    pub fn to_fixture_text(&self) -> String {
        let mut keys: Vec<&String> = self.table.keys().collect();
        keys.sort();
        let mut out = String::new();
        for k in keys {
            let vals: Vec<String> = self.table[k]
                .as_slice()
                .iter()
                .map(|v| v.to_string())
                .collect();
            out.push_str(k);
            out.push('\t');
            out.push_str(&vals.join(","));
            out.push('\n');
        }
        out
    }
}

impl EmbeddingProvider for FixtureProvider {
    fn dimension(&self) -> usize {
        self.fallback.dimension()
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        match self.table.get(text) {
            Some(e) => Ok(e.clone()),
            None => self.fallback.embed(text),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &[f32]) -> Embedding {
        Embedding::from_raw(v.to_vec())
    }

    #[test]
    fn cosine_examples() {
        let v = HashProvider::new(1, 16).embed("v").unwrap();
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            cosine_similarity(&e(&[1.0, 0.0, 0.0]), &e(&[0.0, 1.0, 0.0])).unwrap(),
            0.0
        );
        let s = std::f32::consts::FRAC_1_SQRT_2;
        let c = cosine_similarity(&e(&[1.0, 0.0]), &e(&[s, s])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
    }

    #[test]
    fn cosine_rejects_mismatched_dims() {
        assert!(matches!(
            cosine_similarity(&e(&[1.0]), &e(&[1.0, 0.0])),
            Err(EmbeddingError::DimensionMismatch(1, 2))
        ));
    }

    #[test]
    fn hash_provider_is_deterministic_and_unit() {
        let p = HashProvider::new(7, 384);
        let a = embed_text(&p, "cup").unwrap();
        let b = embed_text(&p, "cup").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 384);
        assert!(a.is_normalized());
        assert_ne!(a, HashProvider::new(8, 384).embed("cup").unwrap());
    }

    // Frozen from the shipped hash; guards against silent drift of the generator.
    #[test]
    fn hash_provider_regression_value() {
        let p = HashProvider::new(7, 384);
        let cup = p.embed("cup").unwrap();
        let mug = p.embed("mug").unwrap();
        let sim = cosine_similarity(&cup, &mug).unwrap();
        assert!(
            (sim - HASH_CUP_MUG).abs() < 1e-9,
            "cup/mug similarity drifted: {sim}"
        );
        assert_eq!(cup.as_slice()[0].to_bits(), HASH_CUP_FIRST_BITS);
    }

    const HASH_CUP_MUG: f64 = 0.04804276881574759;
    const HASH_CUP_FIRST_BITS: u32 = 0xbcad_1475;

    #[test]
    fn empty_text_rejected() {
        let p = HashProvider::new(7, 8);
        assert!(matches!(embed_text(&p, ""), Err(EmbeddingError::EmptyText)));
        assert!(matches!(
            embed_text(&p, "   "),
            Err(EmbeddingError::EmptyText)
        ));
    }

    #[test]
    fn fixture_table_dominates_fallback() {
        let mut f = FixtureProvider::new(HashProvider::new(7, 3));
        f.insert("cup", vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(f.embed("cup").unwrap(), e(&[1.0, 0.0, 0.0]));
        assert_eq!(
            f.embed("mug").unwrap(),
            HashProvider::new(7, 3).embed("mug").unwrap()
        );
        assert!(f.insert("bad", vec![1.0]).is_err());
    }

    #[test]
    fn fixture_text_round_trip() {
        let src = "# comment\ncup\t1,0,0\n\nfire hydrant\t0,3,4\n";
        let f = FixtureProvider::parse(src, HashProvider::new(1, 3)).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f.embed("fire hydrant").unwrap(), e(&[0.0, 0.6, 0.8]));
        let again = FixtureProvider::parse(&f.to_fixture_text(), HashProvider::new(1, 3)).unwrap();
        assert_eq!(
            again.embed("fire hydrant").unwrap(),
            f.embed("fire hydrant").unwrap()
        );
    }

    #[test]
    fn fixture_parse_errors_carry_line_numbers() {
        let err =
            FixtureProvider::parse("cup\t1,0,0\nmug 1,0,0\n", HashProvider::new(1, 3)).unwrap_err();
        assert!(matches!(err, EmbeddingError::Fixture { line: 2, .. }));
        let err = FixtureProvider::parse("cup\t1,0\n", HashProvider::new(1, 3)).unwrap_err();
        assert!(matches!(err, EmbeddingError::Fixture { line: 1, .. }));
    }
}
