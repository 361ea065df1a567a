//! Token featurization and the trainable projection encoder.
//!
//! The base featurizer is frozen and deterministic: signed character n-gram
//! hashes plus a dense block describing numeric tokens (digit count,
//! decimal flag, magnitude bucket one-hot and a log-magnitude thermometer),
//! so magnitude is linearly recoverable from the features. A linear
//! projection followed by L2 normalization maps features to token rows.
//! Documents go through this encoder only; queries are gated afterwards.

use crate::error::{Error, Result};
use crate::gate::{apply_gate, GateConfig, GateForward, Routing};
use crate::model::{Block, ModelParams};
use crate::text::{parse_number, tokenize};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0100_0000_01b3;

pub const MAG_MIN: i32 = -6;
pub const MAG_MAX: i32 = 12;
const MAG_BUCKETS: usize = (MAG_MAX - MAG_MIN + 1) as usize;
const THERMO_START: f64 = -2.0;
const THERMO_STEP: f64 = 0.5;
const THERMO_LEVELS: usize = 26;

pub const SLOT_IS_NUMERIC: usize = 0;
pub const SLOT_DIGITS: usize = 1;
pub const SLOT_DECIMAL: usize = 2;
pub const SLOT_MAGNITUDE: usize = 3;
pub const SLOT_BUCKET_ONE_HOT: usize = 4;
pub const SLOT_THERMOMETER: usize = SLOT_BUCKET_ONE_HOT + MAG_BUCKETS;
/// Dense numeric slots occupy `[0, NUMERIC_SLOTS)`; hashed n-grams follow.
pub const NUMERIC_SLOTS: usize = SLOT_THERMOMETER + THERMO_LEVELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbedderConfig {
    pub dim: usize,
    pub feature_dim: usize,
    pub seed: u64,
    pub ngram_min: usize,
    pub ngram_max: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            feature_dim: 512,
            seed: 42,
            ngram_min: 2,
            ngram_max: 3,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > self.feature_dim {
            return Err(Error::InvalidConfig(format!(
                "embedder dim {} must be in 1..={}",
                self.dim, self.feature_dim
            )));
        }
        if self.feature_dim < NUMERIC_SLOTS + 16 {
            return Err(Error::InvalidConfig(format!(
                "feature_dim must be at least {}",
                NUMERIC_SLOTS + 16
            )));
        }
        if self.ngram_min == 0 || self.ngram_min > self.ngram_max {
            return Err(Error::InvalidConfig("bad n-gram range".into()));
        }
        Ok(())
    }

    fn hashed_slots(&self) -> usize {
        self.feature_dim - NUMERIC_SLOTS
    }
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut hash = FNV_OFFSET ^ seed.wrapping_mul(FNV_PRIME);
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Sparse feature vector with sorted, unique slot indices.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseFeatures {
    pub idx: Vec<u32>,
    pub val: Vec<f64>,
}

impl BaseFeatures {
    pub fn get(&self, slot: usize) -> f64 {
        match self.idx.binary_search(&(slot as u32)) {
            Ok(i) => self.val[i],
            Err(_) => 0.0,
        }
    }

    pub fn is_numeric(&self) -> bool {
        self.get(SLOT_IS_NUMERIC) > 0.0
    }

    pub fn magnitude_bucket(&self) -> Option<i32> {
        (0..MAG_BUCKETS)
            .find(|&b| self.get(SLOT_BUCKET_ONE_HOT + b) > 0.0)
            .map(|b| b as i32 + MAG_MIN)
    }

    pub fn nnz(&self) -> usize {
        self.idx.len()
    }

    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for (&i, &v) in self.idx.iter().zip(&self.val) {
            out[i as usize] = v;
        }
        out
    }
}

pub fn magnitude_bucket(value: f64) -> i32 {
    let abs = value.abs();
    if abs == 0.0 {
        return MAG_MIN;
    }
    (abs.log10().floor() as i32).clamp(MAG_MIN, MAG_MAX)
}

pub fn base_embed(token: &str, cfg: &EmbedderConfig) -> BaseFeatures {
    let mut entries: Vec<(u32, f64)> = Vec::new();
    if let Some(value) = parse_number(token) {
        let digits = token.chars().filter(|c| c.is_ascii_digit()).count();
        entries.push((SLOT_IS_NUMERIC as u32, 1.0));
        entries.push((SLOT_DIGITS as u32, digits as f64 / 8.0));
        if token.contains('.') {
            entries.push((SLOT_DECIMAL as u32, 1.0));
        }
        let bucket = magnitude_bucket(value);
        if bucket != 0 {
            entries.push((SLOT_MAGNITUDE as u32, bucket as f64 / 6.0));
        }
        entries.push(((SLOT_BUCKET_ONE_HOT as i32 + bucket - MAG_MIN) as u32, 1.0));
        if value != 0.0 {
            let lg = value.abs().log10();
            for k in 0..THERMO_LEVELS {
                if lg >= THERMO_START + THERMO_STEP * k as f64 {
                    entries.push(((SLOT_THERMOMETER + k) as u32, 0.5));
                }
            }
        }
    }

    let marked: Vec<char> = std::iter::once('<')
        .chain(token.chars())
        .chain(std::iter::once('>'))
        .collect();
    let hashed = cfg.hashed_slots() as u64;
    let mut buf = String::new();
    for n in cfg.ngram_min..=cfg.ngram_max {
        if marked.len() < n {
            continue;
        }
        for w in marked.windows(n) {
            buf.clear();
            buf.extend(w);
            let h = fnv1a(buf.as_bytes(), cfg.seed);
            let slot = NUMERIC_SLOTS as u64 + h % hashed;
            let sign = if (h >> 40) & 1 == 1 { -1.0 } else { 1.0 };
            entries.push((slot as u32, sign));
        }
    }

    entries.sort_by_key(|e| e.0);
    let mut idx = Vec::with_capacity(entries.len());
    let mut val: Vec<f64> = Vec::with_capacity(entries.len());
    for (i, v) in entries {
        if idx.last() == Some(&i) {
            *val.last_mut().unwrap() += v;
        } else {
            idx.push(i);
            val.push(v);
        }
    }
    let keep: Vec<bool> = val.iter().map(|v| *v != 0.0).collect();
    let mut k = keep.iter();
    idx.retain(|_| *k.next().unwrap());
    val.retain(|v| *v != 0.0);
    BaseFeatures { idx, val }
}

/// Encoded token rows with what the backward pass needs.
#[derive(Debug, Clone)]
pub struct EncodedText {
    pub tokens: Vec<String>,
    pub features: Vec<BaseFeatures>,
    /// L2 norm of each pre-normalization row.
    pub norms: Vec<f64>,
    /// Unit-norm rows.
    pub rows: Vec<Vec<f64>>,
}

pub fn encode_tokens(tokens: Vec<String>, params: &ModelParams) -> EncodedText {
    let cfg = &params.config.embedder;
    let features: Vec<BaseFeatures> = tokens.iter().map(|t| base_embed(t, cfg)).collect();
    encode_features(tokens, features, params)
}

pub fn encode_features(tokens: Vec<String>, features: Vec<BaseFeatures>, params: &ModelParams) -> EncodedText {
    let (norms, rows) = project(&features, params);
    EncodedText {
        tokens,
        features,
        norms,
        rows,
    }
}

/// Projects sparse base features and L2-normalizes; returns (norms, rows).
pub fn project(features: &[BaseFeatures], params: &ModelParams) -> (Vec<f64>, Vec<Vec<f64>>) {
    let cfg = &params.config.embedder;
    let (d, f) = (cfg.dim, cfg.feature_dim);
    let w = params.block(Block::ProjectionW);
    let b = params.block(Block::ProjectionB);
    let mut norms = Vec::with_capacity(features.len());
    let mut rows = Vec::with_capacity(features.len());
    for feat in features {
        let mut z = b.to_vec();
        for (r, zr) in z.iter_mut().enumerate() {
            let wr = &w[r * f..(r + 1) * f];
            for (&i, &v) in feat.idx.iter().zip(&feat.val) {
                *zr += wr[i as usize] * v;
            }
        }
        let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        for x in z.iter_mut() {
            *x /= norm;
        }
        debug_assert_eq!(z.len(), d);
        norms.push(norm);
        rows.push(z);
    }
    (norms, rows)
}

/// Backpropagates row gradients through normalization and projection.
pub fn projection_backward(enc: &EncodedText, d_rows: &[Vec<f64>], params: &ModelParams, grad: &mut [f64]) {
    project_backward(&enc.features, &enc.norms, &enc.rows, d_rows, params, grad)
}

pub fn project_backward(
    features: &[BaseFeatures],
    norms: &[f64],
    rows: &[Vec<f64>],
    d_rows: &[Vec<f64>],
    params: &ModelParams,
    grad: &mut [f64],
) {
    let f = params.config.embedder.feature_dim;
    let layout = params.layout();
    let w_off = layout.range(Block::ProjectionW).start;
    let b_off = layout.range(Block::ProjectionB).start;
    for ((row, norm), (feat, de)) in rows.iter().zip(norms).zip(features.iter().zip(d_rows)) {
        if de.iter().all(|g| *g == 0.0) {
            continue;
        }
        let proj: f64 = row.iter().zip(de).map(|(e, g)| e * g).sum();
        for (r, (&e, &g)) in row.iter().zip(de).enumerate() {
            let dz = (g - e * proj) / norm;
            if dz == 0.0 {
                continue;
            }
            grad[b_off + r] += dz;
            let base = w_off + r * f;
            for (&i, &v) in feat.idx.iter().zip(&feat.val) {
                grad[base + i as usize] += dz * v;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocEmbeddings {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl DocEmbeddings {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Canonical little-endian byte form (doc id, tokens, f64 rows).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.doc_id.len() as u32).to_le_bytes());
        out.extend_from_slice(self.doc_id.as_bytes());
        out.extend_from_slice(&(self.tokens.len() as u32).to_le_bytes());
        for t in &self.tokens {
            out.extend_from_slice(&(t.len() as u32).to_le_bytes());
            out.extend_from_slice(t.as_bytes());
        }
        for r in &self.rows {
            for v in r {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

pub fn encode_document(doc_id: &str, text: &str, params: &ModelParams) -> DocEmbeddings {
    let enc = encode_tokens(tokenize(text), params);
    DocEmbeddings {
        doc_id: doc_id.to_string(),
        tokens: enc.tokens,
        rows: enc.rows,
    }
}

#[derive(Debug, Clone)]
pub struct QueryEmbeddings {
    pub tokens: Vec<String>,
    /// Unit-norm rows before gating.
    pub rows: Vec<Vec<f64>>,
    /// Rows used for scoring: `g_i * q_i` for routed tokens, `q_i` otherwise.
    pub gated: Vec<Vec<f64>>,
    pub num_probs: Vec<f64>,
    pub gates: Vec<f64>,
    pub numeric_mask: Vec<bool>,
}

impl QueryEmbeddings {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Same query with gating disabled.
    pub fn ungated(&self) -> QueryEmbeddings {
        QueryEmbeddings {
            gated: self.rows.clone(),
            ..self.clone()
        }
    }
}

pub fn encode_query(text: &str, params: &ModelParams, gate_cfg: &GateConfig) -> Result<QueryEmbeddings> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let enc = encode_tokens(tokens, params);
    Ok(gate_encoded(enc, params, gate_cfg, Routing::Detector))
}

pub fn gate_encoded(enc: EncodedText, params: &ModelParams, gate_cfg: &GateConfig, routing: Routing<'_>) -> QueryEmbeddings {
    let fwd: GateForward = apply_gate(
        &enc.rows,
        &params.mlp(Block::Detector),
        &params.mlp(Block::Gate),
        gate_cfg,
        routing,
    );
    QueryEmbeddings {
        tokens: enc.tokens,
        rows: enc.rows,
        gated: fwd.gated,
        num_probs: fwd.num_probs,
        gates: fwd.gates,
        numeric_mask: fwd.routed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn params() -> ModelParams {
        ModelParams::init(ModelConfig::default())
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Over 500 GB!"), ["over", "500", "gb"]);
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn tokenize_golden() {
        let golden = include_str!("../tests/data/tokenize_golden.tsv");
        for line in golden.lines().filter(|l| !l.starts_with('#') && !l.is_empty()) {
            let (input, expected) = line.split_once('\t').unwrap();
            let expected: Vec<&str> = if expected.is_empty() {
                vec![]
            } else {
                expected.split(' ').collect()
            };
            assert_eq!(tokenize(input), expected, "input {input:?}");
        }
    }

    #[test]
    fn base_features_are_deterministic_and_magnitude_aware() {
        let cfg = EmbedderConfig::default();
        assert_eq!(base_embed("500", &cfg), base_embed("500", &cfg));
        let a = base_embed("2000", &cfg);
        let b = base_embed("20000", &cfg);
        assert_eq!(a.magnitude_bucket(), Some(3));
        assert_eq!(b.magnitude_bucket(), Some(4));
        assert_ne!(a.get(SLOT_BUCKET_ONE_HOT + 9), b.get(SLOT_BUCKET_ONE_HOT + 9));
        assert_eq!(a.get(SLOT_MAGNITUDE), 0.5);
        let w = base_embed("revenue", &cfg);
        assert!(!w.is_numeric());
        assert_eq!(w.magnitude_bucket(), None);
        assert!((0..NUMERIC_SLOTS).all(|s| w.get(s) == 0.0));
        assert!(w.val.iter().all(|v| v.is_finite()));
        assert_eq!(base_embed("20,000", &cfg).magnitude_bucket(), Some(4));
        assert_eq!(base_embed("1e30", &cfg).magnitude_bucket(), Some(MAG_MAX));
        assert_eq!(base_embed("0.0000001", &cfg).magnitude_bucket(), Some(MAG_MIN));
    }

    #[test]
    fn distinct_words_do_not_collapse() {
        let p = params();
        let d = encode_document("x", "revenue profit", &p);
        assert!(cosine(&d.rows[0], &d.rows[1]) < 1.0 - 1e-6);
    }

    #[test]
    fn documents_are_unit_norm_and_deterministic() {
        let p = params();
        let a = encode_document("d", "capacity of 1,000 gb", &p);
        let b = encode_document("d", "capacity of 1,000 gb", &p);
        assert_eq!(a.to_bytes(), b.to_bytes());
        for r in &a.rows {
            let n: f64 = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        let one = encode_document("one", "ssd", &p);
        assert_eq!(one.rows.len(), 1);
        assert!(encode_document("empty", "", &p).is_empty());
    }

    #[test]
    fn token_permutation_permutes_rows() {
        let p = params();
        let a = encode_document("a", "revenue 500 usd", &p);
        let b = encode_document("b", "usd revenue 500", &p);
        assert_eq!(a.rows[0], b.rows[1]);
        assert_eq!(a.rows[1], b.rows[2]);
        assert_eq!(a.rows[2], b.rows[0]);
    }

    #[test]
    fn empty_query_is_an_error() {
        let p = params();
        assert!(matches!(encode_query("  !! ", &p, &GateConfig::default()), Err(Error::EmptyQuery)));
    }

    #[test]
    fn tau_one_leaves_query_ungated() {
        let p = params();
        let cfg = GateConfig {
            tau: 1.0,
            ..GateConfig::default()
        };
        let q = encode_query("revenue over 500 usd", &p, &cfg).unwrap();
        assert_eq!(q.gated, q.rows);
        assert!(q.gates.iter().all(|&g| g > 0.0 && g < q.len() as f64));
    }

    #[test]
    fn projection_backward_matches_finite_differences() {
        let mut cfg = ModelConfig::default();
        cfg.embedder.dim = 6;
        cfg.embedder.feature_dim = 80;
        cfg.hidden = 3;
        let p = ModelParams::init(cfg);
        let toks: Vec<String> = ["over", "512"].iter().map(|s| s.to_string()).collect();
        let weights: Vec<Vec<f64>> = vec![
            vec![0.3, -0.2, 0.5, 0.1, -0.7, 0.4],
            vec![-0.1, 0.9, 0.2, -0.3, 0.05, 0.6],
        ];
        let loss = |p: &ModelParams| -> f64 {
            let e = encode_tokens(toks.clone(), p);
            e.rows.iter().zip(&weights).map(|(r, w)| r.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()).sum()
        };
        let enc = encode_tokens(toks.clone(), &p);
        let mut grad = p.zeros_like();
        projection_backward(&enc, &weights, &p, &mut grad);
        let h = 1e-6;
        for block in [Block::ProjectionW, Block::ProjectionB] {
            for i in p.layout().range(block) {
                let mut a = p.clone();
                a.data[i] += h;
                let mut b = p.clone();
                b.data[i] -= h;
                let fd = (loss(&a) - loss(&b)) / (2.0 * h);
                assert!((fd - grad[i]).abs() < 1e-8, "{i}: {fd} vs {}", grad[i]);
            }
        }
    }
}
