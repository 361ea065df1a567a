//! Centroid-pruned, residual-quantized token index with exact MaxSim rerank.
//!
//! Building reads document embeddings only; nothing from the detector or
//! gate enters the index, so one index serves every query encoder.

pub mod kmeans;
pub mod quantize;

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::embedder::{DocEmbeddings, QueryEmbeddings};
use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::scoring::{dot_f32, dot_u8, sort_ranking};

pub use kmeans::{kmeans, kmeans_weighted};
pub use quantize::{check_nbits, dequantize, packed_len, quantize_residual, Quantized, VALID_NBITS};

pub const INDEX_MAGIC: [u8; 4] = *b"NCBI";
pub const INDEX_VERSION: u32 = 1;
/// magic, version, d, k, nbits, n_docs, n_tokens
pub const HEADER_BYTES: usize = 4 + 4 + 4 + 4 + 1 + 8 + 8;
/// doc_id u32, centroid_id u32, scale f32, offset f32
pub const TOKEN_RECORD_BYTES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexConfig {
    /// `None` picks [`default_k`].
    pub k_centroids: Option<usize>,
    pub nbits: u8,
    pub nprobe: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
    /// Rerank budget at search time: `None` follows [`default_ndocs`],
    /// `Some(usize::MAX)` reranks every candidate.
    pub ndocs: Option<usize>,
    /// Also store every token vector as raw `f32`; search then scores the
    /// raw vectors instead of reconstructions.
    pub raw_residuals: bool,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            k_centroids: None,
            nbits: 8,
            nprobe: 8,
            kmeans_iters: 20,
            seed: 42,
            ndocs: None,
            raw_residuals: false,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<()> {
        check_nbits(self.nbits)?;
        if self.nprobe == 0 {
            return Err(Error::InvalidConfig("nprobe must be positive".into()));
        }
        if self.k_centroids == Some(0) {
            return Err(Error::InvalidConfig("k_centroids must be positive".into()));
        }
        if let Some(k) = self.k_centroids {
            if self.nprobe > k {
                return Err(Error::InvalidConfig(format!("nprobe {} exceeds k_centroids {k}", self.nprobe)));
            }
        }
        Ok(())
    }

    pub fn search_params(&self, top_k: usize) -> SearchParams {
        SearchParams {
            top_k,
            nprobe: self.nprobe,
            ndocs: match self.ndocs {
                None => Some(default_ndocs(top_k)),
                Some(usize::MAX) => None,
                Some(n) => Some(n),
            },
        }
    }
}

/// `4 sqrt(n)` rounded to the nearest power of two, at least 16.
pub fn default_k(n_tokens: usize) -> usize {
    let target = 4.0 * (n_tokens as f64).sqrt();
    let k = 2f64.powf(target.max(1.0).log2().round()) as usize;
    k.max(16)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenRecord {
    pub doc_id: u32,
    pub centroid_id: u32,
    pub scale: f32,
    pub offset: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedIndex {
    pub dim: usize,
    pub nbits: u8,
    /// `k x dim`, row-major.
    pub centroids: Vec<f32>,
    pub tokens: Vec<TokenRecord>,
    /// Packed codes, `dim` values per token, low bits first.
    pub codes: Vec<u8>,
    pub doc_lengths: Vec<u32>,
    /// Raw token vectors (`n_tokens x dim`) when built in lossless mode.
    pub raw: Option<Vec<f32>>,
    doc_starts: Vec<usize>,
    postings: Vec<Vec<u32>>,
}

impl CompressedIndex {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn n_docs(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Token positions of document `doc`.
    pub fn doc_tokens(&self, doc: usize) -> std::ops::Range<usize> {
        self.doc_starts[doc]..self.doc_starts[doc + 1]
    }

    /// Documents owning at least one token assigned to centroid `c`.
    pub fn posting(&self, c: usize) -> &[u32] {
        &self.postings[c]
    }

    pub fn token_codes(&self, t: usize) -> Vec<u8> {
        let mut out = vec![0u8; self.dim];
        quantize::unpack_into(&self.codes, t * self.dim, &mut out, self.nbits);
        out
    }

    /// `centroid + offset + scale * code`, per dimension.
    pub fn reconstruct(&self, t: usize) -> Vec<f64> {
        let rec = self.tokens[t];
        let c = self.centroid(rec.centroid_id as usize);
        dequantize(&self.token_codes(t), rec.scale, rec.offset)
            .into_iter()
            .zip(c)
            .map(|(r, c)| *c as f64 + r)
            .collect()
    }

    pub fn code_bytes(&self) -> usize {
        self.codes.len()
    }

    /// File size implied by the format, without serializing.
    pub fn byte_len(&self) -> usize {
        HEADER_BYTES
            + 4 * self.centroids.len()
            + TOKEN_RECORD_BYTES * self.n_tokens()
            + self.codes.len()
            + 4 * self.n_docs()
            + 1
            + self.raw.as_ref().map_or(0, |r| 4 * r.len())
    }

    fn finish(mut self) -> Self {
        let mut starts = Vec::with_capacity(self.doc_lengths.len() + 1);
        let mut at = 0usize;
        starts.push(0);
        for &l in &self.doc_lengths {
            at += l as usize;
            starts.push(at);
        }
        self.doc_starts = starts;
        let mut postings = vec![Vec::new(); self.k()];
        for t in &self.tokens {
            let p: &mut Vec<u32> = &mut postings[t.centroid_id as usize];
            if p.last() != Some(&t.doc_id) {
                p.push(t.doc_id);
            }
        }
        self.postings = postings;
        self
    }
}

pub fn build_index(corpus: &[DocEmbeddings], cfg: &IndexConfig) -> Result<CompressedIndex> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let dim = corpus[0].rows.first().map_or(0, |r| r.len());
    for d in corpus {
        if d.rows.is_empty() {
            return Err(Error::EmptyDocument(d.doc_id.clone()));
        }
        if d.rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Corrupt {
                what: "document embeddings",
                detail: format!("{} has rows of the wrong dimension", d.doc_id),
            });
        }
    }
    let rows: Vec<&Vec<f64>> = corpus.iter().flat_map(|d| &d.rows).collect();
    // identical rows are clustered and quantized once, with their
    // multiplicity as the k-means weight
    let mut unique: Vec<Vec<f64>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut slots: Vec<usize> = Vec::with_capacity(rows.len());
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    for r in &rows {
        let key: Vec<u64> = r.iter().map(|v| v.to_bits()).collect();
        let slot = *seen.entry(key).or_insert_with(|| {
            unique.push((*r).clone());
            weights.push(0.0);
            unique.len() - 1
        });
        weights[slot] += 1.0;
        slots.push(slot);
    }
    let k = cfg.k_centroids.unwrap_or_else(|| default_k(rows.len())).min(unique.len());
    let centroids64 = kmeans_weighted(&unique, &weights, k, cfg.kmeans_iters, cfg.seed)?;
    let centroids: Vec<f32> = centroids64.iter().flatten().map(|&v| v as f32).collect();
    let stored: Vec<Vec<f64>> = centroids.chunks(dim).map(|c| c.iter().map(|&v| v as f64).collect()).collect();

    let quantized: Vec<(usize, Quantized)> = kmeans::assign(&unique, &stored)
        .into_par_iter()
        .zip(&unique)
        .map(|((c, _), r)| {
            let resid: Vec<f64> = r.iter().zip(&stored[c]).map(|(a, b)| a - b).collect();
            (c, quantize_residual(&resid, cfg.nbits))
        })
        .collect();
    let mut tokens = Vec::with_capacity(rows.len());
    let mut codes = vec![0u8; packed_len(rows.len() * dim, cfg.nbits)];
    let mut t = 0;
    for (doc_id, d) in corpus.iter().enumerate() {
        for _ in &d.rows {
            let (c, q) = &quantized[slots[t]];
            tokens.push(TokenRecord {
                doc_id: doc_id as u32,
                centroid_id: *c as u32,
                scale: q.scale,
                offset: q.offset,
            });
            quantize::pack_into(&mut codes, t * dim, &q.codes, cfg.nbits);
            t += 1;
        }
    }
    let raw = cfg.raw_residuals.then(|| rows.iter().flat_map(|r| r.iter().map(|&v| v as f32)).collect());
    Ok(CompressedIndex {
        dim,
        nbits: cfg.nbits,
        centroids,
        tokens,
        codes,
        doc_lengths: corpus.iter().map(|d| d.rows.len() as u32).collect(),
        raw,
        doc_starts: Vec::new(),
        postings: Vec::new(),
    }
    .finish())
}

/// Search-time knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchParams {
    pub top_k: usize,
    /// Centroids probed per query row; at least `k` disables pruning.
    pub nprobe: usize,
    /// Candidates kept for exact rerank after the centroid-score pass;
    /// `None` reranks every candidate.
    pub ndocs: Option<usize>,
}

impl SearchParams {
    /// Probed search with the default rerank budget for `top_k`.
    pub fn new(top_k: usize, nprobe: usize) -> Self {
        Self {
            top_k,
            nprobe,
            ndocs: Some(default_ndocs(top_k)),
        }
    }

    /// No pruning at any stage: every document is scored exactly.
    pub fn exhaustive(top_k: usize) -> Self {
        Self {
            top_k,
            nprobe: usize::MAX,
            ndocs: None,
        }
    }
}

/// Rerank budget: 256 documents up to top 10, 1024 up to top 100, then 4096
/// or four times `top_k`.
pub fn default_ndocs(top_k: usize) -> usize {
    match top_k {
        0..=10 => 256,
        11..=100 => 1024,
        _ => (4 * top_k).max(4096),
    }
}

/// Per-query tables shared by every candidate document.
struct QueryPlan<'a> {
    rows: &'a [Vec<f64>],
    /// `rows x k` dot products with the centroids.
    centroid_dots: Vec<Vec<f64>>,
    /// The same table transposed, `k x rows`.
    by_centroid: Vec<f64>,
    row_sums: Vec<f64>,
}

impl<'a> QueryPlan<'a> {
    fn new(index: &CompressedIndex, rows: &'a [Vec<f64>]) -> Self {
        let centroid_dots: Vec<Vec<f64>> = rows
            .iter()
            .map(|q| (0..index.k()).map(|c| dot_f32(index.centroid(c), q)).collect())
            .collect();
        let mut by_centroid = vec![0.0; index.k() * rows.len()];
        for (r, dots) in centroid_dots.iter().enumerate() {
            for (c, v) in dots.iter().enumerate() {
                by_centroid[c * rows.len() + r] = *v;
            }
        }
        Self {
            rows,
            centroid_dots,
            by_centroid,
            row_sums: rows.iter().map(|q| q.iter().sum()).collect(),
        }
    }

    /// Exact MaxSim of the query against the stored form of one document.
    fn score(&self, index: &CompressedIndex, doc: usize, buf: &mut Vec<u8>, best: &mut Vec<f64>) -> f64 {
        best.clear();
        best.resize(self.rows.len(), f64::NEG_INFINITY);
        for t in index.doc_tokens(doc) {
            if let Some(raw) = &index.raw {
                let v = &raw[t * index.dim..(t + 1) * index.dim];
                for (b, q) in best.iter_mut().zip(self.rows) {
                    let s = dot_f32(v, q);
                    if s > *b {
                        *b = s;
                    }
                }
                continue;
            }
            let rec = index.tokens[t];
            buf.resize(index.dim, 0);
            quantize::unpack_into(&index.codes, t * index.dim, buf, index.nbits);
            let c = rec.centroid_id as usize;
            for (r, (b, q)) in best.iter_mut().zip(self.rows).enumerate() {
                let acc = dot_u8(buf, q);
                let s = self.centroid_dots[r][c] + rec.offset as f64 * self.row_sums[r] + rec.scale as f64 * acc;
                if s > *b {
                    *b = s;
                }
            }
        }
        let mut total = 0.0;
        for b in best.iter() {
            total += b;
        }
        total
    }

    /// MaxSim with every token replaced by its centroid.
    fn centroid_score(&self, index: &CompressedIndex, doc: usize, best: &mut Vec<f64>) -> f64 {
        let n = self.rows.len();
        best.clear();
        best.resize(n, f64::NEG_INFINITY);
        for t in index.doc_tokens(doc) {
            let c = index.tokens[t].centroid_id as usize;
            for (b, s) in best.iter_mut().zip(&self.by_centroid[c * n..(c + 1) * n]) {
                if *s > *b {
                    *b = *s;
                }
            }
        }
        best.iter().sum()
    }

    fn rank(&self, index: &CompressedIndex, docs: impl Iterator<Item = usize>, top_k: usize) -> Vec<(u32, f64)> {
        let mut buf = Vec::with_capacity(index.dim);
        let mut best = Vec::with_capacity(self.rows.len());
        let mut hits: Vec<(u32, f64)> = docs.map(|d| (d as u32, self.score(index, d, &mut buf, &mut best))).collect();
        sort_ranking(&mut hits);
        hits.truncate(top_k);
        hits
    }

    /// Union of documents posted under each row's `nprobe` best centroids.
    fn candidates(&self, index: &CompressedIndex, nprobe: usize) -> Vec<usize> {
        let k = index.k();
        if nprobe >= k {
            return (0..index.n_docs()).collect();
        }
        let mut mark = vec![false; index.n_docs()];
        let mut order: Vec<usize> = (0..k).collect();
        for dots in &self.centroid_dots {
            let by_score = |a: &usize, b: &usize| dots[*b].total_cmp(&dots[*a]).then(a.cmp(b));
            order.select_nth_unstable_by(nprobe - 1, by_score);
            for &c in &order[..nprobe] {
                for &d in index.posting(c) {
                    mark[d as usize] = true;
                }
            }
        }
        (0..index.n_docs()).filter(|&d| mark[d]).collect()
    }

    /// The `ndocs` candidates with the highest centroid scores, in document order.
    fn interaction_prune(&self, index: &CompressedIndex, cands: Vec<usize>, ndocs: usize) -> Vec<usize> {
        if cands.len() <= ndocs {
            return cands;
        }
        let mut best = Vec::with_capacity(self.rows.len());
        let mut scored: Vec<(u32, f64)> = cands
            .iter()
            .map(|&d| (d as u32, self.centroid_score(index, d, &mut best)))
            .collect();
        scored.select_nth_unstable_by(ndocs - 1, |a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut kept: Vec<usize> = scored[..ndocs].iter().map(|h| h.0 as usize).collect();
        kept.sort_unstable();
        kept
    }
}

/// Centroid pruning, centroid-score pruning, then exact gated MaxSim over
/// the surviving candidates.
pub fn search(index: &CompressedIndex, query: &QueryEmbeddings, params: &SearchParams) -> Vec<(u32, f64)> {
    search_rows(index, &query.gated, params)
}

pub fn search_rows(index: &CompressedIndex, rows: &[Vec<f64>], params: &SearchParams) -> Vec<(u32, f64)> {
    if rows.is_empty() || params.top_k == 0 {
        return Vec::new();
    }
    let plan = QueryPlan::new(index, rows);
    let mut cands = plan.candidates(index, params.nprobe.max(1));
    if let Some(ndocs) = params.ndocs {
        cands = plan.interaction_prune(index, cands, ndocs.max(params.top_k));
    }
    plan.rank(index, cands.into_iter(), params.top_k)
}

/// Number of documents reaching the exact rerank for a query.
pub fn candidate_count(index: &CompressedIndex, rows: &[Vec<f64>], params: &SearchParams) -> usize {
    let plan = QueryPlan::new(index, rows);
    let cands = plan.candidates(index, params.nprobe.max(1));
    match params.ndocs {
        Some(n) => cands.len().min(n.max(params.top_k)),
        None => cands.len(),
    }
}

/// A named search strategy over a built index.
pub trait Retriever: Send + Sync {
    fn name(&self) -> &'static str;
    fn search(&self, index: &CompressedIndex, query: &QueryEmbeddings, params: &SearchParams) -> Vec<(u32, f64)>;
}

pub struct Plaid;

impl Retriever for Plaid {
    fn name(&self) -> &'static str {
        "plaid"
    }

    fn search(&self, index: &CompressedIndex, query: &QueryEmbeddings, params: &SearchParams) -> Vec<(u32, f64)> {
        search(index, query, params)
    }
}

/// Scores every stored document; only `top_k` is read from the params.
pub struct Exhaustive;

impl Retriever for Exhaustive {
    fn name(&self) -> &'static str {
        "exhaustive"
    }

    fn search(&self, index: &CompressedIndex, query: &QueryEmbeddings, params: &SearchParams) -> Vec<(u32, f64)> {
        search(index, query, &SearchParams::exhaustive(params.top_k))
    }
}

pub fn builtin_retrievers() -> Registry<dyn Retriever> {
    let mut r: Registry<dyn Retriever> = Registry::new("retriever");
    r.register("plaid", Arc::new(Plaid));
    r.register("exhaustive", Arc::new(Exhaustive));
    r
}

impl CompressedIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(&INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.k() as u32).to_le_bytes());
        out.push(self.nbits);
        out.extend_from_slice(&(self.n_docs() as u64).to_le_bytes());
        out.extend_from_slice(&(self.n_tokens() as u64).to_le_bytes());
        for v in &self.centroids {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for t in &self.tokens {
            out.extend_from_slice(&t.doc_id.to_le_bytes());
            out.extend_from_slice(&t.centroid_id.to_le_bytes());
            out.extend_from_slice(&t.scale.to_le_bytes());
            out.extend_from_slice(&t.offset.to_le_bytes());
        }
        out.extend_from_slice(&self.codes);
        for l in &self.doc_lengths {
            out.extend_from_slice(&l.to_le_bytes());
        }
        match &self.raw {
            None => out.push(0),
            Some(raw) => {
                out.push(1);
                for v in raw {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != INDEX_MAGIC {
            return Err(Error::BadMagic {
                what: "index",
                expected: INDEX_MAGIC,
            });
        }
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(Error::UnsupportedVersion { what: "index", found: version });
        }
        let dim = r.u32()? as usize;
        let k = r.u32()? as usize;
        let nbits = r.take(1)?[0];
        check_nbits(nbits)?;
        let n_docs = r.u64()? as usize;
        let n_tokens = r.u64()? as usize;
        let corrupt = |detail: String| Error::Corrupt { what: "index", detail };
        if dim == 0 || k == 0 {
            return Err(corrupt("zero dimension or centroid count".into()));
        }
        // bound allocations by what the file can actually hold
        r.need(k.saturating_mul(dim).saturating_mul(4))?;
        let centroids = r.f32s(k * dim)?;
        r.need(n_tokens.saturating_mul(TOKEN_RECORD_BYTES))?;
        let mut tokens = Vec::with_capacity(n_tokens);
        for _ in 0..n_tokens {
            tokens.push(TokenRecord {
                doc_id: r.u32()?,
                centroid_id: r.u32()?,
                scale: r.f32()?,
                offset: r.f32()?,
            });
        }
        let codes = r.take(packed_len(n_tokens * dim, nbits))?.to_vec();
        r.need(n_docs.saturating_mul(4))?;
        let doc_lengths: Vec<u32> = (0..n_docs).map(|_| r.u32()).collect::<Result<_>>()?;
        let raw = match r.take(1)?[0] {
            0 => None,
            1 => Some(r.f32s(n_tokens * dim)?),
            f => return Err(corrupt(format!("raw-residual flag {f}"))),
        };
        if r.at != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        let mut t = 0usize;
        for (doc, &len) in doc_lengths.iter().enumerate() {
            if len == 0 {
                return Err(corrupt(format!("document {doc} has no tokens")));
            }
            for _ in 0..len {
                let rec = tokens.get(t).ok_or_else(|| corrupt("doc lengths exceed token count".into()))?;
                if rec.doc_id as usize != doc || rec.centroid_id as usize >= k {
                    return Err(corrupt(format!("token {t} has an inconsistent record")));
                }
                t += 1;
            }
        }
        if t != n_tokens {
            return Err(corrupt("doc lengths do not cover every token".into()));
        }
        Ok(CompressedIndex {
            dim,
            nbits,
            centroids,
            tokens,
            codes,
            doc_lengths,
            raw,
            doc_starts: Vec::new(),
            postings: Vec::new(),
        }
        .finish())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn need(&self, n: usize) -> Result<()> {
        if self.at.saturating_add(n) > self.bytes.len() {
            Err(Error::TruncatedIndex { offset: self.bytes.len() })
        } else {
            Ok(())
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        self.need(n)?;
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let b = self.take(n.checked_mul(4).ok_or(Error::TruncatedIndex { offset: self.bytes.len() })?)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{exhaustive_search, DocMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_docs(n: usize, dim: usize, seed: u64) -> Vec<DocEmbeddings> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let len = rng.random_range(1..6);
                let rows = (0..len)
                    .map(|_| {
                        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                        v.into_iter().map(|x| x / n).collect()
                    })
                    .collect();
                DocEmbeddings {
                    doc_id: format!("d{i}"),
                    tokens: vec![String::new(); len],
                    rows,
                }
            })
            .collect()
    }

    fn cfg(k: usize, nbits: u8) -> IndexConfig {
        IndexConfig {
            k_centroids: Some(k),
            nbits,
            nprobe: 2,
            kmeans_iters: 5,
            seed: 1,
            ndocs: None,
            raw_residuals: false,
        }
    }

    #[test]
    fn default_k_is_a_power_of_two() {
        assert_eq!(default_k(1), 16);
        assert_eq!(default_k(100_000), 1024);
        assert_eq!(default_k(10_000), 512);
        assert!(default_k(12345).is_power_of_two());
    }

    #[test]
    fn single_token_reconstructs_exactly() {
        let docs = random_docs(1, 8, 0);
        let docs = vec![DocEmbeddings {
            rows: vec![docs[0].rows[0].clone()],
            tokens: vec![String::new()],
            ..docs[0].clone()
        }];
        let idx = build_index(&docs, &IndexConfig { nprobe: 1, ..cfg(1, 8) }).unwrap();
        let back = idx.reconstruct(0);
        for (a, b) in back.iter().zip(&docs[0].rows[0]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn layout_and_code_size() {
        let docs = random_docs(30, 8, 1);
        let n_tokens: usize = docs.iter().map(|d| d.rows.len()).sum();
        for nbits in VALID_NBITS {
            let idx = build_index(&docs, &cfg(4, nbits)).unwrap();
            assert_eq!(idx.code_bytes(), (n_tokens * 8 * nbits as usize).div_ceil(8));
            assert!(idx.tokens.iter().all(|t| (t.centroid_id as usize) < idx.k()));
            let bytes = idx.to_bytes();
            assert_eq!(bytes.len(), idx.byte_len());
            assert_eq!(
                bytes.len(),
                HEADER_BYTES + 4 * 4 * 8 + n_tokens * 16 + idx.code_bytes() + 4 * 30 + 1
            );
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let docs = random_docs(20, 6, 2);
        for raw in [false, true] {
            let idx = build_index(&docs, &IndexConfig { raw_residuals: raw, ..cfg(4, 2) }).unwrap();
            let bytes = idx.to_bytes();
            let back = CompressedIndex::from_bytes(&bytes).unwrap();
            assert_eq!(back, idx);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn truncation_and_bad_headers_are_rejected() {
        let docs = random_docs(10, 4, 3);
        let bytes = build_index(&docs, &cfg(2, 4)).unwrap().to_bytes();
        for cut in [0, 3, 10, HEADER_BYTES, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(CompressedIndex::from_bytes(&bytes[..cut]), Err(Error::TruncatedIndex { .. })), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(CompressedIndex::from_bytes(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(CompressedIndex::from_bytes(&bad), Err(Error::UnsupportedVersion { .. })));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(CompressedIndex::from_bytes(&long), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert!(matches!(build_index(&[], &IndexConfig::default()), Err(Error::EmptyCorpus)));
        let mut docs = random_docs(2, 4, 4);
        docs[1].rows.clear();
        assert!(matches!(build_index(&docs, &cfg(2, 8)), Err(Error::EmptyDocument(_))));
        assert!(IndexConfig { nbits: 3, ..cfg(2, 8) }.validate().is_err());
        assert!(IndexConfig { nprobe: 3, ..cfg(2, 8) }.validate().is_err());
    }

    #[test]
    fn lossless_full_probe_matches_brute_force() {
        let docs = random_docs(200, 8, 5);
        let idx = build_index(&docs, &IndexConfig { raw_residuals: true, ..cfg(8, 1) }).unwrap();
        let mats: Vec<DocMatrix> = docs.iter().map(|d| DocMatrix::from_rows(&d.rows)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let q: Vec<Vec<f64>> = (0..3).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            assert_eq!(search_rows(&idx, &q, &SearchParams::exhaustive(500)), exhaustive_search(&q, &mats, 500));
        }
    }

    #[test]
    fn orthogonal_docs_find_the_matching_one() {
        let dim = 16;
        let docs: Vec<DocEmbeddings> = (0..dim)
            .map(|i| {
                let mut r = vec![0.0; dim];
                r[i] = 1.0;
                DocEmbeddings {
                    doc_id: format!("d{i}"),
                    tokens: vec![String::new()],
                    rows: vec![r],
                }
            })
            .collect();
        let idx = build_index(&docs, &cfg(16, 8)).unwrap();
        let q = vec![docs[7].rows[0].clone()];
        let hits = search_rows(&idx, &q, &SearchParams::new(3, 1));
        assert_eq!(hits[0].0, 7);
        assert!((hits[0].1 - 1.0).abs() < 1e-6);
        assert_eq!(search_rows(&idx, &q, &SearchParams::new(100, 16)).len(), 16);
    }

    #[test]
    fn centroid_scores_prune_nothing_when_centroids_are_the_tokens() {
        let docs = random_docs(40, 6, 7);
        let n_tokens: usize = docs.iter().map(|d| d.len()).sum();
        let idx = build_index(&docs, &IndexConfig { nprobe: 1, ..cfg(n_tokens, 8) }).unwrap();
        let q: Vec<Vec<f64>> = vec![docs[3].rows[0].clone(), docs[9].rows[0].clone()];
        let exact = search_rows(&idx, &q, &SearchParams::exhaustive(5));
        let pruned = search_rows(&idx, &q, &SearchParams { top_k: 5, nprobe: usize::MAX, ndocs: Some(5) });
        assert_eq!(exact, pruned);
        assert_eq!(candidate_count(&idx, &q, &SearchParams { top_k: 5, nprobe: usize::MAX, ndocs: Some(8) }), 8);
        assert_eq!(default_ndocs(10), 256);
        assert_eq!(default_ndocs(100), 1024);
    }

    #[test]
    fn retrievers_are_registered() {
        let reg = builtin_retrievers();
        assert_eq!(reg.get("plaid").unwrap().name(), "plaid");
        assert_eq!(reg.get("exhaustive").unwrap().name(), "exhaustive");
        assert!(reg.get("ann").is_err());
    }
}
