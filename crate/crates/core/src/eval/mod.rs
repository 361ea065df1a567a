//! Retrieval metrics with per-operator slices, search benchmarking, and
//! embedding export.

pub mod metrics;
pub mod run;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

pub use metrics::{mrr_at_k, ndcg_at_k, precision_at_k, recall_at_k};
pub use run::Run;

use crate::datagen::{Qrels, QueryRecord, Sentence};
use crate::embedder::{encode_document, encode_query, DocEmbeddings, QueryEmbeddings};
use crate::error::{Error, Result};
use crate::gate::GateConfig;
use crate::index::{CompressedIndex, Retriever, SearchParams};
use crate::model::ModelParams;
use crate::quantity::{parse_condition, Cmp};
use crate::scoring::{exhaustive_search, mean_pool_numeric};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Metrics {
    pub ndcg10: f64,
    pub mrr10: f64,
    pub p10: f64,
    pub r100: f64,
}

impl Metrics {
    pub fn of(ranking: &[&str], relevant: &HashSet<&str>) -> Self {
        Self {
            ndcg10: ndcg_at_k(ranking, relevant, 10),
            mrr10: mrr_at_k(ranking, relevant, 10),
            p10: precision_at_k(ranking, relevant, 10),
            r100: recall_at_k(ranking, relevant, 100),
        }
    }

    fn add(&mut self, o: &Metrics) {
        self.ndcg10 += o.ndcg10;
        self.mrr10 += o.mrr10;
        self.p10 += o.p10;
        self.r100 += o.r100;
    }

    fn scaled(&self, s: f64) -> Metrics {
        Metrics {
            ndcg10: self.ndcg10 * s,
            mrr10: self.mrr10 * s,
            p10: self.p10 * s,
            r100: self.r100 * s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slice {
    pub metrics: Metrics,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub overall: Metrics,
    pub count: usize,
    /// Queries in the qrels with no relevant document; left out of every mean.
    pub excluded: usize,
    pub slices: BTreeMap<Cmp, Slice>,
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("slice,queries,ndcg@10,mrr@10,p@10,r@100\n");
        let mut line = |name: &str, n: usize, m: &Metrics| {
            let _ = writeln!(out, "{name},{n},{:.6},{:.6},{:.6},{:.6}", m.ndcg10, m.mrr10, m.p10, m.r100);
        };
        line("all", self.count, &self.overall);
        for (cmp, s) in &self.slices {
            line(cmp.as_str(), s.count, &s.metrics);
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<6} {:>7} {:>8} {:>8} {:>8} {:>8}\n",
            "slice", "queries", "nDCG@10", "MRR@10", "P@10", "R@100"
        );
        let mut line = |name: &str, n: usize, m: &Metrics| {
            let _ = writeln!(
                out,
                "{name:<6} {n:>7} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                m.ndcg10, m.mrr10, m.p10, m.r100
            );
        };
        line("all", self.count, &self.overall);
        for (cmp, s) in &self.slices {
            line(cmp.as_str(), s.count, &s.metrics);
        }
        out
    }
}

/// Means over queries with at least one relevant document, overall and by
/// the comparison in `conditions`. Queries absent from the run score zero.
pub fn evaluate(run: &Run, qrels: &Qrels, conditions: &HashMap<String, Cmp>) -> MetricReport {
    let mut total = Metrics::default();
    let mut count = 0;
    let mut excluded = 0;
    let mut slices: BTreeMap<Cmp, (Metrics, usize)> = BTreeMap::new();
    for (qid, judged) in qrels {
        let relevant: HashSet<&str> = judged.iter().filter(|(_, g)| *g > 0).map(|(d, _)| d.as_str()).collect();
        if relevant.is_empty() {
            excluded += 1;
            continue;
        }
        let ranking: Vec<&str> = run
            .queries
            .get(qid)
            .map(|r| r.iter().map(|(d, _)| d.as_str()).collect())
            .unwrap_or_default();
        let m = Metrics::of(&ranking, &relevant);
        total.add(&m);
        count += 1;
        if let Some(cmp) = conditions.get(qid) {
            let s = slices.entry(*cmp).or_default();
            s.0.add(&m);
            s.1 += 1;
        }
    }
    let mean = |m: Metrics, n: usize| if n == 0 { m } else { m.scaled(1.0 / n as f64) };
    MetricReport {
        overall: mean(total, count),
        count,
        excluded,
        slices: slices
            .into_iter()
            .map(|(c, (m, n))| (c, Slice { metrics: mean(m, n), count: n }))
            .collect(),
    }
}

pub fn conditions_of(queries: &[QueryRecord]) -> HashMap<String, Cmp> {
    queries.iter().map(|q| (q.qid.clone(), q.cmp)).collect()
}

pub fn encode_corpus(corpus: &[Sentence], params: &ModelParams) -> Vec<DocEmbeddings> {
    corpus.par_iter().map(|s| encode_document(&s.id, &s.text, params)).collect()
}

pub fn encode_queries(queries: &[QueryRecord], params: &ModelParams, gate: &GateConfig) -> Result<Vec<QueryEmbeddings>> {
    queries.par_iter().map(|q| encode_query(&q.text, params, gate)).collect()
}

fn named(hits: Vec<(u32, f64)>, doc_ids: &[String]) -> Vec<(String, f64)> {
    hits.into_iter().map(|(d, s)| (doc_ids[d as usize].clone(), s)).collect()
}

/// Searches the index for every query; `doc_ids[i]` names index document `i`.
pub fn retrieve(
    index: &CompressedIndex,
    doc_ids: &[String],
    queries: &[QueryRecord],
    encoded: &[QueryEmbeddings],
    retriever: &dyn Retriever,
    params: &SearchParams,
) -> Result<Run> {
    if doc_ids.len() != index.n_docs() {
        return Err(Error::Corrupt {
            what: "index",
            detail: format!("index holds {} documents, corpus has {}", index.n_docs(), doc_ids.len()),
        });
    }
    let hits: Vec<Vec<(u32, f64)>> = encoded.par_iter().map(|q| retriever.search(index, q, params)).collect();
    let mut run = Run::default();
    for (q, h) in queries.iter().zip(hits) {
        run.insert(q.qid.clone(), named(h, doc_ids));
    }
    Ok(run)
}

/// Brute-force gated MaxSim over the raw document embeddings.
pub fn retrieve_exhaustive(docs: &[DocEmbeddings], queries: &[QueryRecord], encoded: &[QueryEmbeddings], top_k: usize) -> Run {
    let rows: Vec<&Vec<Vec<f64>>> = docs.iter().map(|d| &d.rows).collect();
    let ids: Vec<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
    let mut run = Run::default();
    for (q, e) in queries.iter().zip(encoded) {
        let hits = exhaustive_search_refs(&e.gated, &rows, top_k);
        run.insert(q.qid.clone(), named(hits, &ids));
    }
    run
}

fn exhaustive_search_refs(q: &[Vec<f64>], docs: &[&Vec<Vec<f64>>], top_k: usize) -> Vec<(u32, f64)> {
    struct Rows<'a>(&'a Vec<Vec<f64>>);
    impl crate::scoring::TokenRows for Rows<'_> {
        fn n_rows(&self) -> usize {
            self.0.len()
        }
        fn dot(&self, row: usize, q: &[f64]) -> f64 {
            crate::scoring::dot(&self.0[row], q)
        }
    }
    let wrapped: Vec<Rows> = docs.iter().map(|d| Rows(d)).collect();
    exhaustive_search(q, &wrapped, top_k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub queries: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub brute_mean_ms: f64,
    pub brute_median_ms: f64,
    /// Brute-force mean latency over index mean latency.
    pub speedup: f64,
    pub index_bytes: usize,
    pub code_bytes: usize,
    pub mean_candidates: f64,
}

fn mean_median(ms: &mut [f64]) -> (f64, f64) {
    if ms.is_empty() {
        return (0.0, 0.0);
    }
    ms.sort_by(f64::total_cmp);
    let mean = ms.iter().sum::<f64>() / ms.len() as f64;
    let n = ms.len();
    let median = if n % 2 == 1 { ms[n / 2] } else { 0.5 * (ms[n / 2 - 1] + ms[n / 2]) };
    (mean, median)
}

/// Per-query wall clock for index search and for brute force over the raw
/// embeddings, both on a single thread after `warmup` untimed queries.
pub fn bench_search(
    index: &CompressedIndex,
    docs: &[DocEmbeddings],
    queries: &[QueryEmbeddings],
    params: &SearchParams,
    warmup: usize,
) -> Result<BenchReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let rows: Vec<&Vec<Vec<f64>>> = docs.iter().map(|d| &d.rows).collect();
    pool.install(|| {
        for q in queries.iter().cycle().take(warmup) {
            std::hint::black_box(crate::index::search(index, q, params));
            std::hint::black_box(exhaustive_search_refs(&q.gated, &rows, params.top_k));
        }
        let mut fast = Vec::with_capacity(queries.len());
        let mut slow = Vec::with_capacity(queries.len());
        let mut cands = 0usize;
        for q in queries {
            let t = Instant::now();
            std::hint::black_box(crate::index::search(index, q, params));
            fast.push(t.elapsed().as_secs_f64() * 1e3);
            let t = Instant::now();
            std::hint::black_box(exhaustive_search_refs(&q.gated, &rows, params.top_k));
            slow.push(t.elapsed().as_secs_f64() * 1e3);
            cands += crate::index::candidate_count(index, &q.gated, params);
        }
        let (mean_ms, median_ms) = mean_median(&mut fast);
        let (brute_mean_ms, brute_median_ms) = mean_median(&mut slow);
        Ok(BenchReport {
            queries: queries.len(),
            mean_ms,
            median_ms,
            brute_mean_ms,
            brute_median_ms,
            speedup: if mean_ms > 0.0 { brute_mean_ms / mean_ms } else { f64::INFINITY },
            index_bytes: index.byte_len(),
            code_bytes: index.code_bytes(),
            mean_candidates: cands as f64 / queries.len().max(1) as f64,
        })
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportRow {
    pub qid: String,
    pub token: String,
    pub cmp: Cmp,
    pub vector: Vec<f64>,
}

/// Detector-flagged token rows (before gating) of every query with a
/// parseable condition, labelled by its comparison.
pub fn export_embeddings(queries: &[QueryRecord], params: &ModelParams, gate: &GateConfig) -> Result<Vec<ExportRow>> {
    let mut out = Vec::new();
    for q in queries {
        let Some(cond) = parse_condition(&q.text) else { continue };
        let e = encode_query(&q.text, params, gate)?;
        for (i, flagged) in e.numeric_mask.iter().enumerate() {
            if *flagged {
                out.push(ExportRow {
                    qid: q.qid.clone(),
                    token: e.tokens[i].clone(),
                    cmp: cond.cmp,
                    vector: e.rows[i].clone(),
                });
            }
        }
    }
    Ok(out)
}

/// One row per query: the mean of its flagged rows, the pooled numeric
/// representation the contrastive and property losses train.
pub fn export_pooled(queries: &[QueryRecord], params: &ModelParams, gate: &GateConfig) -> Result<Vec<ExportRow>> {
    let mut out = Vec::new();
    for q in queries {
        let Some(cond) = parse_condition(&q.text) else { continue };
        let e = encode_query(&q.text, params, gate)?;
        if let Ok(v) = mean_pool_numeric(&e) {
            out.push(ExportRow {
                qid: q.qid.clone(),
                token: "[pooled]".into(),
                cmp: cond.cmp,
                vector: v,
            });
        }
    }
    Ok(out)
}

pub fn export_csv(rows: &[ExportRow]) -> String {
    let dim = rows.first().map_or(0, |r| r.vector.len());
    let mut out = String::from("qid,token,cmp");
    for j in 0..dim {
        let _ = write!(out, ",e{j}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{}", r.qid, r.token, r.cmp.as_str());
        for v in &r.vector {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Mean silhouette coefficient under Euclidean distance. Points alone in
/// their class score 0; fewer than two classes gives 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    assert_eq!(points.len(), labels.len());
    let classes: HashSet<usize> = labels.iter().copied().collect();
    if classes.len() < 2 {
        return 0.0;
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scores: Vec<f64> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut sum: HashMap<usize, (f64, usize)> = HashMap::new();
            for j in 0..points.len() {
                if i != j {
                    let e = sum.entry(labels[j]).or_default();
                    e.0 += dist(&points[i], &points[j]);
                    e.1 += 1;
                }
            }
            let Some(&(own, n_own)) = sum.get(&labels[i]) else {
                return 0.0;
            };
            let a = own / n_own as f64;
            let b = sum
                .iter()
                .filter(|(c, _)| **c != labels[i])
                .map(|(_, (s, n))| s / *n as f64)
                .fold(f64::INFINITY, f64::min);
            if a.max(b) == 0.0 {
                0.0
            } else {
                (b - a) / a.max(b)
            }
        })
        .collect();
    scores.iter().sum::<f64>() / scores.len() as f64
}

pub fn export_silhouette(rows: &[ExportRow]) -> f64 {
    let points: Vec<Vec<f64>> = rows.iter().map(|r| r.vector.clone()).collect();
    let labels: Vec<usize> = rows.iter().map(|r| r.cmp.class()).collect();
    silhouette(&points, &labels)
}
