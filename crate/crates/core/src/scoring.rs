//! MaxSim scoring, the numeric similarity used by the contrastive loss, and
//! the exhaustive reference ranker every index result is checked against.

use rayon::prelude::*;

use crate::embedder::QueryEmbeddings;
use crate::error::{Error, Result};

/// Document token rows addressable by index.
pub trait TokenRows: Sync {
    fn n_rows(&self) -> usize;
    fn dot(&self, row: usize, q: &[f64]) -> f64;
}

impl TokenRows for [Vec<f64>] {
    fn n_rows(&self) -> usize {
        self.len()
    }

    fn dot(&self, row: usize, q: &[f64]) -> f64 {
        dot(&self[row], q)
    }
}

impl TokenRows for Vec<Vec<f64>> {
    fn n_rows(&self) -> usize {
        self.len()
    }

    fn dot(&self, row: usize, q: &[f64]) -> f64 {
        self.as_slice().dot(row, q)
    }
}

/// Row-major `f32` token matrix, the storage precision of the index.
#[derive(Debug, Clone, PartialEq)]
pub struct DocMatrix {
    pub dim: usize,
    pub data: Vec<f32>,
}

impl DocMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, |r| r.len());
        let data = rows.iter().flat_map(|r| r.iter().map(|&v| v as f32)).collect();
        Self { dim, data }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Dot product with four interleaved accumulators.
#[inline]
pub fn dot(a: &[f64], q: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cq) = (a.chunks_exact(4), q.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cq.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cq) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// [`dot`] with `f32` storage on the left.
#[inline]
pub fn dot_f32(a: &[f32], q: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cq) = (a.chunks_exact(4), q.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cq.remainder()).map(|(x, y)| *x as f64 * y).sum();
    for (x, y) in ca.zip(cq) {
        for i in 0..4 {
            acc[i] += x[i] as f64 * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// [`dot`] with integer codes on the left.
#[inline]
pub fn dot_u8(a: &[u8], q: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cq) = (a.chunks_exact(4), q.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cq.remainder()).map(|(x, y)| *x as f64 * y).sum();
    for (x, y) in ca.zip(cq) {
        for i in 0..4 {
            acc[i] += x[i] as f64 * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl TokenRows for DocMatrix {
    fn n_rows(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    fn dot(&self, row: usize, q: &[f64]) -> f64 {
        dot_f32(self.row(row), q)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub value: f64,
    /// For each query row, the document row achieving its maximum.
    pub argmax: Vec<usize>,
    pub row_max: Vec<f64>,
}

/// Max over document rows of `q . d_j`; ties go to the lowest `j`.
pub fn max_dot<D: TokenRows + ?Sized>(q: &[f64], doc: &D) -> (f64, usize) {
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for j in 0..doc.n_rows() {
        let s = doc.dot(j, q);
        if s > best {
            best = s;
            arg = j;
        }
    }
    (best, arg)
}

pub fn maxsim<D: TokenRows + ?Sized>(query: &[Vec<f64>], doc: &D) -> Result<Score> {
    if query.is_empty() || doc.n_rows() == 0 {
        return Err(Error::EmptyScoringInput);
    }
    let mut value = 0.0;
    let mut argmax = Vec::with_capacity(query.len());
    let mut row_max = Vec::with_capacity(query.len());
    for q in query {
        let (best, arg) = max_dot(q, doc);
        value += best;
        argmax.push(arg);
        row_max.push(best);
    }
    Ok(Score {
        value,
        argmax,
        row_max,
    })
}

pub fn gated_maxsim<D: TokenRows + ?Sized>(query: &QueryEmbeddings, doc: &D) -> Result<Score> {
    maxsim(&query.gated, doc)
}

/// Mean of the rows selected by `mask`.
pub fn mean_pool(rows: &[Vec<f64>], mask: &[bool]) -> Result<Vec<f64>> {
    let dim = rows.first().map_or(0, |r| r.len());
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for (r, &m) in rows.iter().zip(mask) {
        if m {
            n += 1;
            for (a, v) in acc.iter_mut().zip(r) {
                *a += v;
            }
        }
    }
    if n == 0 {
        return Err(Error::NoNumericTokens);
    }
    for a in acc.iter_mut() {
        *a /= n as f64;
    }
    Ok(acc)
}

/// Mean of the numeric-flagged rows taken before gating.
pub fn mean_pool_numeric(query: &QueryEmbeddings) -> Result<Vec<f64>> {
    mean_pool(&query.rows, &query.numeric_mask)
}

pub fn s_cont<D: TokenRows + ?Sized>(q_num: &[f64], doc: &D) -> Result<(f64, usize)> {
    if doc.n_rows() == 0 {
        return Err(Error::EmptyScoringInput);
    }
    Ok(max_dot(q_num, doc))
}

/// Descending score, ascending document index on ties.
pub fn sort_ranking(hits: &mut [(u32, f64)]) {
    hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// Scores every document and returns the best `top_k`.
pub fn exhaustive_search<D: TokenRows>(query_rows: &[Vec<f64>], docs: &[D], top_k: usize) -> Vec<(u32, f64)> {
    let mut hits: Vec<(u32, f64)> = docs
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let s = maxsim(query_rows, d).map(|s| s.value).unwrap_or(f64::NEG_INFINITY);
            (i as u32, s)
        })
        .collect();
    sort_ranking(&mut hits);
    hits.truncate(top_k);
    hits
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(rows: &[&[f64]]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn maxsim_examples() {
        let same = q(&[&[0.6, 0.8]]);
        assert_eq!(maxsim(&same, &same).unwrap().value, 1.0);
        let orth = maxsim(&q(&[&[1.0, 0.0]]), &q(&[&[0.0, 1.0], &[0.0, -1.0]])).unwrap();
        assert_eq!(orth.value, 0.0);
        let s = maxsim(&q(&[&[1.0, 0.0], &[0.0, 1.0]]), &q(&[&[0.6, 0.8], &[1.0, 0.0]])).unwrap();
        assert!((s.value - 1.8).abs() < 1e-12);
        assert_eq!(s.argmax, [1, 0]);
        assert!(maxsim(&same, &Vec::<Vec<f64>>::new()).is_err());
    }

    #[test]
    fn ties_pick_the_lowest_row() {
        let s = maxsim(&q(&[&[1.0, 0.0]]), &q(&[&[0.5, 0.1], &[0.5, 0.9], &[0.5, 0.0]])).unwrap();
        assert_eq!(s.argmax, [0]);
    }

    #[test]
    fn gated_example_two_by_two() {
        let base = QueryEmbeddings {
            tokens: vec!["a".into(), "b".into()],
            rows: q(&[&[1.0, 0.0], &[0.0, 1.0]]),
            gated: q(&[&[2.0, 0.0], &[0.0, 1.0]]),
            num_probs: vec![0.9, 0.1],
            gates: vec![2.0, 1.0],
            numeric_mask: vec![true, false],
        };
        let doc = q(&[&[0.6, 0.8], &[0.8, 0.6]]);
        let s = gated_maxsim(&base, &doc).unwrap();
        // 2 * max(0.6, 0.8) + max(0.8, 0.6)
        assert!((s.value - (2.0 * 0.8 + 0.8)).abs() < 1e-12);
        assert_eq!(gated_maxsim(&base.ungated(), &doc).unwrap(), maxsim(&base.rows, &doc).unwrap());
    }

    #[test]
    fn pooling() {
        let rows = q(&[&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5]]);
        assert_eq!(mean_pool(&rows, &[false, true, false]).unwrap(), [0.0, 1.0]);
        let p = mean_pool(&rows, &[true, true, false]).unwrap();
        let n: f64 = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        let twin = q(&[&[0.6, 0.8], &[0.6, 0.8]]);
        assert_eq!(mean_pool(&twin, &[true, true]).unwrap(), [0.6, 0.8]);
        assert!(matches!(mean_pool(&rows, &[false; 3]), Err(Error::NoNumericTokens)));
    }

    #[test]
    fn s_cont_examples() {
        let doc = q(&[&[0.0, 1.0, 0.0], &[0.6, 0.0, 0.8], &[0.0, 0.0, 1.0]]);
        assert_eq!(s_cont(&[0.0, 1.0, 0.0], &doc).unwrap().0, 1.0);
        assert_eq!(s_cont(&[1.0, 0.0, 0.0], &q(&[&[0.0, 1.0, 0.0]])).unwrap().0, 0.0);
        // hand values: 0.5*0 + 0.5*0 ; 0.5*0.6 + 0.5*0.8 = 0.7 ; 0.5
        let (v, j) = s_cont(&[0.5, 0.0, 0.5], &doc).unwrap();
        assert!((v - 0.7).abs() < 1e-12);
        assert_eq!(j, 1);
    }

    #[test]
    fn f32_matrix_matches_rows() {
        let rows = q(&[&[0.25, 0.5], &[1.0, -0.5]]);
        let m = DocMatrix::from_rows(&rows);
        let query = q(&[&[1.0, 1.0]]);
        assert_eq!(maxsim(&query, &m).unwrap(), maxsim(&query, &rows).unwrap());
    }

    fn matrix(m: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), m)
    }

    proptest! {
        #[test]
        fn concatenation_is_additive(a in matrix(3, 4), b in matrix(2, 4), doc in matrix(5, 4)) {
            let mut ab = a.clone();
            ab.extend(b.clone());
            let lhs = maxsim(&ab, &doc).unwrap().value;
            let rhs = maxsim(&a, &doc).unwrap().value + maxsim(&b, &doc).unwrap().value;
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn positive_scaling_keeps_argmax(a in matrix(3, 4), doc in matrix(6, 4), g in 0.01f64..10.0, row in 0usize..3) {
            let base = maxsim(&a, &doc).unwrap();
            let mut scaled = a.clone();
            for v in scaled[row].iter_mut() { *v *= g; }
            let s = maxsim(&scaled, &doc).unwrap();
            prop_assert_eq!(&s.argmax, &base.argmax);
            prop_assert!((s.row_max[row] - g * base.row_max[row]).abs() < 1e-9);
            let sum: f64 = s.row_max.iter().sum();
            prop_assert!((sum - s.value).abs() < 1e-9);
        }
    }
}
