//! Seeded k-means++ initialization followed by Lloyd iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// Index of the nearest centroid (lowest index on ties) and its squared distance.
pub fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cent) in centroids.iter().enumerate() {
        let d = sq_dist(p, cent);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Nearest centroid for every point. Distances are ranked through
/// `|c|^2 - 2 p.c`; the winner's distance is then computed directly.
pub fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<(usize, f64)> {
    let norms: Vec<f64> = centroids.iter().map(|c| dot(c, c)).collect();
    points
        .par_iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (c, cent) in centroids.iter().enumerate() {
                let s = norms[c] - 2.0 * dot(p, cent);
                if s < best.1 {
                    best = (c, s);
                }
            }
            (best.0, sq_dist(p, &centroids[best.0]))
        })
        .collect()
}

/// Unweighted convenience wrapper around [`kmeans_weighted`].
pub fn kmeans(points: &[Vec<f64>], k: usize, iters: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    kmeans_weighted(points, &vec![1.0; points.len()], k, iters, seed)
}

/// Each point counts `weights[i]` times; a point with weight `w` behaves like
/// `w` identical copies.
pub fn kmeans_weighted(points: &[Vec<f64>], weights: &[f64], k: usize, iters: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let n = points.len();
    if k == 0 || n < k {
        return Err(Error::TooFewPoints { n, k });
    }
    assert_eq!(weights.len(), n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = init_plus_plus(points, weights, k, &mut rng);
    let dim = points[0].len();
    for _ in 0..iters {
        let assigned = assign(points, &centroids);
        let mut sums = vec![vec![0.0; dim]; k];
        let mut mass = vec![0.0; k];
        for ((p, w), (c, _)) in points.iter().zip(weights).zip(&assigned) {
            mass[*c] += w;
            for (s, v) in sums[*c].iter_mut().zip(p) {
                *s += w * v;
            }
        }
        let mut next = centroids.clone();
        let mut empty = Vec::new();
        for c in 0..k {
            if mass[c] > 0.0 {
                next[c] = sums[c].iter().map(|s| s / mass[c]).collect();
            } else {
                empty.push(c);
            }
        }
        if !empty.is_empty() {
            // farthest points from their current centroid, largest first
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| assigned[b].1.total_cmp(&assigned[a].1).then(a.cmp(&b)));
            for (c, &p) in empty.iter().zip(&order) {
                next[*c] = points[p].clone();
            }
        }
        let moved = next != centroids;
        centroids = next;
        if !moved {
            break;
        }
    }
    Ok(centroids)
}

fn init_plus_plus(points: &[Vec<f64>], weights: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let first = sample_weighted(weights, rng).unwrap_or(0);
    let mut centroids = vec![points[first].clone()];
    let mut chosen = vec![false; n];
    chosen[first] = true;
    let mut d2: Vec<f64> = points.par_iter().map(|p| sq_dist(p, &points[first])).collect();
    while centroids.len() < k {
        let mass: Vec<f64> = d2.iter().zip(weights).map(|(d, w)| d * w).collect();
        // all remaining mass zero: fall back to the first unchosen point
        let pick = sample_weighted(&mass, rng)
            .filter(|&i| !chosen[i])
            .unwrap_or_else(|| (0..n).find(|&i| !chosen[i]).expect("n >= k"));
        chosen[pick] = true;
        let c = points[pick].clone();
        d2.par_iter_mut().zip(points).for_each(|(d, p)| *d = d.min(sq_dist(p, &c)));
        centroids.push(c);
    }
    centroids
}

fn sample_weighted(mass: &[f64], rng: &mut ChaCha8Rng) -> Option<usize> {
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut x = rng.random::<f64>() * total;
    for (i, m) in mass.iter().enumerate() {
        if *m > 0.0 {
            if x < *m {
                return Some(i);
            }
            x -= m;
        }
    }
    mass.iter().rposition(|m| *m > 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64) -> (Vec<Vec<f64>>, [Vec<f64>; 2]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let means = [vec![1.0, 1.0, 0.0], vec![-1.0, 0.5, 2.0]];
        let mut pts = Vec::new();
        for i in 0..400 {
            let m = &means[i % 2];
            pts.push(m.iter().map(|v| v + noise.sample(&mut rng)).collect());
        }
        (pts, means)
    }

    #[test]
    fn separated_blobs_recover_their_means() {
        let (pts, means) = blobs(3);
        let c = kmeans(&pts, 2, 20, 9).unwrap();
        for m in &means {
            let (_, d) = nearest(m, &c);
            assert!(d.sqrt() < 0.1, "{d}");
        }
    }

    #[test]
    fn k_equal_n_returns_the_points() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 3.0]];
        let mut c = kmeans(&pts, 3, 10, 1).unwrap();
        c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want = pts.clone();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(c, want);
    }

    #[test]
    fn zero_iterations_return_the_seeding() {
        let (pts, _) = blobs(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let init = init_plus_plus(&pts, &vec![1.0; pts.len()], 6, &mut rng);
        assert_eq!(kmeans(&pts, 6, 0, 5).unwrap(), init);
    }

    #[test]
    fn deterministic_and_validated() {
        let (pts, _) = blobs(5);
        assert_eq!(kmeans(&pts, 8, 5, 2).unwrap(), kmeans(&pts, 8, 5, 2).unwrap());
        assert!(matches!(kmeans(&pts[..3], 4, 5, 2), Err(Error::TooFewPoints { n: 3, k: 4 })));
    }

    #[test]
    fn weights_act_like_copies() {
        let pts = vec![vec![0.0], vec![1.0], vec![10.0]];
        // one centroid: the weighted mean
        let c = kmeans_weighted(&pts, &[3.0, 1.0, 0.0], 1, 5, 0).unwrap();
        assert!((c[0][0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_clusters_are_reseeded() {
        // duplicates force an empty cluster when k exceeds distinct points' pull
        let pts = vec![vec![0.0], vec![0.0], vec![0.0], vec![5.0], vec![5.1]];
        let c = kmeans(&pts, 3, 10, 0).unwrap();
        let assigned = assign(&pts, &c);
        let used: std::collections::HashSet<usize> = assigned.iter().map(|a| a.0).collect();
        assert_eq!(used.len(), 3);
    }
}
