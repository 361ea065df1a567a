//! Numeric token detector and scalar gate.
//!
//! Row `i` of a query is rescaled to `g_i * q_i` with
//! `g_i = |Q| * sigmoid(MLP_gate(q_i))` when it is routed, and left alone
//! otherwise. At inference a token is routed iff `P_num(q_i) > tau`; during
//! training the routing can come from ground-truth labels instead. The
//! routing decision carries no gradient, so the detector only learns from
//! the detection loss.

use crate::mlp::{sigmoid, Mlp, MlpCache};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateConfig {
    pub tau: f64,
    /// When false no token is ever routed (plain MaxSim queries).
    pub enabled: bool,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Routing<'a> {
    /// Route tokens whose detector probability exceeds tau.
    Detector,
    /// Route by given per-token labels (teacher forcing).
    Labels(&'a [bool]),
}

pub fn detect(q: &[f64], det: &Mlp<'_>) -> f64 {
    sigmoid(det.output(q)[0])
}

pub fn gate_value(q: &[f64], q_len: usize, gate: &Mlp<'_>) -> f64 {
    assert!(q_len >= 1);
    q_len as f64 * sigmoid(gate.output(q)[0])
}

#[derive(Debug, Clone)]
pub struct GateForward {
    pub gated: Vec<Vec<f64>>,
    pub num_probs: Vec<f64>,
    pub gates: Vec<f64>,
    pub routed: Vec<bool>,
    caches: Vec<MlpCache>,
    /// Detector plus gate MLP evaluations performed (2 per token).
    pub mlp_evaluations: usize,
}

pub fn apply_gate(
    rows: &[Vec<f64>],
    det: &Mlp<'_>,
    gate: &Mlp<'_>,
    cfg: &GateConfig,
    routing: Routing<'_>,
) -> GateForward {
    let m = rows.len();
    let mut out = GateForward {
        gated: Vec::with_capacity(m),
        num_probs: Vec::with_capacity(m),
        gates: Vec::with_capacity(m),
        routed: Vec::with_capacity(m),
        caches: Vec::with_capacity(m),
        mlp_evaluations: 0,
    };
    for (i, q) in rows.iter().enumerate() {
        let p = detect(q, det);
        let cache = gate.forward(q);
        out.mlp_evaluations += 2;
        let g = m as f64 * sigmoid(cache.out[0]);
        let routed = cfg.enabled
            && match routing {
                Routing::Detector => p > cfg.tau,
                Routing::Labels(labels) => labels[i],
            };
        out.gated.push(if routed { q.iter().map(|x| g * x).collect() } else { q.clone() });
        out.num_probs.push(p);
        out.gates.push(g);
        out.routed.push(routed);
        out.caches.push(cache);
    }
    out
}

/// Given d(loss)/d(gated rows), accumulates gate MLP gradients into
/// `grad_gate` and returns d(loss)/d(input rows).
pub fn gate_backward(
    rows: &[Vec<f64>],
    fwd: &GateForward,
    gate: &Mlp<'_>,
    d_gated: &[Vec<f64>],
    grad_gate: &mut [f64],
) -> Vec<Vec<f64>> {
    let m = rows.len() as f64;
    let mut d_rows = Vec::with_capacity(rows.len());
    for i in 0..rows.len() {
        let (q, dq) = (&rows[i], &d_gated[i]);
        if !fwd.routed[i] {
            d_rows.push(dq.clone());
            continue;
        }
        let g = fwd.gates[i];
        let mut dx: Vec<f64> = dq.iter().map(|v| g * v).collect();
        let dg: f64 = dq.iter().zip(q).map(|(a, b)| a * b).sum();
        if dg != 0.0 {
            let s = g / m;
            let da = dg * m * s * (1.0 - s);
            let dxi = gate.backward(q, &fwd.caches[i], &[da], grad_gate);
            for (a, b) in dx.iter_mut().zip(dxi) {
                *a += b;
            }
        }
        d_rows.push(dx);
    }
    d_rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{MlpParams, MlpShape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    fn random_mlp(d: usize, h: usize, seed: u64) -> MlpParams {
        let mut p = MlpParams::zeros(MlpShape::new(d, h, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        p.shape.init(&mut p.data, &mut rng);
        for v in p.data.iter_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
        p
    }

    #[test]
    fn zero_weights() {
        let z = MlpParams::zeros(MlpShape::new(4, 3, 1));
        assert_eq!(detect(&[0.5, 0.5, 0.5, 0.5], &z.view()), 0.5);
        assert_eq!(gate_value(&[1.0, 0.0, 0.0, 0.0], 8, &z.view()), 4.0);
    }

    #[test]
    fn detector_range_and_gate_bound() {
        let det = random_mlp(6, 5, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let q: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let p = detect(&q, &det.view());
            assert!(p > 0.0 && p < 1.0);
            let g = gate_value(&q, 7, &det.view());
            assert!(g > 0.0 && g < 7.0);
        }
    }

    #[test]
    fn gate_saturates_at_query_length() {
        let mut p = MlpParams::zeros(MlpShape::new(2, 1, 1));
        p.b2_mut()[0] = 50.0;
        let g = gate_value(&[0.3, 0.4], 5, &p.view());
        assert!((5.0 - g).abs() <= 1e-15 * 5.0 + f64::EPSILON * 5.0);
        assert!(g <= 5.0);
    }

    #[test]
    fn below_threshold_is_bitwise_identity() {
        let rows = vec![unit(vec![1.0, 2.0, 0.5]), unit(vec![-1.0, 0.3, 0.2])];
        let det = MlpParams::zeros(MlpShape::new(3, 2, 1));
        let gate = random_mlp(3, 2, 4);
        let cfg = GateConfig::default();
        // zero detector gives exactly 0.5 which is not above tau = 0.5
        let out = apply_gate(&rows, &det.view(), &gate.view(), &cfg, Routing::Detector);
        assert_eq!(out.gated, rows);
        assert!(out.routed.iter().all(|r| !r));
        assert_eq!(out.mlp_evaluations, 2 * rows.len());
    }

    #[test]
    fn gating_doubles_dot_products() {
        let rows = vec![unit(vec![1.0, 1.0])];
        let det = {
            let mut p = MlpParams::zeros(MlpShape::new(2, 1, 1));
            p.b2_mut()[0] = 10.0;
            p
        };
        // |Q| = 1 can never reach 2, so use a 4-row query and sigmoid 0.5
        let rows4 = vec![rows[0].clone(), unit(vec![1.0, 0.0]), unit(vec![0.0, 1.0]), unit(vec![1.0, -1.0])];
        let gate = MlpParams::zeros(MlpShape::new(2, 1, 1));
        let out = apply_gate(
            &rows4,
            &det.view(),
            &gate.view(),
            &GateConfig::default(),
            Routing::Detector,
        );
        let v = [0.3, -0.8];
        for i in 0..4 {
            assert_eq!(out.gates[i], 2.0);
            let a: f64 = rows4[i].iter().zip(&v).map(|(x, y)| x * y).sum();
            let b: f64 = out.gated[i].iter().zip(&v).map(|(x, y)| x * y).sum();
            assert!((b - 2.0 * a).abs() < 1e-15);
            let n: f64 = out.gated[i].iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn label_routing_and_disabled_gate() {
        let rows = vec![unit(vec![1.0, 0.0]), unit(vec![0.0, 1.0])];
        let det = MlpParams::zeros(MlpShape::new(2, 1, 1));
        let gate = MlpParams::zeros(MlpShape::new(2, 1, 1));
        let labels = [true, false];
        let out = apply_gate(&rows, &det.view(), &gate.view(), &GateConfig::default(), Routing::Labels(&labels));
        assert_eq!(out.routed, [true, false]);
        assert_eq!(out.gated[0], vec![1.0, 0.0]);
        let off = GateConfig {
            enabled: false,
            ..GateConfig::default()
        };
        let out = apply_gate(&rows, &det.view(), &gate.view(), &off, Routing::Labels(&labels));
        assert_eq!(out.gated, rows);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let d = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|_| unit((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let upstream: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let det = MlpParams::zeros(MlpShape::new(d, 4, 1));
        let gate = random_mlp(d, 4, 5);
        let labels = [true, false, true];
        let cfg = GateConfig::default();
        let loss = |gate_data: &[f64], rows: &[Vec<f64>]| -> f64 {
            let g = Mlp::new(gate.shape, gate_data);
            let out = apply_gate(rows, &det.view(), &g, &cfg, Routing::Labels(&labels));
            out.gated
                .iter()
                .zip(&upstream)
                .map(|(r, u)| r.iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        };
        let fwd = apply_gate(&rows, &det.view(), &gate.view(), &cfg, Routing::Labels(&labels));
        let mut grad = vec![0.0; gate.data.len()];
        let d_rows = gate_backward(&rows, &fwd, &gate.view(), &upstream, &mut grad);
        let h = 1e-6;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
        for i in 0..gate.data.len() {
            let mut a = gate.data.clone();
            a[i] += h;
            let mut b = gate.data.clone();
            b[i] -= h;
            let fd = (loss(&a, &rows) - loss(&b, &rows)) / (2.0 * h);
            assert!(rel(fd, grad[i]) < 1e-6 || (fd - grad[i]).abs() < 1e-10, "param {i}: {fd} vs {}", grad[i]);
        }
        for t in 0..3 {
            for k in 0..d {
                let mut a = rows.clone();
                a[t][k] += h;
                let mut b = rows.clone();
                b[t][k] -= h;
                let fd = (loss(&gate.data, &a) - loss(&gate.data, &b)) / (2.0 * h);
                assert!(rel(fd, d_rows[t][k]) < 1e-6, "row {t} dim {k}");
            }
        }
        // the unrouted middle token passes upstream through untouched
        assert_eq!(d_rows[1], upstream[1]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let rows = vec![unit(vec![1.0, 2.0]), unit(vec![2.0, -1.0])];
        let det = MlpParams::zeros(MlpShape::new(2, 2, 1));
        let gate = random_mlp(2, 2, 8);
        let fwd = apply_gate(&rows, &det.view(), &gate.view(), &GateConfig::default(), Routing::Labels(&[true, true]));
        let mut grad = vec![0.0; gate.data.len()];
        gate_backward(&rows, &fwd, &gate.view(), &[vec![0.0; 2], vec![0.0; 2]], &mut grad);
        assert!(grad.iter().all(|g| *g == 0.0));
    }
}
