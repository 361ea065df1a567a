//! Finite-difference helpers shared by the gradient and acceptance suites.
#![allow(dead_code)]

use std::sync::Arc;

use numcolbert::losses::{evaluate, DocInput, LossConfig, LossWeights, QueryInput, TrainingBatch};
use numcolbert::model::{Block, ModelConfig, ModelParams};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SUBJECTS: [&str; 4] = ["ssd", "laptop", "tablet", "router"];
const UNITS: [&str; 5] = ["gb", "tb", "mg", "mbps", "usd"];
const OPS: [&str; 4] = ["over", "under", "exactly", "at least"];

pub fn small_params(seed: u64) -> ModelParams {
    let mut cfg = ModelConfig::default();
    cfg.embedder.dim = 8;
    cfg.embedder.feature_dim = 64;
    cfg.embedder.seed = seed;
    cfg.hidden = 6;
    let mut p = ModelParams::init(cfg);
    // move heads and gates away from the symmetric start
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for v in p.data.iter_mut() {
        *v += rng.random_range(-0.1..0.1);
    }
    p
}

pub fn random_batch(seed: u64, params: &ModelParams) -> TrainingBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = TrainingBatch::default();
    for _ in 0..2 {
        let subject = SUBJECTS.choose(&mut rng).unwrap();
        let unit = UNITS.choose(&mut rng).unwrap();
        let op = OPS.choose(&mut rng).unwrap();
        let v: u32 = rng.random_range(2..900);
        let q = format!("{subject} {op} {v} {unit}");
        let pos = format!("the {subject} has {} {unit} rated", v * 2);
        let other = UNITS.choose(&mut rng).unwrap();
        let neg = format!("a {subject} with {} {other} listed", rng.random_range(1..900));
        batch.queries.push(Arc::new(QueryInput::from_text(&q, params)));
        batch.positives.push(Arc::new(DocInput::from_text(&pos, params)));
        batch.negatives.push(Arc::new(DocInput::from_text(&neg, params)));
    }
    batch
}

pub fn terms(batch: &TrainingBatch, params: &ModelParams, cfg: &LossConfig, w: &LossWeights) -> [f64; 7] {
    let (v, _) = evaluate(batch, params, cfg, w).unwrap();
    [
        w.ret * v.ret,
        w.cont * v.cont,
        w.det * v.det,
        w.prop * w.unit * v.unit,
        w.prop * w.mantissa * v.mantissa,
        w.prop * w.exponent * v.exponent,
        w.prop * w.cond * v.cond,
    ]
}

/// Worst per-block relative error between analytic and central-difference
/// gradients, measured as ||a - f|| / max(||a||, ||f||, 1e-10).
pub fn worst_block_error(batch: &TrainingBatch, params: &ModelParams, cfg: &LossConfig, w: &LossWeights, h: f64) -> (f64, Block) {
    let (_, analytic) = evaluate(batch, params, cfg, w).unwrap();
    let mut worst = (0.0, Block::ProjectionW);
    let mut p = params.clone();
    for block in Block::ALL {
        let range = params.layout().range(block);
        let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
        for i in range {
            let orig = p.data[i];
            p.data[i] = orig + h;
            let up = terms(batch, &p, cfg, w);
            p.data[i] = orig - h;
            let down = terms(batch, &p, cfg, w);
            p.data[i] = orig;
            // difference each term separately so large constant terms do
            // not swamp small ones in rounding
            let fd: f64 = up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * h)).sum();
            diff += (analytic[i] - fd).powi(2);
            na += analytic[i].powi(2);
            nf += fd.powi(2);
        }
        let rel = diff.sqrt() / na.sqrt().max(nf.sqrt()).max(1e-10);
        if rel > worst.0 {
            worst = (rel, block);
        }
    }
    worst
}

