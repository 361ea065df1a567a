//! Mini-batch AdamW training over (query, positive, negative) triples.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::{SentenceLookup, Triplet};
use crate::error::{Error, Result};
use crate::losses::{BatchForward, DocInput, LossConfig, QueryInput, TrainingBatch};
use crate::model::ModelParams;

pub const LOG_HEADER: &str = "step,loss,l_ret,l_cont,l_det,l_prop,grad_norm,lr";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Directory for per-epoch checkpoints, if any.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Defaults for training the small encoder from scratch.
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            epochs: 20,
            batch_size: 32,
            warmup_fraction: 0.10,
            clip_norm: 1.0,
            seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            checkpoint_dir: None,
        }
    }

    /// Fine-tuning hyperparameters of the full-size setting.
    pub fn paper() -> Self {
        Self {
            lr: 2e-5,
            epochs: 5,
            batch_size: 256,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            _ => Err(Error::UnknownName {
                kind: "training preset",
                name: name.to_string(),
                known: "desk, paper".into(),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warmup fraction must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip norm must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("invalid Adam moments");
        }
        Ok(())
    }
}

pub fn grad_norm(g: &[f64]) -> f64 {
    g.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales `g` in place to norm `max_norm` if it is longer; returns the
/// norm before clipping.
pub fn clip_gradients(g: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad_norm(g);
    if norm > max_norm {
        let s = max_norm / norm;
        for x in g.iter_mut() {
            *x *= s;
        }
    }
    norm
}

/// Linear warmup from 0 to `cfg.lr`, then constant.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    let warm = cfg.warmup_fraction * total_steps as f64;
    if warm > 0.0 && (step as f64) < warm {
        cfg.lr * step as f64 / warm
    } else {
        cfg.lr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, cfg: &TrainConfig) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * *p);
        }
    }
}

/// One training example with precomputed inputs.
#[derive(Debug, Clone)]
pub struct Triple {
    pub query: Arc<QueryInput>,
    pub positive: Arc<DocInput>,
    pub negative: Arc<DocInput>,
}

/// Annotated training triples; each distinct query text and document is
/// featurized once and shared.
pub fn build_triples(triplets: &[Triplet], lookup: &SentenceLookup<'_>, params: &ModelParams) -> Result<Vec<Triple>> {
    let mut queries: HashMap<&str, Arc<QueryInput>> = HashMap::new();
    let mut docs: HashMap<&str, Arc<DocInput>> = HashMap::new();
    let mut out = Vec::with_capacity(triplets.len());
    for t in triplets {
        let query = Arc::clone(
            queries
                .entry(t.query.as_str())
                .or_insert_with(|| Arc::new(QueryInput::from_text(&t.query, params))),
        );
        let mut doc = |id: &str| -> Result<Arc<DocInput>> {
            let s = lookup.get(id).ok_or_else(|| Error::Corrupt {
                what: "triplets",
                detail: format!("unknown document id {id}"),
            })?;
            Ok(Arc::clone(
                docs.entry(s.id.as_str())
                    .or_insert_with(|| Arc::new(DocInput::from_text(&s.text, params))),
            ))
        };
        let positive = doc(&t.positive)?;
        let negative = doc(&t.negative)?;
        out.push(Triple { query, positive, negative });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub l_ret: f64,
    pub l_cont: f64,
    pub l_det: f64,
    pub l_prop: f64,
    /// Gradient norm after clipping.
    pub grad_norm: f64,
    pub lr: f64,
}

impl LogRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step, self.loss, self.l_ret, self.l_cont, self.l_det, self.l_prop, self.grad_norm, self.lr
        )
    }
}

pub fn write_log(rows: &[LogRow], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{LOG_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv())?;
    }
    Ok(())
}

pub fn save_log(rows: &[LogRow], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_log(rows, &mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<LogRow>,
    /// Mean composite loss per epoch.
    pub epoch_means: Vec<f64>,
}

pub fn batches_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

fn dump_batch(batch: &TrainingBatch) -> String {
    let mut s = String::new();
    for (k, q) in batch.queries.iter().enumerate() {
        s.push_str(&format!(
            "query: {}\n  pos: {}\n  neg: {}\n",
            q.text.tokens.join(" "),
            batch.positives[k].text.tokens.join(" "),
            batch.negatives[k].text.tokens.join(" ")
        ));
    }
    s
}

/// Trains `init` on `data`, shuffling with a seeded permutation each epoch.
pub fn train(data: &[Triple], init: ModelParams, cfg: &TrainConfig, loss_cfg: &LossConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let mut params = init;
    let mut opt = AdamW::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per_epoch = batches_per_epoch(data.len(), cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let weights = loss_cfg.weights();
    let mut log = Vec::with_capacity(total);
    let mut epoch_means = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = TrainingBatch {
                queries: chunk.iter().map(|&i| Arc::clone(&data[i].query)).collect(),
                positives: chunk.iter().map(|&i| Arc::clone(&data[i].positive)).collect(),
                negatives: chunk.iter().map(|&i| Arc::clone(&data[i].negative)).collect(),
            };
            let fwd = BatchForward::new(&batch, &params, loss_cfg)?;
            let v = fwd.values;
            let loss = v.weighted(&weights);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    dump: dump_batch(&batch),
                });
            }
            let mut grad = fwd.backward(&weights);
            drop(fwd);
            clip_gradients(&mut grad, cfg.clip_norm);
            let lr = lr_at(step + 1, total, cfg);
            if lr > 0.0 {
                opt.step(&mut params.data, &grad, lr, cfg);
            }
            log.push(LogRow {
                step,
                loss,
                l_ret: v.ret,
                l_cont: v.cont,
                l_det: v.det,
                l_prop: v.prop,
                grad_norm: grad_norm(&grad),
                lr,
            });
            sum += loss;
            step += 1;
        }
        epoch_means.push(sum / per_epoch as f64);
        if let Some(dir) = &cfg.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            params.save(&dir.join(format!("epoch-{:03}.ncbm", epoch + 1)))?;
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            dump: "parameters became non-finite".into(),
        });
    }
    Ok(TrainOutcome {
        params,
        log,
        epoch_means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping() {
        let mut g = vec![0.3, 0.4];
        assert_eq!(clip_gradients(&mut g, 1.0), 0.5);
        assert_eq!(g, [0.3, 0.4]);
        let mut g = vec![0.0, 4.0, 0.0];
        clip_gradients(&mut g, 1.0);
        assert!((grad_norm(&g) - 1.0).abs() < 1e-15);
        let orig = [1.0, -2.0, 3.0, 0.5];
        let mut g = orig.to_vec();
        clip_gradients(&mut g, 0.7);
        let cos = orig.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() / (grad_norm(&orig) * grad_norm(&g));
        assert!((cos - 1.0).abs() < 1e-12);
    }

    #[test]
    fn warmup_schedule() {
        let cfg = TrainConfig::desk();
        assert_eq!(lr_at(0, 100, &cfg), 0.0);
        assert!((lr_at(5, 100, &cfg) - 0.5e-3).abs() < 1e-18);
        assert_eq!(lr_at(10, 100, &cfg), cfg.lr);
        assert_eq!(lr_at(100, 100, &cfg), cfg.lr);
        let flat = TrainConfig {
            warmup_fraction: 0.0,
            ..cfg
        };
        assert_eq!(lr_at(0, 100, &flat), flat.lr);
    }

    #[test]
    fn adamw_updates() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::desk()
        };
        let mut p = vec![0.5, -1.0];
        let mut opt = AdamW::new(2);
        opt.step(&mut p, &[0.0, 0.0], 0.1, &cfg);
        assert_eq!(p, [0.5, -1.0]);

        let mut p = vec![0.0];
        let mut opt = AdamW::new(1);
        opt.step(&mut p, &[1.0], 1e-3, &cfg);
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-12);
        assert!((p[0] + 1e-3).abs() < 1e-6 * 1e-3);

        let cfg = TrainConfig {
            weight_decay: 0.01,
            ..TrainConfig::desk()
        };
        let mut p = vec![2.0];
        let mut opt = AdamW::new(1);
        opt.step(&mut p, &[0.0], 0.5, &cfg);
        assert!((p[0] - 2.0 * (1.0 - 0.5 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn presets() {
        assert_eq!(TrainConfig::preset("paper").unwrap().lr, 2e-5);
        assert_eq!(TrainConfig::preset("paper").unwrap().batch_size, 256);
        assert_eq!(TrainConfig::preset("desk").unwrap().batch_size, 32);
        assert!(TrainConfig::preset("huge").is_err());
    }

    #[test]
    fn log_format() {
        let row = LogRow {
            step: 3,
            loss: 1.5,
            l_ret: 1.0,
            l_cont: 2.0,
            l_det: 3.0,
            l_prop: 4.0,
            grad_norm: 0.5,
            lr: 0.001,
        };
        let mut out = Vec::new();
        write_log(&[row], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), format!("{LOG_HEADER}\n3,1.5,1,2,3,4,0.5,0.001\n"));
    }
}
