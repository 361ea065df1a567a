//! Line-oriented `key = value` configuration covering every module.
//!
//! Keys are namespaced `embedder.*`, `gate.*`, `loss.*`, `train.*`,
//! `index.*` and `datagen.*`. Blank lines and `#` comments are ignored;
//! later assignments win. `train.preset` replaces the whole training section,
//! so it belongs before other `train.*` keys.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::datagen::{AugmentOp, CorpusSpec};
use crate::error::{Error, Result};
use crate::gate::GateConfig;
use crate::index::IndexConfig;
use crate::losses::{builtin_strategies, LossConfig};
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Default)]
pub struct Config {
    pub model: ModelConfig,
    pub gate: GateConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub index: IndexConfig,
    pub datagen: CorpusSpec,
}

pub const KEYS: &[&str] = &[
    "embedder.dim",
    "embedder.feature_dim",
    "embedder.seed",
    "embedder.ngram_min",
    "embedder.ngram_max",
    "gate.tau",
    "gate.enabled",
    "gate.hidden",
    "loss.tau_ret",
    "loss.tau_cont",
    "loss.lambda_cont",
    "loss.lambda_det",
    "loss.lambda_prop",
    "loss.strategy",
    "loss.eq_tolerance",
    "loss.teacher_forcing",
    "loss.cont_pool_gated",
    "train.preset",
    "train.lr",
    "train.epochs",
    "train.batch_size",
    "train.warmup_fraction",
    "train.clip_norm",
    "train.seed",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.weight_decay",
    "train.checkpoint_dir",
    "index.k_centroids",
    "index.nbits",
    "index.nprobe",
    "index.ndocs",
    "index.kmeans_iters",
    "index.seed",
    "index.raw_residuals",
    "datagen.n_concepts",
    "datagen.synonyms",
    "datagen.max_units",
    "datagen.values_per_pair",
    "datagen.templates",
    "datagen.held_out_fraction",
    "datagen.train_queries_per_op",
    "datagen.triplet_cap",
    "datagen.augment_ops",
    "datagen.augment_fraction",
    "datagen.seed",
];

fn num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("{key}: cannot parse {value:?}: {e}")))
}

/// `auto` maps to `None`, `all` to `usize::MAX`.
fn count_or(key: &str, value: &str) -> Result<Option<usize>> {
    match value {
        "auto" => Ok(None),
        "all" => Ok(Some(usize::MAX)),
        v => num(key, v).map(Some),
    }
}

fn augment_ops(value: &str) -> Result<Vec<AugmentOp>> {
    if value == "none" || value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|s| {
            AugmentOp::parse(s.trim()).ok_or_else(|| Error::UnknownName {
                kind: "augmentation",
                name: s.trim().to_string(),
                known: "concept_expansion, unit_permutation, value_permutation, none".into(),
            })
        })
        .collect()
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let e = &mut self.model.embedder;
        match key {
            "embedder.dim" => e.dim = num(key, v)?,
            "embedder.feature_dim" => e.feature_dim = num(key, v)?,
            "embedder.seed" => e.seed = num(key, v)?,
            "embedder.ngram_min" => e.ngram_min = num(key, v)?,
            "embedder.ngram_max" => e.ngram_max = num(key, v)?,
            "gate.tau" => self.gate.tau = num(key, v)?,
            "gate.enabled" => self.gate.enabled = num(key, v)?,
            "gate.hidden" => self.model.hidden = num(key, v)?,
            "loss.tau_ret" => self.loss.tau_ret = num(key, v)?,
            "loss.tau_cont" => self.loss.tau_cont = num(key, v)?,
            "loss.lambda_cont" => self.loss.lambda_cont = num(key, v)?,
            "loss.lambda_det" => self.loss.lambda_det = num(key, v)?,
            "loss.lambda_prop" => self.loss.lambda_prop = num(key, v)?,
            "loss.strategy" => self.loss.strategy = builtin_strategies().get(v)?,
            "loss.eq_tolerance" => self.loss.eq_tolerance = num(key, v)?,
            "loss.teacher_forcing" => self.loss.teacher_forcing = num(key, v)?,
            "loss.cont_pool_gated" => self.loss.cont_pool_gated = num(key, v)?,
            "train.preset" => {
                let dir = self.train.checkpoint_dir.take();
                self.train = TrainConfig::preset(v)?;
                self.train.checkpoint_dir = dir;
            }
            "train.lr" => self.train.lr = num(key, v)?,
            "train.epochs" => self.train.epochs = num(key, v)?,
            "train.batch_size" => self.train.batch_size = num(key, v)?,
            "train.warmup_fraction" => self.train.warmup_fraction = num(key, v)?,
            "train.clip_norm" => self.train.clip_norm = num(key, v)?,
            "train.seed" => self.train.seed = num(key, v)?,
            "train.beta1" => self.train.beta1 = num(key, v)?,
            "train.beta2" => self.train.beta2 = num(key, v)?,
            "train.eps" => self.train.eps = num(key, v)?,
            "train.weight_decay" => self.train.weight_decay = num(key, v)?,
            "train.checkpoint_dir" => {
                self.train.checkpoint_dir = if v.is_empty() { None } else { Some(PathBuf::from(v)) }
            }
            "index.k_centroids" => self.index.k_centroids = count_or(key, v)?,
            "index.nbits" => self.index.nbits = num(key, v)?,
            "index.nprobe" => self.index.nprobe = num(key, v)?,
            "index.ndocs" => self.index.ndocs = count_or(key, v)?,
            "index.kmeans_iters" => self.index.kmeans_iters = num(key, v)?,
            "index.seed" => self.index.seed = num(key, v)?,
            "index.raw_residuals" => self.index.raw_residuals = num(key, v)?,
            "datagen.n_concepts" => self.datagen.n_concepts = num(key, v)?,
            "datagen.synonyms" => self.datagen.synonyms = num(key, v)?,
            "datagen.max_units" => self.datagen.max_units = num(key, v)?,
            "datagen.values_per_pair" => self.datagen.values_per_pair = num(key, v)?,
            "datagen.templates" => self.datagen.templates = num(key, v)?,
            "datagen.held_out_fraction" => self.datagen.held_out_fraction = num(key, v)?,
            "datagen.train_queries_per_op" => self.datagen.train_queries_per_op = num(key, v)?,
            "datagen.triplet_cap" => self.datagen.triplet_cap = num(key, v)?,
            "datagen.augment_ops" => self.datagen.augment_ops = augment_ops(v)?,
            "datagen.augment_fraction" => self.datagen.augment_fraction = num(key, v)?,
            "datagen.seed" => self.datagen.seed = num(key, v)?,
            _ => {
                return Err(Error::UnknownName {
                    kind: "config key",
                    name: key.to_string(),
                    known: "see `numcolbert config --keys`".into(),
                })
            }
        }
        self.loss.gate = self.gate;
        Ok(())
    }

    /// Applies one seed to every seeded component.
    pub fn set_seed(&mut self, seed: u64) {
        self.model.embedder.seed = seed;
        self.train.seed = seed;
        self.index.seed = seed;
        self.datagen.seed = seed;
    }

    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let wrap = |e: Error| Error::Parse {
                file: source.to_string(),
                line: n + 1,
                detail: e.to_string(),
            };
            let Some((k, v)) = line.split_once('=') else {
                return Err(wrap(Error::InvalidConfig(format!("expected `key = value`, found {line:?}"))));
            };
            self.set(k.trim(), v).map_err(wrap)?;
        }
        Ok(())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text, source)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// `key=value` override, as given on the command line.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("override {kv:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.index.validate()?;
        self.datagen.validate()
    }

    /// Every key with its current value, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let e = &self.model.embedder;
        let opt = |o: Option<usize>| match o {
            None => "auto".to_string(),
            Some(usize::MAX) => "all".to_string(),
            Some(n) => n.to_string(),
        };
        let ops: Vec<&str> = self.datagen.augment_ops.iter().map(|o| o.provenance().as_str()).collect();
        let values: Vec<String> = vec![
            e.dim.to_string(),
            e.feature_dim.to_string(),
            e.seed.to_string(),
            e.ngram_min.to_string(),
            e.ngram_max.to_string(),
            self.gate.tau.to_string(),
            self.gate.enabled.to_string(),
            self.model.hidden.to_string(),
            self.loss.tau_ret.to_string(),
            self.loss.tau_cont.to_string(),
            self.loss.lambda_cont.to_string(),
            self.loss.lambda_det.to_string(),
            self.loss.lambda_prop.to_string(),
            self.loss.strategy.name().to_string(),
            self.loss.eq_tolerance.to_string(),
            self.loss.teacher_forcing.to_string(),
            self.loss.cont_pool_gated.to_string(),
            String::new(),
            self.train.lr.to_string(),
            self.train.epochs.to_string(),
            self.train.batch_size.to_string(),
            self.train.warmup_fraction.to_string(),
            self.train.clip_norm.to_string(),
            self.train.seed.to_string(),
            self.train.beta1.to_string(),
            self.train.beta2.to_string(),
            self.train.eps.to_string(),
            self.train.weight_decay.to_string(),
            self.train.checkpoint_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            opt(self.index.k_centroids),
            self.index.nbits.to_string(),
            self.index.nprobe.to_string(),
            opt(self.index.ndocs),
            self.index.kmeans_iters.to_string(),
            self.index.seed.to_string(),
            self.index.raw_residuals.to_string(),
            self.datagen.n_concepts.to_string(),
            self.datagen.synonyms.to_string(),
            self.datagen.max_units.to_string(),
            self.datagen.values_per_pair.to_string(),
            self.datagen.templates.to_string(),
            self.datagen.held_out_fraction.to_string(),
            self.datagen.train_queries_per_op.to_string(),
            self.datagen.triplet_cap.to_string(),
            if ops.is_empty() { "none".to_string() } else { ops.join(",") },
            self.datagen.augment_fraction.to_string(),
            self.datagen.seed.to_string(),
        ];
        KEYS.iter()
            .zip(values)
            .filter(|(k, _)| **k != "train.preset")
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
