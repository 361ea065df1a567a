//! Training objectives over in-batch triples with analytic gradients.
//!
//! One forward pass computes every loss term; the backward pass takes a set
//! of term weights so the individual losses and the weighted composite all
//! share the same code path.

mod objectives;
mod strategy;

use std::sync::Arc;

pub use objectives::{binary_cross_entropy, cross_entropy, multi_positive_info_nce, retrieval_loss, squared_error};
pub use strategy::{
    build_positive_set, builtin_strategies, units_match, Joint, NumericOnly, PositiveSetStrategy, Separate, UnitOnly,
};

use crate::embedder::{base_embed, project, project_backward, BaseFeatures};
use crate::error::{Error, Result};
use crate::gate::{apply_gate, gate_backward, GateConfig, GateForward, Routing};
use crate::mlp::{MlpCache, sigmoid};
use crate::model::{Block, ModelParams};
use crate::quantity::{
    parse_condition_mention, parse_quantities, to_scientific, NumericalCondition, Quantity, UnitTable,
    DEFAULT_EQ_TOLERANCE,
};
use crate::scoring::max_dot;
use crate::text::tokenize;

#[derive(Debug, Clone)]
pub struct LossConfig {
    pub tau_ret: f64,
    pub tau_cont: f64,
    pub lambda_cont: f64,
    pub lambda_det: f64,
    pub lambda_prop: f64,
    pub strategy: Arc<dyn PositiveSetStrategy>,
    pub eq_tolerance: f64,
    pub gate: GateConfig,
    /// Route gating by ground-truth token labels instead of the detector.
    pub teacher_forcing: bool,
    /// Pool gated rather than raw query rows into the numeric embedding of
    /// the contrastive objective.
    pub cont_pool_gated: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau_ret: 0.02,
            tau_cont: 0.02,
            lambda_cont: 0.05,
            lambda_det: 0.05,
            lambda_prop: 0.05,
            strategy: Arc::new(UnitOnly),
            eq_tolerance: DEFAULT_EQ_TOLERANCE,
            gate: GateConfig::default(),
            teacher_forcing: true,
            cont_pool_gated: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if !(self.tau_ret > 0.0 && self.tau_cont > 0.0) {
            return bad("loss temperatures must be positive");
        }
        if [self.lambda_cont, self.lambda_det, self.lambda_prop].iter().any(|l| !(*l >= 0.0)) {
            return bad("loss weights must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.gate.tau) {
            return bad("gate threshold must lie in [0, 1]");
        }
        if !(self.eq_tolerance >= 0.0) {
            return bad("equality tolerance must be non-negative");
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            ret: 1.0,
            cont: self.lambda_cont,
            det: self.lambda_det,
            prop: self.lambda_prop,
            ..LossWeights::zero()
        }
    }
}

/// Weights of each term in the objective being differentiated. The four
/// property sub-terms are additionally weighted inside `prop`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub ret: f64,
    pub cont: f64,
    pub det: f64,
    pub prop: f64,
    pub unit: f64,
    pub mantissa: f64,
    pub exponent: f64,
    pub cond: f64,
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            ret: 0.0,
            cont: 0.0,
            det: 0.0,
            prop: 0.0,
            unit: 1.0,
            mantissa: 1.0,
            exponent: 1.0,
            cond: 1.0,
        }
    }

    pub fn only_ret() -> Self {
        Self { ret: 1.0, ..Self::zero() }
    }

    pub fn only_cont() -> Self {
        Self { cont: 1.0, ..Self::zero() }
    }

    pub fn only_det() -> Self {
        Self { det: 1.0, ..Self::zero() }
    }

    pub fn only_prop() -> Self {
        Self { prop: 1.0, ..Self::zero() }
    }
}

/// Tokens of one text with their frozen base features.
#[derive(Debug, Clone, PartialEq)]
pub struct TextInput {
    pub tokens: Vec<String>,
    pub features: Vec<BaseFeatures>,
}

impl TextInput {
    pub fn new(tokens: Vec<String>, params: &ModelParams) -> Self {
        let features = tokens.iter().map(|t| base_embed(t, &params.config.embedder)).collect();
        Self { tokens, features }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct QueryInput {
    pub text: TextInput,
    /// Per-token numeric labels.
    pub labels: Vec<bool>,
    pub condition: Option<NumericalCondition>,
}

impl QueryInput {
    /// Annotates a query with the quantity parser.
    pub fn from_text(text: &str, params: &ModelParams) -> Self {
        let tokens = tokenize(text);
        let mention = parse_condition_mention(text);
        let labels = match &mention {
            Some(m) => m.token_labels(tokens.len()),
            None => vec![false; tokens.len()],
        };
        Self {
            text: TextInput::new(tokens, params),
            labels,
            condition: mention.map(|m| m.condition),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DocInput {
    pub text: TextInput,
    pub quantity: Option<Quantity>,
}

impl DocInput {
    /// Annotates a document with its first parsed quantity.
    pub fn from_text(text: &str, params: &ModelParams) -> Self {
        Self {
            text: TextInput::new(tokenize(text), params),
            quantity: parse_quantities(text).into_iter().next(),
        }
    }
}

/// B queries with their positives and negatives. Candidate `c` is
/// `positives[c]` for `c < B` and `negatives[c - B]` otherwise, so query
/// `k`'s positive is candidate `k`.
#[derive(Debug, Clone, Default)]
pub struct TrainingBatch {
    pub queries: Vec<Arc<QueryInput>>,
    pub positives: Vec<Arc<DocInput>>,
    pub negatives: Vec<Arc<DocInput>>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn candidates(&self) -> impl Iterator<Item = &Arc<DocInput>> {
        self.positives.iter().chain(&self.negatives)
    }

    fn check(&self) -> Result<()> {
        let b = self.queries.len();
        if b == 0 || self.positives.len() != b || self.negatives.len() != b {
            return Err(Error::InvalidConfig(format!(
                "batch needs B >= 1 queries, B positives and B negatives (got {b}, {}, {})",
                self.positives.len(),
                self.negatives.len()
            )));
        }
        for q in &self.queries {
            if q.text.is_empty() || q.labels.len() != q.text.len() {
                return Err(Error::EmptyQuery);
            }
        }
        for d in self.candidates() {
            if d.text.is_empty() {
                return Err(Error::EmptyDocument(String::new()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossValues {
    pub ret: f64,
    pub cont: f64,
    pub det: f64,
    pub prop: f64,
    pub unit: f64,
    pub mantissa: f64,
    pub exponent: f64,
    pub cond: f64,
    /// Queries that contributed to the contrastive term.
    pub cont_active: usize,
    /// Queries that contributed to the property term.
    pub prop_active: usize,
}

impl LossValues {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.ret * self.ret + w.cont * self.cont + w.det * self.det + w.prop * self.prop_weighted(w)
    }

    fn prop_weighted(&self, w: &LossWeights) -> f64 {
        w.unit * self.unit + w.mantissa * self.mantissa + w.exponent * self.exponent + w.cond * self.cond
    }
}

struct QueryState {
    norms: Vec<f64>,
    rows: Vec<Vec<f64>>,
    gate: GateForward,
    /// Rows pooled into the numeric embedding.
    mask: Vec<bool>,
    q_num: Option<Vec<f64>>,
    q_num_raw: Option<Vec<f64>>,
}

struct DocState {
    norms: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

struct PropState {
    query: usize,
    caches: [MlpCache; 4],
    unit_target: usize,
    mantissa_target: f64,
    exponent_target: f64,
    cond_target: usize,
}

const PROP_HEADS: [Block; 4] = [Block::UnitHead, Block::MantissaHead, Block::ExponentHead, Block::CondHead];

/// Forward state of one batch under fixed parameters.
pub struct BatchForward<'a> {
    batch: &'a TrainingBatch,
    params: &'a ModelParams,
    cfg: &'a LossConfig,
    queries: Vec<QueryState>,
    docs: Vec<DocState>,
    /// Gated MaxSim scores and per-row argmax, indexed [query][candidate].
    ret_scores: Vec<Vec<f64>>,
    ret_argmax: Vec<Vec<Vec<usize>>>,
    cont_scores: Vec<Vec<f64>>,
    cont_argmax: Vec<Vec<usize>>,
    /// One list of positive sets per objective (two for the separate strategy).
    cont_positives: Vec<Vec<Vec<usize>>>,
    det_logits: Vec<f64>,
    det_labels: Vec<bool>,
    det_caches: Vec<MlpCache>,
    props: Vec<PropState>,
    pub values: LossValues,
}

fn mean_rows(rows: &[Vec<f64>], mask: &[bool]) -> Option<Vec<f64>> {
    let n = mask.iter().filter(|m| **m).count();
    if n == 0 {
        return None;
    }
    let mut out = vec![0.0; rows[0].len()];
    for (row, _) in rows.iter().zip(mask).filter(|(_, m)| **m) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    for o in out.iter_mut() {
        *o /= n as f64;
    }
    Some(out)
}

fn unit_class(unit: Option<crate::quantity::UnitId>) -> usize {
    match unit {
        Some(u) => u.0 as usize,
        None => UnitTable::builtin().len(),
    }
}

impl<'a> BatchForward<'a> {
    pub fn new(batch: &'a TrainingBatch, params: &'a ModelParams, cfg: &'a LossConfig) -> Result<Self> {
        batch.check()?;
        let b = batch.len();
        let det = params.mlp(Block::Detector);
        let gate = params.mlp(Block::Gate);

        let mut queries = Vec::with_capacity(b);
        for q in &batch.queries {
            let (norms, rows) = project(&q.text.features, params);
            let routing = if cfg.teacher_forcing {
                Routing::Labels(&q.labels)
            } else {
                Routing::Detector
            };
            let gate_fwd = apply_gate(&rows, &det, &gate, &cfg.gate, routing);
            let mask = q.labels.clone();
            let q_num_raw = mean_rows(&rows, &mask);
            let q_num = if cfg.cont_pool_gated {
                mean_rows(&gate_fwd.gated, &mask)
            } else {
                q_num_raw.clone()
            };
            queries.push(QueryState {
                norms,
                rows,
                gate: gate_fwd,
                mask,
                q_num,
                q_num_raw,
            });
        }
        let docs: Vec<DocState> = batch
            .candidates()
            .map(|d| {
                let (norms, rows) = project(&d.text.features, params);
                DocState { norms, rows }
            })
            .collect();
        let n_cand = docs.len();

        let mut ret_scores = vec![vec![0.0; n_cand]; b];
        let mut ret_argmax = vec![vec![Vec::new(); n_cand]; b];
        for (k, q) in queries.iter().enumerate() {
            for (c, d) in docs.iter().enumerate() {
                let mut total = 0.0;
                let mut arg = Vec::with_capacity(q.gate.gated.len());
                for row in &q.gate.gated {
                    let (v, j) = max_dot(row, &d.rows);
                    total += v;
                    arg.push(j);
                }
                ret_scores[k][c] = total;
                ret_argmax[k][c] = arg;
            }
        }
        let (ret, _) = retrieval_loss(&ret_scores, cfg.tau_ret);

        let mut cont_scores = vec![vec![0.0; n_cand]; b];
        let mut cont_argmax = vec![vec![0; n_cand]; b];
        for (k, q) in queries.iter().enumerate() {
            if let Some(q_num) = &q.q_num {
                for (c, d) in docs.iter().enumerate() {
                    let (v, j) = max_dot(q_num.as_slice(), &d.rows);
                    cont_scores[k][c] = v;
                    cont_argmax[k][c] = j;
                }
            }
        }
        let annotated: Vec<(usize, Quantity)> = batch
            .candidates()
            .enumerate()
            .filter_map(|(c, d)| d.quantity.clone().map(|q| (c, q)))
            .collect();
        let ann_quantities: Vec<Quantity> = annotated.iter().map(|(_, q)| q.clone()).collect();
        let mut cont_positives: Vec<Vec<Vec<usize>>> = Vec::new();
        for (k, q) in batch.queries.iter().enumerate() {
            let sets = match (&q.condition, &queries[k].q_num) {
                (Some(cond), Some(_)) => cfg.strategy.positive_sets(cond, &ann_quantities, cfg.eq_tolerance),
                _ => Vec::new(),
            };
            for (o, set) in sets.into_iter().enumerate() {
                if cont_positives.len() <= o {
                    cont_positives.push(vec![Vec::new(); b]);
                }
                cont_positives[o][k] = set.into_iter().map(|i| annotated[i].0).collect();
            }
        }
        let mut cont = 0.0;
        let mut cont_active = 0;
        for positives in &cont_positives {
            let (l, _, n) = multi_positive_info_nce(&cont_scores, positives, cfg.tau_cont);
            cont += l;
            cont_active = cont_active.max(n);
        }
        if !cont_positives.is_empty() {
            cont /= cont_positives.len() as f64;
        }

        let mut det_logits = Vec::new();
        let mut det_labels = Vec::new();
        let mut det_caches = Vec::new();
        for (q, st) in batch.queries.iter().zip(&queries) {
            for (row, &label) in st.rows.iter().zip(&q.labels) {
                let cache = det.forward(row);
                det_logits.push(cache.out[0]);
                det_labels.push(label);
                det_caches.push(cache);
            }
        }
        let (det_loss, _) = binary_cross_entropy(&det_logits, &det_labels);

        let mut props = Vec::new();
        let mut sums = [0.0; 4];
        for (k, (q, st)) in batch.queries.iter().zip(&queries).enumerate() {
            let (Some(cond), Some(x)) = (&q.condition, &st.q_num_raw) else {
                continue;
            };
            let sci = to_scientific(cond.value);
            let caches = PROP_HEADS.map(|h| params.mlp(h).forward(x));
            let p = PropState {
                query: k,
                unit_target: unit_class(cond.unit),
                mantissa_target: sci.mantissa,
                exponent_target: sci.exponent as f64,
                cond_target: cond.cmp.class(),
                caches,
            };
            sums[0] += cross_entropy(&p.caches[0].out, p.unit_target).0;
            sums[1] += squared_error(p.caches[1].out[0], p.mantissa_target).0;
            sums[2] += squared_error(p.caches[2].out[0], p.exponent_target).0;
            sums[3] += cross_entropy(&p.caches[3].out, p.cond_target).0;
            props.push(p);
        }
        let n_prop = props.len().max(1) as f64;
        let [unit, mantissa, exponent, cond] = sums.map(|s| s / n_prop);

        let values = LossValues {
            ret,
            cont,
            det: det_loss,
            prop: unit + mantissa + exponent + cond,
            unit,
            mantissa,
            exponent,
            cond,
            cont_active,
            prop_active: props.len(),
        };
        Ok(Self {
            batch,
            params,
            cfg,
            queries,
            docs,
            ret_scores,
            ret_argmax,
            cont_scores,
            cont_argmax,
            cont_positives,
            det_logits,
            det_labels,
            det_caches,
            props,
            values,
        })
    }

    pub fn ret_scores(&self) -> &[Vec<f64>] {
        &self.ret_scores
    }

    pub fn cont_scores(&self) -> &[Vec<f64>] {
        &self.cont_scores
    }

    /// Positive sets per contrastive objective, indexed [objective][query].
    pub fn positive_sets(&self) -> &[Vec<Vec<usize>>] {
        &self.cont_positives
    }

    /// Detector probabilities for every query token in batch order.
    pub fn detector_probs(&self) -> Vec<f64> {
        self.det_logits.iter().map(|a| sigmoid(*a)).collect()
    }

    /// Gradient of the weighted objective with respect to all parameters.
    pub fn backward(&self, w: &LossWeights) -> Vec<f64> {
        let params = self.params;
        let layout = params.layout();
        let mut grad = params.zeros_like();
        let d = params.config.dim();
        let b = self.queries.len();

        let mut d_gated: Vec<Vec<Vec<f64>>> = self.queries.iter().map(|q| vec![vec![0.0; d]; q.rows.len()]).collect();
        let mut d_qrows: Vec<Vec<Vec<f64>>> = d_gated.clone();
        let mut d_docs: Vec<Vec<Vec<f64>>> = self.docs.iter().map(|s| vec![vec![0.0; d]; s.rows.len()]).collect();
        let mut d_qnum: Vec<Vec<f64>> = vec![vec![0.0; d]; b];
        let mut d_qnum_raw: Vec<Vec<f64>> = vec![vec![0.0; d]; b];

        if w.ret != 0.0 {
            let (_, g) = retrieval_loss(&self.ret_scores, self.cfg.tau_ret);
            for (k, q) in self.queries.iter().enumerate() {
                for (c, doc) in self.docs.iter().enumerate() {
                    let ds = w.ret * g[k][c];
                    if ds == 0.0 {
                        continue;
                    }
                    for (i, &j) in self.ret_argmax[k][c].iter().enumerate() {
                        axpy(&mut d_gated[k][i], ds, &doc.rows[j]);
                        axpy(&mut d_docs[c][j], ds, &q.gate.gated[i]);
                    }
                }
            }
        }

        if w.cont != 0.0 && !self.cont_positives.is_empty() {
            let scale = w.cont / self.cont_positives.len() as f64;
            for positives in &self.cont_positives {
                let (_, g, n) = multi_positive_info_nce(&self.cont_scores, positives, self.cfg.tau_cont);
                if n == 0 {
                    continue;
                }
                for (k, q) in self.queries.iter().enumerate() {
                    let Some(q_num) = &q.q_num else { continue };
                    for (c, doc) in self.docs.iter().enumerate() {
                        let ds = scale * g[k][c];
                        if ds == 0.0 {
                            continue;
                        }
                        let j = self.cont_argmax[k][c];
                        axpy(&mut d_qnum[k], ds, &doc.rows[j]);
                        axpy(&mut d_docs[c][j], ds, q_num);
                    }
                }
            }
        }

        if w.prop != 0.0 && !self.props.is_empty() {
            let n = self.props.len() as f64;
            for p in &self.props {
                let x = self.queries[p.query].q_num_raw.as_ref().expect("property state implies numeric tokens");
                let douts = [
                    cross_entropy(&p.caches[0].out, p.unit_target).1.iter().map(|g| g * w.unit).collect::<Vec<_>>(),
                    vec![w.mantissa * squared_error(p.caches[1].out[0], p.mantissa_target).1],
                    vec![w.exponent * squared_error(p.caches[2].out[0], p.exponent_target).1],
                    cross_entropy(&p.caches[3].out, p.cond_target).1.iter().map(|g| g * w.cond).collect(),
                ];
                for ((head, cache), dout) in PROP_HEADS.iter().zip(&p.caches).zip(douts) {
                    let dout: Vec<f64> = dout.iter().map(|g| g * w.prop / n).collect();
                    let range = layout.range(*head);
                    let dx = params.mlp(*head).backward(x, cache, &dout, &mut grad[range]);
                    axpy(&mut d_qnum_raw[p.query], 1.0, &dx);
                }
            }
        }

        if w.det != 0.0 && !self.det_logits.is_empty() {
            let (_, g) = binary_cross_entropy(&self.det_logits, &self.det_labels);
            let det = params.mlp(Block::Detector);
            let range = layout.range(Block::Detector);
            let mut t = 0;
            for (k, q) in self.queries.iter().enumerate() {
                for (i, row) in q.rows.iter().enumerate() {
                    let dx = det.backward(row, &self.det_caches[t], &[w.det * g[t]], &mut grad[range.clone()]);
                    axpy(&mut d_qrows[k][i], 1.0, &dx);
                    t += 1;
                }
            }
        }

        for k in 0..b {
            let q = &self.queries[k];
            let count = q.mask.iter().filter(|m| **m).count();
            if count > 0 {
                let inv = 1.0 / count as f64;
                for (i, _) in q.mask.iter().enumerate().filter(|(_, m)| **m) {
                    if self.cfg.cont_pool_gated {
                        axpy(&mut d_gated[k][i], inv, &d_qnum[k]);
                    } else {
                        axpy(&mut d_qrows[k][i], inv, &d_qnum[k]);
                    }
                    axpy(&mut d_qrows[k][i], inv, &d_qnum_raw[k]);
                }
            }
            let gate_range = layout.range(Block::Gate);
            let through_gate = gate_backward(
                &q.rows,
                &q.gate,
                &params.mlp(Block::Gate),
                &d_gated[k],
                &mut grad[gate_range],
            );
            for (acc, g) in d_qrows[k].iter_mut().zip(through_gate) {
                axpy(acc, 1.0, &g);
            }
            let text = &self.batch.queries[k].text;
            project_backward(&text.features, &q.norms, &q.rows, &d_qrows[k], params, &mut grad);
        }
        for ((doc, input), dd) in self.docs.iter().zip(self.batch.candidates()).zip(&d_docs) {
            project_backward(&input.text.features, &doc.norms, &doc.rows, dd, params, &mut grad);
        }
        grad
    }
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (y, v) in acc.iter_mut().zip(x) {
        *y += a * v;
    }
}

/// Loss values and the gradient of the `w`-weighted objective.
pub fn evaluate(batch: &TrainingBatch, params: &ModelParams, cfg: &LossConfig, w: &LossWeights) -> Result<(LossValues, Vec<f64>)> {
    let fwd = BatchForward::new(batch, params, cfg)?;
    let grad = fwd.backward(w);
    Ok((fwd.values, grad))
}

pub fn l_ret(batch: &TrainingBatch, params: &ModelParams, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    evaluate(batch, params, cfg, &LossWeights::only_ret()).map(|(v, g)| (v.ret, g))
}

pub fn l_cont(batch: &TrainingBatch, params: &ModelParams, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    evaluate(batch, params, cfg, &LossWeights::only_cont()).map(|(v, g)| (v.cont, g))
}

pub fn l_det(batch: &TrainingBatch, params: &ModelParams, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    evaluate(batch, params, cfg, &LossWeights::only_det()).map(|(v, g)| (v.det, g))
}

pub fn l_prop(batch: &TrainingBatch, params: &ModelParams, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    evaluate(batch, params, cfg, &LossWeights::only_prop()).map(|(v, g)| (v.prop, g))
}

pub fn composite(batch: &TrainingBatch, params: &ModelParams, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    let w = cfg.weights();
    evaluate(batch, params, cfg, &w).map(|(v, g)| (v.weighted(&w), g))
}

/// Weighted total from already computed sub-losses.
pub fn combine(cfg: &LossConfig, ret: f64, cont: f64, det: f64, prop: f64) -> f64 {
    ret + cfg.lambda_cont * cont + cfg.lambda_det * det + cfg.lambda_prop * prop
}
