//! Synthetic quantity-conditioned benchmark: corpus sentences, held-out
//! evaluation queries with exact relevance judgments, and training triplets
//! with concept, unit and value augmentation.

pub mod concepts;
mod decimal;
pub mod io;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::ops::Range;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use concepts::{concept, concepts, Concept, DOC_TEMPLATES, QUERY_TEMPLATES};
pub use decimal::Decimal;

use crate::error::{Error, Result};
use crate::quantity::{
    parse_condition, parse_quantities, satisfies, Cmp, NumericalCondition, Quantity, UnitId, UnitTable, Verdict,
    DEFAULT_EQ_TOLERANCE,
};
use crate::text::tokenize;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub n_concepts: usize,
    pub synonyms: usize,
    /// Units per concept are the first `min(max_units, available)` of its list.
    pub max_units: usize,
    pub values_per_pair: usize,
    pub templates: usize,
    /// Fraction of each pair's observed values reserved as evaluation thresholds.
    pub held_out_fraction: f64,
    pub train_queries_per_op: usize,
    pub triplet_cap: usize,
    pub augment_ops: Vec<AugmentOp>,
    /// Probability that a triplet receives each augmentation.
    pub augment_fraction: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_concepts: 50,
            synonyms: 3,
            max_units: 2,
            values_per_pair: 40,
            templates: 8,
            held_out_fraction: 0.2,
            train_queries_per_op: 2,
            triplet_cap: 64,
            augment_ops: AugmentOp::ALL.to_vec(),
            augment_fraction: 0.25,
            seed: 42,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let available = concepts().len();
        if self.n_concepts == 0 || self.n_concepts > available {
            return bad(format!("n_concepts must lie in 1..={available}"));
        }
        if !(1..=3).contains(&self.synonyms) {
            return bad("synonyms must lie in 1..=3".into());
        }
        if self.max_units == 0 {
            return bad("max_units must be positive".into());
        }
        if self.values_per_pair < 2 {
            return bad("values_per_pair must be at least 2".into());
        }
        if self.templates == 0 || self.templates > DOC_TEMPLATES.len() {
            return bad(format!("templates must lie in 1..={}", DOC_TEMPLATES.len()));
        }
        if !(0.0..1.0).contains(&self.held_out_fraction) {
            return bad("held_out_fraction must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.augment_fraction) {
            return bad("augment_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }

    fn concepts(&self) -> Vec<Concept> {
        concepts().into_iter().take(self.n_concepts).collect()
    }

    fn units_of(&self, c: &Concept) -> Vec<UnitId> {
        c.units.iter().take(self.max_units).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub id: String,
    pub text: String,
    pub concept: String,
    pub value: f64,
    pub unit: Option<UnitId>,
}

impl Sentence {
    pub fn quantity(&self) -> Quantity {
        Quantity::new(self.value, self.unit)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub qid: String,
    pub text: String,
    pub value: f64,
    pub cmp: Cmp,
    pub unit: Option<UnitId>,
    /// Known only for freshly generated queries; not serialized.
    pub concept: String,
}

impl QueryRecord {
    pub fn condition(&self) -> NumericalCondition {
        NumericalCondition {
            value: self.value,
            cmp: self.cmp,
            unit: self.unit,
        }
    }
}

/// Relevance grades per query id, documents in insertion order.
pub type Qrels = BTreeMap<String, Vec<(String, u8)>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Base,
    ConceptExpansion,
    UnitPermutation,
    ValuePermutation,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Base => "base",
            Provenance::ConceptExpansion => "concept_expansion",
            Provenance::UnitPermutation => "unit_permutation",
            Provenance::ValuePermutation => "value_permutation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Provenance::Base,
            Provenance::ConceptExpansion,
            Provenance::UnitPermutation,
            Provenance::ValuePermutation,
        ]
        .into_iter()
        .find(|p| p.as_str() == s)
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AugmentOp {
    ConceptExpansion,
    UnitPermutation,
    ValuePermutation,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 3] = [
        AugmentOp::ConceptExpansion,
        AugmentOp::UnitPermutation,
        AugmentOp::ValuePermutation,
    ];

    pub fn provenance(self) -> Provenance {
        match self {
            AugmentOp::ConceptExpansion => Provenance::ConceptExpansion,
            AugmentOp::UnitPermutation => Provenance::UnitPermutation,
            AugmentOp::ValuePermutation => Provenance::ValuePermutation,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.provenance().as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub query: String,
    pub condition: NumericalCondition,
    pub positive: String,
    pub negative: String,
    pub provenance: Provenance,
}

/// Sentences by id, covering the corpus and any augmented sentences.
pub struct SentenceLookup<'a> {
    by_id: HashMap<&'a str, &'a Sentence>,
}

impl<'a> SentenceLookup<'a> {
    pub fn new<I: IntoIterator<Item = &'a Sentence>>(sentences: I) -> Self {
        Self {
            by_id: sentences.into_iter().map(|s| (s.id.as_str(), s)).collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&'a Sentence> {
        self.by_id.get(id).copied()
    }
}

/// Checks the triplet invariants against stored annotations and re-parsed text.
pub fn validate_triplet(t: &Triplet, lookup: &SentenceLookup<'_>) -> std::result::Result<(), String> {
    let pos = lookup.get(&t.positive).ok_or_else(|| format!("unknown positive {}", t.positive))?;
    let neg = lookup.get(&t.negative).ok_or_else(|| format!("unknown negative {}", t.negative))?;
    if parse_condition(&t.query) != Some(t.condition) {
        return Err(format!("query {:?} does not parse to its condition", t.query));
    }
    for s in [pos, neg] {
        let parsed = parse_quantities(&s.text);
        if parsed.len() != 1 || parsed[0].value != s.value || parsed[0].unit != s.unit {
            return Err(format!("sentence {} annotation drifted from its text", s.id));
        }
    }
    if pos.concept != neg.concept {
        return Err("positive and negative differ in concept".into());
    }
    if satisfies(&pos.quantity(), &t.condition, DEFAULT_EQ_TOLERANCE) != Verdict::Satisfied {
        return Err(format!("positive {} does not satisfy the condition", pos.id));
    }
    if satisfies(&neg.quantity(), &t.condition, DEFAULT_EQ_TOLERANCE) == Verdict::Satisfied {
        return Err(format!("negative {} satisfies the condition", neg.id));
    }
    Ok(())
}

fn pair_rng(seed: u64, salt: u64, a: usize, b: usize) -> ChaCha8Rng {
    let mixed = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(salt.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .wrapping_add((a as u64) << 20)
        .wrapping_add(b as u64);
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Alphabetic surface forms of a unit, canonical first.
fn word_surfaces(unit: UnitId) -> Vec<&'static str> {
    UnitTable::builtin()
        .get(unit)
        .surfaces
        .iter()
        .filter(|s| s.chars().all(|c| c.is_ascii_alphabetic()))
        .map(|s| s.as_str())
        .collect()
}

fn render_quantity(value: Decimal, unit: UnitId, surface: usize) -> String {
    let surfaces = word_surfaces(unit);
    format!("{} {}", value.render(), surfaces[surface % surfaces.len()])
}

fn fill(template: &str, concept: &str, quantity: &str, op: &str) -> String {
    template.replace("{c}", concept).replace("{op}", op).replace("{v}", quantity)
}

/// The single quantity of a generated sentence as an exact decimal.
fn sentence_decimal(text: &str) -> Option<(Decimal, Option<UnitId>, Range<usize>)> {
    let q = parse_quantities(text);
    if q.len() != 1 {
        return None;
    }
    let tokens = tokenize(text);
    let span = q[0].span.clone();
    let mult = tokens.get(span.start + 1).map(String::as_str).filter(|w| crate::quantity::multiplier(w).is_some());
    let dec = Decimal::parse(&tokens[span.start], mult)?;
    Some((dec, q[0].unit, span))
}

fn annotate(id: String, text: String, concept: &str) -> Result<Sentence> {
    let q = parse_quantities(&text);
    if q.len() != 1 {
        return Err(Error::Corrupt {
            what: "generated sentence",
            detail: format!("{text:?} has {} quantity mentions", q.len()),
        });
    }
    Ok(Sentence {
        id,
        text,
        concept: concept.to_string(),
        value: q[0].value,
        unit: q[0].unit,
    })
}

fn sample_values(c: &Concept, unit: UnitId, n: usize, rng: &mut ChaCha8Rng) -> Vec<Decimal> {
    let table = UnitTable::builtin();
    let ratio = table.get(c.units[0]).factor / table.get(unit).factor;
    let (lo, hi) = (c.range.0 * ratio, c.range.1 * ratio);
    let (llo, lhi) = (lo.ln(), hi.ln());
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n && attempts < n * 1000 {
        attempts += 1;
        let v = rng.random_range(llo..lhi).exp();
        let d = Decimal::round_sig(v, 3);
        if seen.insert(d) {
            out.push(d);
        }
    }
    out
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<Sentence>> {
    spec.validate()?;
    let mut out = Vec::new();
    for (ci, c) in spec.concepts().iter().enumerate() {
        for (ui, &unit) in spec.units_of(c).iter().enumerate() {
            let mut rng = pair_rng(spec.seed, 1, ci, ui);
            for value in sample_values(c, unit, spec.values_per_pair, &mut rng) {
                for template in &DOC_TEMPLATES[..spec.templates] {
                    let syn = c.synonyms[rng.random_range(0..spec.synonyms)];
                    let text = fill(template, syn, &render_quantity(value, unit, 0), "");
                    let id = format!("s{:06}", out.len());
                    out.push(annotate(id, text, c.name)?);
                }
            }
        }
    }
    Ok(out)
}

/// Evaluation queries, training queries and judgments for the former.
#[derive(Debug, Clone, Default)]
pub struct QuerySet {
    pub eval: Vec<QueryRecord>,
    pub train: Vec<QueryRecord>,
    pub qrels: Qrels,
}

struct PairIndex<'a> {
    by_concept: HashMap<&'a str, Vec<&'a Sentence>>,
    observed: HashMap<(&'a str, Option<UnitId>), Vec<Decimal>>,
}

impl<'a> PairIndex<'a> {
    fn new(corpus: &'a [Sentence]) -> Self {
        let mut by_concept: HashMap<&str, Vec<&Sentence>> = HashMap::new();
        let mut observed: HashMap<(&str, Option<UnitId>), Vec<Decimal>> = HashMap::new();
        for s in corpus {
            by_concept.entry(&s.concept).or_default().push(s);
            if let Some((d, unit, _)) = sentence_decimal(&s.text) {
                let v = observed.entry((&s.concept, unit)).or_default();
                if !v.contains(&d) {
                    v.push(d);
                }
            }
        }
        for v in observed.values_mut() {
            v.sort_by(|a, b| a.to_f64().total_cmp(&b.to_f64()));
        }
        Self { by_concept, observed }
    }

    fn concept(&self, name: &str) -> &[&'a Sentence] {
        self.by_concept.get(name).map(Vec::as_slice).unwrap_or(&[])
    }
}

fn make_query(qid: String, c: &Concept, spec: &CorpusSpec, unit: UnitId, value: Decimal, cmp: Cmp, rng: &mut ChaCha8Rng) -> Result<QueryRecord> {
    let template = QUERY_TEMPLATES.choose(rng).unwrap();
    let syn = c.synonyms[rng.random_range(0..spec.synonyms)];
    let op = concepts::operator_phrases(cmp).choose(rng).unwrap();
    let text = fill(template, syn, &render_quantity(value, unit, 0), op);
    let cond = parse_condition(&text).filter(|cond| cond.cmp == cmp && cond.unit == Some(unit));
    let cond = cond.ok_or_else(|| Error::Corrupt {
        what: "generated query",
        detail: format!("{text:?} does not parse back to its condition"),
    })?;
    Ok(QueryRecord {
        qid,
        text,
        value: cond.value,
        cmp,
        unit: Some(unit),
        concept: c.name.to_string(),
    })
}

fn verdicts<'a>(sentences: &[&'a Sentence], cond: &NumericalCondition) -> Vec<(&'a Sentence, Verdict)> {
    sentences.iter().map(|s| (*s, satisfies(&s.quantity(), cond, DEFAULT_EQ_TOLERANCE))).collect()
}

/// One EQ, GT and LT evaluation query per concept-unit pair with held-out
/// thresholds, plus training queries from the remaining observed values.
pub fn generate_queries(corpus: &[Sentence], spec: &CorpusSpec) -> Result<QuerySet> {
    spec.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let index = PairIndex::new(corpus);
    let mut set = QuerySet::default();
    for (ci, c) in spec.concepts().iter().enumerate() {
        let members = index.concept(c.name);
        for (ui, &unit) in spec.units_of(c).iter().enumerate() {
            let Some(observed) = index.observed.get(&(c.name, Some(unit))) else {
                continue;
            };
            let mut rng = pair_rng(spec.seed, 2, ci, ui);
            let mut values = observed.clone();
            values.shuffle(&mut rng);
            let n_held = ((values.len() as f64 * spec.held_out_fraction).ceil() as usize).clamp(1, values.len() - 1);
            let (held, train) = values.split_at(n_held);
            for cmp in Cmp::ALL {
                for &threshold in held {
                    let q = make_query(format!("q{:05}", set.eval.len() + 1), c, spec, unit, threshold, cmp, &mut rng)?;
                    let judged = verdicts(members, &q.condition());
                    if !judged.iter().any(|(_, v)| *v == Verdict::Satisfied) {
                        continue;
                    }
                    let grades = judged
                        .iter()
                        .map(|(s, v)| (s.id.clone(), u8::from(*v == Verdict::Satisfied)))
                        .collect();
                    set.qrels.insert(q.qid.clone(), grades);
                    set.eval.push(q);
                    break;
                }
            }
            for (oi, cmp) in Cmp::ALL.into_iter().enumerate() {
                let mut emitted = 0;
                let offset = oi * spec.train_queries_per_op;
                for k in 0..train.len() {
                    if emitted == spec.train_queries_per_op {
                        break;
                    }
                    let threshold = train[(offset + k) % train.len()];
                    let q = make_query(format!("t{:05}", set.train.len() + 1), c, spec, unit, threshold, cmp, &mut rng)?;
                    let judged = verdicts(members, &q.condition());
                    let has_pos = judged.iter().any(|(_, v)| *v == Verdict::Satisfied);
                    let has_neg = judged.iter().any(|(s, v)| *v == Verdict::Violated && s.unit == Some(unit));
                    if has_pos && has_neg {
                        set.train.push(q);
                        emitted += 1;
                    }
                }
            }
        }
    }
    Ok(set)
}

/// Samples up to `cap` distinct (positive, negative) pairs per query:
/// positives satisfy the condition within the query's concept, negatives
/// come from the query's concept-unit pair and violate it.
pub fn build_triplets(corpus: &[Sentence], queries: &[QueryRecord], cap: usize, seed: u64) -> Vec<Triplet> {
    let index = PairIndex::new(corpus);
    let mut out = Vec::new();
    for (qi, q) in queries.iter().enumerate() {
        let cond = q.condition();
        let judged = verdicts(index.concept(&q.concept), &cond);
        let pos: Vec<&Sentence> = judged.iter().filter(|(_, v)| *v == Verdict::Satisfied).map(|(s, _)| *s).collect();
        let neg: Vec<&Sentence> = judged
            .iter()
            .filter(|(s, v)| *v == Verdict::Violated && s.unit == q.unit)
            .map(|(s, _)| *s)
            .collect();
        let total = pos.len() * neg.len();
        let picks: Vec<(usize, usize)> = if total <= cap {
            (0..pos.len()).flat_map(|p| (0..neg.len()).map(move |n| (p, n))).collect()
        } else {
            let mut rng = pair_rng(seed, 3, qi, 0);
            let mut seen = HashSet::new();
            let mut picks = Vec::with_capacity(cap);
            while picks.len() < cap {
                let pair = (rng.random_range(0..pos.len()), rng.random_range(0..neg.len()));
                if seen.insert(pair) {
                    picks.push(pair);
                }
            }
            picks
        };
        out.extend(picks.into_iter().map(|(p, n)| Triplet {
            query: q.text.clone(),
            condition: cond,
            positive: pos[p].id.clone(),
            negative: neg[n].id.clone(),
            provenance: Provenance::Base,
        }));
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct Augmented {
    /// Input triplets followed by the augmented ones.
    pub triplets: Vec<Triplet>,
    /// Sentences created by unit and value permutation.
    pub sentences: Vec<Sentence>,
}

fn replace_span(tokens: &[String], span: Range<usize>, with: &str) -> String {
    let mut out: Vec<&str> = tokens[..span.start].iter().map(String::as_str).collect();
    out.push(with);
    out.extend(tokens[span.end..].iter().map(String::as_str));
    out.join(" ")
}

fn find_phrase(tokens: &[String], phrase: &str) -> Option<Range<usize>> {
    let p = tokenize(phrase);
    (0..=tokens.len().saturating_sub(p.len()))
        .find(|&i| tokens.len() >= p.len() && tokens[i..i + p.len()] == p[..])
        .map(|i| i..i + p.len())
}

/// Exact conversion when the unit factors differ by a power of ten.
fn convert_decimal(d: Decimal, from: UnitId, to: UnitId) -> Option<Decimal> {
    let table = UnitTable::builtin();
    let ratio = table.get(from).factor / table.get(to).factor;
    let k = ratio.log10().round();
    if (10f64.powf(k) - ratio).abs() > 1e-12 * ratio {
        return None;
    }
    let out = d.scale_pow10(k as i32);
    let magnitude = out.exp + out.significant_digits() as i32 - 1;
    (-3..=11).contains(&magnitude).then_some(out)
}

/// Alternative renderings of a sentence's quantity that denote the same amount.
fn unit_variants(text: &str) -> Vec<String> {
    let Some((dec, Some(unit), span)) = sentence_decimal(text) else {
        return Vec::new();
    };
    let tokens = tokenize(text);
    let current = tokens[span.end - 1].clone();
    let mut out = Vec::new();
    for other in UnitTable::builtin().siblings(unit) {
        if other == unit {
            for (i, s) in word_surfaces(unit).iter().enumerate() {
                if *s != current {
                    out.push(replace_span(&tokens, span.clone(), &render_quantity(dec, unit, i)));
                }
            }
        } else if let Some(d) = convert_decimal(dec, unit, other) {
            out.push(replace_span(&tokens, span.clone(), &render_quantity(d, other, 0)));
        }
    }
    out
}

pub fn augment(triplets: &[Triplet], corpus: &[Sentence], ops: &[AugmentOp], fraction: f64, seed: u64) -> Augmented {
    let index = PairIndex::new(corpus);
    let lookup = SentenceLookup::new(corpus);
    let mut out = Augmented {
        triplets: triplets.to_vec(),
        sentences: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa06e_0000);
    let mut fresh = 0usize;
    for &op in ops {
        for t in triplets {
            if !(rng.random::<f64>() < fraction) {
                continue;
            }
            let (Some(pos), Some(neg)) = (lookup.get(&t.positive), lookup.get(&t.negative)) else {
                continue;
            };
            let Some(c) = concept(&pos.concept) else { continue };
            let made = match op {
                AugmentOp::ConceptExpansion => {
                    let tokens = tokenize(&t.query);
                    c.synonyms.iter().find_map(|s| find_phrase(&tokens, s).map(|r| (r, *s))).and_then(|(span, used)| {
                        let others: Vec<&&str> = c.synonyms.iter().filter(|s| **s != used).collect();
                        let pick = others.choose(&mut rng)?;
                        let query = replace_span(&tokens, span, pick);
                        (parse_condition(&query) == Some(t.condition)).then(|| Triplet {
                            query,
                            provenance: Provenance::ConceptExpansion,
                            ..t.clone()
                        })
                    })
                    .map(|t| (t, None))
                }
                AugmentOp::UnitPermutation => {
                    let flip_pos = rng.random::<bool>();
                    let source = if flip_pos { pos } else { neg };
                    let variants = unit_variants(&source.text);
                    variants.choose(&mut rng).and_then(|text| {
                        fresh += 1;
                        let s = annotate(format!("{}-a{fresh}", source.id), text.clone(), &source.concept).ok()?;
                        let before = satisfies(&source.quantity(), &t.condition, DEFAULT_EQ_TOLERANCE);
                        let after = satisfies(&s.quantity(), &t.condition, DEFAULT_EQ_TOLERANCE);
                        (before == after).then(|| {
                            let mut nt = Triplet {
                                provenance: Provenance::UnitPermutation,
                                ..t.clone()
                            };
                            if flip_pos {
                                nt.positive = s.id.clone();
                            } else {
                                nt.negative = s.id.clone();
                            }
                            (nt, Some(s))
                        })
                    })
                }
                AugmentOp::ValuePermutation => {
                    // turn the positive into a violating copy, or the
                    // negative into a satisfying one
                    let from_pos = rng.random::<bool>();
                    let source = if from_pos { pos } else { neg };
                    let want = if from_pos { Verdict::Violated } else { Verdict::Satisfied };
                    sentence_decimal(&source.text).and_then(|(_, unit, span)| {
                        let observed = index.observed.get(&(source.concept.as_str(), unit))?;
                        let unit = unit?;
                        let flips: Vec<&Decimal> = observed
                            .iter()
                            .filter(|d| satisfies(&Quantity::new(d.to_f64(), Some(unit)), &t.condition, DEFAULT_EQ_TOLERANCE) == want)
                            .collect();
                        let d = flips.choose(&mut rng)?;
                        let tokens = tokenize(&source.text);
                        let surface = tokens[span.end - 1].clone();
                        let text = replace_span(&tokens, span, &format!("{} {surface}", d.render()));
                        fresh += 1;
                        let s = annotate(format!("{}-a{fresh}", source.id), text, &source.concept).ok()?;
                        if satisfies(&s.quantity(), &t.condition, DEFAULT_EQ_TOLERANCE) != want {
                            return None;
                        }
                        let mut nt = Triplet {
                            provenance: Provenance::ValuePermutation,
                            ..t.clone()
                        };
                        if from_pos {
                            nt.negative = s.id.clone();
                        } else {
                            nt.positive = s.id.clone();
                        }
                        Some((nt, Some(s)))
                    })
                }
            };
            if let Some((nt, s)) = made {
                out.triplets.push(nt);
                out.sentences.extend(s);
            }
        }
    }
    out
}

/// Everything the pipeline needs, generated from one spec.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub corpus: Vec<Sentence>,
    pub augmented: Vec<Sentence>,
    pub queries: Vec<QueryRecord>,
    pub train_queries: Vec<QueryRecord>,
    pub qrels: Qrels,
    pub triplets: Vec<Triplet>,
}

impl Dataset {
    pub fn generate(spec: &CorpusSpec) -> Result<Self> {
        let corpus = generate_corpus(spec)?;
        let qs = generate_queries(&corpus, spec)?;
        let base = build_triplets(&corpus, &qs.train, spec.triplet_cap, spec.seed);
        let aug = augment(&base, &corpus, &spec.augment_ops, spec.augment_fraction, spec.seed);
        Ok(Self {
            corpus,
            augmented: aug.sentences,
            queries: qs.eval,
            train_queries: qs.train,
            qrels: qs.qrels,
            triplets: aug.triplets,
        })
    }

    pub fn lookup(&self) -> SentenceLookup<'_> {
        SentenceLookup::new(self.corpus.iter().chain(&self.augmented))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantity::{GB, TB};

    fn small_spec() -> CorpusSpec {
        CorpusSpec {
            n_concepts: 6,
            values_per_pair: 12,
            templates: 3,
            triplet_cap: 8,
            ..CorpusSpec::default()
        }
    }

    #[test]
    fn corpus_counts_and_self_consistency() {
        let spec = CorpusSpec {
            n_concepts: 1,
            max_units: 1,
            values_per_pair: 2,
            ..CorpusSpec::default()
        };
        let corpus = generate_corpus(&spec).unwrap();
        assert_eq!(corpus.len(), 2 * spec.templates);
        let corpus = generate_corpus(&small_spec()).unwrap();
        for s in &corpus {
            let q = parse_quantities(&s.text);
            assert_eq!(q.len(), 1);
            assert_eq!((q[0].value, q[0].unit), (s.value, s.unit), "{}", s.text);
            assert!(s.value > 0.0);
        }
    }

    #[test]
    fn seed_changes_values_not_counts() {
        let a = generate_corpus(&small_spec()).unwrap();
        let b = generate_corpus(&CorpusSpec {
            seed: 7,
            ..small_spec()
        })
        .unwrap();
        assert_eq!(a.len(), b.len());
        assert_ne!(a.iter().map(|s| s.value).collect::<Vec<_>>(), b.iter().map(|s| s.value).collect::<Vec<_>>());
        assert_eq!(a, generate_corpus(&small_spec()).unwrap());
    }

    fn sentence(id: &str, value: f64, unit: UnitId) -> Sentence {
        let text = format!("the ssd capacity reached {} {} last quarter", Decimal::round_sig(value, 3), word_surfaces(unit)[0]);
        annotate(id.into(), text, "ssd_capacity").unwrap()
    }

    fn query(value: f64, cmp: Cmp) -> QueryRecord {
        QueryRecord {
            qid: "q".into(),
            text: format!("ssd capacity {} {value} gb", concepts::operator_phrases(cmp)[0]),
            value,
            cmp,
            unit: Some(GB),
            concept: "ssd_capacity".into(),
        }
    }

    #[test]
    fn qrels_for_a_hand_built_pair() {
        let corpus: Vec<Sentence> = [100.0, 200.0, 300.0, 400.0, 500.0]
            .iter()
            .enumerate()
            .map(|(i, v)| sentence(&format!("d{i}"), *v, GB))
            .collect();
        let q = query(300.0, Cmp::Gt);
        let rel: Vec<&str> = verdicts(&corpus.iter().collect::<Vec<_>>(), &q.condition())
            .into_iter()
            .filter(|(_, v)| *v == Verdict::Satisfied)
            .map(|(s, _)| s.id.as_str())
            .collect();
        assert_eq!(rel, ["d3", "d4"]);
        let triplets = build_triplets(&corpus, &[q], usize::MAX, 1);
        assert_eq!(triplets.len(), 2 * 3);
        let none = build_triplets(&corpus, &[query(50.0, Cmp::Gt)], usize::MAX, 1);
        assert!(none.is_empty());
    }

    #[test]
    fn queries_are_held_out_and_judged() {
        let spec = small_spec();
        let corpus = generate_corpus(&spec).unwrap();
        let qs = generate_queries(&corpus, &spec).unwrap();
        assert!(!qs.eval.is_empty() && !qs.train.is_empty());
        let eval_thresholds: HashSet<(String, u64)> =
            qs.eval.iter().map(|q| (q.concept.clone(), q.value.to_bits())).collect();
        for q in &qs.train {
            assert!(!eval_thresholds.contains(&(q.concept.clone(), q.value.to_bits())), "{}", q.text);
        }
        for q in &qs.eval {
            assert_eq!(parse_condition(&q.text), Some(q.condition()));
            assert!(qs.qrels[&q.qid].iter().any(|(_, g)| *g == 1));
        }
        let ops: HashSet<Cmp> = qs.eval.iter().map(|q| q.cmp).collect();
        assert_eq!(ops.len(), 3);
    }

    #[test]
    fn dataset_triplets_are_sound() {
        let ds = Dataset::generate(&small_spec()).unwrap();
        let lookup = ds.lookup();
        let mut seen = HashSet::new();
        for t in &ds.triplets {
            validate_triplet(t, &lookup).unwrap_or_else(|e| panic!("{e}: {t:?}"));
            seen.insert(t.provenance);
        }
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn empty_ops_leave_triplets_unchanged() {
        let spec = small_spec();
        let corpus = generate_corpus(&spec).unwrap();
        let qs = generate_queries(&corpus, &spec).unwrap();
        let base = build_triplets(&corpus, &qs.train, 8, 1);
        let aug = augment(&base, &corpus, &[], 1.0, 1);
        assert_eq!(aug.triplets, base);
        assert!(aug.sentences.is_empty());
    }

    #[test]
    fn unit_permutation_converts_terabytes() {
        let s = sentence("d0", 1000.0, GB);
        let variants = unit_variants(&s.text);
        assert!(variants.iter().any(|v| v.contains(" 1 tb ")), "{variants:?}");
        let tb = variants.iter().find(|v| v.contains(" 1 tb ")).unwrap();
        let q = parse_quantities(tb);
        assert_eq!((q[0].value, q[0].unit), (1.0, Some(TB)));
        let cond = query(500.0, Cmp::Gt).condition();
        assert_eq!(satisfies(&q[0], &cond, DEFAULT_EQ_TOLERANCE), satisfies(&s.quantity(), &cond, DEFAULT_EQ_TOLERANCE));
    }

    #[test]
    fn value_permutation_turns_a_positive_into_a_negative() {
        let corpus: Vec<Sentence> = [100.0, 200.0, 600.0, 700.0]
            .iter()
            .enumerate()
            .map(|(i, v)| sentence(&format!("d{i}"), *v, GB))
            .collect();
        let base = build_triplets(&corpus, &[query(500.0, Cmp::Gt)], usize::MAX, 1);
        let aug = augment(&base, &corpus, &[AugmentOp::ValuePermutation], 1.0, 3);
        let lookup = SentenceLookup::new(corpus.iter().chain(&aug.sentences));
        let new: Vec<&Triplet> = aug.triplets.iter().filter(|t| t.provenance == Provenance::ValuePermutation).collect();
        assert!(!new.is_empty());
        for t in &aug.triplets {
            validate_triplet(t, &lookup).unwrap();
        }
        // at least one rewritten positive now serves as a negative
        assert!(new.iter().any(|t| t.negative.starts_with("d2-") || t.negative.starts_with("d3-")));
    }
}
