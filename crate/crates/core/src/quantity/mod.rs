//! Quantity mentions, numerical conditions and their satisfaction semantics.
//!
//! This is the labeling oracle for data generation and loss supervision. It
//! is never consulted when a query is encoded or scored.

mod units;

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::text::{lex, parse_number, LexKind};
pub use units::*;

pub const DEFAULT_EQ_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Quantity {
    pub value: f64,
    pub unit: Option<UnitId>,
    /// Token index range covering number, multiplier and unit words.
    pub span: Range<usize>,
}

impl Quantity {
    pub fn new(value: f64, unit: Option<UnitId>) -> Self {
        Self {
            value,
            unit,
            span: 0..0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cmp {
    #[serde(rename = "EQ")]
    Eq,
    #[serde(rename = "LT")]
    Lt,
    #[serde(rename = "GT")]
    Gt,
}

impl Cmp {
    pub const ALL: [Cmp; 3] = [Cmp::Eq, Cmp::Gt, Cmp::Lt];

    /// Class index for the comparison head: EQ=0, GT=1, LT=2.
    pub fn class(self) -> usize {
        match self {
            Cmp::Eq => 0,
            Cmp::Gt => 1,
            Cmp::Lt => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Cmp::Eq => "EQ",
            Cmp::Lt => "LT",
            Cmp::Gt => "GT",
        }
    }

    pub fn parse(s: &str) -> Option<Cmp> {
        match s {
            "EQ" | "=" => Some(Cmp::Eq),
            "LT" | "<" => Some(Cmp::Lt),
            "GT" | ">" => Some(Cmp::Gt),
            _ => None,
        }
    }
}

impl fmt::Display for Cmp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericalCondition {
    pub value: f64,
    pub cmp: Cmp,
    pub unit: Option<UnitId>,
}

/// A parsed condition together with where it sits in the query's tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionMention {
    pub condition: NumericalCondition,
    pub quantity: Quantity,
    pub keyword: Option<Range<usize>>,
}

impl ConditionMention {
    /// Per-token labels: keyword tokens and quantity tokens are positive.
    pub fn token_labels(&self, n_tokens: usize) -> Vec<bool> {
        let mut labels = vec![false; n_tokens];
        let spans = std::iter::once(self.quantity.span.clone()).chain(self.keyword.clone());
        for span in spans {
            for i in span {
                if i < n_tokens {
                    labels[i] = true;
                }
            }
        }
        labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Satisfied,
    Violated,
    Incomparable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Incompatible;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScientificForm {
    pub sign: i8,
    pub mantissa: f64,
    pub exponent: i32,
}

impl ScientificForm {
    pub fn value(&self) -> f64 {
        self.sign as f64 * self.mantissa * pow10(self.exponent)
    }
}

fn pow10(e: i32) -> f64 {
    10f64.powi(e)
}

const MULTIPLIERS: &[(&str, f64)] = &[
    ("thousand", 1e3),
    ("million", 1e6),
    ("billion", 1e9),
    ("trillion", 1e12),
];

pub fn multiplier(word: &str) -> Option<f64> {
    MULTIPLIERS.iter().find(|(w, _)| *w == word).map(|(_, m)| *m)
}

/// `number * m` rounded once, so "1.1 million" is exactly 1100000.
fn scale_exact(number: &str, value: f64, m: f64) -> f64 {
    let plain: String = number.chars().filter(|c| *c != ',').collect();
    if plain.contains(['e', 'E']) {
        return value * m;
    }
    format!("{plain}e{}", m.log10().round() as i32).parse().unwrap_or(value * m)
}

pub fn parse_quantities(text: &str) -> Vec<Quantity> {
    parse_quantities_with(text, UnitTable::builtin())
}

pub fn parse_quantities_with(text: &str, table: &UnitTable) -> Vec<Quantity> {
    let lx = lex(text);
    let mut out = Vec::new();
    let mut i = 0;
    while i < lx.len() {
        if lx[i].kind != LexKind::Number {
            i += 1;
            continue;
        }
        let Some(mut value) = parse_number(&lx[i].text) else {
            i += 1;
            continue;
        };
        let start = lx[i].token.expect("numbers carry token indices");
        let mut end = start + 1;
        let mut unit = None;
        if i > 0 && lx[i - 1].kind == LexKind::Symbol {
            unit = table.by_surface(&lx[i - 1].text);
        }
        let mut j = i + 1;
        if j < lx.len() && lx[j].kind == LexKind::Word {
            if let Some(m) = multiplier(&lx[j].text) {
                value = scale_exact(&lx[i].text, value, m);
                end = lx[j].token.unwrap() + 1;
                j += 1;
            }
        }
        if j < lx.len() && lx[j].kind != LexKind::Number {
            if let Some(u) = table.by_surface(&lx[j].text) {
                if unit.is_none() || unit == Some(u) {
                    unit = Some(u);
                    if let Some(t) = lx[j].token {
                        end = t + 1;
                    }
                    j += 1;
                }
            }
        }
        if value.is_finite() {
            out.push(Quantity {
                value,
                unit,
                span: start..end,
            });
        }
        i = j;
    }
    out
}

const KEYWORDS: &[(&[&str], Cmp)] = &[
    (&["more", "than"], Cmp::Gt),
    (&["greater", "than"], Cmp::Gt),
    (&["at", "least"], Cmp::Gt),
    (&["less", "than"], Cmp::Lt),
    (&["at", "most"], Cmp::Lt),
    (&["equal", "to"], Cmp::Eq),
    (&["greater"], Cmp::Gt),
    (&["over"], Cmp::Gt),
    (&["above"], Cmp::Gt),
    (&["under"], Cmp::Lt),
    (&["below"], Cmp::Lt),
    (&["exactly"], Cmp::Eq),
    (&["equal"], Cmp::Eq),
    (&["of"], Cmp::Eq),
];

/// Comparison keyword phrases found in `tokens`, longest match first.
pub fn find_keywords(tokens: &[String]) -> Vec<(Range<usize>, Cmp)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let hit = KEYWORDS.iter().find(|(phrase, _)| {
            i + phrase.len() <= tokens.len()
                && phrase.iter().zip(&tokens[i..]).all(|(p, t)| p == t)
        });
        match hit {
            Some((phrase, cmp)) => {
                out.push((i..i + phrase.len(), *cmp));
                i += phrase.len();
            }
            None => i += 1,
        }
    }
    out
}

fn gap(a: &Range<usize>, b: &Range<usize>) -> usize {
    if a.end <= b.start {
        b.start - a.end
    } else if b.end <= a.start {
        a.start - b.end
    } else {
        0
    }
}

pub fn parse_condition(query_text: &str) -> Option<NumericalCondition> {
    parse_condition_mention(query_text).map(|m| m.condition)
}

pub fn parse_condition_mention(query_text: &str) -> Option<ConditionMention> {
    let quantities = parse_quantities(query_text);
    if quantities.is_empty() {
        return None;
    }
    let tokens = crate::text::tokenize(query_text);
    let keywords = find_keywords(&tokens);
    let best = keywords
        .iter()
        .flat_map(|(kw, cmp)| {
            quantities
                .iter()
                .map(move |q| (gap(kw, &q.span), kw.clone(), *cmp, q))
        })
        .min_by_key(|(d, kw, _, _)| (*d, kw.start));
    let (keyword, cmp, quantity) = match best {
        Some((_, kw, cmp, q)) => (Some(kw), cmp, q.clone()),
        None => (None, Cmp::Eq, quantities[0].clone()),
    };
    Some(ConditionMention {
        condition: NumericalCondition {
            value: quantity.value,
            cmp,
            unit: quantity.unit,
        },
        quantity,
        keyword,
    })
}

pub fn convert(q: &Quantity, target: UnitId) -> Result<Quantity, Incompatible> {
    convert_with(q, target, UnitTable::builtin())
}

pub fn convert_with(q: &Quantity, target: UnitId, table: &UnitTable) -> Result<Quantity, Incompatible> {
    let src = q.unit.ok_or(Incompatible)?;
    if !table.contains(src) || !table.contains(target) || !table.same_dimension(src, target) {
        return Err(Incompatible);
    }
    let value = if src == target {
        q.value
    } else {
        q.value * table.get(src).factor / table.get(target).factor
    };
    Ok(Quantity {
        value,
        unit: Some(target),
        span: q.span.clone(),
    })
}

pub fn satisfies(doc_q: &Quantity, cond: &NumericalCondition, eq_tolerance: f64) -> Verdict {
    let value = match (doc_q.unit, cond.unit) {
        (None, None) => doc_q.value,
        (Some(_), Some(target)) => match convert(doc_q, target) {
            Ok(q) => q.value,
            Err(Incompatible) => return Verdict::Incomparable,
        },
        _ => return Verdict::Incomparable,
    };
    if compare(value, cond.cmp, cond.value, eq_tolerance) {
        Verdict::Satisfied
    } else {
        Verdict::Violated
    }
}

/// `lhs cmp rhs`; EQ uses relative tolerance scaled by max(|rhs|, 1).
pub fn compare(lhs: f64, cmp: Cmp, rhs: f64, eq_tolerance: f64) -> bool {
    match cmp {
        Cmp::Eq => (lhs - rhs).abs() <= eq_tolerance * rhs.abs().max(1.0),
        Cmp::Lt => lhs < rhs,
        Cmp::Gt => lhs > rhs,
    }
}

pub fn to_scientific(value: f64) -> ScientificForm {
    assert!(value.is_finite(), "to_scientific needs a finite value");
    if value == 0.0 {
        return ScientificForm {
            sign: 1,
            mantissa: 0.0,
            exponent: 0,
        };
    }
    let sign = if value < 0.0 { -1 } else { 1 };
    let abs = value.abs();
    let mut exponent = abs.log10().floor() as i32;
    let mut mantissa = abs / pow10(exponent);
    // log10 can land one off near exact powers of ten
    if mantissa >= 10.0 {
        exponent += 1;
        mantissa = abs / pow10(exponent);
    } else if mantissa < 1.0 {
        exponent -= 1;
        mantissa = abs / pow10(exponent);
    }
    ScientificForm {
        sign,
        mantissa,
        exponent,
    }
}
