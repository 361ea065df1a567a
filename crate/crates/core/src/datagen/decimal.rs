//! Exact decimal values for rendering quantities in text.

use std::fmt;

use crate::quantity::multiplier;

/// `digits * 10^exp` with no trailing zeros in `digits` (zero is `0e0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Decimal {
    pub digits: u64,
    pub exp: i32,
}

impl Decimal {
    pub fn new(digits: u64, exp: i32) -> Self {
        let (mut d, mut e) = (digits, exp);
        if d == 0 {
            return Self { digits: 0, exp: 0 };
        }
        while d % 10 == 0 {
            d /= 10;
            e += 1;
        }
        Self { digits: d, exp: e }
    }

    /// Rounds a positive value to `sig` significant digits.
    pub fn round_sig(value: f64, sig: u32) -> Self {
        assert!(value > 0.0 && value.is_finite());
        let e = value.log10().floor() as i32 - (sig as i32 - 1);
        let scaled = value / 10f64.powi(e);
        let mut d = scaled.round() as u64;
        let mut e = e;
        if d >= 10u64.pow(sig) {
            d /= 10;
            e += 1;
        }
        Self::new(d, e)
    }

    pub fn scale_pow10(self, k: i32) -> Self {
        Self::new(self.digits, self.exp + k)
    }

    pub fn significant_digits(&self) -> usize {
        self.digits.to_string().len()
    }

    pub fn to_f64(&self) -> f64 {
        // via the decimal string so the result is the correctly rounded double
        self.plain().parse().expect("decimal renders to a valid float")
    }

    /// Plain positional notation, e.g. `0.035`, `12500`.
    pub fn plain(&self) -> String {
        let ds = self.digits.to_string();
        if self.exp >= 0 {
            format!("{ds}{}", "0".repeat(self.exp as usize))
        } else {
            let frac = (-self.exp) as usize;
            if ds.len() > frac {
                let (a, b) = ds.split_at(ds.len() - frac);
                format!("{a}.{b}")
            } else {
                format!("0.{}{ds}", "0".repeat(frac - ds.len()))
            }
        }
    }

    /// Text form used in sentences: word multipliers from a million up,
    /// thousands separators from ten thousand.
    pub fn render(&self) -> String {
        let magnitude = self.exp + self.significant_digits() as i32 - 1;
        for (word, k) in [("billion", 9), ("million", 6)] {
            if magnitude >= k {
                return format!("{} {word}", self.scale_pow10(-k).plain());
            }
        }
        let plain = self.plain();
        if magnitude >= 4 && self.exp >= 0 {
            group_thousands(&plain)
        } else {
            plain
        }
    }

    /// Parses a number token with an optional trailing multiplier word.
    pub fn parse(number: &str, mult: Option<&str>) -> Option<Self> {
        let s: String = number.chars().filter(|c| *c != ',').collect();
        let (int, frac) = s.split_once('.').unwrap_or((&s, ""));
        if int.is_empty() || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
            return None;
        }
        let digits: u64 = format!("{int}{frac}").parse().ok()?;
        let mut d = Self::new(digits, -(frac.len() as i32));
        if let Some(w) = mult {
            let m = multiplier(w)?;
            d = d.scale_pow10(m.log10().round() as i32);
        }
        Some(d)
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn group_thousands(int: &str) -> String {
    let mut out = String::new();
    for (i, ch) in int.chars().enumerate() {
        if i > 0 && (int.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}
