//! Lexing shared by the tokenizer and the quantity parser.
//!
//! The lexer keeps symbols (`$`, `%`, `&`, ...) as separate lexemes so the
//! quantity parser can see currency and percent signs; the tokenizer drops
//! them and keeps only words and numbers.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexKind {
    Word,
    Number,
    Symbol,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lexeme {
    pub kind: LexKind,
    /// Lowercased surface text.
    pub text: String,
    /// Index into the token sequence; `None` for symbols.
    pub token: Option<usize>,
    /// Whitespace separates this lexeme from the previous one.
    pub spaced: bool,
}

pub fn lex(text: &str) -> Vec<Lexeme> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut next_token = 0;
    let mut spaced = false;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            spaced = true;
            i += 1;
            continue;
        }
        let start = i;
        let kind = if c.is_ascii_digit() {
            i = scan_number(&chars, i);
            LexKind::Number
        } else if c.is_alphabetic() {
            while i < chars.len() && chars[i].is_alphabetic() {
                i += 1;
            }
            LexKind::Word
        } else {
            i += 1;
            LexKind::Symbol
        };
        let surface: String = chars[start..i].iter().collect();
        let token = match kind {
            LexKind::Symbol => None,
            _ => {
                next_token += 1;
                Some(next_token - 1)
            }
        };
        out.push(Lexeme {
            kind,
            text: surface.to_lowercase(),
            token,
            spaced,
        });
        spaced = false;
    }
    out
}

fn digits_at(chars: &[char], i: usize) -> usize {
    chars[i..].iter().take_while(|c| c.is_ascii_digit()).count()
}

/// Digits with optional strict thousands groups, decimal part and exponent.
fn scan_number(chars: &[char], start: usize) -> usize {
    let mut i = start + digits_at(chars, start);
    let lead = i - start;
    if lead <= 3 {
        while i + 3 < chars.len() && chars[i] == ',' && digits_at(chars, i + 1) == 3 {
            i += 4;
        }
    }
    if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
        i += 1 + digits_at(chars, i + 1);
    }
    if i + 1 < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
        let mut j = i + 1;
        if chars[j] == '+' || chars[j] == '-' {
            j += 1;
        }
        if j < chars.len() && chars[j].is_ascii_digit() {
            i = j + digits_at(chars, j);
        }
    }
    i
}

/// Parses a number lexeme produced by [`lex`]; thousands separators allowed.
pub fn parse_number(token: &str) -> Option<f64> {
    let first = token.chars().next()?;
    if !first.is_ascii_digit() {
        return None;
    }
    let cleaned: String = token.chars().filter(|&c| c != ',').collect();
    cleaned.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Lowercased word and number tokens; punctuation and symbols are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    lex(text)
        .into_iter()
        .filter(|l| l.kind != LexKind::Symbol)
        .map(|l| l.text)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separators_and_decimals_stay_in_one_token() {
        assert_eq!(tokenize("20,000 units at 3.5%"), ["20,000", "units", "at", "3.5"]);
        assert_eq!(tokenize("1,2"), ["1", "2"]);
        assert_eq!(tokenize("1,2345"), ["1", "2345"]);
        assert_eq!(tokenize("1.5e9 and 2E-3"), ["1.5e9", "and", "2e-3"]);
        assert_eq!(tokenize("500GB"), ["500", "gb"]);
        assert_eq!(tokenize("3eggs"), ["3", "eggs"]);
    }

    #[test]
    fn symbols_are_lexemes_not_tokens() {
        let lx = lex("$1.5 billion");
        assert_eq!(lx[0].kind, LexKind::Symbol);
        assert_eq!(lx[0].token, None);
        assert_eq!(lx[1].token, Some(0));
        assert!(!lx[1].spaced);
        assert!(lx[2].spaced);
    }

    #[test]
    fn number_parsing() {
        assert_eq!(parse_number("20,000"), Some(20000.0));
        assert_eq!(parse_number("1.5e9"), Some(1.5e9));
        assert_eq!(parse_number("gb"), None);
    }
}
