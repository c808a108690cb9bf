//! Finite-alphabet words and the two fixed-length lexicographic orders.
//!
//! Hankel rows are indexed by words in *flo* (lexicographic reading right to
//! left, i.e. the last symbol is the most significant digit) and columns by
//! words in *llo* (ordinary left-to-right lexicographic order). Both orders are
//! only ever used per length: index `i` of length `n` is a radix-`m` number
//! with `n` digits.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered set of symbol labels. Symbol `k` is stored as digit `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Alphabet {
    symbols: Vec<String>,
}

impl Alphabet {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.is_empty() {
            return Err(Error::InvalidAlphabet(
                "alphabet must contain at least one symbol".into(),
            ));
        }
        let mut seen = HashSet::new();
        for s in &symbols {
            if s.is_empty() {
                return Err(Error::InvalidAlphabet("empty symbol label".into()));
            }
            if s.contains('.') {
                return Err(Error::InvalidAlphabet(format!("label {s:?} contains '.'")));
            }
            if !seen.insert(s.as_str()) {
                return Err(Error::InvalidAlphabet(format!("duplicate label {s:?}")));
            }
        }
        Ok(Self { symbols })
    }

    /// Alphabet `{0, 1, …, m-1}` with decimal labels.
    pub fn with_size(m: usize) -> Result<Self> {
        Self::new((0..m).map(|k| k.to_string()))
    }

    pub fn binary() -> Self {
        Self::with_size(2).expect("binary alphabet")
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn label(&self, digit: usize) -> Option<&str> {
        self.symbols.get(digit).map(String::as_str)
    }

    pub fn digit(&self, label: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == label)
    }

    /// Whether words are written as bare concatenations of labels.
    pub fn single_char_labels(&self) -> bool {
        self.symbols.iter().all(|s| s.chars().count() == 1)
    }

    /// Parse a word written in label form.
    ///
    /// Single-character alphabets take one label per character (a `'.'`
    /// separator is tolerated); otherwise labels are separated by `'.'`.
    /// The empty string is the empty word.
    pub fn parse_word(&self, text: &str) -> Result<Word> {
        let text = text.trim();
        if text.is_empty() {
            return Ok(Word::empty());
        }
        let tokens: Vec<String> = if self.single_char_labels() && !text.contains('.') {
            text.chars().map(String::from).collect()
        } else {
            text.split('.').map(str::to_string).collect()
        };
        tokens
            .iter()
            .map(|t| {
                self.digit(t)
                    .ok_or_else(|| Error::InvalidWord(format!("unknown symbol {t:?} in {text:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Word::from_digits)
    }

    /// Parse a whitespace-tolerant sample path (one label per character, or
    /// whitespace/'.'-separated tokens for multi-character labels).
    pub fn parse_sequence(&self, text: &str) -> Result<Word> {
        let tokens: Vec<&str> = if self.single_char_labels() {
            return text
                .chars()
                .filter(|c| !c.is_whitespace() && *c != '.')
                .map(|c| {
                    let mut buf = [0u8; 4];
                    let s: &str = c.encode_utf8(&mut buf);
                    self.digit(s)
                        .ok_or_else(|| Error::InvalidWord(format!("unknown symbol {c:?}")))
                })
                .collect::<Result<Vec<_>>>()
                .map(Word::from_digits);
        } else {
            text.split(|c: char| c.is_whitespace() || c == '.')
                .filter(|t| !t.is_empty())
                .collect()
        };
        tokens
            .iter()
            .map(|t| {
                self.digit(t)
                    .ok_or_else(|| Error::InvalidWord(format!("unknown symbol {t:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Word::from_digits)
    }

    pub fn format_word(&self, word: &Word) -> String {
        let sep = if self.single_char_labels() { "" } else { "." };
        word.digits()
            .iter()
            .map(|&d| self.symbols[d].as_str())
            .collect::<Vec<_>>()
            .join(sep)
    }

    pub fn validate(&self, word: &Word) -> Result<()> {
        let m = self.size();
        match word.digits().iter().find(|&&d| d >= m) {
            Some(d) => Err(Error::InvalidWord(format!(
                "digit {d} out of range for alphabet of size {m}"
            ))),
            None => Ok(()),
        }
    }
}

impl TryFrom<Vec<String>> for Alphabet {
    type Error = Error;

    fn try_from(symbols: Vec<String>) -> Result<Self> {
        Self::new(symbols)
    }
}

impl From<Alphabet> for Vec<String> {
    fn from(a: Alphabet) -> Self {
        a.symbols
    }
}

/// A finite string of symbol digits. The empty word has length zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Word(Vec<usize>);

impl Word {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn from_digits(digits: Vec<usize>) -> Self {
        Self(digits)
    }

    pub fn digits(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> Option<usize> {
        self.0.last().copied()
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut digits = Vec::with_capacity(self.len() + other.len());
        digits.extend_from_slice(&self.0);
        digits.extend_from_slice(&other.0);
        Word(digits)
    }

    /// The length-`len` window starting at `start`.
    pub fn window(&self, start: usize, len: usize) -> &[usize] {
        &self.0[start..start + len]
    }
}

impl From<Vec<usize>> for Word {
    fn from(digits: Vec<usize>) -> Self {
        Self(digits)
    }
}

impl From<&[usize]> for Word {
    fn from(digits: &[usize]) -> Self {
        Self(digits.to_vec())
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "ε");
        }
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        let sep = if self.0.iter().all(|&d| d < 10) {
            ""
        } else {
            "."
        };
        write!(f, "{}", parts.join(sep))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Order {
    /// First lexicographic order: read right to left, last symbol most significant.
    Flo,
    /// Last lexicographic order: ordinary left-to-right lexicographic order.
    Llo,
}

/// Little-endian radix-`m` value of `digits`; assumes valid digits.
pub(crate) fn flo_value(digits: &[usize], m: usize) -> usize {
    digits.iter().rev().fold(0, |acc, &d| acc * m + d)
}

/// Big-endian radix-`m` value of `digits`; assumes valid digits.
pub(crate) fn llo_value(digits: &[usize], m: usize) -> usize {
    digits.iter().fold(0, |acc, &d| acc * m + d)
}

/// Position of `w` among the words of its length in flo.
pub fn flo_index(w: &Word, alphabet: &Alphabet) -> Result<usize> {
    alphabet.validate(w)?;
    Ok(flo_value(w.digits(), alphabet.size()))
}

/// Position of `w` among the words of its length in llo.
pub fn llo_index(w: &Word, alphabet: &Alphabet) -> Result<usize> {
    alphabet.validate(w)?;
    Ok(llo_value(w.digits(), alphabet.size()))
}

/// The word of length `n` at position `index` of the given order.
pub fn word_at(index: usize, n: usize, m: usize, order: Order) -> Word {
    let mut digits = vec![0; n];
    let mut rest = index;
    match order {
        Order::Flo => {
            for d in digits.iter_mut() {
                *d = rest % m;
                rest /= m;
            }
        }
        Order::Llo => {
            for d in digits.iter_mut().rev() {
                *d = rest % m;
                rest /= m;
            }
        }
    }
    Word(digits)
}

/// `m^n`, the number of words of length `n`.
pub fn count(m: usize, n: usize) -> usize {
    m.pow(n as u32)
}

/// All `m^n` words of length `n` listed in the given order.
pub fn enumerate(n: usize, alphabet: &Alphabet, order: Order) -> Vec<Word> {
    let m = alphabet.size();
    (0..count(m, n)).map(|i| word_at(i, n, m, order)).collect()
}
