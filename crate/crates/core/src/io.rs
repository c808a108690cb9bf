//! JSON model files and plain-text sample paths.
//!
//! HMM file: `{"alphabet": [...], "N": n, "M": {label: [[row], …]}, "pi": [...]}`
//! with `pi` optional. Markov file: `{"alphabet": [...], "A": [[row], …]}`.
//! Either may carry a free-form `"diagnostics"` object.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use nalgebra::{DMatrix, RowDVector};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::models::{HmmModel, MarkovModel, PdfSource};
use crate::words::{Alphabet, Word};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HmmModelFile {
    pub alphabet: Vec<String>,
    #[serde(rename = "N")]
    pub n_states: usize,
    #[serde(rename = "M")]
    pub matrices: IndexMap<String, Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkovModelFile {
    pub alphabet: Vec<String>,
    #[serde(rename = "A")]
    pub transition: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Value>,
}

/// Unvalidated HMM parameters as read from disk.
pub struct HmmParts {
    pub alphabet: Alphabet,
    pub matrices: Vec<DMatrix<f64>>,
    pub pi: Option<RowDVector<f64>>,
}

fn to_matrix(rows: &[Vec<f64>], expect: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != expect {
        return Err(Error::Parse(format!(
            "{name}: expected {expect} rows, got {}",
            rows.len()
        )));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != expect {
            return Err(Error::Parse(format!(
                "{name}: row {i} has {} entries, expected {expect}",
                r.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(expect, expect, |i, j| rows[i][j]))
}

impl HmmModelFile {
    pub fn from_model(model: &HmmModel) -> Self {
        let labels = model.alphabet().symbols().to_vec();
        let matrices = labels
            .iter()
            .enumerate()
            .map(|(y, l)| {
                let m = model.matrix(y);
                (
                    l.clone(),
                    m.row_iter().map(|r| r.iter().copied().collect()).collect(),
                )
            })
            .collect();
        Self {
            alphabet: labels,
            n_states: model.n_states(),
            matrices,
            pi: Some(model.pi().iter().copied().collect()),
            diagnostics: None,
        }
    }

    pub fn to_parts(&self) -> Result<HmmParts> {
        let alphabet = Alphabet::new(self.alphabet.clone())?;
        let n = self.n_states;
        let mut matrices = Vec::with_capacity(alphabet.size());
        for label in alphabet.symbols() {
            let rows = self
                .matrices
                .get(label)
                .ok_or_else(|| Error::Parse(format!("M: missing matrix for symbol {label:?}")))?;
            matrices.push(to_matrix(rows, n, &format!("M[{label:?}]"))?);
        }
        if let Some(extra) = self.matrices.keys().find(|k| alphabet.digit(k).is_none()) {
            return Err(Error::Parse(format!(
                "M: symbol {extra:?} is not in the alphabet"
            )));
        }
        let pi = match &self.pi {
            Some(p) if p.len() != n => {
                return Err(Error::Parse(format!(
                    "pi: expected {n} entries, got {}",
                    p.len()
                )))
            }
            Some(p) => Some(RowDVector::from_row_slice(p)),
            None => None,
        };
        Ok(HmmParts {
            alphabet,
            matrices,
            pi,
        })
    }

    pub fn to_model(&self) -> Result<HmmModel> {
        let parts = self.to_parts()?;
        HmmModel::new(parts.alphabet, parts.matrices, parts.pi)
    }
}

impl MarkovModelFile {
    pub fn from_model(model: &MarkovModel) -> Self {
        Self {
            alphabet: model.alphabet().symbols().to_vec(),
            transition: model
                .transition()
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            diagnostics: None,
        }
    }

    pub fn to_model(&self) -> Result<MarkovModel> {
        let alphabet = Alphabet::new(self.alphabet.clone())?;
        let a = to_matrix(&self.transition, alphabet.size(), "A")?;
        MarkovModel::new(alphabet, a)
    }
}

/// Either kind of model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelFile {
    Hmm(HmmModelFile),
    Markov(MarkovModelFile),
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Parse("model file must be a JSON object".into()))?;
        if obj.contains_key("M") {
            Ok(ModelFile::Hmm(serde_json::from_value(value)?))
        } else if obj.contains_key("A") {
            Ok(ModelFile::Markov(serde_json::from_value(value)?))
        } else {
            Err(Error::Parse(
                "model file needs an \"M\" (HMM) or \"A\" (Markov) entry".into(),
            ))
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn load(&self) -> Result<LoadedModel> {
        Ok(match self {
            ModelFile::Hmm(f) => LoadedModel::Hmm(f.to_model()?),
            ModelFile::Markov(f) => LoadedModel::Markov(f.to_model()?),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// A validated model of either kind.
#[derive(Debug, Clone)]
pub enum LoadedModel {
    Hmm(HmmModel),
    Markov(MarkovModel),
}

impl LoadedModel {
    pub fn as_hmm(&self) -> HmmModel {
        match self {
            LoadedModel::Hmm(h) => h.clone(),
            LoadedModel::Markov(m) => m.to_hmm(),
        }
    }

    pub fn as_markov(&self) -> Option<&MarkovModel> {
        match self {
            LoadedModel::Markov(m) => Some(m),
            LoadedModel::Hmm(_) => None,
        }
    }
}

impl PdfSource for LoadedModel {
    fn alphabet(&self) -> &Alphabet {
        match self {
            LoadedModel::Hmm(h) => h.alphabet(),
            LoadedModel::Markov(m) => m.alphabet(),
        }
    }

    fn max_word_len(&self) -> Option<usize> {
        None
    }

    fn probability(&self, w: &Word) -> Result<f64> {
        match self {
            LoadedModel::Hmm(h) => h.word_probability(w),
            LoadedModel::Markov(m) => m.word_probability(w),
        }
    }
}

/// One label per character for single-character alphabets, otherwise
/// space-separated labels; newline-terminated.
pub fn format_sample(alphabet: &Alphabet, path: &Word) -> String {
    let sep = if alphabet.single_char_labels() {
        ""
    } else {
        " "
    };
    let mut s = path
        .digits()
        .iter()
        .map(|&d| alphabet.label(d).expect("valid digit"))
        .collect::<Vec<_>>()
        .join(sep);
    s.push('\n');
    s
}

/// Alphabet of the distinct characters in `text`, sorted.
pub fn infer_alphabet(text: &str) -> Result<Alphabet> {
    let mut chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
    chars.sort_unstable();
    chars.dedup();
    Alphabet::new(chars.into_iter().map(String::from))
}

/// Serializes `+∞` as the string `"inf"`.
pub fn serialize_extended<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}
