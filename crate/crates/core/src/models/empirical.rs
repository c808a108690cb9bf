use super::PdfSource;
use crate::error::{Error, Result};
use crate::words::{count, llo_value, Alphabet, Word};

/// Sliding-window frequency estimate of word probabilities from one sample
/// path. Each length is normalized on its own by the number of windows
/// `T − k + 1`.
#[derive(Debug, Clone)]
pub struct EmpiricalPdf {
    alphabet: Alphabet,
    sample_len: usize,
    /// `counts[k][llo index]` for `k = 0..=k_max`.
    counts: Vec<Vec<u64>>,
}

/// Counts every window of length `1..=k_max` of `sequence`.
pub fn empirical_pdf(sequence: &Word, alphabet: &Alphabet, k_max: usize) -> Result<EmpiricalPdf> {
    alphabet.validate(sequence)?;
    let t = sequence.len();
    if k_max == 0 || t < k_max {
        return Err(Error::Validation(format!(
            "need sample length >= k_max >= 1, got T = {t}, k_max = {k_max}"
        )));
    }
    let m = alphabet.size();
    if (k_max as f64) * (m as f64).log2() > 30.0 {
        return Err(Error::Validation(format!(
            "{m}^{k_max} words is too many to tabulate"
        )));
    }
    let digits = sequence.digits();
    let mut counts = vec![vec![1u64]];
    for k in 1..=k_max {
        let mut table = vec![0u64; count(m, k)];
        for window in digits.windows(k) {
            table[llo_value(window, m)] += 1;
        }
        counts.push(table);
    }
    Ok(EmpiricalPdf {
        alphabet: alphabet.clone(),
        sample_len: t,
        counts,
    })
}

impl EmpiricalPdf {
    pub fn sample_len(&self) -> usize {
        self.sample_len
    }

    pub fn k_max(&self) -> usize {
        self.counts.len() - 1
    }

    /// Number of windows equal to `w`.
    pub fn count(&self, w: &Word) -> Result<u64> {
        self.supports(w.len())?;
        self.alphabet.validate(w)?;
        Ok(self.counts[w.len()][llo_value(w.digits(), self.alphabet.size())])
    }

    /// `max_u |Σ_y p̂(uy) − p̂(u)|` over `|u| < k_max`; zero for exact sources,
    /// of order `k/T` here.
    pub fn consistency_deviation(&self) -> f64 {
        let m = self.alphabet.size();
        let mut worst: f64 = 0.0;
        for k in 0..self.k_max() {
            for idx in 0..self.counts[k].len() {
                let ext: f64 = (0..m).map(|y| self.frequency(k + 1, idx * m + y)).sum();
                worst = worst.max((ext - self.frequency(k, idx)).abs());
            }
        }
        worst
    }

    fn frequency(&self, len: usize, llo: usize) -> f64 {
        if len == 0 {
            return 1.0;
        }
        self.counts[len][llo] as f64 / (self.sample_len - len + 1) as f64
    }
}

impl PdfSource for EmpiricalPdf {
    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn max_word_len(&self) -> Option<usize> {
        Some(self.k_max())
    }

    fn probability(&self, w: &Word) -> Result<f64> {
        self.supports(w.len())?;
        self.alphabet.validate(w)?;
        Ok(self.frequency(w.len(), llo_value(w.digits(), self.alphabet.size())))
    }
}
