use nalgebra::{DMatrix, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_stochastic, stationary_solution, HmmModel, PdfSource, INPUT_TOL, INTERNAL_TOL};
use crate::error::{Error, Result};
use crate::words::{Alphabet, Word};

/// Stationary first-order Markov chain on the alphabet itself.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovModel {
    alphabet: Alphabet,
    a: DMatrix<f64>,
    mu: RowDVector<f64>,
}

impl MarkovModel {
    pub fn new(alphabet: Alphabet, a: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(alphabet, a, INPUT_TOL)
    }

    pub(crate) fn new_internal(alphabet: Alphabet, a: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(alphabet, a, INTERNAL_TOL)
    }

    fn with_tolerance(alphabet: Alphabet, a: DMatrix<f64>, tol: f64) -> Result<Self> {
        let m = alphabet.size();
        if a.nrows() != m || a.ncols() != m {
            return Err(Error::ShapeMismatch(format!(
                "transition matrix is {}x{}, alphabet has {m} symbols",
                a.nrows(),
                a.ncols()
            )));
        }
        check_stochastic(&a, tol)?;
        let mu = stationary_solution(&a, 200_000)?.pi;
        Ok(Self { alphabet, a, mu })
    }

    /// Random chain whose transition rows are drawn uniformly from
    /// `(min_entry, 1)` and normalized.
    pub fn random(alphabet: Alphabet, min_entry: f64, seed: u64) -> Result<Self> {
        let m = alphabet.size();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = DMatrix::from_fn(m, m, |_, _| rng.random_range(min_entry..1.0));
        for mut row in a.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        Self::new_internal(alphabet, a)
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn stationary(&self) -> &RowDVector<f64> {
        &self.mu
    }

    /// `μ(y_1) Π_t A(y_t, y_{t+1})`.
    pub fn word_probability(&self, w: &Word) -> Result<f64> {
        self.alphabet.validate(w)?;
        let d = w.digits();
        let Some(&first) = d.first() else {
            return Ok(1.0);
        };
        Ok(d.windows(2)
            .fold(self.mu[first], |p, pair| p * self.a[(pair[0], pair[1])]))
    }

    pub fn to_hmm(&self) -> HmmModel {
        markov_to_hmm(self)
    }
}

/// HMM representation with states identified with symbols:
/// `m_ij(y) = A_ij δ_jy`, so `M(y)` keeps only column `y` of `A`.
pub fn markov_to_hmm(mk: &MarkovModel) -> HmmModel {
    let m = mk.alphabet.size();
    let mats = (0..m)
        .map(|y| DMatrix::from_fn(m, m, |i, j| if j == y { mk.a[(i, j)] } else { 0.0 }))
        .collect();
    HmmModel::new_internal(mk.alphabet.clone(), mats, Some(mk.mu.clone()))
        .expect("Markov chain parameters were validated")
}

impl PdfSource for MarkovModel {
    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn max_word_len(&self) -> Option<usize> {
        None
    }

    fn probability(&self, w: &Word) -> Result<f64> {
        self.word_probability(w)
    }
}
