//! Stationary sources of finite-dimensional word probabilities.

mod empirical;
mod hmm;
mod markov;

pub use empirical::{empirical_pdf, EmpiricalPdf};
pub use hmm::{HmmModel, ValidationReport};
pub use markov::{markov_to_hmm, MarkovModel};

use nalgebra::{DMatrix, RowDVector};

use crate::error::{Error, Result};
use crate::words::Word;
use crate::Alphabet;

/// Stochasticity tolerance for user-supplied parameters.
pub const INPUT_TOL: f64 = 1e-9;
/// Tolerance for models assembled internally from exact arithmetic.
pub const INTERNAL_TOL: f64 = 1e-12;

/// Anything that can answer `p(w)` for words up to some length.
pub trait PdfSource {
    fn alphabet(&self) -> &Alphabet;

    /// Longest supported word, `None` when every length is supported.
    fn max_word_len(&self) -> Option<usize>;

    /// Probability of `w`; the empty word has probability one.
    fn probability(&self, w: &Word) -> Result<f64>;

    fn supports(&self, len: usize) -> Result<()> {
        match self.max_word_len() {
            Some(max) if len > max => Err(Error::LengthOutOfRange { len, max }),
            _ => Ok(()),
        }
    }
}

impl<T: PdfSource + ?Sized> PdfSource for &T {
    fn alphabet(&self) -> &Alphabet {
        (**self).alphabet()
    }
    fn max_word_len(&self) -> Option<usize> {
        (**self).max_word_len()
    }
    fn probability(&self, w: &Word) -> Result<f64> {
        (**self).probability(w)
    }
}

/// Result of [`stationary_solution`].
#[derive(Debug, Clone)]
pub struct StationarySolution {
    pub pi: RowDVector<f64>,
    /// False when the chain has several closed classes and `pi` is only the
    /// minimum-norm member of the invariant set.
    pub unique: bool,
    /// `‖πA − π‖∞`.
    pub residual: f64,
}

const POWER_MAX_ITERS: usize = 200_000;

/// Invariant probability vector of a row-stochastic matrix.
pub fn stationary_vector(a: &DMatrix<f64>) -> Result<RowDVector<f64>> {
    stationary_solution(a, POWER_MAX_ITERS).map(|s| s.pi)
}

/// Solves `(Aᵀ − I)πᵀ = 0` together with `πe = 1` in the least-squares sense
/// and returns its minimum-norm solution. Falls back to power iteration on
/// the lazy chain `(A + I)/2` if the direct solve is not accurate enough.
pub fn stationary_solution(a: &DMatrix<f64>, max_iters: usize) -> Result<StationarySolution> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "transition matrix must be square and non-empty, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    check_stochastic(a, INPUT_TOL)?;

    let mut system = DMatrix::<f64>::zeros(n + 1, n);
    for i in 0..n {
        for j in 0..n {
            system[(i, j)] = a[(j, i)] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        system[(n, j)] = 1.0;
    }
    let mut rhs = nalgebra::DVector::<f64>::zeros(n + 1);
    rhs[n] = 1.0;

    let svd = system.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * (n as f64 + 1.0) * f64::EPSILON * 16.0;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let unique = rank == n;

    if let Ok(sol) = svd.solve(&rhs, eps) {
        let sol = sol.transpose();
        if sol.iter().all(|&v| v.is_finite() && v > -1e-9) {
            let pi = normalize_probability(sol);
            let residual = stationarity_residual(&pi, a);
            if residual <= 1e-12 {
                return Ok(StationarySolution {
                    pi,
                    unique,
                    residual,
                });
            }
        }
    }

    // Lazy chain has the same invariant vectors and no periodicity.
    let lazy = (a + DMatrix::<f64>::identity(n, n)) * 0.5;
    let mut pi = RowDVector::<f64>::from_element(n, 1.0 / n as f64);
    for _ in 0..max_iters {
        let next = normalize_probability(&pi * &lazy);
        let step = (&next - &pi).amax();
        pi = next;
        if step < 1e-15 {
            let residual = stationarity_residual(&pi, a);
            if residual <= 1e-10 {
                return Ok(StationarySolution {
                    pi,
                    unique,
                    residual,
                });
            }
        }
    }
    Err(Error::NoConvergence(max_iters))
}

pub(crate) fn stationarity_residual(pi: &RowDVector<f64>, a: &DMatrix<f64>) -> f64 {
    (pi * a - pi).amax()
}

fn normalize_probability(mut v: RowDVector<f64>) -> RowDVector<f64> {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    let s = v.sum();
    v / s
}

/// Checks nonnegativity and unit row sums.
pub(crate) fn check_stochastic(a: &DMatrix<f64>, tol: f64) -> Result<()> {
    for (i, row) in a.row_iter().enumerate() {
        if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Validation(format!("row {i} has invalid entry {v}")));
        }
        let s = row.sum();
        if (s - 1.0).abs() > tol {
            return Err(Error::Validation(format!(
                "row {i} sums to {s}, expected 1"
            )));
        }
    }
    Ok(())
}
