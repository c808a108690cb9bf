use nalgebra::{DMatrix, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{stationarity_residual, stationary_solution, PdfSource, INPUT_TOL, INTERNAL_TOL};
use crate::error::{Error, Result};
use crate::words::{Alphabet, Word};

/// Stationary HMM given by the substochastic matrices
/// `M(y)_ij = P(Y_{t+1} = y, X_{t+1} = j | X_t = i)` and an invariant row
/// vector `π` of `A = Σ_y M(y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmModel {
    alphabet: Alphabet,
    mats: Vec<DMatrix<f64>>,
    pi: RowDVector<f64>,
    stationary_unique: bool,
}

/// Residuals and flags describing how well a parameter set satisfies the HMM
/// constraints. Produced even for invalid inputs.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub n_states: usize,
    pub shape_errors: Vec<String>,
    /// Entries outside `[0, 1]`, as `(symbol, row, col, value)`.
    pub entry_errors: Vec<(usize, usize, usize, f64)>,
    /// `(Ae)_i − 1` for each state `i`.
    pub row_residuals: Vec<f64>,
    /// `πe − 1`, when `π` is available.
    pub pi_sum_residual: Option<f64>,
    /// `‖πA − π‖∞`, when `π` is available.
    pub stationarity_residual: Option<f64>,
    pub pi_negative: bool,
    /// `π` was computed from `A` rather than supplied.
    pub pi_computed: bool,
    pub stationary_unique: bool,
    /// Every state emits every symbol with positive probability, so every
    /// finite string has positive probability.
    pub positivity_condition: bool,
}

impl ValidationReport {
    pub fn max_row_residual(&self) -> f64 {
        self.row_residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Human-readable list of violated constraints at tolerance `tol`.
    pub fn problems(&self, tol: f64) -> Vec<String> {
        let mut out = self.shape_errors.clone();
        for &(y, i, j, v) in &self.entry_errors {
            out.push(format!("M[{y}][{i}][{j}] = {v} is outside [0, 1]"));
        }
        for (i, r) in self.row_residuals.iter().enumerate() {
            if r.abs() > tol {
                out.push(format!("row {i} of A sums to {}, expected 1", 1.0 + r));
            }
        }
        if self.pi_negative {
            out.push("pi has negative entries".into());
        }
        if let Some(r) = self.pi_sum_residual {
            if r.abs() > tol {
                out.push(format!("pi sums to {}, expected 1", 1.0 + r));
            }
        }
        if let Some(r) = self.stationarity_residual {
            if r > tol {
                out.push(format!("pi is not invariant for A (residual {r:e})"));
            }
        }
        out
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.problems(tol).is_empty()
    }
}

impl HmmModel {
    /// Validates user-supplied parameters at [`INPUT_TOL`]. When `pi` is
    /// `None` it is computed from `A`.
    pub fn new(
        alphabet: Alphabet,
        mats: Vec<DMatrix<f64>>,
        pi: Option<RowDVector<f64>>,
    ) -> Result<Self> {
        Self::with_tolerance(alphabet, mats, pi, INPUT_TOL)
    }

    pub(crate) fn new_internal(
        alphabet: Alphabet,
        mats: Vec<DMatrix<f64>>,
        pi: Option<RowDVector<f64>>,
    ) -> Result<Self> {
        Self::with_tolerance(alphabet, mats, pi, INTERNAL_TOL)
    }

    fn with_tolerance(
        alphabet: Alphabet,
        mats: Vec<DMatrix<f64>>,
        pi: Option<RowDVector<f64>>,
        tol: f64,
    ) -> Result<Self> {
        let (report, pi) = Self::inspect(&alphabet, &mats, pi.as_ref());
        let problems = report.problems(tol);
        if !problems.is_empty() {
            return Err(Error::Validation(problems.join("; ")));
        }
        let pi = pi.ok_or_else(|| Error::Validation("no invariant vector".into()))?;
        Ok(Self {
            alphabet,
            mats,
            pi,
            stationary_unique: report.stationary_unique,
        })
    }

    /// Checks a parameter set without failing. Returns the report and the
    /// invariant vector (supplied or computed) when one is available.
    pub fn inspect(
        alphabet: &Alphabet,
        mats: &[DMatrix<f64>],
        pi: Option<&RowDVector<f64>>,
    ) -> (ValidationReport, Option<RowDVector<f64>>) {
        let n = mats.first().map_or(0, |m| m.nrows());
        let mut report = ValidationReport {
            n_states: n,
            shape_errors: Vec::new(),
            entry_errors: Vec::new(),
            row_residuals: Vec::new(),
            pi_sum_residual: None,
            stationarity_residual: None,
            pi_negative: false,
            pi_computed: pi.is_none(),
            stationary_unique: true,
            positivity_condition: false,
        };
        if mats.len() != alphabet.size() {
            report.shape_errors.push(format!(
                "expected {} matrices (one per symbol), got {}",
                alphabet.size(),
                mats.len()
            ));
        }
        if n == 0 {
            report
                .shape_errors
                .push("state count must be positive".into());
        }
        for (y, m) in mats.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                report.shape_errors.push(format!(
                    "M[{y}] is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                ));
            }
        }
        if let Some(p) = pi {
            if p.len() != n {
                report
                    .shape_errors
                    .push(format!("pi has length {}, expected {n}", p.len()));
            }
        }
        if !report.shape_errors.is_empty() {
            return (report, None);
        }

        for (y, m) in mats.iter().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    let v = m[(i, j)];
                    if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                        report.entry_errors.push((y, i, j, v));
                    }
                }
            }
        }
        let a = mats.iter().fold(DMatrix::zeros(n, n), |acc, m| acc + m);
        report.row_residuals = a.row_iter().map(|r| r.sum() - 1.0).collect();
        report.positivity_condition = mats.iter().all(|m| m.row_iter().all(|r| r.sum() > 0.0));

        let pi = match pi {
            Some(p) => Some(p.clone()),
            None if report.entry_errors.is_empty() && report.max_row_residual() <= INPUT_TOL => {
                match stationary_solution(&a, 200_000) {
                    Ok(sol) => {
                        report.stationary_unique = sol.unique;
                        Some(sol.pi)
                    }
                    Err(e) => {
                        report
                            .shape_errors
                            .push(format!("no invariant vector: {e}"));
                        None
                    }
                }
            }
            None => None,
        };
        if let Some(p) = &pi {
            report.pi_negative = p.iter().any(|&v| v < 0.0 || !v.is_finite());
            report.pi_sum_residual = Some(p.sum() - 1.0);
            report.stationarity_residual = Some(stationarity_residual(p, &a));
        }
        (report, pi)
    }

    /// Validation report of an already-constructed model.
    pub fn validation_report(&self) -> ValidationReport {
        Self::inspect(&self.alphabet, &self.mats, Some(&self.pi)).0
    }

    /// Random model with strictly positive parameters: each row of the block
    /// `[M(y_1) | … | M(y_m)]` is drawn uniformly from `(0.05, 1)` and
    /// normalized.
    pub fn random(alphabet: Alphabet, n_states: usize, seed: u64) -> Result<Self> {
        let m = alphabet.size();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mats = vec![DMatrix::zeros(n_states, n_states); m];
        for i in 0..n_states {
            let row: Vec<f64> = (0..m * n_states)
                .map(|_| rng.random_range(0.05..1.0))
                .collect();
            let s: f64 = row.iter().sum();
            for (k, v) in row.iter().enumerate() {
                mats[k / n_states][(i, k % n_states)] = v / s;
            }
        }
        Self::new_internal(alphabet, mats, None)
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn n_states(&self) -> usize {
        self.pi.len()
    }

    pub fn matrix(&self, symbol: usize) -> &DMatrix<f64> {
        &self.mats[symbol]
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.mats
    }

    pub fn pi(&self) -> &RowDVector<f64> {
        &self.pi
    }

    /// False when the transition matrix admits several invariant vectors.
    pub fn stationary_unique(&self) -> bool {
        self.stationary_unique
    }

    /// `A = Σ_y M(y)`.
    pub fn transition(&self) -> DMatrix<f64> {
        let n = self.n_states();
        self.mats
            .iter()
            .fold(DMatrix::zeros(n, n), |acc, m| acc + m)
    }

    /// `M(v) = M(v_1)⋯M(v_k)`, the identity for the empty word.
    pub fn word_matrix(&self, w: &Word) -> Result<DMatrix<f64>> {
        self.alphabet.validate(w)?;
        let n = self.n_states();
        Ok(w.digits()
            .iter()
            .fold(DMatrix::identity(n, n), |acc, &y| acc * &self.mats[y]))
    }

    /// `π M(w)`: the joint law of emitting `w` and the final state.
    pub fn forward(&self, w: &Word) -> Result<RowDVector<f64>> {
        self.alphabet.validate(w)?;
        Ok(w.digits()
            .iter()
            .fold(self.pi.clone(), |v, &y| v * &self.mats[y]))
    }

    /// `π M(w_1)⋯M(w_n) e`.
    pub fn word_probability(&self, w: &Word) -> Result<f64> {
        Ok(self.forward(w)?.sum())
    }

    /// Same law with states relabelled: new state `k` is old state `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_states();
        let mut seen = vec![false; n];
        if perm.len() != n
            || perm
                .iter()
                .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::Validation("not a permutation of the states".into()));
        }
        let mats = self
            .mats
            .iter()
            .map(|m| DMatrix::from_fn(n, n, |i, j| m[(perm[i], perm[j])]))
            .collect();
        let pi = RowDVector::from_fn(n, |_, j| self.pi[perm[j]]);
        Self::new_internal(self.alphabet.clone(), mats, Some(pi))
    }

    /// Draws a path of length `len`. The initial state comes from `π`; each
    /// step then draws the pair (symbol, next state) from the current row of
    /// `[M(y_1) | … | M(y_m)]`.
    pub fn sample_path(&self, len: usize, seed: u64) -> Word {
        let n = self.n_states();
        let m = self.alphabet.size();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = draw(&mut rng, self.pi.iter().copied());
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let row = (0..m * n).map(|k| self.mats[k / n][(state, k % n)]);
            let k = draw(&mut rng, row);
            out.push(k / n);
            state = k % n;
        }
        Word::from_digits(out)
    }
}

/// Inverse-CDF draw from unnormalized nonnegative weights; zero-weight
/// outcomes are never selected.
fn draw(rng: &mut ChaCha8Rng, weights: impl Iterator<Item = f64> + Clone) -> usize {
    let total: f64 = weights.clone().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, w) in weights.enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = k;
            if u < acc {
                return k;
            }
        }
    }
    last_positive
}

impl PdfSource for HmmModel {
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
