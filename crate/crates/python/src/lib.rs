//! Python bindings for `hmm_realize`.
//!
//! Matrices cross the boundary as lists of rows, words as strings of labels
//! (concatenated for single-character alphabets, dot-separated otherwise).

use hmm_realize::io::{HmmModelFile, ModelFile};
use hmm_realize::words::count;
use hmm_realize::{
    self as core, Alphabet, ApproximationResult, EmpiricalPdf, Error, HmmModel, MarkovModel, Order,
    PdfSource, SolverOptions,
};
use nalgebra::{DMatrix, RowDVector};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(
            "expected a non-empty rectangular list of rows",
        ));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn alphabet(labels: Vec<String>) -> PyResult<Alphabet> {
    Alphabet::new(labels).map_err(py_err)
}

fn parse_order(order: &str) -> PyResult<Order> {
    match order {
        "flo" => Ok(Order::Flo),
        "llo" => Ok(Order::Llo),
        other => Err(PyValueError::new_err(format!(
            "order must be 'flo' or 'llo', got {other:?}"
        ))),
    }
}

#[pyclass(frozen, name = "HmmModel", module = "hmm_realize_py")]
pub struct PyHmm {
    inner: HmmModel,
}

#[pymethods]
impl PyHmm {
    /// `matrices[y]` is the `N × N` matrix `M(y)` for the `y`-th label.
    #[new]
    #[pyo3(signature = (alphabet_labels, matrices, pi=None))]
    fn new(
        alphabet_labels: Vec<String>,
        matrices: Vec<Vec<Vec<f64>>>,
        pi: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let mats = matrices
            .iter()
            .map(|m| to_matrix(m))
            .collect::<PyResult<Vec<_>>>()?;
        let pi = pi.map(RowDVector::from_vec);
        let inner = HmmModel::new(alphabet(alphabet_labels)?, mats, pi).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn random(alphabet_labels: Vec<String>, n_states: usize, seed: u64) -> PyResult<Self> {
        let inner = HmmModel::random(alphabet(alphabet_labels)?, n_states, seed).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let loaded = ModelFile::parse(text)
            .and_then(|f| f.load())
            .map_err(py_err)?;
        Ok(Self {
            inner: loaded.as_hmm(),
        })
    }

    fn to_json(&self) -> PyResult<String> {
        ModelFile::Hmm(HmmModelFile::from_model(&self.inner))
            .to_json()
            .map_err(py_err)
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn alphabet(&self) -> Vec<String> {
        self.inner.alphabet().symbols().to_vec()
    }

    #[getter]
    fn matrices(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.matrices().iter().map(to_rows).collect()
    }

    #[getter]
    fn pi(&self) -> Vec<f64> {
        self.inner.pi().iter().copied().collect()
    }

    #[getter]
    fn transition(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.transition())
    }

    /// True when every state can emit every symbol.
    #[getter]
    fn positivity_condition(&self) -> bool {
        self.inner.validation_report().positivity_condition
    }

    fn word_probability(&self, word: &str) -> PyResult<f64> {
        let w = self.inner.alphabet().parse_word(word).map_err(py_err)?;
        self.inner.word_probability(&w).map_err(py_err)
    }

    /// Sample path of length `length`, formatted as in sample files.
    fn sample(&self, length: usize, seed: u64) -> String {
        let path = self.inner.sample_path(length, seed);
        core::io::format_sample(self.inner.alphabet(), &path)
            .trim_end()
            .to_string()
    }

    fn __repr__(&self) -> String {
        format!(
            "HmmModel(n_states={}, alphabet={:?})",
            self.inner.n_states(),
            self.inner.alphabet().symbols()
        )
    }
}

#[pyclass(frozen, name = "MarkovModel", module = "hmm_realize_py")]
pub struct PyMarkov {
    inner: MarkovModel,
}

#[pymethods]
impl PyMarkov {
    #[new]
    fn new(alphabet_labels: Vec<String>, transition: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = MarkovModel::new(alphabet(alphabet_labels)?, to_matrix(&transition)?)
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (alphabet_labels, seed, min_entry=0.05))]
    fn random(alphabet_labels: Vec<String>, seed: u64, min_entry: f64) -> PyResult<Self> {
        let inner =
            MarkovModel::random(alphabet(alphabet_labels)?, min_entry, seed).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn alphabet(&self) -> Vec<String> {
        self.inner.alphabet().symbols().to_vec()
    }

    #[getter]
    fn transition(&self) -> Vec<Vec<f64>> {
        to_rows(self.inner.transition())
    }

    #[getter]
    fn stationary(&self) -> Vec<f64> {
        self.inner.stationary().iter().copied().collect()
    }

    fn word_probability(&self, word: &str) -> PyResult<f64> {
        let w = self.inner.alphabet().parse_word(word).map_err(py_err)?;
        self.inner.word_probability(&w).map_err(py_err)
    }

    /// The same process as an HMM with one state per symbol.
    fn to_hmm(&self) -> PyHmm {
        PyHmm {
            inner: self.inner.to_hmm(),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "MarkovModel(alphabet={:?})",
            self.inner.alphabet().symbols()
        )
    }
}

/// Sliding-window word frequencies of one sample path.
#[pyclass(frozen, name = "EmpiricalSource", module = "hmm_realize_py")]
pub struct PyEmpirical {
    inner: EmpiricalPdf,
}

#[pymethods]
impl PyEmpirical {
    #[new]
    #[pyo3(signature = (sequence, k_max, alphabet_labels=None))]
    fn new(sequence: &str, k_max: usize, alphabet_labels: Option<Vec<String>>) -> PyResult<Self> {
        let alpha = match alphabet_labels {
            Some(labels) => alphabet(labels)?,
            None => core::io::infer_alphabet(sequence).map_err(py_err)?,
        };
        let seq = alpha.parse_sequence(sequence).map_err(py_err)?;
        let inner = core::empirical_pdf(&seq, &alpha, k_max).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn probability(&self, word: &str) -> PyResult<f64> {
        let w = self.inner.alphabet().parse_word(word).map_err(py_err)?;
        self.inner.probability(&w).map_err(py_err)
    }

    #[getter]
    fn consistency_deviation(&self) -> f64 {
        self.inner.consistency_deviation()
    }
}

/// Runs `f` on whichever source type `obj` holds.
fn with_source<R>(
    obj: &Bound<'_, PyAny>,
    f: impl FnOnce(&(dyn PdfSource + Sync)) -> R,
) -> PyResult<R> {
    if let Ok(h) = obj.cast::<PyHmm>() {
        Ok(f(&h.get().inner))
    } else if let Ok(m) = obj.cast::<PyMarkov>() {
        Ok(f(&m.get().inner))
    } else if let Ok(e) = obj.cast::<PyEmpirical>() {
        Ok(f(&e.get().inner))
    } else {
        Err(PyValueError::new_err(
            "expected HmmModel, MarkovModel or EmpiricalSource",
        ))
    }
}

fn markov_of<'py>(obj: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyMarkov>> {
    obj.cast::<PyMarkov>()
        .cloned()
        .map_err(|_| PyValueError::new_err("expected a MarkovModel"))
}

#[pyclass(frozen, name = "ApproximationResult", module = "hmm_realize_py")]
pub struct PyApproximation {
    inner: ApproximationResult,
}

#[pymethods]
impl PyApproximation {
    #[getter]
    fn model(&self) -> PyHmm {
        PyHmm {
            inner: self.inner.model.clone(),
        }
    }

    #[getter]
    fn block_divergence(&self) -> f64 {
        self.inner.block_divergence.to_f64()
    }

    #[getter]
    fn model_divergence(&self) -> f64 {
        self.inner.model_divergence.to_f64()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged()
    }

    #[getter]
    fn iterations(&self) -> Vec<usize> {
        self.inner.reports.iter().map(|r| r.iterations).collect()
    }

    #[getter]
    fn pi_rank(&self) -> usize {
        self.inner.pi_rank
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// Objective trace of step `step` (1, 2 or 3).
    fn objective_trace(&self, step: usize) -> PyResult<Vec<f64>> {
        match step {
            1..=3 => Ok(self.inner.reports[step - 1].objective_trace.clone()),
            _ => Err(PyValueError::new_err("step must be 1, 2 or 3")),
        }
    }

    fn diagnostics_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.diagnostics())
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

#[pyfunction]
#[pyo3(signature = (n, alphabet_labels, order="flo"))]
fn enumerate_words(n: usize, alphabet_labels: Vec<String>, order: &str) -> PyResult<Vec<String>> {
    let alpha = alphabet(alphabet_labels)?;
    Ok(core::enumerate(n, &alpha, parse_order(order)?)
        .iter()
        .map(|w| alpha.format_word(w))
        .collect())
}

#[pyfunction]
fn flo_index(word: &str, alphabet_labels: Vec<String>) -> PyResult<usize> {
    let alpha = alphabet(alphabet_labels)?;
    let w = alpha.parse_word(word).map_err(py_err)?;
    core::flo_index(&w, &alpha).map_err(py_err)
}

#[pyfunction]
fn llo_index(word: &str, alphabet_labels: Vec<String>) -> PyResult<usize> {
    let alpha = alphabet(alphabet_labels)?;
    let w = alpha.parse_word(word).map_err(py_err)?;
    core::llo_index(&w, &alpha).map_err(py_err)
}

#[pyfunction]
fn word_count(m: usize, n: usize) -> usize {
    count(m, n)
}

/// `H_KL` as a list of rows (rows in flo, columns in llo).
#[pyfunction]
fn hankel_block(
    source: &Bound<'_, PyAny>,
    row_len: usize,
    col_len: usize,
) -> PyResult<Vec<Vec<f64>>> {
    let block = with_source(source, |s| core::build_block(s, row_len, col_len))?.map_err(py_err)?;
    Ok(to_rows(block.data()))
}

/// `D(M‖N)`; `inf` when `N` is zero where `M` is not.
#[pyfunction]
fn i_divergence(m: Vec<Vec<f64>>, n: Vec<Vec<f64>>) -> PyResult<f64> {
    core::i_divergence(&to_matrix(&m)?, &to_matrix(&n)?)
        .map(|d| d.to_f64())
        .map_err(py_err)
}

#[pyfunction]
fn divergence_rate_estimate(q: &Bound<'_, PyAny>, p: &Bound<'_, PyAny>, n: usize) -> PyResult<f64> {
    let result = with_source(q, |sq| {
        with_source(p, |sp| core::divergence_rate_estimate(sq, sp, n))
    })??;
    result.map(|d| d.to_f64()).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (source, n_states, depth=None, max_iters=5000, tol=1e-10, seed=0, restarts=1, threads=1))]
#[allow(clippy::too_many_arguments)]
fn approximate_hmm(
    py: Python<'_>,
    source: &Bound<'_, PyAny>,
    n_states: usize,
    depth: Option<usize>,
    max_iters: usize,
    tol: f64,
    seed: u64,
    restarts: usize,
    threads: usize,
) -> PyResult<PyApproximation> {
    let opts = SolverOptions {
        max_iters,
        tol,
        seed,
        structure_mask: None,
    };
    let depth = depth.unwrap_or(n_states);
    let result = with_source(source, |s| {
        py.detach(|| core::approximate_hmm_multistart(s, n_states, depth, &opts, restarts, threads))
    })?
    .map_err(py_err)?;
    Ok(PyApproximation { inner: result })
}

#[pyfunction]
fn markov_approximation(source: &Bound<'_, PyAny>) -> PyResult<PyMarkov> {
    let approx = with_source(source, |s| core::markov_approximation(s))?.map_err(py_err)?;
    Ok(PyMarkov {
        inner: approx.model,
    })
}

#[pyfunction]
fn markov_divergence_rate(q: &Bound<'_, PyAny>, p: &Bound<'_, PyAny>) -> PyResult<f64> {
    let (q, p) = (markov_of(q)?, markov_of(p)?);
    core::markov_divergence_rate(&q.get().inner, &p.get().inner)
        .map(|d| d.to_f64())
        .map_err(py_err)
}

/// Returns `(max_deviation, passed)` over all words up to `max_len`.
#[pyfunction]
#[pyo3(signature = (model, source, max_len, tol=1e-6))]
fn check_equivalence(
    model: &Bound<'_, PyAny>,
    source: &Bound<'_, PyAny>,
    max_len: usize,
    tol: f64,
) -> PyResult<(f64, bool)> {
    let model = model
        .cast::<PyHmm>()
        .map_err(|_| PyValueError::new_err("model must be an HmmModel"))?;
    let report = with_source(source, |s| {
        core::check_equivalence(&model.get().inner, s, max_len, tol)
    })?
    .map_err(py_err)?;
    Ok((report.max_deviation, report.passed))
}

#[pymodule]
pub fn hmm_realize_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHmm>()?;
    m.add_class::<PyMarkov>()?;
    m.add_class::<PyEmpirical>()?;
    m.add_class::<PyApproximation>()?;
    m.add_function(wrap_pyfunction!(enumerate_words, m)?)?;
    m.add_function(wrap_pyfunction!(flo_index, m)?)?;
    m.add_function(wrap_pyfunction!(llo_index, m)?)?;
    m.add_function(wrap_pyfunction!(word_count, m)?)?;
    m.add_function(wrap_pyfunction!(hankel_block, m)?)?;
    m.add_function(wrap_pyfunction!(i_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(divergence_rate_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(approximate_hmm, m)?)?;
    m.add_function(wrap_pyfunction!(markov_approximation, m)?)?;
    m.add_function(wrap_pyfunction!(markov_divergence_rate, m)?)?;
    m.add_function(wrap_pyfunction!(check_equivalence, m)?)?;
    Ok(())
}
