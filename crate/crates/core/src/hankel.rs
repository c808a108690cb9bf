//! Hankel blocks of word probabilities and the I-divergence between
//! nonnegative matrices.
//!
//! Block `H_KL` has rows indexed by the length-`K` words in flo and columns by
//! the length-`L` words in llo; entry `(i, j)` is `p(u_i v_j)`. For an HMM it
//! factors as `Π_K Γ_L` with rows `π M(u_i)` and columns `M(v_j) e`.

use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::models::{HmmModel, PdfSource};
use crate::words::{count, word_at, Alphabet, Order};

#[derive(Debug, Clone, PartialEq)]
pub struct HankelBlock {
    row_len: usize,
    col_len: usize,
    alphabet: Alphabet,
    data: DMatrix<f64>,
}

impl HankelBlock {
    pub fn row_len(&self) -> usize {
        self.row_len
    }

    pub fn col_len(&self) -> usize {
        self.col_len
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    /// Column group `H_KL(y)` of `H_{K,L+1}`: entries `p(u_i y v_j)`.
    /// Requires `col_len ≥ 1`; the result has column length `col_len − 1`.
    pub fn symbol_slice(&self, symbol: usize) -> DMatrix<f64> {
        let width = count(self.alphabet.size(), self.col_len - 1);
        self.data.columns(symbol * width, width).into_owned()
    }

    /// Writes the block as CSV: the header holds the llo column words, the
    /// first column the flo row words, cells use 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let m = self.alphabet.size();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![String::new()];
        header.extend((0..self.data.ncols()).map(|j| {
            self.alphabet
                .format_word(&word_at(j, self.col_len, m, Order::Llo))
        }));
        w.write_record(&header)?;
        for i in 0..self.data.nrows() {
            let mut rec = vec![self
                .alphabet
                .format_word(&word_at(i, self.row_len, m, Order::Flo))];
            rec.extend(self.data.row(i).iter().map(|v| format_f64(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// 17 significant digits.
pub fn format_f64(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v:.16e}")
    }
}

/// Tabulates `H_KL` by querying `pdf` for every concatenation `u_i v_j`.
pub fn build_block<P: PdfSource + ?Sized>(
    pdf: &P,
    row_len: usize,
    col_len: usize,
) -> Result<HankelBlock> {
    pdf.supports(row_len + col_len)?;
    let alphabet = pdf.alphabet().clone();
    let m = alphabet.size();
    let rows = count(m, row_len);
    let cols = count(m, col_len);
    let row_words: Vec<_> = (0..rows)
        .map(|i| word_at(i, row_len, m, Order::Flo))
        .collect();
    let col_words: Vec<_> = (0..cols)
        .map(|j| word_at(j, col_len, m, Order::Llo))
        .collect();
    let mut data = DMatrix::zeros(rows, cols);
    for (i, u) in row_words.iter().enumerate() {
        for (j, v) in col_words.iter().enumerate() {
            data[(i, j)] = pdf.probability(&u.concat(v))?;
        }
    }
    Ok(HankelBlock {
        row_len,
        col_len,
        alphabet,
        data,
    })
}

/// Exact factors `Π_K` (`m^K × N`, rows `π M(u_i)`) and `Γ_L`
/// (`N × m^L`, columns `M(v_j) e`) of an HMM's Hankel block.
#[derive(Debug, Clone)]
pub struct HmmBlockFactors {
    pub pi_k: DMatrix<f64>,
    pub gamma_l: DMatrix<f64>,
}

impl HmmBlockFactors {
    pub fn product(&self) -> DMatrix<f64> {
        &self.pi_k * &self.gamma_l
    }
}

pub fn hmm_block_factors(model: &HmmModel, row_len: usize, col_len: usize) -> HmmBlockFactors {
    let m = model.alphabet().size();
    let n = model.n_states();
    let rows = count(m, row_len);
    let cols = count(m, col_len);
    let mut pi_k = DMatrix::zeros(rows, n);
    for i in 0..rows {
        let u = word_at(i, row_len, m, Order::Flo);
        let f = model.forward(&u).expect("enumerated words are valid");
        pi_k.row_mut(i).copy_from(&f);
    }
    let ones = nalgebra::DVector::from_element(n, 1.0);
    let mut gamma_l = DMatrix::zeros(n, cols);
    for j in 0..cols {
        let v = word_at(j, col_len, m, Order::Llo);
        let mv = model.word_matrix(&v).expect("enumerated words are valid");
        gamma_l.column_mut(j).copy_from(&(mv * &ones));
    }
    HmmBlockFactors { pi_k, gamma_l }
}

/// `Γ_{L+1} = [M(y_1) Γ_L | … | M(y_m) Γ_L]`.
pub fn extend_gamma(model: &HmmModel, gamma_l: &DMatrix<f64>) -> DMatrix<f64> {
    let parts: Vec<DMatrix<f64>> = model.matrices().iter().map(|my| my * gamma_l).collect();
    let width = gamma_l.ncols();
    let mut out = DMatrix::zeros(gamma_l.nrows(), width * parts.len());
    for (y, p) in parts.iter().enumerate() {
        out.columns_mut(y * width, width).copy_from(p);
    }
    out
}

/// Number of singular values above `rel_tol · σ_max`.
pub fn numerical_rank(mat: &DMatrix<f64>, rel_tol: f64) -> usize {
    if mat.is_empty() {
        return 0;
    }
    let sv = mat.clone().singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// An I-divergence value; `Infinite` when some positive entry is compared
/// against a zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Divergence {
    Finite(f64),
    Infinite,
}

impl Divergence {
    pub fn is_finite(&self) -> bool {
        matches!(self, Divergence::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            Divergence::Finite(v) => Some(v),
            Divergence::Infinite => None,
        }
    }

    /// `f64` view for reporting; `Infinite` maps to `f64::INFINITY`.
    pub fn to_f64(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }

    pub fn scale(self, factor: f64) -> Self {
        match self {
            Divergence::Finite(v) => Divergence::Finite(v * factor),
            Divergence::Infinite => Divergence::Infinite,
        }
    }
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Divergence::Finite(v) => write!(f, "{}", format_f64(*v)),
            Divergence::Infinite => write!(f, "inf"),
        }
    }
}

/// `q log(q/p) − q + p` with `0/0 = 0`, `0 log 0 = 0`; `None` for `q > 0 = p`.
///
/// Evaluated as `q (r − 1 − log r)` with `r = p/q` through `ln_1p`, which
/// keeps full relative accuracy when `p ≈ q`.
#[inline]
pub(crate) fn entry_divergence(q: f64, p: f64) -> Option<f64> {
    if q == 0.0 {
        Some(p)
    } else if p == 0.0 {
        None
    } else {
        let d = p / q - 1.0;
        Some(q * (d - d.ln_1p()))
    }
}

/// Neumaier-compensated running sum.
#[derive(Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    c: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.c
    }
}

/// `D(M‖N) = Σ_ij (M_ij log(M_ij/N_ij) − M_ij + N_ij)`.
pub fn i_divergence(mmat: &DMatrix<f64>, nmat: &DMatrix<f64>) -> Result<Divergence> {
    if mmat.shape() != nmat.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            mmat.shape(),
            nmat.shape()
        )));
    }
    if let Some(v) = mmat
        .iter()
        .chain(nmat.iter())
        .find(|v| !v.is_finite() || **v < 0.0)
    {
        return Err(Error::Validation(format!(
            "negative or non-finite entry {v}"
        )));
    }
    Ok(i_divergence_unchecked(mmat, nmat))
}

pub(crate) fn i_divergence_unchecked(mmat: &DMatrix<f64>, nmat: &DMatrix<f64>) -> Divergence {
    let mut acc = CompensatedSum::default();
    for (&q, &p) in mmat.iter().zip(nmat.iter()) {
        match entry_divergence(q, p) {
            Some(v) => acc.add(v),
            None => return Divergence::Infinite,
        }
    }
    Divergence::Finite(acc.total().max(0.0))
}

/// `(1/2n) D(H_nn^Q ‖ H_nn^P)`, which tends to the divergence rate
/// `D(Q‖P)` as `n` grows.
pub fn divergence_rate_estimate<Q, P>(pdf_q: &Q, pdf_p: &P, n: usize) -> Result<Divergence>
where
    Q: PdfSource + ?Sized,
    P: PdfSource + ?Sized,
{
    if n == 0 {
        return Err(Error::Validation("block depth n must be at least 1".into()));
    }
    if pdf_q.alphabet().size() != pdf_p.alphabet().size() {
        return Err(Error::ShapeMismatch(
            "sources use different alphabets".into(),
        ));
    }
    let hq = build_block(pdf_q, n, n)?;
    let hp = build_block(pdf_p, n, n)?;
    Ok(i_divergence(hq.data(), hp.data())?.scale(1.0 / (2 * n) as f64))
}
