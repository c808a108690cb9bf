//! Constrained I-divergence nonnegative matrix factorization.
//!
//! Three solvers share the multiplicative-update machinery:
//!
//! * [`solve_two_factor`] minimizes `D(H ‖ ΠΓ)` over both factors subject to
//!   `eᵀΠe = 1` and `Γe = e`. Each iteration is one Lee–Seung sweep over `Π`,
//!   one over `Γ`, then the rescaling `Γ ← D⁻¹Γ`, `Π ← ΠD` with
//!   `D = diag(Γe)`, which leaves the product unchanged.
//! * [`solve_fixed_left`] minimizes over a row-stochastic `Γ` with `Π` fixed.
//! * [`solve_left_stochastic`] minimizes `D(T ‖ M (I_m ⊗ Γ))` over a
//!   row-stochastic `M = [M(y_1) | … | M(y_m)]`.
//!
//! The last two are convex in the free factor. Their update is the
//! alternating-minimization (EM) step: scale by the attributed mass, then
//! normalize each row, so the iterates are exactly feasible and the objective
//! never increases.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hankel::{format_f64, i_divergence_unchecked, Divergence};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop once `(f_k − f_{k+1}) ≤ tol · f_k`.
    pub tol: f64,
    pub seed: u64,
    /// 0/1 pattern for the free left factor (`Π`, or `M` in
    /// [`solve_left_stochastic`]); masked entries start at zero and stay there.
    pub structure_mask: Option<DMatrix<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            tol: 1e-10,
            seed: 0,
            structure_mask: None,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Validation("max_iters must be at least 1".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Validation(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if let Some(mask) = &self.structure_mask {
            if mask.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Validation("structure mask must be 0/1".into()));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    fn mask_for(&self, rows: usize, cols: usize) -> Result<Option<&DMatrix<f64>>> {
        match &self.structure_mask {
            Some(mask) if mask.shape() != (rows, cols) => Err(Error::ShapeMismatch(format!(
                "structure mask is {:?}, free factor is {:?}",
                mask.shape(),
                (rows, cols)
            ))),
            other => Ok(other.as_ref()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverFlag {
    /// Inner size exceeds `min(rows, cols)` of the target.
    Overparametrized { inner: usize, limit: usize },
    /// The target did not sum to one and was rescaled.
    Renormalized { original_mass: f64 },
    /// A row of the free factor received no mass and was set to uniform.
    UniformRow { row: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Objective after initialization (index 0) and after every iteration.
    pub objective_trace: Vec<f64>,
    /// `max_a |(Γe)_a − 1|` (or `|(Me)_a − 1|`) per trace entry.
    pub row_residual_trace: Vec<f64>,
    /// `|eᵀΠe − 1|` per trace entry; zero for the fixed-factor solvers.
    pub mass_residual_trace: Vec<f64>,
    pub converged: bool,
    /// KKT residual of the convex fixed-factor problems at termination.
    pub kkt_residual: Option<f64>,
    pub flags: Vec<SolverFlag>,
}

impl SolveReport {
    fn new(objective: f64, row_residual: f64, mass_residual: f64) -> Self {
        Self {
            iterations: 0,
            objective_trace: vec![objective],
            row_residual_trace: vec![row_residual],
            mass_residual_trace: vec![mass_residual],
            converged: false,
            kkt_residual: None,
            flags: Vec::new(),
        }
    }

    fn record(&mut self, objective: f64, row_residual: f64, mass_residual: f64) {
        self.iterations += 1;
        self.objective_trace.push(objective);
        self.row_residual_trace.push(row_residual);
        self.mass_residual_trace.push(mass_residual);
    }

    /// Relative-decrease stopping rule on the last two trace entries.
    fn should_stop(&self, tol: f64) -> bool {
        let k = self.objective_trace.len();
        k >= 2 && {
            let prev = self.objective_trace[k - 2];
            prev - self.objective_trace[k - 1] <= tol * prev
        }
    }

    fn flag(&mut self, flag: SolverFlag) {
        if !self.flags.contains(&flag) {
            self.flags.push(flag);
        }
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace starts non-empty")
    }

    pub fn final_row_residual(&self) -> f64 {
        *self
            .row_residual_trace
            .last()
            .expect("trace starts non-empty")
    }

    pub fn final_mass_residual(&self) -> f64 {
        *self
            .mass_residual_trace
            .last()
            .expect("trace starts non-empty")
    }

    /// CSV with columns `iteration,objective,row_residual,mass_residual`.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "objective", "row_residual", "mass_residual"])?;
        for k in 0..self.objective_trace.len() {
            w.write_record([
                k.to_string(),
                format_f64(self.objective_trace[k]),
                format_f64(self.row_residual_trace[k]),
                format_f64(self.mass_residual_trace[k]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    /// `R × N`, total mass one.
    pub pi: DMatrix<f64>,
    /// `N × C`, row-stochastic.
    pub gamma: DMatrix<f64>,
}

impl FactorPair {
    pub fn product(&self) -> DMatrix<f64> {
        &self.pi * &self.gamma
    }
}

/// `D(H ‖ ΠΓ)`.
pub fn objective(h: &DMatrix<f64>, pi: &DMatrix<f64>, gamma: &DMatrix<f64>) -> Result<Divergence> {
    if pi.ncols() != gamma.nrows() || h.shape() != (pi.nrows(), gamma.ncols()) {
        return Err(Error::ShapeMismatch(format!(
            "H {:?}, Pi {:?}, Gamma {:?}",
            h.shape(),
            pi.shape(),
            gamma.shape()
        )));
    }
    crate::hankel::i_divergence(h, &(pi * gamma))
}

/// `H ./ X` with `0/0 = 0`.
fn ratio(h: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    h.zip_map(x, |q, p| if q == 0.0 || p == 0.0 { 0.0 } else { q / p })
}

fn check_nonnegative(name: &str, m: &DMatrix<f64>) -> Result<()> {
    match m.iter().find(|v| !v.is_finite() || **v < 0.0) {
        Some(v) => Err(Error::Validation(format!("{name} has invalid entry {v}"))),
        None => Ok(()),
    }
}

fn finite_objective(h: &DMatrix<f64>, x: &DMatrix<f64>, what: &str) -> Result<f64> {
    i_divergence_unchecked(h, x).finite().ok_or_else(|| {
        Error::AbsoluteContinuity(format!(
            "{what}: initial model assigns zero to a positive target entry"
        ))
    })
}

fn row_residual(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .fold(0.0, |acc, r| acc.max((r.sum() - 1.0).abs()))
}

/// Strictly positive entries uniform in `(0.1, 1)`, zeroed where masked.
fn random_positive(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    mask: Option<&DMatrix<f64>>,
) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(0.1..1.0));
    if let Some(mask) = mask {
        m.component_mul_assign(mask);
    }
    m
}

fn normalize_rows(m: &mut DMatrix<f64>) -> Result<()> {
    for (i, mut row) in m.row_iter_mut().enumerate() {
        let s = row.sum();
        if s <= 0.0 {
            return Err(Error::Validation(format!(
                "structure mask leaves row {i} empty"
            )));
        }
        row /= s;
    }
    Ok(())
}

/// Rescales with `D = diag(Γe)`: `Γ ← D⁻¹Γ`, `Π ← ΠD`. The product `ΠΓ`
/// is unchanged. Rows of `Γ` with no mass are set to uniform and the matching
/// column of `Π` to zero; their indices are returned.
pub fn rebalance(pi: &mut DMatrix<f64>, gamma: &mut DMatrix<f64>) -> Vec<usize> {
    let cols = gamma.ncols();
    let mut empty = Vec::new();
    for a in 0..gamma.nrows() {
        let d = gamma.row(a).sum();
        if d > 0.0 {
            gamma.row_mut(a).scale_mut(1.0 / d);
            pi.column_mut(a).scale_mut(d);
        } else {
            gamma.row_mut(a).fill(1.0 / cols as f64);
            pi.column_mut(a).fill(0.0);
            empty.push(a);
        }
    }
    empty
}

/// Minimizes `D(H ‖ ΠΓ)` with inner size `inner` subject to `eᵀΠe = 1` and
/// `Γe = e`, starting from a seeded random positive point.
pub fn solve_two_factor(
    h: &DMatrix<f64>,
    inner: usize,
    opts: &SolverOptions,
) -> Result<(FactorPair, SolveReport)> {
    opts.validate()?;
    check_nonnegative("H", h)?;
    if inner == 0 {
        return Err(Error::Validation("inner size must be at least 1".into()));
    }
    let (rows, cols) = h.shape();
    let mask = opts.mask_for(rows, inner)?;
    let mass = h.sum();
    if mass <= 0.0 {
        return Err(Error::Validation(
            "target matrix is identically zero".into(),
        ));
    }
    let mut flags = Vec::new();
    let h_owned;
    let h = if (mass - 1.0).abs() > 1e-12 {
        flags.push(SolverFlag::Renormalized {
            original_mass: mass,
        });
        h_owned = h / mass;
        &h_owned
    } else {
        h
    };
    let limit = rows.min(cols);
    if inner > limit {
        flags.push(SolverFlag::Overparametrized { inner, limit });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut pi = random_positive(&mut rng, rows, inner, mask);
    let mut gamma = random_positive(&mut rng, inner, cols, None);
    normalize_rows(&mut gamma)?;
    let s = pi.sum();
    if s <= 0.0 {
        return Err(Error::Validation(
            "structure mask is identically zero".into(),
        ));
    }
    pi /= s;

    let start = finite_objective(h, &(&pi * &gamma), "two-factor solve")?;
    let mut report = SolveReport::new(start, row_residual(&gamma), (pi.sum() - 1.0).abs());
    report.flags = flags;

    for _ in 0..opts.max_iters {
        // Π sweep.
        let r = ratio(h, &(&pi * &gamma));
        let num = &r * gamma.transpose();
        let gsum: DVector<f64> = gamma.column_sum();
        for a in 0..inner {
            if gsum[a] > 0.0 {
                for i in 0..rows {
                    pi[(i, a)] *= num[(i, a)] / gsum[a];
                }
            }
        }
        // Γ sweep.
        let r = ratio(h, &(&pi * &gamma));
        let num = pi.transpose() * &r;
        let psum = pi.row_sum();
        for a in 0..inner {
            if psum[a] > 0.0 {
                for j in 0..cols {
                    gamma[(a, j)] *= num[(a, j)] / psum[a];
                }
            }
        }
        for row in rebalance(&mut pi, &mut gamma) {
            report.flag(SolverFlag::UniformRow { row });
        }
        let s = pi.sum();
        pi /= s;

        let obj = i_divergence_unchecked(h, &(&pi * &gamma)).to_f64();
        report.record(obj, row_residual(&gamma), (pi.sum() - 1.0).abs());
        if report.should_stop(opts.tol) {
            report.converged = true;
            break;
        }
    }
    Ok((FactorPair { pi, gamma }, report))
}

/// The fixed part of a convex fixed-factor problem: how the free,
/// row-stochastic factor maps to the model matrix.
trait FixedPart {
    fn product(&self, free: &DMatrix<f64>) -> DMatrix<f64>;
    /// `Σ_j (∂X_j / ∂F_ab) R_j` for the ratio matrix `R = T ./ X`.
    fn pullback(&self, ratio: &DMatrix<f64>, free_shape: (usize, usize)) -> DMatrix<f64>;
    /// `∂ΣX / ∂F_ab`.
    fn mass_gradient(&self, a: usize, b: usize) -> f64;
}

struct FixedLeft<'a> {
    pi: &'a DMatrix<f64>,
    colsum: Vec<f64>,
}

impl FixedPart for FixedLeft<'_> {
    fn product(&self, free: &DMatrix<f64>) -> DMatrix<f64> {
        self.pi * free
    }
    fn pullback(&self, ratio: &DMatrix<f64>, _: (usize, usize)) -> DMatrix<f64> {
        self.pi.transpose() * ratio
    }
    fn mass_gradient(&self, a: usize, _: usize) -> f64 {
        self.colsum[a]
    }
}

/// Right factor `I_m ⊗ Γ`, applied blockwise and never materialized.
struct BlockDiagonalRight<'a> {
    gamma: &'a DMatrix<f64>,
    symbols: usize,
}

impl FixedPart for BlockDiagonalRight<'_> {
    fn product(&self, free: &DMatrix<f64>) -> DMatrix<f64> {
        let (k, c) = self.gamma.shape();
        let mut out = DMatrix::zeros(free.nrows(), self.symbols * c);
        for l in 0..self.symbols {
            let block = free.columns(l * k, k) * self.gamma;
            out.columns_mut(l * c, c).copy_from(&block);
        }
        out
    }
    fn pullback(&self, ratio: &DMatrix<f64>, free_shape: (usize, usize)) -> DMatrix<f64> {
        let (k, c) = self.gamma.shape();
        let mut out = DMatrix::zeros(free_shape.0, free_shape.1);
        for l in 0..self.symbols {
            let block = ratio.columns(l * c, c) * self.gamma.transpose();
            out.columns_mut(l * k, k).copy_from(&block);
        }
        out
    }
    fn mass_gradient(&self, _: usize, b: usize) -> f64 {
        self.gamma.row(b % self.gamma.nrows()).sum()
    }
}

/// Runs the normalized multiplicative (EM) update on a row-stochastic free
/// factor until the relative decrease falls below `tol`.
fn solve_row_stochastic<F: FixedPart>(
    target: &DMatrix<f64>,
    fixed: &F,
    shape: (usize, usize),
    opts: &SolverOptions,
    what: &str,
) -> Result<(DMatrix<f64>, SolveReport)> {
    let mask = opts.mask_for(shape.0, shape.1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut free = random_positive(&mut rng, shape.0, shape.1, mask);
    normalize_rows(&mut free)?;

    let start = finite_objective(target, &fixed.product(&free), what)?;
    let mut report = SolveReport::new(start, row_residual(&free), 0.0);

    for _ in 0..opts.max_iters {
        let r = ratio(target, &fixed.product(&free));
        let mut update = fixed.pullback(&r, shape);
        update.component_mul_assign(&free);
        for (a, mut row) in update.row_iter_mut().enumerate() {
            let z = row.sum();
            if z > 0.0 {
                row /= z;
            } else {
                // No mass reaches this row: it cannot influence the objective.
                match mask {
                    Some(mk) => {
                        row.copy_from(&mk.row(a));
                        let s = row.sum();
                        row /= s;
                    }
                    None => row.fill(1.0 / shape.1 as f64),
                }
                report.flag(SolverFlag::UniformRow { row: a });
            }
        }
        free = update;
        let obj = i_divergence_unchecked(target, &fixed.product(&free)).to_f64();
        report.record(obj, row_residual(&free), 0.0);
        if report.should_stop(opts.tol) {
            report.converged = true;
            break;
        }
    }
    report.kkt_residual = Some(kkt_residual(target, fixed, &free));
    Ok((free, report))
}

/// KKT residual of `min D(T ‖ X(F))` over row-stochastic `F`: with gradient
/// `g_ab` and row multiplier `λ_a = Σ_b F_ab g_ab`, the maximum of
/// `|F_ab (g_ab − λ_a)|` and `(λ_a − g_ab)⁺`. Rows whose gradient vanishes
/// identically (no mass) are skipped.
fn kkt_residual<F: FixedPart>(target: &DMatrix<f64>, fixed: &F, free: &DMatrix<f64>) -> f64 {
    let r = ratio(target, &fixed.product(free));
    let back = fixed.pullback(&r, free.shape());
    let (rows, cols) = free.shape();
    let mut worst: f64 = 0.0;
    for a in 0..rows {
        let g: Vec<f64> = (0..cols)
            .map(|b| fixed.mass_gradient(a, b) - back[(a, b)])
            .collect();
        if (0..cols).all(|b| fixed.mass_gradient(a, b) == 0.0) {
            continue;
        }
        let lambda: f64 = (0..cols).map(|b| free[(a, b)] * g[b]).sum();
        for b in 0..cols {
            worst = worst
                .max((free[(a, b)] * (g[b] - lambda)).abs())
                .max(lambda - g[b]);
        }
    }
    worst
}

/// Minimizes `D(H ‖ Π Γ)` over row-stochastic `Γ` with `Π` fixed.
pub fn solve_fixed_left(
    h: &DMatrix<f64>,
    pi_fixed: &DMatrix<f64>,
    opts: &SolverOptions,
) -> Result<(DMatrix<f64>, SolveReport)> {
    opts.validate()?;
    check_nonnegative("H", h)?;
    check_nonnegative("Pi", pi_fixed)?;
    if pi_fixed.nrows() != h.nrows() || pi_fixed.ncols() == 0 {
        return Err(Error::ShapeMismatch(format!(
            "H is {:?}, fixed Pi is {:?}",
            h.shape(),
            pi_fixed.shape()
        )));
    }
    let fixed = FixedLeft {
        pi: pi_fixed,
        colsum: pi_fixed.row_sum().iter().copied().collect(),
    };
    let shape = (pi_fixed.ncols(), h.ncols());
    let (gamma, mut report) = solve_row_stochastic(h, &fixed, shape, opts, "fixed-left solve")?;
    for (a, &c) in fixed.colsum.iter().enumerate() {
        if c == 0.0 {
            report.flag(SolverFlag::UniformRow { row: a });
        }
    }
    Ok((gamma, report))
}

/// Minimizes `D(T ‖ M (I_m ⊗ Γ))` over `M = [M(y_1) | … | M(y_m)]` with
/// `Me = e`. `gamma` must be row-stochastic; `T` has `m · gamma.ncols()`
/// columns and the result has `m · gamma.nrows()` columns.
pub fn solve_left_stochastic(
    t: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    symbols: usize,
    opts: &SolverOptions,
) -> Result<(DMatrix<f64>, SolveReport)> {
    opts.validate()?;
    check_nonnegative("T", t)?;
    check_nonnegative("Gamma", gamma)?;
    if symbols == 0 || gamma.nrows() == 0 || t.ncols() != symbols * gamma.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "T is {:?}, Gamma is {:?}, {symbols} symbols",
            t.shape(),
            gamma.shape()
        )));
    }
    if row_residual(gamma) > 1e-9 {
        return Err(Error::Validation(
            "fixed right factor must be row-stochastic".into(),
        ));
    }
    let fixed = BlockDiagonalRight { gamma, symbols };
    let shape = (t.nrows(), symbols * gamma.nrows());
    solve_row_stochastic(t, &fixed, shape, opts, "left-stochastic solve")
}
