//! Three-step approximate realization and its Markov specialization.
//!
//! 1. Factor `H_nn ≈ Π*_n Γ*_n` (two-factor NMF, inner size `N`).
//! 2. With `Π*_n` fixed, fit `H_{n,n+1} ≈ Π*_n Γ*_{n+1}`.
//! 3. Fit `Γ*_{n+1} ≈ M (I_m ⊗ Γ*_n)` with `Me = e`; the `N × N` blocks of
//!    `M` are the matrices `M*(y)` of the approximating HMM.

use nalgebra::{DMatrix, RowDVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hankel::{build_block, i_divergence, numerical_rank, Divergence};
use crate::models::{stationary_solution, HmmModel, MarkovModel, PdfSource};
use crate::nmf::{
    solve_fixed_left, solve_left_stochastic, solve_two_factor, SolveReport, SolverOptions,
};
use crate::words::{count, enumerate, Order};

const STEP_NAMES: [&str; 3] = [
    "step 1 (law approximation)",
    "step 2 (approximate realization)",
    "step 3 (parametrization)",
];

/// Relative singular-value threshold used for rank estimates.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct ApproximationResult {
    pub model: HmmModel,
    pub n_states: usize,
    pub depth: usize,
    pub seed: u64,
    /// `Π*_n`, `m^n × N`.
    pub pi_n: DMatrix<f64>,
    /// `Γ*_n`, `N × m^n`.
    pub gamma_n: DMatrix<f64>,
    /// `Γ*_{n+1}`, `N × m^{n+1}`.
    pub gamma_next: DMatrix<f64>,
    /// `[M*(y_1) | … | M*(y_m)]`, `N × mN`.
    pub mblock: DMatrix<f64>,
    pub reports: [SolveReport; 3],
    /// `(1/2n) D(H_nn ‖ Π*_n Γ*_n)`.
    pub block_divergence: Divergence,
    /// `(1/2n) D(H_nn ‖ H_nn^{P*})` for the assembled model `P*`.
    pub model_divergence: Divergence,
    /// Numerical rank of `Π*_n`; below `N` means the non-generic case.
    pub pi_rank: usize,
}

impl ApproximationResult {
    pub fn converged(&self) -> bool {
        self.reports.iter().all(|r| r.converged)
    }

    pub fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            n_states: self.n_states,
            depth: self.depth,
            seed: self.seed,
            block_divergence: self.block_divergence.to_f64(),
            model_divergence: self.model_divergence.to_f64(),
            pi_rank: self.pi_rank,
            stationary_unique: self.model.stationary_unique(),
            steps: self
                .reports
                .iter()
                .zip(STEP_NAMES)
                .map(|(r, name)| StepDiagnostics {
                    step: name.to_string(),
                    iterations: r.iterations,
                    converged: r.converged,
                    final_objective: r.final_objective(),
                    row_residual: r.final_row_residual(),
                    mass_residual: r.final_mass_residual(),
                    kkt_residual: r.kkt_residual,
                    flags: r.flags.iter().map(|f| format!("{f:?}")).collect(),
                })
                .collect(),
        }
    }
}

/// Serializable summary written next to an approximated model.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub n_states: usize,
    pub depth: usize,
    pub seed: u64,
    #[serde(serialize_with = "crate::io::serialize_extended")]
    pub block_divergence: f64,
    #[serde(serialize_with = "crate::io::serialize_extended")]
    pub model_divergence: f64,
    pub pi_rank: usize,
    pub stationary_unique: bool,
    pub steps: Vec<StepDiagnostics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepDiagnostics {
    pub step: String,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
    pub row_residual: f64,
    pub mass_residual: f64,
    pub kkt_residual: Option<f64>,
    pub flags: Vec<String>,
}

fn step_seed(seed: u64, step: u64) -> u64 {
    seed.wrapping_add(step.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Runs the three NMF steps on the Hankel blocks of `pdf` and assembles an
/// HMM with `n_states` states. `π*` is the invariant vector of
/// `A* = Σ_y M*(y)`.
pub fn approximate_hmm<P: PdfSource + ?Sized>(
    pdf: &P,
    n_states: usize,
    depth: usize,
    opts: &SolverOptions,
) -> Result<ApproximationResult> {
    if n_states == 0 || depth == 0 {
        return Err(Error::Validation(
            "state count and depth must be at least 1".into(),
        ));
    }
    opts.validate()?;
    pdf.supports(2 * depth + 1)?;
    let alphabet = pdf.alphabet().clone();
    let m = alphabet.size();
    let rows = count(m, depth);

    let h_nn = build_block(pdf, depth, depth)?;
    let step1_opts = opts.with_seed(step_seed(opts.seed, 1));
    let (factors, rep1) = solve_two_factor(h_nn.data(), n_states, &step1_opts)
        .map_err(|e| e.in_step(STEP_NAMES[0]))?;
    let (pi_n, gamma_n) = (factors.pi, factors.gamma);
    assert_eq!(pi_n.shape(), (rows, n_states));
    assert_eq!(gamma_n.shape(), (n_states, rows));

    let h_next = build_block(pdf, depth, depth + 1)?;
    let free_opts = SolverOptions {
        structure_mask: None,
        ..opts.clone()
    };
    let (gamma_next, rep2) = solve_fixed_left(
        h_next.data(),
        &pi_n,
        &free_opts.with_seed(step_seed(opts.seed, 2)),
    )
    .map_err(|e| e.in_step(STEP_NAMES[1]))?;
    assert_eq!(gamma_next.shape(), (n_states, rows * m));

    let (mblock, rep3) = solve_left_stochastic(
        &gamma_next,
        &gamma_n,
        m,
        &free_opts.with_seed(step_seed(opts.seed, 3)),
    )
    .map_err(|e| e.in_step(STEP_NAMES[2]))?;
    assert_eq!(mblock.shape(), (n_states, m * n_states));

    let mats: Vec<DMatrix<f64>> = (0..m)
        .map(|y| mblock.columns(y * n_states, n_states).into_owned())
        .collect();
    let a_star = mats
        .iter()
        .fold(DMatrix::zeros(n_states, n_states), |acc, x| acc + x);
    let pi_star = stationary_solution(&a_star, 200_000).map_err(|e| e.in_step(STEP_NAMES[2]))?;
    let model = HmmModel::new_internal(alphabet, mats, Some(pi_star.pi))
        .map_err(|e| e.in_step(STEP_NAMES[2]))?;

    let scale = 1.0 / (2 * depth) as f64;
    let block_divergence = i_divergence(h_nn.data(), &(&pi_n * &gamma_n))?.scale(scale);
    let model_block = build_block(&model, depth, depth)?;
    let model_divergence = i_divergence(h_nn.data(), model_block.data())?.scale(scale);
    let pi_rank = numerical_rank(&pi_n, RANK_TOL);

    Ok(ApproximationResult {
        model,
        n_states,
        depth,
        seed: opts.seed,
        pi_n,
        gamma_n,
        gamma_next,
        mblock,
        reports: [rep1, rep2, rep3],
        block_divergence,
        model_divergence,
        pi_rank,
    })
}

fn divergence_key(d: Divergence) -> f64 {
    d.to_f64()
}

/// Runs [`approximate_hmm`] with seeds `opts.seed, opts.seed + 1, …` and
/// keeps the run whose assembled model has the smallest
/// `(1/2n) D(H_nn ‖ H_nn^{P*})`; ties go to the lowest seed. Runs are spread
/// over `threads` worker threads; the selection does not depend on it.
pub fn approximate_hmm_multistart<P: PdfSource + Sync + ?Sized>(
    pdf: &P,
    n_states: usize,
    depth: usize,
    opts: &SolverOptions,
    restarts: usize,
    threads: usize,
) -> Result<ApproximationResult> {
    let restarts = restarts.max(1);
    let seeds: Vec<u64> = (0..restarts as u64)
        .map(|k| opts.seed.wrapping_add(k))
        .collect();
    let run = |seed: u64| approximate_hmm(pdf, n_states, depth, &opts.with_seed(seed));

    let results: Vec<Result<ApproximationResult>> = if threads <= 1 {
        seeds.iter().map(|&s| run(s)).collect()
    } else {
        let chunk = restarts.div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = seeds
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(|&s| run(s)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("restart worker panicked"))
                .collect()
        })
    };

    let mut best: Option<ApproximationResult> = None;
    let mut first_err = None;
    for r in results {
        match r {
            Ok(res) => {
                let better = best.as_ref().is_none_or(|b| {
                    divergence_key(res.model_divergence) < divergence_key(b.model_divergence)
                });
                if better {
                    best = Some(res);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("at least one restart ran"))
}

#[derive(Debug, Clone)]
pub struct MarkovApproximation {
    pub model: MarkovModel,
    /// Symbols with zero marginal mass; their rows were set to uniform.
    pub uniform_rows: Vec<usize>,
}

/// Best Markov approximation in divergence rate: `A*_ij = q(ij) / q(i)`.
///
/// The denominator is evaluated as `Σ_k q(ik)`, which equals `q(i)` for any
/// consistent source and keeps rows exactly stochastic for empirical ones.
pub fn markov_approximation<P: PdfSource + ?Sized>(pdf: &P) -> Result<MarkovApproximation> {
    pdf.supports(2)?;
    let alphabet = pdf.alphabet().clone();
    let m = alphabet.size();
    let pairs = build_block(pdf, 1, 1)?.into_data();
    let mut a = DMatrix::zeros(m, m);
    let mut uniform_rows = Vec::new();
    for i in 0..m {
        let total = pairs.row(i).sum();
        if total > 0.0 {
            for j in 0..m {
                a[(i, j)] = pairs[(i, j)] / total;
            }
        } else {
            a.row_mut(i).fill(1.0 / m as f64);
            uniform_rows.push(i);
        }
    }
    Ok(MarkovApproximation {
        model: MarkovModel::new_internal(alphabet, a)?,
        uniform_rows,
    })
}

/// Factors produced by one route through the Markov-structured algorithm.
#[derive(Debug, Clone)]
pub struct MarkovFactors {
    /// Block-diagonal `Π*_n` (`m^n × m`): row `ũj` lives in column `j`.
    pub pi_n: DMatrix<f64>,
    pub gamma_n: DMatrix<f64>,
    pub gamma_next: DMatrix<f64>,
    /// `[M*(y_1) | … | M*(y_m)]` with only column `y` of `M*(y)` nonzero.
    pub mblock: DMatrix<f64>,
    pub model: MarkovModel,
}

#[derive(Debug, Clone)]
pub struct MarkovPipeline {
    pub closed_form: MarkovFactors,
    pub masked: MarkovFactors,
    pub masked_reports: [SolveReport; 3],
    /// `max |A*_closed − A*_masked|`.
    pub agreement: f64,
    /// Symbols `j` with `q(j) = 0`.
    pub empty_groups: Vec<usize>,
}

/// Maximum allowed disagreement between the closed-form and masked routes.
pub const MARKOV_AGREEMENT_TOL: f64 = 1e-8;

/// Rows of `H` grouped by the last symbol of the row word (contiguous in
/// flo). Returns, per group, the normalized column sums, or `None` for an
/// empty group.
fn grouped_row_profiles(h: &DMatrix<f64>, m: usize) -> Vec<Option<RowDVector<f64>>> {
    let group = h.nrows() / m;
    (0..m)
        .map(|j| {
            let sums = h.rows(j * group, group).row_sum();
            let total = sums.sum();
            (total > 0.0).then(|| sums / total)
        })
        .collect()
}

fn markov_mblock_from(gamma_next: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    let width = gamma_next.ncols() / m;
    let mut mb = DMatrix::zeros(m, m * m);
    for i in 0..m {
        for l in 0..m {
            mb[(i, l * m + l)] = gamma_next.row(i).columns(l * width, width).sum();
        }
    }
    mb
}

fn markov_from_mblock(mb: &DMatrix<f64>, pdf_alphabet: &crate::Alphabet) -> Result<MarkovModel> {
    let m = pdf_alphabet.size();
    let a = DMatrix::from_fn(m, m, |i, l| mb[(i, l * m + l)]);
    MarkovModel::new_internal(pdf_alphabet.clone(), a)
}

/// Markov-structured algorithm: closed-form solution of each step, plus the
/// same steps solved numerically with the block-diagonal structure imposed on
/// `Π_n` and on `M`. Fails if the two routes disagree by more than
/// [`MARKOV_AGREEMENT_TOL`].
pub fn markov_structured_pipeline<P: PdfSource + ?Sized>(
    pdf: &P,
    depth: usize,
    opts: &SolverOptions,
) -> Result<MarkovPipeline> {
    if depth == 0 {
        return Err(Error::Validation("depth must be at least 1".into()));
    }
    pdf.supports(2 * depth + 1)?;
    let alphabet = pdf.alphabet().clone();
    let m = alphabet.size();
    let rows = count(m, depth);
    let group = rows / m;
    let h_nn = build_block(pdf, depth, depth)?.into_data();
    let h_next = build_block(pdf, depth, depth + 1)?.into_data();

    // Closed form: Π^j = H^j e, Γ^j = eᵀH^j / (eᵀH^j e).
    let row_sums = h_nn.column_sum();
    let pi_cf = DMatrix::from_fn(
        rows,
        m,
        |i, j| if i / group == j { row_sums[i] } else { 0.0 },
    );
    let profiles_n = grouped_row_profiles(&h_nn, m);
    let empty_groups: Vec<usize> = (0..m).filter(|&j| profiles_n[j].is_none()).collect();
    let fill = |profiles: Vec<Option<RowDVector<f64>>>, cols: usize| {
        let mut g = DMatrix::from_element(m, cols, 1.0 / cols as f64);
        for (j, p) in profiles.into_iter().enumerate() {
            if let Some(p) = p {
                g.row_mut(j).copy_from(&p);
            }
        }
        g
    };
    let gamma_n_cf = fill(profiles_n, rows);
    let gamma_next_cf = fill(grouped_row_profiles(&h_next, m), rows * m);
    let mblock_cf = markov_mblock_from(&gamma_next_cf, m);
    let closed_form = MarkovFactors {
        model: markov_from_mblock(&mblock_cf, &alphabet)?,
        pi_n: pi_cf,
        gamma_n: gamma_n_cf,
        gamma_next: gamma_next_cf,
        mblock: mblock_cf,
    };

    // Masked numerical route.
    let pi_mask = DMatrix::from_fn(rows, m, |i, j| if i / group == j { 1.0 } else { 0.0 });
    let m_mask = DMatrix::from_fn(m, m * m, |_, c| if c / m == c % m { 1.0 } else { 0.0 });
    let step1 = SolverOptions {
        structure_mask: Some(pi_mask),
        seed: step_seed(opts.seed, 1),
        ..opts.clone()
    };
    let (factors, rep1) =
        solve_two_factor(&h_nn, m, &step1).map_err(|e| e.in_step(STEP_NAMES[0]))?;
    let step2 = SolverOptions {
        structure_mask: None,
        seed: step_seed(opts.seed, 2),
        ..opts.clone()
    };
    let (gamma_next, rep2) =
        solve_fixed_left(&h_next, &factors.pi, &step2).map_err(|e| e.in_step(STEP_NAMES[1]))?;
    let step3 = SolverOptions {
        structure_mask: Some(m_mask),
        seed: step_seed(opts.seed, 3),
        ..opts.clone()
    };
    let (mblock, rep3) = solve_left_stochastic(&gamma_next, &factors.gamma, m, &step3)
        .map_err(|e| e.in_step(STEP_NAMES[2]))?;
    let masked = MarkovFactors {
        model: markov_from_mblock(&mblock, &alphabet)?,
        pi_n: factors.pi,
        gamma_n: factors.gamma,
        gamma_next,
        mblock,
    };

    let agreement = (closed_form.model.transition() - masked.model.transition()).amax();
    if agreement > MARKOV_AGREEMENT_TOL {
        return Err(Error::Validation(format!(
            "closed-form and masked Markov routes disagree by {agreement:e}"
        )));
    }
    Ok(MarkovPipeline {
        closed_form,
        masked,
        masked_reports: [rep1, rep2, rep3],
        agreement,
        empty_groups,
    })
}

/// Divergence rate between stationary Markov chains:
/// `Σ_i μ_Q(i) Σ_j Q_ij log(Q_ij / P_ij)`.
pub fn markov_divergence_rate(q: &MarkovModel, p: &MarkovModel) -> Result<Divergence> {
    let m = q.alphabet().size();
    if p.alphabet().size() != m {
        return Err(Error::ShapeMismatch(
            "chains use different alphabets".into(),
        ));
    }
    let (aq, ap, mu) = (q.transition(), p.transition(), q.stationary());
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            let mass = mu[i] * aq[(i, j)];
            if mass > 0.0 {
                if ap[(i, j)] == 0.0 {
                    return Ok(Divergence::Infinite);
                }
                total += mass * (aq[(i, j)] / ap[(i, j)]).ln();
            }
        }
    }
    Ok(Divergence::Finite(total.max(0.0)))
}

/// `−E_Q log p(Y_1 | Y_0) = −Σ_ij q(ij) log P_ij`, the part of the divergence
/// rate `D(Q‖P)` that depends on a Markov `P`. Differences of this quantity
/// between two Markov chains are differences of divergence rates, for any
/// stationary `Q`.
pub fn markov_log_loss_rate<Q: PdfSource + ?Sized>(
    pdf_q: &Q,
    p: &MarkovModel,
) -> Result<Divergence> {
    let m = p.alphabet().size();
    if pdf_q.alphabet().size() != m {
        return Err(Error::ShapeMismatch(
            "sources use different alphabets".into(),
        ));
    }
    let pairs = build_block(pdf_q, 1, 1)?.into_data();
    let ap = p.transition();
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            let q = pairs[(i, j)];
            if q > 0.0 {
                if ap[(i, j)] == 0.0 {
                    return Ok(Divergence::Infinite);
                }
                total -= q * ap[(i, j)].ln();
            }
        }
    }
    Ok(Divergence::Finite(total))
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    /// `max_{|u| = k} |p*(u) − q(u)|` for `k = 0..=L`.
    pub per_length: Vec<f64>,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares the model's word probabilities with `pdf` on every word of length
/// at most `max_len`.
pub fn check_equivalence<P: PdfSource + ?Sized>(
    model: &HmmModel,
    pdf: &P,
    max_len: usize,
    tol: f64,
) -> Result<EquivalenceReport> {
    pdf.supports(max_len)?;
    if pdf.alphabet().size() != model.alphabet().size() {
        return Err(Error::ShapeMismatch(
            "model and source use different alphabets".into(),
        ));
    }
    let mut per_length = Vec::with_capacity(max_len + 1);
    for k in 0..=max_len {
        let mut worst: f64 = 0.0;
        for w in enumerate(k, model.alphabet(), Order::Llo) {
            worst = worst.max((model.word_probability(&w)? - pdf.probability(&w)?).abs());
        }
        per_length.push(worst);
    }
    let max_deviation = per_length.iter().copied().fold(0.0, f64::max);
    Ok(EquivalenceReport {
        per_length,
        max_deviation,
        tolerance: tol,
        passed: max_deviation <= tol,
    })
}
