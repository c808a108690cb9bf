//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use hmm_realize::pipeline::RANK_TOL;
use hmm_realize::{
    approximate_hmm_multistart, build_block, check_equivalence, divergence_rate_estimate,
    enumerate, extend_gamma, hmm_block_factors, markov_approximation, markov_divergence_rate,
    markov_log_loss_rate, markov_structured_pipeline, numerical_rank, solve_fixed_left,
    solve_left_stochastic, solve_two_factor, Alphabet, HmmModel, MarkovModel, Order, PdfSource,
    SolveReport, SolverOptions, Word,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(t: Instant, limit: Duration) -> std::result::Result<(), String> {
    ensure(t.elapsed() < limit, || {
        format!("took {:?}, limit {limit:?}", t.elapsed())
    })
}

fn alphabet(m: usize) -> Alphabet {
    Alphabet::with_size(m).unwrap()
}

fn amax_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

fn markov_closed_form() -> Check {
    let start = Instant::now();
    let mut worst_exact: f64 = 0.0;
    let mut worst_masked: f64 = 0.0;
    for k in 0..20u64 {
        let m = if k < 10 { 2 } else { 3 };
        let q = MarkovModel::random(alphabet(m), 0.05, 100 + k).map_err(|e| e.to_string())?;
        let approx = markov_approximation(&q).map_err(|e| e.to_string())?;
        let a_star = approx.model.transition();
        for i in 0..m {
            let qi = q.probability(&Word::from_digits(vec![i])).unwrap();
            for j in 0..m {
                let qij = q.probability(&Word::from_digits(vec![i, j])).unwrap();
                worst_exact = worst_exact.max((a_star[(i, j)] - qij / qi).abs());
            }
        }
        let run = markov_structured_pipeline(&q, 2, &SolverOptions::default())
            .map_err(|e| format!("source {k}: {e}"))?;
        worst_masked = worst_masked
            .max(run.agreement)
            .max(amax_diff(run.masked.model.transition(), a_star));
    }
    ensure(worst_exact <= 1e-12, || {
        format!("closed form off by {worst_exact:e}")
    })?;
    ensure(worst_masked <= 1e-8, || {
        format!("masked route off by {worst_masked:e}")
    })?;
    within(start, Duration::from_secs(10))?;
    Ok(format!(
        "exact {worst_exact:.1e}, masked {worst_masked:.1e}"
    ))
}

fn pythagorean_identity() -> Check {
    let mut worst: f64 = 0.0;
    for k in 0..20u64 {
        let m = 2 + (k as usize % 2);
        let q = MarkovModel::random(alphabet(m), 0.05, 200 + k).unwrap();
        let p = MarkovModel::random(alphabet(m), 0.05, 300 + k).unwrap();
        let p_star = markov_approximation(&q).unwrap().model;
        let d = |a: &MarkovModel, b: &MarkovModel| {
            markov_divergence_rate(a, b).unwrap().finite().unwrap()
        };
        let gap = (d(&q, &p) - d(&q, &p_star) - d(&p_star, &p)).abs();
        worst = worst.max(gap);
    }
    // Same identity with a hidden Markov source, where P* differs from Q.
    let mut worst_hidden: f64 = 0.0;
    for k in 0..20u64 {
        let q = HmmModel::random(alphabet(2 + (k as usize % 2)), 3, 400 + k).unwrap();
        let m = q.alphabet().size();
        let p = MarkovModel::random(alphabet(m), 0.05, 500 + k).unwrap();
        let p_star = markov_approximation(&q).unwrap().model;
        let loss = |b: &MarkovModel| markov_log_loss_rate(&q, b).unwrap().finite().unwrap();
        let lhs = loss(&p) - loss(&p_star);
        let rhs = markov_divergence_rate(&p_star, &p)
            .unwrap()
            .finite()
            .unwrap();
        worst_hidden = worst_hidden.max((lhs - rhs).abs());
    }
    ensure(worst <= 1e-10, || format!("Markov pairs off by {worst:e}"))?;
    ensure(worst_hidden <= 1e-10, || {
        format!("hidden sources off by {worst_hidden:e}")
    })?;
    Ok(format!(
        "max gap {worst:.1e} (hidden sources {worst_hidden:.1e})"
    ))
}

/// Smallest acceptable `σ₂/σ₁` of `H_33` for a draw to count as generic.
const GENERIC_RATIO: f64 = 1e-2;

fn self_recovery() -> Check {
    let start = Instant::now();
    let opts = SolverOptions::default();
    let (mut accepted, mut skipped, mut seed) = (0, 0, 0u64);
    let mut worst: f64 = 0.0;
    while accepted < 10 {
        seed += 1;
        let q = HmmModel::random(Alphabet::binary(), 2, seed).unwrap();
        let sv = build_block(&q, 3, 3).unwrap().into_data().singular_values();
        if sv[1] < GENERIC_RATIO * sv[0] {
            skipped += 1;
            continue;
        }
        accepted += 1;
        let fit = approximate_hmm_multistart(&q, 2, 3, &opts, 5, 1)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        let report = check_equivalence(&fit.model, &q, 4, 1e-6).unwrap();
        ensure(report.passed, || {
            format!("seed {seed}: deviation {:e}", report.max_deviation)
        })?;
        worst = worst.max(report.max_deviation);
    }
    within(start, Duration::from_secs(60))?;
    Ok(format!(
        "max |p* - q| {worst:.1e} over 10 models ({skipped} draws below sigma2/sigma1 = {GENERIC_RATIO} skipped)"
    ))
}

fn factorization_exactness() -> Check {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for m in [2usize, 3] {
        for n_states in 1..=4 {
            for seed in 0..3u64 {
                let model = HmmModel::random(
                    alphabet(m),
                    n_states,
                    1000 * m as u64 + 10 * n_states as u64 + seed,
                )
                .unwrap();
                for k in 0..=4 {
                    for l in 0..=4 {
                        let h = build_block(&model, k, l).unwrap().into_data();
                        let f = hmm_block_factors(&model, k, l);
                        let next = hmm_block_factors(&model, k, l + 1);
                        let row_sums = f.gamma_l.column_sum();
                        let checks = [
                            amax_diff(&h, &f.product()),
                            (f.pi_k.sum() - 1.0).abs(),
                            row_sums
                                .iter()
                                .fold(0.0f64, |acc, s| acc.max((s - 1.0).abs())),
                            amax_diff(&extend_gamma(&model, &f.gamma_l), &next.gamma_l),
                        ];
                        for c in checks {
                            worst = worst.max(c);
                        }
                        cases += 1;
                    }
                }
            }
        }
    }
    ensure(worst <= 1e-12, || format!("worst residual {worst:e}"))?;
    Ok(format!("{cases} blocks, worst residual {worst:.1e}"))
}

fn random_positive(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(0.01..1.0))
}

fn random_stochastic(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut g = random_positive(rng, rows, cols);
    for mut row in g.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    g
}

fn trace_ok(report: &SolveReport) -> std::result::Result<(), String> {
    let t = &report.objective_trace;
    for k in 1..t.len() {
        ensure(t[k] <= t[k - 1] + 1e-12, || {
            format!("objective rose at iteration {k}: {} -> {}", t[k - 1], t[k])
        })?;
    }
    let worst = report
        .row_residual_trace
        .iter()
        .chain(&report.mass_residual_trace)
        .fold(0.0f64, |acc, &r| acc.max(r));
    ensure(worst <= 1e-12, || format!("constraint residual {worst:e}"))
}

fn solver_descent() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let opts = SolverOptions {
        max_iters: 400,
        ..SolverOptions::default()
    };
    let mut closed_form_gap: f64 = 0.0;
    for k in 0..50u64 {
        let (r, c) = (rng.random_range(2..7), rng.random_range(2..7));
        let inner = rng.random_range(1..4);

        let mut h = random_positive(&mut rng, r, c);
        if k % 2 == 0 {
            h /= h.sum();
        }
        let (f, rep) =
            solve_two_factor(&h, inner, &opts.with_seed(k)).map_err(|e| e.to_string())?;
        trace_ok(&rep).map_err(|e| format!("two-factor instance {k}: {e}"))?;
        if inner == 1 {
            let total = h.sum();
            let pi_cf = h.column_sum() / total;
            let gamma_cf = h.row_sum() / total;
            closed_form_gap = closed_form_gap
                .max((f.pi.column(0) - pi_cf).amax())
                .max((f.gamma.row(0) - gamma_cf).amax());
        }

        let pi = random_positive(&mut rng, r, inner);
        let (g, rep) = solve_fixed_left(&h, &pi, &opts.with_seed(k)).map_err(|e| e.to_string())?;
        trace_ok(&rep).map_err(|e| format!("fixed-left instance {k}: {e}"))?;
        if inner == 1 {
            let cf = h.row_sum() / h.sum();
            closed_form_gap = closed_form_gap.max((g.row(0) - cf).amax());
        }

        let symbols = rng.random_range(2..4);
        let gamma = random_stochastic(&mut rng, inner, c);
        let t = random_positive(&mut rng, r, symbols * c);
        let (mb, rep) = solve_left_stochastic(&t, &gamma, symbols, &opts.with_seed(k))
            .map_err(|e| e.to_string())?;
        trace_ok(&rep).map_err(|e| format!("left-stochastic instance {k}: {e}"))?;
        if inner == 1 {
            for i in 0..r {
                let total = t.row(i).sum();
                for y in 0..symbols {
                    let block = t.row(i).columns(y * c, c).sum();
                    closed_form_gap = closed_form_gap.max((mb[(i, y)] - block / total).abs());
                }
            }
        }
    }
    ensure(closed_form_gap <= 1e-10, || {
        format!("N=1 closed forms off by {closed_form_gap:e}")
    })?;
    Ok(format!("3 x 50 instances, N=1 gap {closed_form_gap:.1e}"))
}

fn divergence_rate_convergence() -> Check {
    let start = Instant::now();
    let q = MarkovModel::new(
        Alphabet::binary(),
        DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]),
    )
    .unwrap();
    let p = MarkovModel::new(
        Alphabet::binary(),
        DMatrix::from_row_slice(2, 2, &[0.6, 0.4, 0.3, 0.7]),
    )
    .unwrap();
    let rate = markov_divergence_rate(&q, &p).unwrap().finite().unwrap();
    let gaps: Vec<f64> = (1..=6)
        .map(|n| {
            (divergence_rate_estimate(&q, &p, n)
                .unwrap()
                .finite()
                .unwrap()
                - rate)
                .abs()
        })
        .collect();
    within(start, Duration::from_secs(30))?;
    ensure(gaps[5] <= 0.02 && gaps[5] < gaps[0], || {
        format!("gaps {gaps:?}")
    })?;
    Ok(format!(
        "rate {rate:.6}, gap n=1 {:.4}, n=6 {:.4}",
        gaps[0], gaps[5]
    ))
}

fn hankel_rank_bound() -> Check {
    let mut checked = 0;
    for m in [2usize, 3] {
        for n_states in 1..=4 {
            for seed in 0..5u64 {
                let model = HmmModel::random(
                    alphabet(m),
                    n_states,
                    7000 + 100 * m as u64 + 10 * n_states as u64 + seed,
                )
                .unwrap();
                for n in 1..=4 {
                    let h = build_block(&model, n, n).unwrap().into_data();
                    let rank = numerical_rank(&h, RANK_TOL);
                    ensure(rank <= n_states, || {
                        format!("m={m} N={n_states} n={n}: rank {rank}")
                    })?;
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{checked} blocks within the bound"))
}

fn enumeration_fidelity() -> Check {
    let bin = Alphabet::binary();
    let listing = |order: Order| -> Vec<String> {
        (0..=3)
            .flat_map(|n| enumerate(n, &bin, order))
            .map(|w| bin.format_word(&w))
            .collect()
    };
    let printed_flo = [
        "", "0", "1", "00", "10", "01", "11", "000", "100", "010", "110", "001", "101", "011",
        "111",
    ];
    let printed_llo = [
        "", "0", "1", "00", "01", "10", "11", "000", "001", "010", "011", "100", "101", "110",
        "111",
    ];
    let flo = listing(Order::Flo);
    let llo = listing(Order::Llo);
    ensure(flo == printed_flo, || format!("flo listing {flo:?}"))?;
    ensure(llo == printed_llo, || format!("llo listing {llo:?}"))?;
    Ok("flo and llo listings match for n <= 3".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("Markov closed form", markov_closed_form),
        ("Pythagorean identity", pythagorean_identity),
        ("HMM self-recovery", self_recovery),
        ("factorization exactness", factorization_exactness),
        ("solver descent and feasibility", solver_descent),
        ("divergence-rate convergence", divergence_rate_convergence),
        ("Hankel rank bound", hankel_rank_bound),
        ("enumeration fidelity", enumeration_fidelity),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = check();
        let elapsed = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {}. {name}: {detail} [{elapsed:.2}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name}: {detail} [{elapsed:.2}s]", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
