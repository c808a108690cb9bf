use hmm_realize::{
    approximate_hmm, approximate_hmm_multistart, build_block, check_equivalence,
    divergence_rate_estimate, empirical_pdf, markov_approximation, markov_divergence_rate,
    markov_log_loss_rate, markov_structured_pipeline, Alphabet, Error, HmmModel, MarkovModel,
    PdfSource, SolverOptions, Word,
};
use nalgebra::DMatrix;

fn two_state() -> HmmModel {
    let m0 = DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.2, 0.1]);
    let m1 = DMatrix::from_row_slice(2, 2, &[0.1, 0.4, 0.3, 0.4]);
    HmmModel::new(Alphabet::binary(), vec![m0, m1], None).unwrap()
}

fn chain(rows: &[f64]) -> MarkovModel {
    let m = (rows.len() as f64).sqrt() as usize;
    MarkovModel::new(
        Alphabet::with_size(m).unwrap(),
        DMatrix::from_row_slice(m, m, rows),
    )
    .unwrap()
}

fn w(d: &[usize]) -> Word {
    Word::from_digits(d.to_vec())
}

#[test]
fn single_state_fit_is_the_symbol_marginal() {
    for source in [
        two_state(),
        HmmModel::random(Alphabet::with_size(3).unwrap(), 3, 4).unwrap(),
    ] {
        let m = source.alphabet().size();
        let fit = approximate_hmm(&source, 1, 2, &SolverOptions::default()).unwrap();
        for y in 0..m {
            let q = source.word_probability(&w(&[y])).unwrap();
            assert!((fit.model.matrix(y)[(0, 0)] - q).abs() <= 1e-10);
        }
    }
}

#[test]
fn markov_approximation_of_hidden_source_matches_pair_ratios() {
    let q = HmmModel::random(Alphabet::with_size(3).unwrap(), 2, 21).unwrap();
    let a = markov_approximation(&q).unwrap();
    assert!(a.uniform_rows.is_empty());
    for i in 0..3 {
        let qi = q.word_probability(&w(&[i])).unwrap();
        for j in 0..3 {
            let qij = q.word_probability(&w(&[i, j])).unwrap();
            assert!((a.model.transition()[(i, j)] - qij / qi).abs() <= 1e-12);
        }
    }
}

#[test]
fn markov_closed_form_factors_are_word_probabilities() {
    let q = two_state();
    let run = markov_structured_pipeline(&q, 2, &SolverOptions::default()).unwrap();
    let cf = &run.closed_form;
    // Rows of Π in flo: index i = ũ + 2·j for ũj.
    for i in 0..4 {
        let u = hmm_realize::words::word_at(i, 2, 2, hmm_realize::Order::Flo);
        let j = u.last().unwrap();
        assert!((cf.pi_n[(i, j)] - q.word_probability(&u).unwrap()).abs() <= 1e-15);
        assert_eq!(cf.pi_n[(i, 1 - j)], 0.0);
    }
    for j in 0..2 {
        let qj = q.word_probability(&w(&[j])).unwrap();
        for c in 0..4 {
            let v = hmm_realize::words::word_at(c, 2, 2, hmm_realize::Order::Llo);
            let qjv = q.word_probability(&w(&[j]).concat(&v)).unwrap();
            assert!((cf.gamma_n[(j, c)] - qjv / qj).abs() <= 1e-14);
        }
    }
    let direct = markov_approximation(&q).unwrap().model;
    assert!((cf.model.transition() - direct.transition()).amax() <= 1e-12);
    assert!(run.agreement <= 1e-8);
}

#[test]
fn divergence_rate_by_hand() {
    let q = chain(&[0.9, 0.1, 0.2, 0.8]);
    let p = chain(&[0.5, 0.5, 0.5, 0.5]);
    let expected = 2.0 / 3.0 * (0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln())
        + 1.0 / 3.0 * (0.2 * 0.4f64.ln() + 0.8 * 1.6f64.ln());
    let rate = markov_divergence_rate(&q, &p).unwrap().finite().unwrap();
    assert!((rate - expected).abs() <= 1e-15);
    assert_eq!(markov_divergence_rate(&q, &q).unwrap().finite(), Some(0.0));
}

#[test]
fn block_estimate_of_markov_pair_is_affine_in_one_over_n() {
    let q = chain(&[0.9, 0.1, 0.2, 0.8]);
    let p = chain(&[0.6, 0.4, 0.3, 0.7]);
    let r = markov_divergence_rate(&q, &p).unwrap().finite().unwrap();
    let (mq, mp) = (q.stationary(), p.stationary());
    let d0: f64 = (0..2).map(|i| mq[i] * (mq[i] / mp[i]).ln()).sum();
    for n in 1..=5 {
        let est = divergence_rate_estimate(&q, &p, n)
            .unwrap()
            .finite()
            .unwrap();
        let predicted = r + (d0 - r) / (2 * n) as f64;
        assert!(
            (est - predicted).abs() <= 1e-12,
            "n = {n}: {est} vs {predicted}"
        );
    }
}

#[test]
fn disjoint_support_gives_infinite_rate() {
    let q = chain(&[0.5, 0.5, 0.5, 0.5]);
    let p = chain(&[1.0, 0.0, 0.5, 0.5]);
    assert!(!markov_divergence_rate(&q, &p).unwrap().is_finite());
    assert!(!divergence_rate_estimate(&q, &p, 2).unwrap().is_finite());
    assert!(!markov_log_loss_rate(&q, &p).unwrap().is_finite());
}

#[test]
fn equivalence_is_invariant_under_state_relabeling() {
    let q = HmmModel::random(Alphabet::with_size(3).unwrap(), 3, 8).unwrap();
    let same = check_equivalence(&q, &q, 4, 1e-12).unwrap();
    assert!(same.passed && same.max_deviation == 0.0);
    let permuted = q.permuted(&[2, 0, 1]).unwrap();
    let report = check_equivalence(&permuted, &q, 4, 1e-12).unwrap();
    assert!(report.passed, "{:?}", report.per_length);
    let other = HmmModel::random(Alphabet::with_size(3).unwrap(), 3, 9).unwrap();
    assert!(!check_equivalence(&other, &q, 2, 1e-6).unwrap().passed);
}

#[test]
fn two_state_source_is_recovered() {
    let q = two_state();
    let fit = approximate_hmm_multistart(&q, 2, 2, &SolverOptions::default(), 3, 1).unwrap();
    assert!(fit.converged());
    assert_eq!(fit.pi_rank, 2);
    let report = check_equivalence(&fit.model, &q, 4, 1e-6).unwrap();
    assert!(report.passed, "{:?}", report.per_length);
    let mblock_rows = fit.mblock.column_sum();
    assert!(mblock_rows.iter().all(|s| (s - 1.0).abs() <= 1e-12));
    assert_eq!(fit.pi_n.shape(), (4, 2));
    assert_eq!(fit.gamma_next.shape(), (2, 8));
    assert_eq!(fit.mblock.shape(), (2, 4));
}

#[test]
fn restarts_do_not_depend_on_thread_count() {
    let q = HmmModel::random(Alphabet::binary(), 2, 12).unwrap();
    let opts = SolverOptions {
        max_iters: 800,
        ..SolverOptions::default()
    };
    let serial = approximate_hmm_multistart(&q, 2, 2, &opts, 4, 1).unwrap();
    let parallel = approximate_hmm_multistart(&q, 2, 2, &opts, 4, 3).unwrap();
    assert_eq!(serial.seed, parallel.seed);
    assert_eq!(serial.mblock, parallel.mblock);
}

#[test]
fn same_seed_same_model() {
    let q = HmmModel::random(Alphabet::binary(), 3, 2).unwrap();
    let opts = SolverOptions {
        max_iters: 500,
        seed: 42,
        ..SolverOptions::default()
    };
    let a = approximate_hmm(&q, 2, 2, &opts).unwrap();
    let b = approximate_hmm(&q, 2, 2, &opts).unwrap();
    assert_eq!(a.mblock, b.mblock);
    assert_eq!(a.model.pi(), b.model.pi());
}

#[test]
fn overfitting_state_count_still_matches_the_source() {
    // A Markov chain is a 2-state HMM; fitting 2 states at depth 2 is exact.
    let q = chain(&[0.7, 0.3, 0.4, 0.6]);
    let fit = approximate_hmm(&q, 2, 2, &SolverOptions::default()).unwrap();
    assert!(fit.block_divergence.finite().unwrap() <= 1e-10);
}

#[test]
fn empirical_source_gives_stochastic_markov_fit() {
    let q = two_state();
    let path = q.sample_path(5000, 1);
    let emp = empirical_pdf(&path, q.alphabet(), 3).unwrap();
    let fit = markov_approximation(&emp).unwrap();
    for row in fit.model.transition().row_iter() {
        assert!((row.sum() - 1.0).abs() <= 1e-12);
    }
    let run = markov_structured_pipeline(&emp, 1, &SolverOptions::default()).unwrap();
    assert!(run.agreement <= 1e-8);
}

#[test]
fn short_sample_is_rejected_with_length_error() {
    let q = two_state();
    let emp = empirical_pdf(&q.sample_path(100, 2), q.alphabet(), 3).unwrap();
    let err = approximate_hmm(&emp, 2, 2, &SolverOptions::default()).unwrap_err();
    assert!(
        matches!(err, Error::LengthOutOfRange { len: 5, max: 3 }),
        "{err}"
    );
    assert!(build_block(&emp, 2, 2).is_err());
    assert!(emp.supports(3).is_ok());
}
