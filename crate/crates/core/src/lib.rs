//! Approximate realization of stationary finite-alphabet processes by hidden
//! Markov models of a given size.
//!
//! The informational divergence between Hankel blocks of word probabilities
//! stands in for the divergence rate between processes; minimizing it over
//! HMM blocks is a constrained nonnegative matrix factorization, solved in
//! three steps (see [`pipeline`]). The Markov special case has closed forms
//! that the numerical route must reproduce.

pub mod cli;
pub mod error;
pub mod hankel;
pub mod io;
pub mod models;
pub mod nmf;
pub mod pipeline;
pub mod words;

pub use error::{Error, Result};
pub use hankel::{
    build_block, divergence_rate_estimate, extend_gamma, hmm_block_factors, i_divergence,
    numerical_rank, Divergence, HankelBlock, HmmBlockFactors,
};
pub use models::{
    empirical_pdf, markov_to_hmm, stationary_solution, stationary_vector, EmpiricalPdf, HmmModel,
    MarkovModel, PdfSource, ValidationReport,
};
pub use nmf::{
    objective, rebalance, solve_fixed_left, solve_left_stochastic, solve_two_factor, FactorPair,
    SolveReport, SolverFlag, SolverOptions,
};
pub use pipeline::{
    approximate_hmm, approximate_hmm_multistart, check_equivalence, markov_approximation,
    markov_divergence_rate, markov_log_loss_rate, markov_structured_pipeline, ApproximationResult,
    EquivalenceReport, MarkovApproximation, MarkovPipeline,
};
pub use words::{enumerate, flo_index, llo_index, Alphabet, Order, Word};
