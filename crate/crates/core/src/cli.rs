//! `hmmrealize` command-line front end.
//!
//! Every command that writes a file also writes `<out>.config.json`, the
//! parsed command line. `hmmrealize replay <config>` re-runs it.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::hankel::{build_block, divergence_rate_estimate, format_f64, Divergence};
use crate::io::{
    format_sample, infer_alphabet, HmmModelFile, HmmParts, LoadedModel, MarkovModelFile, ModelFile,
};
use crate::models::{empirical_pdf, EmpiricalPdf, HmmModel, PdfSource, INPUT_TOL};
use crate::nmf::{SolveReport, SolverOptions};
use crate::pipeline::{
    approximate_hmm_multistart, check_equivalence, markov_divergence_rate,
    markov_structured_pipeline,
};
use crate::words::{Alphabet, Word};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "hmmrealize",
    version,
    about = "Approximate realization of stationary processes by hidden Markov models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Check stochasticity, stationarity and the positivity condition of a model file.
    Validate(ValidateArgs),
    /// Write the Hankel block H_KL of a source as CSV.
    Hankel(HankelArgs),
    /// Fit an HMM (or, with --markov, a Markov chain) to a source.
    Approximate(ApproximateArgs),
    /// Tabulate (1/2n) D(H_nn^Q || H_nn^P) for n = 1..n_max.
    Divrate(DivrateArgs),
    /// Draw a sample path from a model.
    Sample(SampleArgs),
    /// Re-run a command from a saved <out>.config.json.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ValidateArgs {
    #[arg(long)]
    pub model: PathBuf,
}

/// A model file or a sample path.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[group(required = true, multiple = false, id = "source")]
pub struct SourceArgs {
    /// HMM or Markov model JSON.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Plain-text sample path.
    #[arg(long)]
    pub sample: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SampleSourceOptions {
    /// Longest word counted in a sample (defaults to what the command needs).
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Comma-separated symbol labels for samples (inferred if omitted).
    #[arg(long)]
    pub alphabet: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 5000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SolverArgs {
    fn options(&self) -> SolverOptions {
        SolverOptions {
            max_iters: self.iters,
            tol: self.tol,
            seed: self.seed,
            structure_mask: None,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct HankelArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub sample_opts: SampleSourceOptions,
    /// Row word length K.
    #[arg(long = "row-len", short = 'K')]
    pub row_len: usize,
    /// Column word length L.
    #[arg(long = "col-len", short = 'L')]
    pub col_len: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ApproximateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub sample_opts: SampleSourceOptions,
    /// Number of hidden states N.
    #[arg(long, required_unless_present = "markov")]
    pub size: Option<usize>,
    /// Block depth n (default N, or 1 with --markov).
    #[arg(long)]
    pub depth: Option<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Independent starts with seeds seed, seed+1, …; the best model is kept.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    /// Worker threads for the restarts.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Fit a Markov chain on the source alphabet instead of an HMM.
    #[arg(long)]
    pub markov: bool,
    /// Longest word compared against a model source (default 2N).
    #[arg(long = "check-len")]
    pub check_len: Option<usize>,
    /// Write per-step objective traces to <prefix>.step{1,2,3}.csv.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DivrateArgs {
    /// Model file for Q.
    #[arg(
        long = "q-model",
        required_unless_present = "q_sample",
        conflicts_with = "q_sample"
    )]
    pub q_model: Option<PathBuf>,
    /// Sample path for Q.
    #[arg(long = "q-sample")]
    pub q_sample: Option<PathBuf>,
    /// Model file for P.
    #[arg(
        long = "p-model",
        required_unless_present = "p_sample",
        conflicts_with = "p_sample"
    )]
    pub p_model: Option<PathBuf>,
    /// Sample path for P.
    #[arg(long = "p-sample")]
    pub p_sample: Option<PathBuf>,
    #[command(flatten)]
    pub sample_opts: SampleSourceOptions,
    #[arg(long = "n-max")]
    pub n_max: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Path length T.
    #[arg(long)]
    pub length: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub config: PathBuf,
}

/// What gets written to `<out>.config.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub tool: String,
    pub version: String,
    pub command: Command,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        Self {
            tool: "hmmrealize".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Step { source, .. } => exit_code(source),
        Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::Parse(_) => EXIT_IO,
        Error::NoConvergence(_) => EXIT_NO_CONVERGENCE,
        _ => EXIT_VALIDATION,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_VALIDATION
            } else {
                EXIT_OK
            };
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs one command and returns its exit code; errors are left to the caller.
pub fn execute(command: &Command) -> Result<i32> {
    match command {
        Command::Validate(a) => cmd_validate(a),
        Command::Hankel(a) => cmd_hankel(a).map(|()| EXIT_OK),
        Command::Approximate(a) => cmd_approximate(a),
        Command::Divrate(a) => cmd_divrate(a).map(|()| EXIT_OK),
        Command::Sample(a) => cmd_sample(a).map(|()| EXIT_OK),
        Command::Replay(a) => {
            let config = RunConfig::read(&a.config)?;
            if matches!(config.command, Command::Replay(_)) {
                return Err(Error::Parse(
                    "a replay config cannot replay another config".into(),
                ));
            }
            execute(&config.command)
        }
    }
}

fn config_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

fn write_config(out: &Path, command: &Command) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&RunConfig::new(command.clone()))?;
    text.push('\n');
    fs::write(config_path(out), text)?;
    Ok(())
}

/// A model or an empirical source.
enum Source {
    Model(LoadedModel),
    Sample(EmpiricalPdf),
}

impl PdfSource for Source {
    fn alphabet(&self) -> &Alphabet {
        match self {
            Source::Model(m) => m.alphabet(),
            Source::Sample(s) => s.alphabet(),
        }
    }
    fn max_word_len(&self) -> Option<usize> {
        match self {
            Source::Model(m) => m.max_word_len(),
            Source::Sample(s) => s.max_word_len(),
        }
    }
    fn probability(&self, w: &Word) -> Result<f64> {
        match self {
            Source::Model(m) => m.probability(w),
            Source::Sample(s) => s.probability(w),
        }
    }
}

fn load_model(path: &Path) -> Result<LoadedModel> {
    ModelFile::read(path)?.load()
}

fn load_sample(path: &Path, opts: &SampleSourceOptions, needed: usize) -> Result<EmpiricalPdf> {
    let text = fs::read_to_string(path)?;
    let alphabet = match &opts.alphabet {
        Some(labels) => Alphabet::new(labels.split(',').map(str::trim))?,
        None => infer_alphabet(&text)?,
    };
    let seq = alphabet.parse_sequence(&text)?;
    empirical_pdf(&seq, &alphabet, opts.kmax.unwrap_or(needed))
}

fn load_source(
    model: Option<&Path>,
    sample: Option<&Path>,
    opts: &SampleSourceOptions,
    needed: usize,
) -> Result<Source> {
    match (model, sample) {
        (Some(m), None) => Ok(Source::Model(load_model(m)?)),
        (None, Some(s)) => Ok(Source::Sample(load_sample(s, opts, needed)?)),
        _ => Err(Error::Validation(
            "give exactly one of a model file or a sample file".into(),
        )),
    }
}

/// Raw parameters of either file kind, for reporting without validation.
fn raw_parts(file: &ModelFile) -> Result<HmmParts> {
    match file {
        ModelFile::Hmm(f) => f.to_parts(),
        ModelFile::Markov(f) => {
            let alphabet = Alphabet::new(f.alphabet.clone())?;
            let m = alphabet.size();
            if f.transition.len() != m || f.transition.iter().any(|r| r.len() != m) {
                return Err(Error::Parse(format!("A: expected a {m}x{m} matrix")));
            }
            let matrices = (0..m)
                .map(|y| {
                    DMatrix::from_fn(m, m, |i, j| if j == y { f.transition[i][j] } else { 0.0 })
                })
                .collect();
            Ok(HmmParts {
                alphabet,
                matrices,
                pi: None,
            })
        }
    }
}

fn cmd_validate(a: &ValidateArgs) -> Result<i32> {
    let file = ModelFile::read(&a.model)?;
    let parts = raw_parts(&file)?;
    let (report, _) = HmmModel::inspect(&parts.alphabet, &parts.matrices, parts.pi.as_ref());
    println!("states: {}", report.n_states);
    println!(
        "max row residual: {}",
        format_f64(report.max_row_residual())
    );
    if let Some(r) = report.pi_sum_residual {
        println!("pi sum residual: {}", format_f64(r.abs()));
    }
    if let Some(r) = report.stationarity_residual {
        println!("stationarity residual: {}", format_f64(r));
    }
    println!("pi supplied: {}", !report.pi_computed);
    println!("stationary vector unique: {}", report.stationary_unique);
    println!("positivity condition: {}", report.positivity_condition);
    let problems = report.problems(INPUT_TOL);
    if !problems.is_empty() {
        for p in &problems {
            eprintln!("invalid: {p}");
        }
        return Ok(EXIT_VALIDATION);
    }
    if !report.positivity_condition {
        eprintln!("warning: positivity condition fails (some state cannot emit some symbol)");
    }
    println!("valid");
    Ok(EXIT_OK)
}

fn cmd_hankel(a: &HankelArgs) -> Result<()> {
    let source = load_source(
        a.source.model.as_deref(),
        a.source.sample.as_deref(),
        &a.sample_opts,
        (a.row_len + a.col_len).max(1),
    )?;
    let block = build_block(&source, a.row_len, a.col_len)?;
    let mut out = Vec::new();
    block.write_csv(&mut out)?;
    fs::write(&a.out, out)?;
    write_config(&a.out, &Command::Hankel(a.clone()))?;
    println!(
        "wrote {}x{} block to {}",
        block.data().nrows(),
        block.data().ncols(),
        a.out.display()
    );
    Ok(())
}

fn step_json(r: &SolveReport) -> Value {
    json!({
        "iterations": r.iterations,
        "converged": r.converged,
        "final_objective": r.final_objective(),
        "row_residual": r.final_row_residual(),
        "kkt_residual": r.kkt_residual,
    })
}

fn write_traces(prefix: &Path, reports: &[SolveReport]) -> Result<()> {
    for (k, r) in reports.iter().enumerate() {
        let mut s = prefix.as_os_str().to_owned();
        s.push(format!(".step{}.csv", k + 1));
        let mut buf = Vec::new();
        r.write_trace_csv(&mut buf)?;
        fs::write(PathBuf::from(s), buf)?;
    }
    Ok(())
}

fn print_matrix(name: &str, m: &DMatrix<f64>) {
    println!("{name} =");
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
        println!("  [{}]", cells.join(", "));
    }
}

fn cmd_approximate(a: &ApproximateArgs) -> Result<i32> {
    let depth = match (a.depth, a.markov, a.size) {
        (Some(d), _, _) => d,
        (None, true, _) => 1,
        (None, false, Some(n)) => n,
        (None, false, None) => {
            return Err(Error::Validation(
                "--size is required without --markov".into(),
            ))
        }
    };
    let source = load_source(
        a.source.model.as_deref(),
        a.source.sample.as_deref(),
        &a.sample_opts,
        2 * depth + 1,
    )?;
    let opts = a.solver.options();
    let command = Command::Approximate(a.clone());

    if a.markov {
        let run = markov_structured_pipeline(&source, depth, &opts)?;
        let converged = run.masked_reports.iter().all(|r| r.converged);
        let mut file = MarkovModelFile::from_model(&run.closed_form.model);
        file.diagnostics = Some(json!({
            "depth": depth,
            "agreement": run.agreement,
            "empty_groups": run.empty_groups,
            "masked_steps": run.masked_reports.iter().map(step_json).collect::<Vec<_>>(),
        }));
        fs::write(&a.out, ModelFile::Markov(file).to_json()?)?;
        write_config(&a.out, &command)?;
        if let Some(prefix) = &a.trace {
            write_traces(prefix, &run.masked_reports)?;
        }
        print_matrix("A*", run.closed_form.model.transition());
        println!("masked route agreement: {}", format_f64(run.agreement));
        return Ok(if converged {
            EXIT_OK
        } else {
            EXIT_NO_CONVERGENCE
        });
    }

    let n_states = a.size.expect("checked above");
    let result =
        approximate_hmm_multistart(&source, n_states, depth, &opts, a.restarts, a.threads)?;
    let mut diagnostics = serde_json::to_value(result.diagnostics())?;
    if let Source::Model(_) = &source {
        let len = a.check_len.unwrap_or(2 * n_states);
        let eq = check_equivalence(&result.model, &source, len, 1e-6)?;
        println!(
            "max |p*(u) - q(u)| over |u| <= {len}: {}",
            format_f64(eq.max_deviation)
        );
        diagnostics["equivalence"] = serde_json::to_value(&eq)?;
    }
    let mut file = HmmModelFile::from_model(&result.model);
    file.diagnostics = Some(diagnostics);
    fs::write(&a.out, ModelFile::Hmm(file).to_json()?)?;
    write_config(&a.out, &command)?;
    if let Some(prefix) = &a.trace {
        write_traces(prefix, &result.reports)?;
    }
    println!(
        "block divergence (1/2n) D(H || Pi Gamma): {}",
        format_f64(result.block_divergence.to_f64())
    );
    println!(
        "model divergence (1/2n) D(H || H^P*): {}",
        format_f64(result.model_divergence.to_f64())
    );
    for (k, r) in result.reports.iter().enumerate() {
        println!(
            "step {}: {} iterations, converged {}",
            k + 1,
            r.iterations,
            r.converged
        );
    }
    if result.pi_rank < n_states {
        eprintln!(
            "warning: Pi*_n has numerical rank {} < {n_states}",
            result.pi_rank
        );
    }
    if result.converged() {
        Ok(EXIT_OK)
    } else {
        eprintln!("warning: solver stopped at the iteration limit; result written");
        Ok(EXIT_NO_CONVERGENCE)
    }
}

fn divergence_cell(d: Divergence) -> String {
    format_f64(d.to_f64())
}

fn cmd_divrate(a: &DivrateArgs) -> Result<()> {
    let needed = 2 * a.n_max;
    let q = load_source(
        a.q_model.as_deref(),
        a.q_sample.as_deref(),
        &a.sample_opts,
        needed,
    )?;
    let p = load_source(
        a.p_model.as_deref(),
        a.p_sample.as_deref(),
        &a.sample_opts,
        needed,
    )?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n", "estimate"])?;
    for n in 1..=a.n_max {
        let est = divergence_rate_estimate(&q, &p, n)?;
        w.write_record([n.to_string(), divergence_cell(est)])?;
    }
    if let (Source::Model(LoadedModel::Markov(mq)), Source::Model(LoadedModel::Markov(mp))) =
        (&q, &p)
    {
        let rate = markov_divergence_rate(mq, mp)?;
        w.write_record(["analytic".to_string(), divergence_cell(rate)])?;
        println!("analytic rate: {}", divergence_cell(rate));
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    fs::write(&a.out, bytes)?;
    write_config(&a.out, &Command::Divrate(a.clone()))?;
    println!("wrote {} estimates to {}", a.n_max, a.out.display());
    Ok(())
}

fn cmd_sample(a: &SampleArgs) -> Result<()> {
    let model = load_model(&a.model)?.as_hmm();
    let path = model.sample_path(a.length, a.seed);
    fs::write(&a.out, format_sample(model.alphabet(), &path))?;
    write_config(&a.out, &Command::Sample(a.clone()))?;
    println!("wrote {} symbols to {}", a.length, a.out.display());
    Ok(())
}
