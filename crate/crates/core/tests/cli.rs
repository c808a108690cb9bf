use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TWO_STATE: &str = r#"{"alphabet": ["0", "1"], "N": 2,
  "M": {"0": [[0.4, 0.1], [0.2, 0.1]], "1": [[0.1, 0.4], [0.3, 0.4]]}}"#;
const CHAIN_Q: &str = r#"{"alphabet": ["0", "1"], "A": [[0.9, 0.1], [0.2, 0.8]]}"#;
const CHAIN_P: &str = r#"{"alphabet": ["0", "1"], "A": [[0.6, 0.4], [0.3, 0.7]]}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmmrealize"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup() -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("hmm.json"), TWO_STATE).unwrap();
    fs::write(dir.path().join("q.json"), CHAIN_Q).unwrap();
    fs::write(dir.path().join("p.json"), CHAIN_P).unwrap();
    dir
}

fn read_csv(path: PathBuf) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect()
}

#[test]
fn validate_accepts_a_valid_model() {
    let dir = setup();
    let o = run(dir.path(), &["validate", "--model", "hmm.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("positivity condition: true"));
    let residual_line = stdout(&o)
        .lines()
        .find(|l| l.starts_with("max row residual"))
        .unwrap()
        .to_string();
    let r: f64 = residual_line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(r < 1e-9);
}

#[test]
fn validate_names_the_bad_row() {
    let dir = setup();
    fs::write(
        dir.path().join("bad.json"),
        r#"{"alphabet": ["0", "1"], "A": [[0.5, 0.4], [0.2, 0.8]]}"#,
    )
    .unwrap();
    let o = run(dir.path(), &["validate", "--model", "bad.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("row 0"), "{}", stderr(&o));
}

#[test]
fn validate_flags_positivity_but_succeeds() {
    let dir = setup();
    fs::write(
        dir.path().join("np.json"),
        r#"{"alphabet": ["a", "b"], "N": 2, "M": {"a": [[0.5, 0.0], [0.0, 0.0]], "b": [[0.0, 0.5], [0.5, 0.5]]}}"#,
    )
    .unwrap();
    let o = run(dir.path(), &["validate", "--model", "np.json"]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("positivity condition fails"));
}

#[test]
fn unreadable_inputs_exit_with_io_code() {
    let dir = setup();
    fs::write(dir.path().join("broken.json"), "{ not json").unwrap();
    assert_eq!(
        code(&run(dir.path(), &["validate", "--model", "broken.json"])),
        4
    );
    assert_eq!(
        code(&run(dir.path(), &["validate", "--model", "missing.json"])),
        4
    );
    assert_eq!(code(&run(dir.path(), &["validate"])), 2);
}

#[test]
fn hankel_empty_block_is_one() {
    let dir = setup();
    let o = run(
        dir.path(),
        &[
            "hankel", "--model", "hmm.json", "-K", "0", "-L", "0", "--out", "h.csv",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_csv(dir.path().join("h.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][1].parse::<f64>().unwrap(), 1.0);
    assert!(dir.path().join("h.csv.config.json").exists());
}

#[test]
fn hankel_pairs_sum_to_one() {
    let dir = setup();
    let o = run(
        dir.path(),
        &[
            "hankel", "--model", "hmm.json", "-K", "1", "-L", "1", "--out", "h.csv",
        ],
    );
    assert_eq!(code(&o), 0);
    let rows = read_csv(dir.path().join("h.csv"));
    assert_eq!(rows[0], vec!["", "0", "1"]);
    let total: f64 = rows[1..]
        .iter()
        .flat_map(|r| r[1..].iter())
        .map(|c| c.parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() <= 1e-15);
}

#[test]
fn hankel_from_sample_counts_windows() {
    let dir = setup();
    fs::write(dir.path().join("s.txt"), "0110100110\n").unwrap();
    let o = run(
        dir.path(),
        &[
            "hankel", "--sample", "s.txt", "-K", "1", "-L", "1", "--out", "h.csv",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_csv(dir.path().join("h.csv"));
    // Nine bigrams: 01 11 10 01 10 00 01 11 10.
    let cell = |r: usize, c: usize| rows[r][c].parse::<f64>().unwrap();
    assert!((cell(1, 1) - 1.0 / 9.0).abs() <= 1e-15);
    assert!((cell(1, 2) - 3.0 / 9.0).abs() <= 1e-15);
    assert!((cell(2, 1) - 3.0 / 9.0).abs() <= 1e-15);
    assert!((cell(2, 2) - 2.0 / 9.0).abs() <= 1e-15);

    let o = run(
        dir.path(),
        &[
            "hankel", "--sample", "s.txt", "--kmax", "1", "-K", "1", "-L", "1", "--out", "x.csv",
        ],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn approximate_is_deterministic_and_recovers_the_source() {
    let dir = setup();
    let args = [
        "approximate",
        "--model",
        "hmm.json",
        "--size",
        "2",
        "--restarts",
        "3",
        "--seed",
        "5",
        "--out",
    ];
    let a = run(dir.path(), &[&args[..], &["a.json"]].concat());
    let b = run(dir.path(), &[&args[..], &["b.json"]].concat());
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(code(&b), 0);
    let (fa, fb) = (
        fs::read(dir.path().join("a.json")).unwrap(),
        fs::read(dir.path().join("b.json")).unwrap(),
    );
    assert_eq!(fa, fb);
    assert!(stdout(&a).contains("max |p*(u) - q(u)|"));

    let json: serde_json::Value = serde_json::from_slice(&fa).unwrap();
    let dev = json["diagnostics"]["equivalence"]["max_deviation"]
        .as_f64()
        .unwrap();
    assert!(dev <= 1e-6);
    assert_eq!(json["diagnostics"]["steps"].as_array().unwrap().len(), 3);

    let o = run(
        dir.path(),
        &[
            "divrate",
            "--q-model",
            "hmm.json",
            "--p-model",
            "a.json",
            "--n-max",
            "3",
            "--out",
            "d.csv",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for row in &read_csv(dir.path().join("d.csv"))[1..] {
        let v: f64 = row[1].parse().unwrap();
        assert!((0.0..=1e-6).contains(&v), "{v}");
    }
}

#[test]
fn approximate_markov_prints_the_transition_matrix() {
    let dir = setup();
    let o = run(
        dir.path(),
        &[
            "approximate",
            "--model",
            "hmm.json",
            "--markov",
            "--out",
            "mk.json",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("A* ="));
    let json: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("mk.json")).unwrap()).unwrap();
    // q(00)/q(0) for the two-state source: 0.18 / 0.4.
    let a00 = json["A"][0][0].as_f64().unwrap();
    assert!((a00 - 0.45).abs() <= 1e-12, "{a00}");
}

#[test]
fn iteration_limit_exits_three_and_still_writes() {
    let dir = setup();
    let o = run(
        dir.path(),
        &[
            "approximate",
            "--model",
            "hmm.json",
            "--size",
            "2",
            "--iters",
            "2",
            "--out",
            "x.json",
        ],
    );
    assert_eq!(code(&o), 3);
    assert!(dir.path().join("x.json").exists());
}

#[test]
fn divrate_of_identical_sources_is_zero() {
    let dir = setup();
    let o = run(
        dir.path(),
        &[
            "divrate",
            "--q-model",
            "q.json",
            "--p-model",
            "q.json",
            "--n-max",
            "3",
            "--out",
            "d.csv",
        ],
    );
    assert_eq!(code(&o), 0);
    let rows = read_csv(dir.path().join("d.csv"));
    assert_eq!(rows[0], vec!["n", "estimate"]);
    assert_eq!(rows.len(), 5);
    for row in &rows[1..] {
        assert_eq!(row[1].parse::<f64>().unwrap(), 0.0);
    }
    assert_eq!(rows[4][0], "analytic");
}

#[test]
fn divrate_of_markov_pair_approaches_the_analytic_row() {
    let dir = setup();
    let o = run(
        dir.path(),
        &[
            "divrate",
            "--q-model",
            "q.json",
            "--p-model",
            "p.json",
            "--n-max",
            "5",
            "--out",
            "d.csv",
        ],
    );
    assert_eq!(code(&o), 0);
    let rows = read_csv(dir.path().join("d.csv"));
    let v = |r: usize| rows[r][1].parse::<f64>().unwrap();
    let analytic = v(6);
    assert!((v(5) - analytic).abs() < (v(1) - analytic).abs());
}

#[test]
fn divrate_support_mismatch_reports_inf() {
    let dir = setup();
    fs::write(
        dir.path().join("z.json"),
        r#"{"alphabet": ["0", "1"], "A": [[1.0, 0.0], [0.5, 0.5]]}"#,
    )
    .unwrap();
    let o = run(
        dir.path(),
        &[
            "divrate",
            "--q-model",
            "q.json",
            "--p-model",
            "z.json",
            "--n-max",
            "2",
            "--out",
            "d.csv",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_csv(dir.path().join("d.csv"));
    assert!(rows[1..].iter().all(|r| r[1] == "inf"));
}

#[test]
fn sample_is_reproducible_and_forced_when_deterministic() {
    let dir = setup();
    let a = run(
        dir.path(),
        &[
            "sample", "--model", "q.json", "--length", "500", "--seed", "9", "--out", "a.txt",
        ],
    );
    let b = run(
        dir.path(),
        &[
            "sample", "--model", "q.json", "--length", "500", "--seed", "9", "--out", "b.txt",
        ],
    );
    assert_eq!(code(&a), 0);
    assert_eq!(code(&b), 0);
    let text = fs::read_to_string(dir.path().join("a.txt")).unwrap();
    assert_eq!(text, fs::read_to_string(dir.path().join("b.txt")).unwrap());
    assert_eq!(text.trim_end().len(), 500);

    fs::write(
        dir.path().join("det.json"),
        r#"{"alphabet": ["x", "y"], "A": [[0.0, 1.0], [0.0, 1.0]]}"#,
    )
    .unwrap();
    let o = run(
        dir.path(),
        &[
            "sample", "--model", "det.json", "--length", "8", "--out", "d.txt",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(dir.path().join("d.txt")).unwrap(),
        "yyyyyyyy\n"
    );
}

#[test]
fn replay_reproduces_the_output() {
    let dir = setup();
    let o = run(
        dir.path(),
        &[
            "approximate",
            "--model",
            "hmm.json",
            "--size",
            "2",
            "--seed",
            "3",
            "--out",
            "r.json",
        ],
    );
    assert_eq!(code(&o), 0);
    let first = fs::read(dir.path().join("r.json")).unwrap();
    fs::remove_file(dir.path().join("r.json")).unwrap();
    let o = run(dir.path(), &["replay", "r.json.config.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(dir.path().join("r.json")).unwrap(), first);
}
