//! `permpml` command-line tool.
//!
//! Exit codes: 0 on success, 2 on bad input, 3 when a solver stopped before
//! meeting its tolerance (the output is still written).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use permpml::approx::{BETHE_MAX_ITER, BETHE_TOL, SINKHORN_TOL};
use permpml::estimator::{default_oracle_support, ORACLE_GRID_STEP};
use permpml::permanent::RYSER_LIMIT;
use permpml::profile::symbol_token;
use permpml::solver::{SOLVER_MAX_ITER, SOLVER_TOL};
use permpml::{
    approximate_pml_with, bethe_permanent, exact_pml_oracle, log_permanent, profile_of_sequence,
    sample_sequence, scaled_sinkhorn_permanent, sinkhorn_permanent, NonNegMatrix, PmlOptions,
    Profile, PseudoDistribution,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(
    name = "permpml",
    version,
    about = "Permanent approximations and approximate PML"
)]
struct Cli {
    /// Grid ratio parameter for `pml`.
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Rounding threshold for `pml`.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Solver tolerance (convex gap for `pml`, Frank–Wolfe gap for Bethe).
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Write to this file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Profile of a newline-delimited token file.
    Profile { input: PathBuf },
    /// Approximate PML distribution for a profile JSON file.
    Pml { input: PathBuf },
    /// Exact permanent against the three approximations for a matrix JSON file.
    PermCompare { input: PathBuf },
    /// Draw n tokens from a distribution JSON file (a bare array). Needs --seed.
    Sample {
        input: PathBuf,
        #[arg(short, long)]
        n: usize,
    },
    /// Best distribution on a probability grid for a small profile.
    OraclePml {
        input: PathBuf,
        #[arg(long)]
        max_support: Option<usize>,
        #[arg(long, default_value_t = ORACLE_GRID_STEP)]
        grid_step: f64,
    },
    /// perm-compare on random positive matrices of every size up to --max-n.
    Bench {
        #[arg(long, default_value_t = 8)]
        max_n: usize,
        #[arg(long, default_value_t = 3)]
        trials: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug)]
enum Failure {
    Input(String),
    NotConverged(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.to_string())
    }
}

/// Rendered output plus whether every solver met its tolerance.
struct Output {
    text: String,
    converged: bool,
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_str(&read(path)?)
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn json<T: Serialize>(v: &T) -> Result<String, Failure> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

/// 17 significant digits; empty for a missing value.
fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

fn positive(name: &str, v: Option<f64>) -> Result<(), Failure> {
    match v {
        Some(x) if x.is_nan() || x <= 0.0 => Err(Failure::Input(format!(
            "--{name} must be positive, got {x}"
        ))),
        _ => Ok(()),
    }
}

fn cmd_profile(cli: &Cli, input: &Path) -> Result<Output, Failure> {
    let text = read(input)?;
    let tokens: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    let p = profile_of_sequence(&tokens)?;
    let text = match cli.format.unwrap_or(Format::Json) {
        Format::Json => serde_json::to_string(&p)? + "\n",
        Format::Csv => {
            let mut s = String::from("freq,count\n");
            for (m, c) in p.freqs().iter().zip(p.counts()) {
                writeln!(s, "{m},{c}").unwrap();
            }
            s
        }
    };
    Ok(Output {
        text,
        converged: true,
    })
}

fn cmd_pml(cli: &Cli, input: &Path) -> Result<Output, Failure> {
    let p: Profile = parse_json(input)?;
    let opts = PmlOptions {
        eps: cli.eps,
        gamma: cli.gamma,
        tol: cli.tol.unwrap_or(SOLVER_TOL),
        max_iter: cli.max_iter.unwrap_or(SOLVER_MAX_ITER),
    };
    let res = approximate_pml_with(&p, &opts)?;
    let text = match cli.format.unwrap_or(Format::Json) {
        Format::Json => json(&res)?,
        Format::Csv => {
            let mut s = String::from("symbol,probability\n");
            for (i, q) in res.distribution.probs().iter().enumerate() {
                writeln!(s, "{},{}", symbol_token(i), num(Some(*q))).unwrap();
            }
            s
        }
    };
    Ok(Output {
        text,
        converged: res.converged,
    })
}

#[derive(Serialize)]
struct Comparison {
    #[serde(rename = "N")]
    n: usize,
    log_perm_exact: Option<f64>,
    log_sinkhorn: f64,
    log_scaled_sinkhorn: f64,
    log_bethe: f64,
    /// log_perm_exact − log_bethe.
    gap: Option<f64>,
    converged: bool,
}

const COMPARISON_HEADER: &str = "N,log_perm_exact,log_sinkhorn,log_scaled_sinkhorn,log_bethe,gap";

impl Comparison {
    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.n,
            num(self.log_perm_exact),
            num(Some(self.log_sinkhorn)),
            num(Some(self.log_scaled_sinkhorn)),
            num(Some(self.log_bethe)),
            num(self.gap)
        )
    }
}

fn compare(cli: &Cli, m: &NonNegMatrix) -> Result<Comparison, Failure> {
    if !m.is_square() {
        return Err(Failure::Input(format!(
            "matrix is {}x{}, not square",
            m.rows(),
            m.cols()
        )));
    }
    let n = m.rows();
    let exact = if n <= RYSER_LIMIT {
        Some(log_permanent(m)?)
    } else {
        None
    };
    let stol = cli.tol.unwrap_or(SINKHORN_TOL);
    let sk = sinkhorn_permanent(m, stol)?;
    let ss = scaled_sinkhorn_permanent(m, stol)?;
    let be = bethe_permanent(
        m,
        cli.tol.unwrap_or(BETHE_TOL),
        cli.max_iter.unwrap_or(BETHE_MAX_ITER),
    )?;
    Ok(Comparison {
        n,
        log_perm_exact: exact,
        log_sinkhorn: sk.log_value,
        log_scaled_sinkhorn: ss.log_value,
        log_bethe: be.log_value,
        gap: exact.map(|e| e - be.log_value),
        converged: sk.converged && ss.converged && be.converged,
    })
}

fn cmd_perm_compare(cli: &Cli, input: &Path) -> Result<Output, Failure> {
    let m: NonNegMatrix = parse_json(input)?;
    let c = compare(cli, &m)?;
    let text = match cli.format.unwrap_or(Format::Csv) {
        Format::Csv => format!("{COMPARISON_HEADER}\n{}\n", c.csv()),
        Format::Json => json(&c)?,
    };
    Ok(Output {
        text,
        converged: c.converged,
    })
}

fn cmd_sample(cli: &Cli, input: &Path, n: usize) -> Result<Output, Failure> {
    let seed = cli
        .seed
        .ok_or_else(|| Failure::Input("sample needs --seed".into()))?;
    if n == 0 {
        return Err(Failure::Input("n must be positive".into()));
    }
    let q: PseudoDistribution = parse_json(input)?;
    let seq = sample_sequence(&q, n, seed)?;
    let mut text = String::new();
    for s in seq {
        writeln!(text, "{}", symbol_token(s)).unwrap();
    }
    Ok(Output {
        text,
        converged: true,
    })
}

fn cmd_oracle(
    cli: &Cli,
    input: &Path,
    max_support: Option<usize>,
    grid_step: f64,
) -> Result<Output, Failure> {
    let p: Profile = parse_json(input)?;
    let support = max_support.unwrap_or_else(|| default_oracle_support(&p));
    let res = exact_pml_oracle(&p, support, grid_step)?;
    let text = match cli.format.unwrap_or(Format::Json) {
        Format::Json => json(&res)?,
        Format::Csv => {
            let mut s = String::from("symbol,probability\n");
            for (i, q) in res.distribution.probs().iter().enumerate() {
                writeln!(s, "{},{}", symbol_token(i), num(Some(*q))).unwrap();
            }
            s
        }
    };
    Ok(Output {
        text,
        converged: true,
    })
}

#[derive(Serialize)]
struct BenchRow {
    trial: usize,
    #[serde(flatten)]
    comparison: Comparison,
    seconds: f64,
}

fn cmd_bench(cli: &Cli, max_n: usize, trials: usize) -> Result<Output, Failure> {
    if max_n == 0 || trials == 0 {
        return Err(Failure::Input(
            "--max-n and --trials must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(0));
    let mut rows = Vec::new();
    for n in 1..=max_n {
        for trial in 0..trials {
            let m = NonNegMatrix::from_fn(n, n, |_, _| rng.gen_range(0.01..1.0))?;
            let start = Instant::now();
            let comparison = compare(cli, &m)?;
            rows.push(BenchRow {
                trial,
                comparison,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
    }
    let converged = rows.iter().all(|r| r.comparison.converged);
    let text = match cli.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let mut s = format!("{COMPARISON_HEADER},trial,seconds\n");
            for r in &rows {
                writeln!(
                    s,
                    "{},{},{}",
                    r.comparison.csv(),
                    r.trial,
                    num(Some(r.seconds))
                )
                .unwrap();
            }
            s
        }
        Format::Json => json(&rows)?,
    };
    Ok(Output { text, converged })
}

fn run(cli: &Cli) -> Result<(), Failure> {
    positive("tol", cli.tol)?;
    positive("eps", cli.eps)?;
    if cli.max_iter == Some(0) {
        return Err(Failure::Input("--max-iter must be positive".into()));
    }
    let out = match &cli.command {
        Command::Profile { input } => cmd_profile(cli, input)?,
        Command::Pml { input } => cmd_pml(cli, input)?,
        Command::PermCompare { input } => cmd_perm_compare(cli, input)?,
        Command::Sample { input, n } => cmd_sample(cli, input, *n)?,
        Command::OraclePml {
            input,
            max_support,
            grid_step,
        } => cmd_oracle(cli, input, *max_support, *grid_step)?,
        Command::Bench { max_n, trials } => cmd_bench(cli, *max_n, *trials)?,
    };
    match &cli.out {
        Some(path) => std::fs::write(path, &out.text)
            .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?,
        None => print!("{}", out.text),
    }
    if out.converged {
        Ok(())
    } else {
        Err(Failure::NotConverged(
            "solver stopped before reaching its tolerance".into(),
        ))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::NotConverged(msg)) => {
            eprintln!("warning: {msg}");
            ExitCode::from(3)
        }
    }
}
