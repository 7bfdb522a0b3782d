use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mcgraph::bench::{self, ExperimentConfig};
use mcgraph::certify::{
    self, incoherence, theta_estimate, LowRankFactorization, Status, Theorem, VERDICT_CSV_HEADER,
};
use mcgraph::ingest::{self, RatingsFormat, COMPARISON_CSV_HEADER, RANK1_CSV_HEADER};
use mcgraph::io;
use mcgraph::obsgraph::PROFILE_CSV_HEADER;
use mcgraph::solver::{self, SolverConfig, SVD_SIZE_CAP};
use mcgraph::synth::er_pattern;
use mcgraph::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_VIOLATED: u8 = 3;
const EXIT_INDETERMINATE: u8 = 4;
const EXIT_RUNTIME: u8 = 5;

/// Observation-graph analysis, completion certificates and nuclear-norm
/// completion.
#[derive(Debug, Parser)]
#[command(name = "mcgraph", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Profile an observation pattern (degrees, spectral gaps, psi).
    Analyze(AnalyzeArgs),
    /// Evaluate a recovery condition for a pattern.
    Certify(CertifyArgs),
    /// Complete a partially observed matrix.
    Complete(CompleteArgs),
    /// Run a simulation study described by a JSON config.
    Simulate(SimulateArgs),
    /// Turn a ratings file into a pattern and compare it with random patterns.
    Ingest(IngestArgs),
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Matrix Market coordinate file.
    pattern: PathBuf,
    /// Treat the pattern as symmetric even if the header says general.
    #[arg(long)]
    symmetric: bool,
    /// Output CSV path, or `-` for standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TheoremArg {
    ExactSymmetric,
    ApproxSymmetric,
    ExactRectangular,
    ApproxRectangular,
}

impl From<TheoremArg> for Theorem {
    fn from(t: TheoremArg) -> Self {
        match t {
            TheoremArg::ExactSymmetric => Theorem::ExactSymmetric,
            TheoremArg::ApproxSymmetric => Theorem::ApproxSymmetric,
            TheoremArg::ExactRectangular => Theorem::ExactRectangular,
            TheoremArg::ApproxRectangular => Theorem::ApproxRectangular,
        }
    }
}

#[derive(Debug, Args)]
struct CertifyArgs {
    pattern: PathBuf,
    #[arg(long, value_enum)]
    theorem: TheoremArg,
    /// Rank; defaults to the number of factor columns.
    #[arg(long)]
    rank: Option<usize>,
    /// Incoherence; derived from --factors when omitted.
    #[arg(long)]
    mu0: Option<f64>,
    /// `U.csv` or `U.csv,V.csv` with orthonormal columns; `V = U` when only
    /// one file is given.
    #[arg(long, value_delimiter = ',', num_args = 1..=2)]
    factors: Vec<PathBuf>,
    /// Subset-deviation constant; estimated from --factors when omitted.
    #[arg(long)]
    theta: Option<f64>,
    /// Subset budget for the theta estimate.
    #[arg(long, default_value_t = 10_000)]
    theta_budget: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    symmetric: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompleteArgs {
    /// Dense observed matrix (`.csv`, or `.mtx` array format).
    observed: PathBuf,
    /// Matrix Market coordinate pattern.
    pattern: PathBuf,
    #[arg(long)]
    symmetric: bool,
    /// Ball radius: a number, or `auto` for the noise-based choice.
    #[arg(long, default_value = "0")]
    delta: String,
    /// Noise level used by `--delta auto`.
    #[arg(long)]
    sigma: Option<f64>,
    /// Failure probability used by `--delta auto`.
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    #[arg(long)]
    penalty_init: Option<f64>,
    #[arg(long)]
    penalty_growth: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol_feas: Option<f64>,
    #[arg(long)]
    tol_change: Option<f64>,
    /// Estimate path (`.mtx` writes Matrix Market, anything else CSV), or `-`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Convergence trace CSV path.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    config: PathBuf,
    /// Output directory; defaults to `<config stem>_results` beside the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = "MCGRAPH_JOBS")]
    jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    /// user, item, rating, timestamp separated by tabs.
    Tab,
    /// user::item::rating::timestamp.
    DoubleColon,
    /// user,item,rating with an optional header.
    Csv,
}

impl From<FormatArg> for RatingsFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Tab => RatingsFormat::TabSeparated,
            FormatArg::DoubleColon => RatingsFormat::DoubleColonSeparated,
            FormatArg::Csv => RatingsFormat::CsvTriples,
        }
    }
}

#[derive(Debug, Args)]
struct IngestArgs {
    dataset: PathBuf,
    #[arg(long, value_enum)]
    format: FormatArg,
    /// Number of density-matched random patterns to average.
    #[arg(long)]
    compare_er: Option<usize>,
    /// Rank-1 completion trials on the real and a random pattern.
    #[arg(long)]
    rank1_trials: Option<usize>,
    /// Restrict the rank-1 experiment to the N highest-degree users and items.
    #[arg(long)]
    rank1_subsample: Option<usize>,
    /// Dataset label in the output rows; defaults to the file stem.
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Property table path, or `-`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rank-1 table path, or `-`.
    #[arg(long)]
    rank1_out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let outcome = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Certify(a) => certify_cmd(a),
        Command::Complete(a) => complete(a),
        Command::Simulate(a) => simulate(a),
        Command::Ingest(a) => ingest_cmd(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

/// `<dir>/<stem>.<suffix>` beside `input`.
fn derived_path(input: &Path, suffix: &str) -> PathBuf {
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into());
    input.with_file_name(format!("{stem}.{suffix}"))
}

fn is_stdout(p: &Path) -> bool {
    p.as_os_str() == "-"
}

fn emit_csv(out: &Path, header: &str, rows: &[Vec<String>]) -> CliResult<()> {
    if is_stdout(out) {
        io::write_csv_rows(std::io::stdout().lock(), header, rows).map_err(|e| Error::Io {
            path: out.to_path_buf(),
            source: e,
        })?;
    } else {
        io::write_csv_file(out, header, rows)?;
        eprintln!("wrote {}", out.display());
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> CliResult<u8> {
    let pattern = io::read_pattern(&a.pattern, a.symmetric)?;
    let profile = pattern.profile()?;
    eprintln!(
        "{}x{} {} pattern, |Ω|={}, density={:.6}",
        profile.n1,
        profile.n2,
        if profile.symmetric { "symmetric" } else { "rectangular" },
        profile.count,
        profile.density
    );
    eprintln!(
        "xi1={:.6} xi2={:.6} delta_max={:.6} phi={:.6} delta_max_c={:.6} phi_c={:.6} psi={:.6} quantity={:.6}",
        profile.xi1,
        profile.xi2,
        profile.delta_max,
        profile.phi,
        profile.delta_max_complement,
        profile.phi_complement,
        profile.psi,
        profile.quantity()
    );
    let out = a.out.unwrap_or_else(|| derived_path(&a.pattern, "profile.csv"));
    emit_csv(&out, PROFILE_CSV_HEADER, &[profile.csv_record()])?;
    Ok(0)
}

fn load_factors(paths: &[PathBuf]) -> CliResult<LowRankFactorization> {
    let u = io::read_dense(&paths[0])?;
    let v = match paths.get(1) {
        Some(p) => io::read_dense(p)?,
        None => u.clone(),
    };
    let r = u.ncols();
    Ok(LowRankFactorization::new(u, v, vec![1.0; r])?)
}

fn certify_cmd(a: CertifyArgs) -> CliResult<u8> {
    let theorem: Theorem = a.theorem.into();
    if a.mu0.is_none() && a.factors.is_empty() {
        return usage("certify needs --mu0 or --factors");
    }
    if matches!(theorem, Theorem::ExactRectangular | Theorem::ApproxRectangular)
        && a.theta.is_none()
        && a.factors.is_empty()
    {
        return usage("rectangular theorems need --theta or --factors");
    }
    let pattern = io::read_pattern(&a.pattern, a.symmetric)?;
    if theorem.is_symmetric() != pattern.is_symmetric() {
        return usage(format!(
            "theorem {theorem} does not apply to a {} pattern",
            if pattern.is_symmetric() { "symmetric" } else { "rectangular" }
        ));
    }

    let factors = if a.factors.is_empty() {
        None
    } else {
        Some(load_factors(&a.factors)?)
    };
    let rank = match (a.rank, &factors) {
        (Some(r), Some(f)) if r != f.rank() => {
            return usage(format!("--rank {r} disagrees with {} factor columns", f.rank()))
        }
        (Some(r), _) => r,
        (None, Some(f)) => f.rank(),
        (None, None) => return usage("--rank is required without --factors"),
    };
    if rank == 0 {
        return usage("--rank must be positive");
    }
    let mu0 = match (a.mu0, &factors) {
        (Some(m), _) => m,
        (None, Some(f)) => incoherence(&f.u, &f.v)?,
        (None, None) => unreachable!("checked above"),
    };

    let profile = pattern.profile()?;
    let (n1, n2, omega) = (pattern.rows(), pattern.cols(), pattern.count());
    let theta = || -> CliResult<f64> {
        match (a.theta, &factors) {
            (Some(t), _) => Ok(t),
            (None, Some(f)) => {
                eprintln!("estimating theta with budget {} and seed {}", a.theta_budget, a.seed);
                let est = theta_estimate(f, &pattern, a.theta_budget, a.seed)?;
                if !est.exact {
                    eprintln!("theta={} is a sampled lower bound", est.theta);
                }
                Ok(est.theta)
            }
            (None, None) => unreachable!("checked above"),
        }
    };
    let verdict = match theorem {
        Theorem::ExactSymmetric => certify::verdict_exact_symmetric(&profile, mu0, rank, n1, omega)?,
        Theorem::ApproxSymmetric => certify::verdict_approx_symmetric(&profile, mu0, rank, n1, omega)?,
        Theorem::ExactRectangular => {
            certify::verdict_exact_rectangular(&profile, mu0, theta()?, rank, n1, n2, omega)?
        }
        Theorem::ApproxRectangular => {
            certify::verdict_approx_rectangular(&profile, mu0, theta()?, rank, n1, n2, omega)?
        }
    };
    eprintln!(
        "{theorem}: {}{} (mu0={mu0}, r={rank}, |Ω|={omega})",
        verdict.status,
        if verdict.out_of_domain { ", outside the condition's domain" } else { "" }
    );
    let out = a.out.unwrap_or_else(|| derived_path(&a.pattern, "verdict.csv"));
    emit_csv(&out, VERDICT_CSV_HEADER, &[verdict.csv_record()])?;
    Ok(match verdict.status {
        Status::Satisfied => 0,
        Status::Violated => EXIT_VIOLATED,
        Status::Indeterminate => EXIT_INDETERMINATE,
    })
}

fn complete(a: CompleteArgs) -> CliResult<u8> {
    let mut cfg = SolverConfig::default();
    if let Some(v) = a.penalty_init {
        cfg.penalty_init = Some(v);
    }
    if let Some(v) = a.penalty_growth {
        cfg.penalty_growth = v;
    }
    if let Some(v) = a.max_iters {
        cfg.max_iters = v;
    }
    if let Some(v) = a.tol_feas {
        cfg.tol_feas = v;
    }
    if let Some(v) = a.tol_change {
        cfg.tol_change = v;
    }
    let auto = a.delta.eq_ignore_ascii_case("auto");
    if auto && a.sigma.is_none() {
        return usage("--delta auto needs --sigma");
    }
    if !auto {
        match a.delta.parse::<f64>() {
            Ok(d) => cfg.delta = d,
            Err(_) => return usage(format!("--delta must be a number or 'auto', got '{}'", a.delta)),
        }
    }
    if let Err(Error::InvalidInput(m)) = cfg.validate() {
        return usage(m);
    }

    let pattern = io::read_pattern(&a.pattern, a.symmetric)?;
    let observed = io::read_dense(&a.observed)?;
    if auto {
        cfg.delta = match certify::recommended_delta(a.sigma.unwrap_or(0.0), pattern.count(), a.eta) {
            Ok(d) => d,
            Err(Error::InvalidInput(m)) => return usage(m),
            Err(e) => return Err(e.into()),
        };
    }
    let result = solver::solve(&observed, &pattern, &cfg)?;
    eprintln!(
        "delta={:.5e} iterations={} converged={} feasibility={:.6e} nuclear_norm={:.6}",
        cfg.delta, result.iterations, result.converged, result.feasibility, result.nuclear_norm
    );

    let out = a.out.unwrap_or_else(|| derived_path(&a.observed, "estimate.csv"));
    if is_stdout(&out) {
        let mut lock = std::io::stdout().lock();
        lock.write_all(io::dense_csv_string(&result.estimate).as_bytes())
            .map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
    } else {
        io::write_dense(&out, &result.estimate)?;
        eprintln!("wrote {}", out.display());
    }
    let trace = a.trace.unwrap_or_else(|| derived_path(&a.observed, "trace.csv"));
    fs::write(&trace, result.trace_csv()).map_err(|e| Error::Io {
        path: trace.clone(),
        source: e,
    })?;
    Ok(0)
}

fn simulate(a: SimulateArgs) -> CliResult<u8> {
    let mut cfg = match ExperimentConfig::load(&a.config) {
        Ok(c) => c,
        Err(Error::InvalidInput(m)) => return usage(m),
        Err(e) => return Err(e.into()),
    };
    if let Some(seed) = a.seed {
        cfg.master_seed = seed;
    }
    if a.jobs == Some(0) {
        return usage("--jobs must be at least 1");
    }
    let out_dir = a.out.unwrap_or_else(|| {
        let stem = a
            .config
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "simulation".into());
        a.config.with_file_name(format!("{stem}_results"))
    });
    eprintln!(
        "master_seed={} cells={} trials_per_cell={}",
        cfg.master_seed,
        cfg.cells().len(),
        cfg.trials_per_cell
    );
    let output = bench::run_experiment(&cfg, &out_dir, a.jobs, |cell| eprintln!("{}", cell.line()))?;
    eprintln!(
        "wrote {} and {}",
        output.records_path.display(),
        output.aggregate_path.display()
    );
    Ok(0)
}

fn ingest_cmd(a: IngestArgs) -> CliResult<u8> {
    if a.compare_er == Some(0) {
        return usage("--compare-er must be at least 1");
    }
    if a.rank1_trials == Some(0) {
        return usage("--rank1-trials must be at least 1");
    }
    let name = a.name.clone().unwrap_or_else(|| {
        a.dataset
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    });
    let pattern = ingest::parse_ratings(&a.dataset, a.format.into())?;
    eprintln!(
        "{name}: {} users, {} items, {} ratings, density {:.4}, seed {}",
        pattern.rows(),
        pattern.cols(),
        pattern.count(),
        pattern.density(),
        a.seed
    );

    let rows = match a.compare_er {
        Some(k) => ingest::compare_with_er(&pattern, k, a.seed)?.csv_rows(&name),
        None => {
            let profile = pattern.profile()?;
            vec![vec![
                name.clone(),
                "real".into(),
                profile.density.to_string(),
                profile.psi.to_string(),
                profile.xi1.to_string(),
                profile.xi2.to_string(),
            ]]
        }
    };
    let out = a.out.clone().unwrap_or_else(|| derived_path(&a.dataset, "properties.csv"));
    emit_csv(&out, COMPARISON_CSV_HEADER, &rows)?;

    if let Some(trials) = a.rank1_trials {
        let side = match a.rank1_subsample {
            Some(n) => Some(n),
            None if pattern.rows().max(pattern.cols()) > SVD_SIZE_CAP => {
                eprintln!("pattern exceeds the solver size cap; using the top 300x300 subpattern");
                Some(300)
            }
            None => None,
        };
        let (target, label) = match side {
            Some(n) => (
                ingest::top_degree_subpattern(&pattern, n, n)?,
                format!("{name}-top{n}x{n}"),
            ),
            None => (pattern.clone(), name.clone()),
        };
        let cfg = SolverConfig::default();
        let real = ingest::rank1_pattern_experiment(&target, trials, a.seed, &cfg)?;
        let er = er_pattern(target.rows(), target.cols(), target.density(), false, a.seed)?;
        let random = ingest::rank1_pattern_experiment(&er, trials, a.seed, &cfg)?;
        let rows = vec![real.csv_record(&label, "real"), random.csv_record(&label, "er")];
        let out = a.rank1_out.clone().unwrap_or_else(|| derived_path(&a.dataset, "rank1.csv"));
        emit_csv(&out, RANK1_CSV_HEADER, &rows)?;
    }
    Ok(0)
}
