//! `bandfact` command-line tool.
//!
//! Exit codes: 0 on success, 2 for invalid arguments or requests the chosen
//! method cannot serve, 3 for numerical failures.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use bandfact::analysis::{
    error_rows_to_table, error_table, parse_kinds, ErrorGrid, ErrorTableOptions, ParticipationCount,
};
use bandfact::aof::{self, AofOptions, AofProblem, DEFAULT_MAX_N};
use bandfact::factorization::{bsr_b, bsr_c, sqrt_coefficients};
use bandfact::sensitivity::{
    max_participations, sens_banded_dp, sens_toeplitz_monotone, sens_upper_bound_generic,
    EnumerationLimit, DEFAULT_ENUMERATION_MAX_N,
};
use bandfact::table::{format_sig, Cell, Table};
use bandfact::{
    expected_error, make_factorization, sensitivity, simulate_mechanism, workload_column, Error,
    FactorizationKind, MatrixHandle, ParticipationSchema, ToeplitzColumn, WorkloadSpec,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "bandfact",
    version,
    about = "Banded matrix factorizations for correlated-noise DP-SGD"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Csv, global = true)]
    format: Format,

    /// Write output to this file instead of standard output.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,

    /// Worker threads for data-parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Workload, square-root and banded-square-root coefficients.
    Coeffs(CoeffsArgs),
    /// Sensitivity of a Toeplitz noise matrix under b-min-separation.
    Sensitivity(SensitivityArgs),
    /// Expected approximation errors over a parameter grid.
    ErrorTable(ErrorTableArgs),
    /// Approximately optimal factorization by projected gradient descent.
    Aof(AofArgs),
    /// Monte Carlo check of the expected error.
    NoiseSim(NoiseSimArgs),
}

#[derive(Args, Debug, Clone, Copy)]
struct WorkloadArgs {
    /// Number of steps.
    #[arg(long)]
    n: usize,
    /// Weight decay factor, 0 < alpha <= 1.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Momentum, 0 <= beta < alpha.
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
}

impl WorkloadArgs {
    fn spec(&self) -> Result<WorkloadSpec, Error> {
        WorkloadSpec::new(self.n, self.alpha, self.beta)
    }
}

/// Participation count: a number or `max` for `ceil(n / b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct KArg(ParticipationCount);

impl FromStr for KArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "max" {
            return Ok(KArg(ParticipationCount::Max));
        }
        s.parse::<usize>()
            .map(|k| KArg(ParticipationCount::Fixed(k)))
            .map_err(|_| format!("expected a positive integer or `max`, got `{s}`"))
    }
}

#[derive(Args, Debug, Clone, Copy)]
struct ParticipationArgs {
    /// Minimum separation between participations (default: n).
    #[arg(long)]
    b: Option<usize>,
    /// Maximum participations: a number or `max` (default: 1).
    #[arg(long)]
    k: Option<KArg>,
}

impl ParticipationArgs {
    fn schema(&self, n: usize) -> Result<ParticipationSchema, Error> {
        let b = self.b.unwrap_or(n);
        let k = match self.k.map(|k| k.0) {
            None => 1,
            Some(ParticipationCount::Fixed(k)) => k,
            Some(ParticipationCount::Max) => max_participations(n, b),
        };
        ParticipationSchema::new(n, b, k)
    }
}

#[derive(Args, Debug)]
struct CoeffsArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    /// Bandwidth of the banded columns (default: n).
    #[arg(long)]
    p: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MatrixChoice {
    Identity,
    Sqrt,
    Bsr,
    Workload,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MethodChoice {
    Auto,
    ClosedForm,
    BandedDp,
    BruteForce,
    /// Every method that applies, one row each.
    All,
}

#[derive(Args, Debug)]
struct SensitivityArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    #[command(flatten)]
    participation: ParticipationArgs,
    #[arg(long, value_enum, default_value_t = MatrixChoice::Bsr)]
    matrix: MatrixChoice,
    /// BSR bandwidth (default: b, or n).
    #[arg(long)]
    p: Option<usize>,
    #[arg(long, value_enum, default_value_t = MethodChoice::Auto)]
    method: MethodChoice,
    /// Largest n the brute-force method accepts.
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_MAX_N)]
    max_enum_n: usize,
}

#[derive(Args, Debug)]
struct ErrorTableArgs {
    /// Comma-separated step counts; an empty list yields an empty table.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    beta: Vec<f64>,
    /// Minimum separation (default: n, i.e. single participation).
    #[arg(long)]
    b: Option<usize>,
    /// Participations: a number or `max` for `ceil(n / b)`.
    #[arg(long, default_value = "1")]
    k: KArg,
    /// BSR bandwidth (default: b, or n).
    #[arg(long)]
    p: Option<usize>,
    /// Comma-separated kinds out of bsr, sqrt, aof, id-c, id-b.
    #[arg(long, default_value = "bsr,sqrt,id-c,id-b")]
    kinds: String,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug, Clone, Copy)]
struct SolverArgs {
    /// AOF iteration cap.
    #[arg(long, default_value_t = 5000)]
    max_iters: usize,
    /// AOF relative-decrease stopping tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

impl SolverArgs {
    fn options(&self) -> AofOptions {
        AofOptions {
            max_iters: self.max_iters,
            tol: self.tol,
            ..AofOptions::default()
        }
    }
}

#[derive(Args, Debug)]
struct AofArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    #[command(flatten)]
    participation: ParticipationArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Write the optimized C as a dense CSV matrix.
    #[arg(long)]
    dump_c: Option<PathBuf>,
    /// Permit n above the default size cap.
    #[arg(long)]
    allow_large: bool,
    /// Suppress progress on standard error.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct NoiseSimArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    #[command(flatten)]
    participation: ParticipationArgs,
    #[arg(long, default_value = "bsr")]
    kind: FactorizationKind,
    /// BSR bandwidth or AOF band (default: b, or n).
    #[arg(long)]
    p: Option<usize>,
    /// Model dimension.
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Noise multiplier.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 2000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Singular | Error::NotPositiveDefinite => Failure::Numerical(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(format!("I/O error: {e}"))
    }
}

type CmdResult = Result<Table, Failure>;

fn default_p(p: Option<usize>, b: Option<usize>, n: usize) -> usize {
    p.or(b).unwrap_or(n).min(n)
}

fn cmd_coeffs(args: &CoeffsArgs) -> CmdResult {
    let spec = args.workload.spec()?;
    let p = args.p.unwrap_or(spec.n);
    let a = workload_column(&spec);
    let root = sqrt_coefficients(&spec);
    let c = bsr_c(&spec, p)?;
    let b = bsr_b(&spec, p)?;
    let mut t = Table::new(["j", "a", "r", "c_sqrt", "c_bsr", "b_bsr"]);
    for j in 0..spec.n {
        t.push(vec![
            j.into(),
            a.coeffs()[j].into(),
            root.r[j].into(),
            root.c[j].into(),
            c.coeffs()[j].into(),
            b.coeffs()[j].into(),
        ]);
    }
    Ok(t)
}

fn cmd_sensitivity(args: &SensitivityArgs) -> CmdResult {
    let spec = args.workload.spec()?;
    let n = spec.n;
    let schema = args.participation.schema(n)?;
    let p = (args.matrix == MatrixChoice::Bsr).then(|| default_p(args.p, args.participation.b, n));
    let column = match args.matrix {
        MatrixChoice::Identity => ToeplitzColumn::unit(n),
        MatrixChoice::Sqrt => ToeplitzColumn::new(sqrt_coefficients(&spec).c)?,
        MatrixChoice::Bsr => bsr_c(&spec, p.expect("set for bsr"))?,
        MatrixChoice::Workload => workload_column(&spec),
    };
    let handle = MatrixHandle::Toeplitz(column.clone());
    let limit = EnumerationLimit {
        max_n: args.max_enum_n,
    };

    let run = |method: MethodChoice| -> Result<(&'static str, f64, bool), Error> {
        Ok(match method {
            MethodChoice::Auto => {
                let s = sensitivity(&handle, &schema)?;
                (s.method.label(), s.value, s.exact)
            }
            MethodChoice::ClosedForm => (
                "closed-form",
                sens_toeplitz_monotone(&column, &schema)?,
                true,
            ),
            MethodChoice::BandedDp => ("banded-dp", sens_banded_dp(&handle, &schema)?, true),
            MethodChoice::BruteForce => {
                let g = sens_upper_bound_generic(&handle.to_dense(), &schema, limit)?;
                ("brute-force", g.value, g.exact)
            }
            MethodChoice::All => unreachable!("expanded by the caller"),
        })
    };
    let results: Vec<(&'static str, f64, bool)> = if args.method == MethodChoice::All {
        let mut rows = Vec::new();
        let mut last_err = None;
        for m in [
            MethodChoice::ClosedForm,
            MethodChoice::BandedDp,
            MethodChoice::BruteForce,
        ] {
            match run(m) {
                Ok(r) => rows.push(r),
                Err(e) => last_err = Some(e),
            }
        }
        match (rows.is_empty(), last_err) {
            (true, Some(e)) => return Err(e.into()),
            _ => rows,
        }
    } else {
        vec![run(args.method)?]
    };

    let matrix = args
        .matrix
        .to_possible_value()
        .expect("no skipped variants")
        .get_name()
        .to_string();
    let mut t = Table::new(["matrix", "n", "b", "k", "p", "method", "sens", "exact"]);
    for (method, value, exact) in results {
        t.push(vec![
            matrix.as_str().into(),
            n.into(),
            schema.b.into(),
            schema.k.into(),
            p.into(),
            method.into(),
            value.into(),
            exact.into(),
        ]);
    }
    Ok(t)
}

fn cmd_error_table(args: &ErrorTableArgs) -> CmdResult {
    let grid = ErrorGrid {
        ns: args.n.clone(),
        alphas: args.alpha.clone(),
        betas: args.beta.clone(),
        b: args.b,
        k: args.k.0,
        p: args.p,
        kinds: parse_kinds(&args.kinds)?,
    };
    if grid.kinds.contains(&FactorizationKind::Aof) {
        if let Some(&n) = grid.ns.iter().find(|&&n| n > DEFAULT_MAX_N) {
            return Err(Failure::Usage(format!(
                "AOF at n = {n} exceeds the size cap {DEFAULT_MAX_N}; use the aof subcommand with --allow-large"
            )));
        }
    }
    let cells = grid.cells()?;
    let rows = error_table(
        &cells,
        &ErrorTableOptions {
            aof: args.solver.options(),
        },
    );
    Ok(error_rows_to_table(&rows))
}

fn cmd_aof(args: &AofArgs) -> CmdResult {
    let spec = args.workload.spec()?;
    let n = spec.n;
    if n > DEFAULT_MAX_N && !args.allow_large {
        return Err(Failure::Usage(format!(
            "n = {n} exceeds the AOF size cap {DEFAULT_MAX_N} (dense O(n³) solver); pass --allow-large to proceed"
        )));
    }
    let schema = args.participation.schema(n)?;
    let problem = AofProblem::new(spec, schema.b.min(n))?;
    let quiet = args.quiet;
    let solution = aof::aof_solve_with_progress(&problem, &args.solver.options(), |p| {
        if !quiet && p.iteration % 100 == 0 {
            eprintln!(
                "iteration {:>5}  objective {}  step {:.3e}",
                p.iteration,
                format_sig(p.objective, 12),
                p.step
            );
        }
    });
    let fact = aof::factorization_from_solution(&problem, &solution)?;
    let report = expected_error(&fact, &schema)?;

    if let Some(path) = &args.dump_c {
        let mut w = BufWriter::new(File::create(path)?);
        for i in 0..n {
            let row: Vec<String> = (0..n)
                .map(|j| format_sig(solution.c.get(i, j), 12))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
    }

    let mut t = Table::new([
        "n",
        "alpha",
        "beta",
        "band",
        "b",
        "k",
        "iterations",
        "converged",
        "objective",
        "floor_applied",
        "sens",
        "exact_sens",
        "b_fro",
        "expected_error",
    ]);
    t.push(vec![
        n.into(),
        spec.alpha.into(),
        spec.beta.into(),
        problem.band.into(),
        schema.b.into(),
        schema.k.into(),
        solution.iterations.into(),
        solution.converged.into(),
        solution.objective_trace.into(),
        solution.floor_applied.into(),
        report.sens.into(),
        report.exact_sens.into(),
        report.b_frobenius.into(),
        report.expected_error.into(),
    ]);
    Ok(t)
}

fn cmd_noise_sim(args: &NoiseSimArgs) -> CmdResult {
    let spec = args.workload.spec()?;
    let n = spec.n;
    let schema = args.participation.schema(n)?;
    let p = match args.kind {
        FactorizationKind::Bsr | FactorizationKind::Aof => {
            Some(default_p(args.p, args.participation.b, n))
        }
        _ => None,
    };
    if args.kind == FactorizationKind::Aof && n > DEFAULT_MAX_N {
        return Err(Failure::Usage(format!(
            "AOF at n = {n} exceeds the size cap {DEFAULT_MAX_N}"
        )));
    }
    let fact = make_factorization(args.kind, &spec, p)?;
    let r = simulate_mechanism(&fact, &schema, args.d, args.sigma, args.trials, args.seed)?;
    let mut t = Table::new([
        "n",
        "b",
        "k",
        "kind",
        "p",
        "d",
        "sigma",
        "trials",
        "seed",
        "noise_scale",
        "estimate",
        "std_error",
        "analytic",
    ]);
    t.push(vec![
        n.into(),
        schema.b.into(),
        schema.k.into(),
        args.kind.label().into(),
        p.into(),
        args.d.into(),
        args.sigma.into(),
        args.trials.into(),
        Cell::Int(args.seed as i64),
        r.noise_scale.into(),
        r.estimate.into(),
        r.std_error.into(),
        r.analytic.into(),
    ]);
    Ok(t)
}

fn configure_threads(threads: Option<usize>) -> Result<(), Failure> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("cannot configure thread pool: {e}")))?;
    Ok(())
}

fn emit(table: &Table, format: Format, output: Option<&PathBuf>) -> Result<(), Failure> {
    let text = match format {
        Format::Csv => table.to_csv(),
        Format::Json => table.to_json(),
    };
    match output {
        Some(path) => std::fs::write(path, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    configure_threads(cli.threads)?;
    let table = match &cli.command {
        Command::Coeffs(a) => cmd_coeffs(a),
        Command::Sensitivity(a) => cmd_sensitivity(a),
        Command::ErrorTable(a) => cmd_error_table(a),
        Command::Aof(a) => cmd_aof(a),
        Command::NoiseSim(a) => cmd_noise_sim(a),
    }?;
    emit(&table, cli.format, cli.output.as_ref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
    }
}
