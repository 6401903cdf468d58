//! Expected approximation error `E(B, C) = sens(C) · ‖B‖_F / √n` and the
//! analytic reference curves it is compared against.
//!
//! The clip norm is fixed to 1; errors for another clip norm scale linearly.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::aof::{self, AofOptions, AofProblem};
use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::factorization::{make_factorization, Factorization, FactorizationKind};
use crate::sensitivity::{
    max_participations, sensitivity_with, ParticipationSchema, SensitivityMethod,
};
use crate::table::{Cell, Table};
use crate::workload::WorkloadSpec;

/// Analytic reference values for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceBounds {
    /// Lower bound valid for every factorization with `CᵀC ≥ 0`.
    pub lower: f64,
    /// Upper bound on the square-root error (single participation only).
    pub sqrt_upper: Option<f64>,
    /// Lower bound on the square-root error (single participation only).
    pub sqrt_lower: Option<f64>,
    pub baselines: BaselineAsymptotics,
}

/// Baseline error formulas: leading-order values for `k = 1`, lower bounds
/// for repeated participation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineAsymptotics {
    /// `B = A`, `C = Id`.
    pub input_perturbation: f64,
    /// `B = Id`, `C = A`.
    pub output_perturbation: f64,
    /// Whether the values are lower bounds rather than leading-order terms.
    pub lower_bounds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub spec: WorkloadSpec,
    pub schema: ParticipationSchema,
    pub kind: FactorizationKind,
    pub bandwidth: Option<usize>,
    pub sens: f64,
    pub exact_sens: bool,
    pub sens_method: SensitivityMethod,
    pub b_frobenius: f64,
    pub expected_error: f64,
    pub bounds: ReferenceBounds,
}

/// Evaluates the expected approximation error of a factorization.
pub fn expected_error(f: &Factorization, schema: &ParticipationSchema) -> Result<ErrorReport> {
    expected_error_with(f, schema, Exec::default())
}

pub fn expected_error_with(
    f: &Factorization,
    schema: &ParticipationSchema,
    exec: Exec,
) -> Result<ErrorReport> {
    schema.validate()?;
    if schema.n != f.spec.n {
        return Err(Error::DimensionMismatch {
            expected: f.spec.n,
            actual: schema.n,
        });
    }
    let sens = sensitivity_with(&f.c, schema, exec)?;
    let b_frobenius = f.b.frobenius_norm_sq().sqrt();
    Ok(ErrorReport {
        spec: f.spec,
        schema: *schema,
        kind: f.kind,
        bandwidth: f.bandwidth,
        sens: sens.value,
        exact_sens: sens.exact,
        sens_method: sens.method,
        b_frobenius,
        expected_error: sens.value * b_frobenius / (f.spec.n as f64).sqrt(),
        bounds: reference_bounds(&f.spec, schema),
    })
}

/// `√k · log(n + 1) / π` without weight decay, `√k` with it.
pub fn lower_bound(spec: &WorkloadSpec, schema: &ParticipationSchema) -> f64 {
    let sk = (schema.k as f64).sqrt();
    if spec.is_undecayed() {
        sk * (spec.n as f64 + 1.0).ln() / PI
    } else {
        sk
    }
}

/// Upper bound on the single-participation error of the square root:
/// `(1 + log n) / (1 − β)²` for `α = 1`, `log(1/(1 − α²)) / (α − β)²` otherwise.
pub fn sqrt_error_upper_bound(spec: &WorkloadSpec) -> f64 {
    let WorkloadSpec { n, alpha, beta } = *spec;
    if spec.is_undecayed() {
        (1.0 + (n as f64).ln()) / (1.0 - beta).powi(2)
    } else {
        (1.0 / (1.0 - alpha * alpha)).ln() / (alpha - beta).powi(2)
    }
}

/// Companion lower bound: `max{1, (log(n + 1) − 1)/4}` for `α = 1`, 1 otherwise.
pub fn sqrt_error_lower_bound(spec: &WorkloadSpec) -> f64 {
    if spec.is_undecayed() {
        (((spec.n as f64 + 1.0).ln() - 1.0) / 4.0).max(1.0)
    } else {
        1.0
    }
}

pub fn baseline_asymptotics(
    spec: &WorkloadSpec,
    schema: &ParticipationSchema,
) -> BaselineAsymptotics {
    let WorkloadSpec { n, alpha, beta } = *spec;
    let n = n as f64;
    let k = schema.k as f64;
    if schema.k == 1 {
        if spec.is_undecayed() {
            BaselineAsymptotics {
                input_perturbation: n.sqrt() / (SQRT_2 * (1.0 - beta)),
                output_perturbation: n.sqrt() / (1.0 - beta),
                lower_bounds: false,
            }
        } else {
            let ab = alpha * beta;
            let v =
                ((1.0 + ab) / ((1.0 - ab) * (1.0 - alpha * alpha) * (1.0 - beta * beta))).sqrt();
            BaselineAsymptotics {
                input_perturbation: v,
                output_perturbation: v,
                lower_bounds: false,
            }
        }
    } else if spec.is_undecayed() {
        BaselineAsymptotics {
            input_perturbation: (n * k / 2.0).sqrt(),
            output_perturbation: k * n.sqrt() / 3f64.sqrt(),
            lower_bounds: true,
        }
    } else {
        BaselineAsymptotics {
            input_perturbation: k.sqrt(),
            output_perturbation: k.sqrt(),
            lower_bounds: true,
        }
    }
}

pub fn reference_bounds(spec: &WorkloadSpec, schema: &ParticipationSchema) -> ReferenceBounds {
    let single = schema.k == 1;
    ReferenceBounds {
        lower: lower_bound(spec, schema),
        sqrt_upper: single.then(|| sqrt_error_upper_bound(spec)),
        sqrt_lower: single.then(|| sqrt_error_lower_bound(spec)),
        baselines: baseline_asymptotics(spec, schema),
    }
}

/// One configuration of an error table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorCell {
    pub spec: WorkloadSpec,
    pub schema: ParticipationSchema,
    pub kind: FactorizationKind,
    /// BSR bandwidth or AOF band; ignored by the other kinds.
    pub p: Option<usize>,
}

/// How `k` is chosen for each `n` in a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParticipationCount {
    Fixed(usize),
    /// `k = ceil(n / b)`.
    Max,
}

/// Cross-product grid description.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorGrid {
    pub ns: Vec<usize>,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// Minimum separation; `None` means `b = n` (single participation).
    pub b: Option<usize>,
    pub k: ParticipationCount,
    /// BSR bandwidth; defaults to `b`, or `n` when `b` is absent.
    pub p: Option<usize>,
    pub kinds: Vec<FactorizationKind>,
}

impl ErrorGrid {
    pub fn cells(&self) -> Result<Vec<ErrorCell>> {
        let mut cells = Vec::new();
        for &n in &self.ns {
            for &alpha in &self.alphas {
                for &beta in &self.betas {
                    let spec = WorkloadSpec::new(n, alpha, beta)?;
                    let b = self.b.unwrap_or(n);
                    let k = match self.k {
                        ParticipationCount::Fixed(k) => k,
                        ParticipationCount::Max => max_participations(n, b),
                    };
                    let schema = ParticipationSchema::new(n, b, k)?;
                    for &kind in &self.kinds {
                        let p = match kind {
                            FactorizationKind::Bsr => Some(self.p.unwrap_or(b).min(n)),
                            FactorizationKind::Aof => Some(b.min(n)),
                            _ => None,
                        };
                        cells.push(ErrorCell {
                            spec,
                            schema,
                            kind,
                            p,
                        });
                    }
                }
            }
        }
        Ok(cells)
    }
}

/// Outcome of one table cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub cell: ErrorCell,
    pub report: std::result::Result<ErrorReport, String>,
    /// Solver convergence for AOF rows.
    pub converged: Option<bool>,
}

impl ErrorRow {
    pub fn status(&self) -> String {
        match (&self.report, self.converged) {
            (Err(e), _) => format!("error: {e}"),
            (Ok(_), Some(false)) => "not-converged".to_string(),
            (Ok(_), _) => "ok".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorTableOptions {
    pub aof: AofOptions,
}

fn evaluate_cell(cell: &ErrorCell, options: &ErrorTableOptions) -> ErrorRow {
    let run = || -> Result<(ErrorReport, Option<bool>)> {
        let (fact, converged) = if cell.kind == FactorizationKind::Aof {
            let band = cell.p.unwrap_or(cell.spec.n);
            let problem = AofProblem::new(cell.spec, band)?;
            let solution = aof::aof_solve(&problem, &options.aof);
            (
                aof::factorization_from_solution(&problem, &solution)?,
                Some(solution.converged),
            )
        } else {
            let p = if cell.kind == FactorizationKind::Bsr {
                cell.p
            } else {
                None
            };
            (make_factorization(cell.kind, &cell.spec, p)?, None)
        };
        // Cells already run in parallel; keep each one sequential.
        let report = expected_error_with(&fact, &cell.schema, Exec::Sequential)?;
        Ok((report, converged))
    };
    match run() {
        Ok((report, converged)) => ErrorRow {
            cell: *cell,
            report: Ok(report),
            converged,
        },
        Err(e) => ErrorRow {
            cell: *cell,
            report: Err(e.to_string()),
            converged: None,
        },
    }
}

/// Evaluates every cell; failures are recorded in their row. Rows are sorted
/// by `(n, kind)`, ties keeping grid order.
pub fn error_table(cells: &[ErrorCell], options: &ErrorTableOptions) -> Vec<ErrorRow> {
    error_table_with(cells, options, Exec::default())
}

pub fn error_table_with(
    cells: &[ErrorCell],
    options: &ErrorTableOptions,
    exec: Exec,
) -> Vec<ErrorRow> {
    let mut rows = exec.map_slice(cells, |c| evaluate_cell(c, options));
    rows.sort_by_key(|r| (r.cell.spec.n, r.cell.kind));
    rows
}

/// Column names of the tabular error report.
pub const ERROR_TABLE_COLUMNS: [&str; 13] = [
    "n",
    "alpha",
    "beta",
    "b",
    "k",
    "p",
    "kind",
    "sens",
    "b_fro",
    "expected_error",
    "lower_bound",
    "exact_sens",
    "status",
];

pub fn error_rows_to_table(rows: &[ErrorRow]) -> Table {
    let mut table = Table::new(ERROR_TABLE_COLUMNS);
    for row in rows {
        let c = &row.cell;
        let (sens, b_fro, err, exact) = match &row.report {
            Ok(r) => (
                Cell::from(r.sens),
                Cell::from(r.b_frobenius),
                Cell::from(r.expected_error),
                Cell::from(r.exact_sens),
            ),
            Err(_) => (Cell::Empty, Cell::Empty, Cell::Empty, Cell::Empty),
        };
        table.push(vec![
            c.spec.n.into(),
            c.spec.alpha.into(),
            c.spec.beta.into(),
            c.schema.b.into(),
            c.schema.k.into(),
            c.p.into(),
            c.kind.label().into(),
            sens,
            b_fro,
            err,
            lower_bound(&c.spec, &c.schema).into(),
            exact,
            row.status().into(),
        ]);
    }
    table
}

/// Parses a comma-separated list of factorization kinds.
pub fn parse_kinds(list: &str) -> Result<Vec<FactorizationKind>> {
    let kinds: Vec<FactorizationKind> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if kinds.is_empty() {
        return Err(invalid("no factorization kinds given"));
    }
    Ok(kinds)
}
