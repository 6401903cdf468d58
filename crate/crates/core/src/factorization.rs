//! Factorizations `A = B·C` of the workload matrix.
//!
//! The square root of `A_{α,β}` is itself lower-triangular Toeplitz with
//! coefficients `c_j = Σ_i (α^i r_i)(β^{j−i} r_{j−i})`, where
//! `r_i = |binom(−1/2, i)|`. The banded variant keeps the first `p` of
//! them and compensates in `B = A·C⁻¹`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aof::{self, AofOptions, AofProblem};
use crate::dense::DenseLowerTriangular;
use crate::error::{invalid, Error, Result};
use crate::toeplitz::{
    convolve_truncated, ltt_inverse, ltt_multiply, ConvStrategy, ToeplitzColumn,
};
use crate::workload::{workload_column, WorkloadSpec};

/// `r_i = |binom(−1/2, i)|` via `r_i = r_{i−1} (2i − 1) / (2i)`.
pub fn binomial_half_coefficients(n: usize) -> Vec<f64> {
    let mut r = Vec::with_capacity(n);
    let mut x = 1.0;
    for i in 0..n {
        if i > 0 {
            x *= (2 * i - 1) as f64 / (2 * i) as f64;
        }
        r.push(x);
    }
    r
}

/// The `r` and `c` sequences of the square root of `A_{α,β}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RootCoefficients {
    pub r: Vec<f64>,
    pub c: Vec<f64>,
}

/// First `len` square-root coefficients. The cost depends on `len` only, not
/// on `spec.n`.
pub fn root_coefficients_prefix(spec: &WorkloadSpec, len: usize) -> RootCoefficients {
    let r = binomial_half_coefficients(len);
    let scaled = |t: f64| -> Vec<f64> {
        let mut pow = 1.0;
        r.iter()
            .map(|ri| {
                let v = pow * ri;
                pow *= t;
                v
            })
            .collect()
    };
    // c_j = α^j Σ_i r_i r_{j−i} (β/α)^{j−i}. Convolving before applying α^j
    // keeps FFT round-off relative to each coefficient when α < 1.
    let mut c = if spec.beta == 0.0 {
        r.clone()
    } else {
        convolve_truncated(&r, &scaled(spec.beta / spec.alpha), len, ConvStrategy::Auto)
    };
    if let Some(c0) = c.first_mut() {
        *c0 = 1.0;
    }
    let mut pow = 1.0;
    for cj in &mut c {
        *cj *= pow;
        pow *= spec.alpha;
    }
    RootCoefficients { r, c }
}

/// Square-root coefficients of length `spec.n`.
pub fn sqrt_coefficients(spec: &WorkloadSpec) -> RootCoefficients {
    root_coefficients_prefix(spec, spec.n)
}

fn check_bandwidth(spec: &WorkloadSpec, p: usize) -> Result<()> {
    if p == 0 || p > spec.n {
        return Err(invalid(format!("bandwidth p = {p} outside 1..={}", spec.n)));
    }
    Ok(())
}

/// `C^{(p)}`: the square root with coefficients from index `p` on set to zero.
pub fn bsr_c(spec: &WorkloadSpec, p: usize) -> Result<ToeplitzColumn> {
    check_bandwidth(spec, p)?;
    let mut c = root_coefficients_prefix(spec, p).c;
    c.resize(spec.n, 0.0);
    ToeplitzColumn::banded(c, p)
}

/// `B^{(p)} = A (C^{(p)})⁻¹`.
pub fn bsr_b(spec: &WorkloadSpec, p: usize) -> Result<ToeplitzColumn> {
    let c = bsr_c(spec, p)?;
    let inv = ltt_inverse(&c)?;
    let b = ltt_multiply(&workload_column(spec), &inv)?;
    // A and C⁻¹ are both dense columns; drop the bandwidth tag.
    ToeplitzColumn::new(b.into_coeffs())
}

/// Which factorization a [`Factorization`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FactorizationKind {
    /// Banded square root; the bandwidth lives in the factorization.
    Bsr,
    SquareRoot,
    /// Approximately optimal factorization from the band-constrained program.
    Aof,
    /// `B = A`, `C = Id`: noise on the updates, as in DP-SGD.
    BaselineInputPerturbation,
    /// `B = Id`, `C = A`: noise on the iterates.
    BaselineOutputPerturbation,
}

impl FactorizationKind {
    pub const ALL: [FactorizationKind; 5] = [
        FactorizationKind::Bsr,
        FactorizationKind::SquareRoot,
        FactorizationKind::Aof,
        FactorizationKind::BaselineInputPerturbation,
        FactorizationKind::BaselineOutputPerturbation,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FactorizationKind::Bsr => "bsr",
            FactorizationKind::SquareRoot => "sqrt",
            FactorizationKind::Aof => "aof",
            FactorizationKind::BaselineInputPerturbation => "id-c",
            FactorizationKind::BaselineOutputPerturbation => "id-b",
        }
    }
}

impl fmt::Display for FactorizationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FactorizationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FactorizationKind::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| {
                invalid(format!(
                    "unknown factorization kind {s:?} (expected bsr, sqrt, aof, id-c or id-b)"
                ))
            })
    }
}

/// A factor stored either as a Toeplitz column or as a dense triangle.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixHandle {
    Toeplitz(ToeplitzColumn),
    Dense(DenseLowerTriangular),
}

impl MatrixHandle {
    pub fn order(&self) -> usize {
        match self {
            MatrixHandle::Toeplitz(t) => t.len(),
            MatrixHandle::Dense(d) => d.order(),
        }
    }

    pub fn to_dense(&self) -> DenseLowerTriangular {
        match self {
            MatrixHandle::Toeplitz(t) => t.to_dense(),
            MatrixHandle::Dense(d) => d.clone(),
        }
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        match self {
            MatrixHandle::Toeplitz(t) => t.frobenius_norm_sq(),
            MatrixHandle::Dense(d) => d.frobenius_norm_sq(),
        }
    }

    pub fn as_toeplitz(&self) -> Option<&ToeplitzColumn> {
        match self {
            MatrixHandle::Toeplitz(t) => Some(t),
            MatrixHandle::Dense(_) => None,
        }
    }

    /// Number of nonzero diagonals (1 for a diagonal matrix).
    pub fn bandwidth(&self) -> usize {
        match self {
            MatrixHandle::Toeplitz(t) => t.support_len(),
            MatrixHandle::Dense(d) => d.lower_bandwidth().max(1),
        }
    }

    fn scaled(&self, s: f64) -> MatrixHandle {
        match self {
            MatrixHandle::Toeplitz(t) => {
                let coeffs = t.coeffs().iter().map(|x| x * s).collect();
                MatrixHandle::Toeplitz(match t.bandwidth() {
                    Some(p) => ToeplitzColumn::banded(coeffs, p).expect("same shape"),
                    None => ToeplitzColumn::new(coeffs).expect("same shape"),
                })
            }
            MatrixHandle::Dense(d) => {
                MatrixHandle::Dense(DenseLowerTriangular::from_fn(d.order(), |i, j| {
                    d.get(i, j) * s
                }))
            }
        }
    }
}

/// A factorization `A_{α,β} = B·C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub kind: FactorizationKind,
    pub spec: WorkloadSpec,
    /// Bandwidth `p` for BSR, band constraint for AOF.
    pub bandwidth: Option<usize>,
    pub b: MatrixHandle,
    pub c: MatrixHandle,
}

impl Factorization {
    /// Relative Frobenius error `‖BC − A‖_F / ‖A‖_F`.
    pub fn reconstruction_error(&self) -> f64 {
        let a = workload_column(&self.spec);
        let a_norm = a.frobenius_norm_sq().sqrt();
        let diff_sq = match (&self.b, &self.c) {
            (MatrixHandle::Toeplitz(b), MatrixHandle::Toeplitz(c)) => {
                let prod = ltt_multiply(b, c).expect("factors share the order");
                let diff: Vec<f64> = prod
                    .coeffs()
                    .iter()
                    .zip(a.coeffs())
                    .map(|(x, y)| x - y)
                    .collect();
                ToeplitzColumn::new(diff)
                    .expect("n >= 1")
                    .frobenius_norm_sq()
            }
            (b, c) => {
                let prod = b
                    .to_dense()
                    .matmul(&c.to_dense())
                    .expect("factors share the order");
                let ad = a.to_dense();
                let n = self.spec.n;
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..=i {
                        let d = prod.get(i, j) - ad.get(i, j);
                        acc += d * d;
                    }
                }
                acc
            }
        };
        diff_sq.sqrt() / a_norm
    }

    /// Checks `BC = A` to relative Frobenius tolerance `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let err = self.reconstruction_error();
        if err.is_finite() && err <= tol {
            Ok(())
        } else {
            Err(invalid(format!(
                "{} factorization does not reconstruct A: relative error {err:e}",
                self.kind
            )))
        }
    }

    /// `(B/s, s·C)`, which leaves the expected error unchanged.
    pub fn rescaled(&self, s: f64) -> Factorization {
        Factorization {
            b: self.b.scaled(1.0 / s),
            c: self.c.scaled(s),
            ..self.clone()
        }
    }
}

/// Tolerance of the validity check performed on every assembled factorization.
pub const RECONSTRUCTION_TOL: f64 = 1e-8;

/// Assembles a factorization of `A_{α,β}`.
///
/// `p` is the bandwidth for [`FactorizationKind::Bsr`] (required) and the
/// band constraint for [`FactorizationKind::Aof`] (defaults to `n`); it must
/// be absent for the other kinds.
pub fn make_factorization(
    kind: FactorizationKind,
    spec: &WorkloadSpec,
    p: Option<usize>,
) -> Result<Factorization> {
    spec.validate()?;
    let n = spec.n;
    let fact = match (kind, p) {
        (FactorizationKind::Bsr, Some(p)) => Factorization {
            kind,
            spec: *spec,
            bandwidth: Some(p),
            c: MatrixHandle::Toeplitz(bsr_c(spec, p)?),
            b: MatrixHandle::Toeplitz(bsr_b(spec, p)?),
        },
        (FactorizationKind::Bsr, None) => {
            return Err(invalid("BSR factorization requires a bandwidth p"));
        }
        (FactorizationKind::Aof, band) => {
            let band = band.unwrap_or(n);
            let problem = AofProblem::new(*spec, band)?;
            let solution = aof::aof_solve(&problem, &AofOptions::default());
            aof::factorization_from_solution(&problem, &solution)?
        }
        (_, Some(_)) => {
            return Err(invalid(format!("factorization {kind} takes no bandwidth")));
        }
        (FactorizationKind::SquareRoot, None) => {
            let c = ToeplitzColumn::new(sqrt_coefficients(spec).c)?;
            Factorization {
                kind,
                spec: *spec,
                bandwidth: None,
                b: MatrixHandle::Toeplitz(c.clone()),
                c: MatrixHandle::Toeplitz(c),
            }
        }
        (FactorizationKind::BaselineInputPerturbation, None) => Factorization {
            kind,
            spec: *spec,
            bandwidth: None,
            b: MatrixHandle::Toeplitz(workload_column(spec)),
            c: MatrixHandle::Toeplitz(ToeplitzColumn::unit(n)),
        },
        (FactorizationKind::BaselineOutputPerturbation, None) => Factorization {
            kind,
            spec: *spec,
            bandwidth: None,
            b: MatrixHandle::Toeplitz(ToeplitzColumn::unit(n)),
            c: MatrixHandle::Toeplitz(workload_column(spec)),
        },
    };
    fact.validate(RECONSTRUCTION_TOL)?;
    Ok(fact)
}
