//! The SGD workload matrix `A_{α,β}` for weight decay `α` and momentum `β`.
//!
//! Iterates of SGD with momentum and weight decay are linear in the update
//! vectors, with coefficients `a_j = Σ_{i=0}^{j} α^i β^{j−i}`. The resulting
//! matrix is lower-triangular Toeplitz and factors as `E_α · E_β` where
//! `E_t` has first column `(1, t, t², …)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::toeplitz::ToeplitzColumn;

/// Below this gap `α − β` the ratio form of `a_j` is replaced by the sum.
const DEGENERATE_GAP: f64 = 1e-12;

/// Number of steps `n`, weight decay `α ∈ (0, 1]` and momentum `β ∈ [0, α)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl WorkloadSpec {
    pub fn new(n: usize, alpha: f64, beta: f64) -> Result<Self> {
        let spec = Self { n, alpha, beta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("n must be >= 1"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid(format!(
                "alpha = {} must lie in (0, 1]",
                self.alpha
            )));
        }
        if !(self.beta >= 0.0 && self.beta < 1.0) {
            return Err(invalid(format!("beta = {} must lie in [0, 1)", self.beta)));
        }
        if self.beta >= self.alpha {
            return Err(invalid(format!(
                "beta = {} must be smaller than alpha = {}",
                self.beta, self.alpha
            )));
        }
        Ok(())
    }

    /// True when there is no weight decay.
    pub fn is_undecayed(&self) -> bool {
        self.alpha == 1.0
    }
}

/// First column of `A_{α,β}`.
pub fn workload_column(spec: &WorkloadSpec) -> ToeplitzColumn {
    let WorkloadSpec { n, alpha, beta } = *spec;
    let coeffs = if alpha - beta < DEGENERATE_GAP {
        // a_j = Σ_{i=0}^{j} α^i β^{j−i}, built as a_j = β a_{j−1} + α^j.
        let mut out = Vec::with_capacity(n);
        let mut prev = 0.0;
        let mut apow = 1.0;
        for _ in 0..n {
            prev = beta * prev + apow;
            out.push(prev);
            apow *= alpha;
        }
        out
    } else {
        let mut out = Vec::with_capacity(n);
        let mut apow = alpha;
        let mut bpow = beta;
        for _ in 0..n {
            out.push((apow - bpow) / (alpha - beta));
            apow *= alpha;
            bpow *= beta;
        }
        out
    };
    ToeplitzColumn::new(coeffs).expect("n >= 1")
}

/// First column of `E_t`: `(1, t, t², …, t^{n−1})`.
pub fn geometric_column(t: f64, n: usize) -> Result<ToeplitzColumn> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(format!("t = {t} must lie in [0, 1]")));
    }
    if n == 0 {
        return Err(invalid("n must be >= 1"));
    }
    let mut coeffs = Vec::with_capacity(n);
    let mut x = 1.0;
    for _ in 0..n {
        coeffs.push(x);
        x *= t;
    }
    ToeplitzColumn::new(coeffs)
}

/// Closed-form `i`-th largest singular value (1-based) of the all-ones
/// lower-triangular matrix `E₁` of order `n`:
/// `σ_i = 1 / (2 sin(π (i − ½) / (2n + 1)))`.
pub fn e1_singular_value(i: usize, n: usize) -> Result<f64> {
    if n == 0 || i == 0 || i > n {
        return Err(invalid(format!("index {i} outside 1..={n}")));
    }
    let angle = (i as f64 - 0.5) / (n as f64 + 0.5) * PI / 2.0;
    Ok(1.0 / (2.0 * angle.sin()))
}

/// Lower bound on the nuclear norm `‖A_{α,β}‖_*`.
///
/// For `α < 1` the trace gives `‖A‖_* ≥ n`. For `α = 1` the bound is
/// `n log(n + 1) / (π (1 + β))`, from the closed-form singular values of `E₁`.
pub fn nuclear_norm_lower_bound(spec: &WorkloadSpec) -> f64 {
    let n = spec.n as f64;
    if spec.is_undecayed() {
        n * (n + 1.0).ln() / (PI * (1.0 + spec.beta))
    } else {
        n
    }
}
