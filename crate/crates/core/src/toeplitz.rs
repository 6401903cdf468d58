//! Lower-triangular Toeplitz (LTT) matrices stored by their first column.
//!
//! An LTT matrix `M` with first column `(m₀, …, m_{n−1})` has entries
//! `M[i, j] = m_{i−j}` for `i ≥ j`. Products and inverses of LTT matrices are
//! again LTT, so every operation here works on columns only. All sums run in
//! ascending index order.

use std::collections::VecDeque;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::dense::DenseLowerTriangular;
use crate::error::{invalid, Error, Result};

/// Truncated convolutions at or above this output length use the FFT path.
pub const FFT_THRESHOLD: usize = 512;

/// How truncated convolutions are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvStrategy {
    /// Direct below [`FFT_THRESHOLD`], FFT above.
    #[default]
    Auto,
    Direct,
    Fft,
}

/// First column of a lower-triangular Toeplitz matrix, optionally banded.
#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzColumn {
    coeffs: Vec<f64>,
    bandwidth: Option<usize>,
}

impl ToeplitzColumn {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(invalid("Toeplitz column must have length >= 1"));
        }
        Ok(Self {
            coeffs,
            bandwidth: None,
        })
    }

    /// Banded column: entries at index `p` and beyond are forced to zero.
    pub fn banded(mut coeffs: Vec<f64>, p: usize) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(invalid("Toeplitz column must have length >= 1"));
        }
        if p == 0 || p > coeffs.len() {
            return Err(invalid(format!(
                "bandwidth {p} outside 1..={}",
                coeffs.len()
            )));
        }
        coeffs[p..].iter_mut().for_each(|x| *x = 0.0);
        Ok(Self {
            coeffs,
            bandwidth: Some(p),
        })
    }

    /// The identity matrix of order `n`.
    pub fn unit(n: usize) -> Self {
        let mut coeffs = vec![0.0; n.max(1)];
        coeffs[0] = 1.0;
        Self {
            coeffs,
            bandwidth: Some(1),
        }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// The declared bandwidth tag, if any.
    pub fn bandwidth(&self) -> Option<usize> {
        self.bandwidth
    }

    /// Number of leading coefficients that may be nonzero: the declared
    /// bandwidth, or one past the last nonzero entry.
    pub fn support_len(&self) -> usize {
        let last = self
            .coeffs
            .iter()
            .rposition(|&x| x != 0.0)
            .map_or(1, |i| i + 1);
        self.bandwidth.map_or(last, |p| p.min(last))
    }

    pub fn multiply(&self, other: &Self) -> Result<Self> {
        ltt_multiply(self, other)
    }

    pub fn inverse(&self) -> Result<Self> {
        ltt_inverse(self)
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        ltt_frobenius_norm_sq(self)
    }

    pub fn to_dense(&self) -> DenseLowerTriangular {
        let c = &self.coeffs;
        DenseLowerTriangular::from_fn(c.len(), |i, j| c[i - j])
    }

    /// Reads the first column back out of a dense matrix, checking that every
    /// diagonal is constant.
    pub fn from_dense(m: &DenseLowerTriangular) -> Result<Self> {
        let n = m.order();
        let coeffs: Vec<f64> = (0..n).map(|i| m.get(i, 0)).collect();
        for i in 0..n {
            for j in 0..=i {
                if m.get(i, j) != coeffs[i - j] {
                    return Err(invalid(format!(
                        "entry ({i}, {j}) breaks Toeplitz structure"
                    )));
                }
            }
        }
        Self::new(coeffs)
    }

    /// Squared Euclidean norm of column `i` (0-based).
    pub fn column_norm_sq(&self, i: usize) -> f64 {
        let len = self.coeffs.len().saturating_sub(i).min(self.support_len());
        self.coeffs[..len].iter().map(|x| x * x).sum()
    }

    /// Returns true when `m₀ ≥ m₁ ≥ … ≥ 0`, allowing violations up to `tol`.
    pub fn is_nonincreasing_nonnegative(&self, tol: f64) -> bool {
        check_monotone(&self.coeffs, tol, false).is_ok()
    }
}

/// Checks that the coefficients are non-negative and monotone (non-increasing,
/// or non-decreasing when `increasing` is set) up to `tol`.
pub(crate) fn check_monotone(c: &[f64], tol: f64, increasing: bool) -> Result<()> {
    for (i, &x) in c.iter().enumerate() {
        if x < -tol {
            return Err(Error::MonotonicityViolated { index: i });
        }
    }
    for i in 1..c.len() {
        let (prev, cur) = (c[i - 1], c[i]);
        let bad = if increasing {
            cur < prev - tol
        } else {
            cur > prev + tol
        };
        if bad {
            return Err(Error::MonotonicityViolated { index: i });
        }
    }
    Ok(())
}

fn check_len(a: &ToeplitzColumn, b: &ToeplitzColumn) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// First column of the product of two LTT matrices.
pub fn ltt_multiply(a: &ToeplitzColumn, b: &ToeplitzColumn) -> Result<ToeplitzColumn> {
    ltt_multiply_with(a, b, ConvStrategy::Auto)
}

pub fn ltt_multiply_with(
    a: &ToeplitzColumn,
    b: &ToeplitzColumn,
    strategy: ConvStrategy,
) -> Result<ToeplitzColumn> {
    check_len(a, b)?;
    let n = a.len();
    let sa = a.support_len();
    let sb = b.support_len();
    let coeffs = convolve_truncated(&a.coeffs[..sa], &b.coeffs[..sb], n, strategy);
    match (a.bandwidth, b.bandwidth) {
        (Some(pa), Some(pb)) => ToeplitzColumn::banded(coeffs, (pa + pb - 1).min(n)),
        _ => ToeplitzColumn::new(coeffs),
    }
}

/// First `n_out` coefficients of the linear convolution of `a` and `b`.
pub fn convolve_truncated(a: &[f64], b: &[f64], n_out: usize, strategy: ConvStrategy) -> Vec<f64> {
    let use_fft = match strategy {
        ConvStrategy::Direct => false,
        ConvStrategy::Fft => true,
        ConvStrategy::Auto => n_out >= FFT_THRESHOLD && a.len().min(b.len()) > 32,
    };
    if a.is_empty() || b.is_empty() {
        return vec![0.0; n_out];
    }
    if use_fft {
        convolve_fft(a, b, n_out)
    } else {
        convolve_direct(a, b, n_out)
    }
}

fn convolve_direct(a: &[f64], b: &[f64], n_out: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_out];
    for (j, o) in out.iter_mut().enumerate() {
        // c_j = Σ_i a_i b_{j−i}, restricted to the supports of a and b.
        let lo = j.saturating_sub(b.len() - 1);
        let hi = j.min(a.len() - 1);
        *o = (lo..=hi).map(|i| a[i] * b[j - i]).sum();
    }
    out
}

fn convolve_fft(a: &[f64], b: &[f64], n_out: usize) -> Vec<f64> {
    let la = a.len().min(n_out);
    let lb = b.len().min(n_out);
    let size = (la + lb - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let forward: Arc<dyn Fft<f64>> = planner.plan_fft_forward(size);
    let inverse: Arc<dyn Fft<f64>> = planner.plan_fft_inverse(size);

    let mut fa: Vec<Complex<f64>> = a[..la]
        .iter()
        .map(|&x| Complex::new(x, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut fb: Vec<Complex<f64>> = b[..lb]
        .iter()
        .map(|&x| Complex::new(x, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    forward.process(&mut fa);
    forward.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inverse.process(&mut fa);
    let scale = 1.0 / size as f64;
    let mut out: Vec<f64> = fa.iter().take(n_out).map(|z| z.re * scale).collect();
    out.resize(n_out, 0.0);
    out
}

/// First column of the inverse LTT matrix via the forward recurrence
/// `x₀ = 1/a₀`, `x_j = −(1/a₀) Σ_{i=1}^{j} a_i x_{j−i}`.
pub fn ltt_inverse(a: &ToeplitzColumn) -> Result<ToeplitzColumn> {
    let c = a.coeffs();
    let a0 = c[0];
    if a0 == 0.0 {
        return Err(Error::Singular);
    }
    let n = c.len();
    let support = a.support_len();
    let mut x = vec![0.0; n];
    x[0] = 1.0 / a0;
    for j in 1..n {
        let upper = j.min(support - 1);
        let mut acc = 0.0;
        for i in 1..=upper {
            acc += c[i] * x[j - i];
        }
        x[j] = -acc / a0;
    }
    ToeplitzColumn::new(x)
}

/// `‖M‖²_F = Σ_j (n − j) m_j²`.
pub fn ltt_frobenius_norm_sq(a: &ToeplitzColumn) -> f64 {
    let n = a.len();
    a.coeffs()
        .iter()
        .enumerate()
        .map(|(j, m)| (n - j) as f64 * m * m)
        .sum()
}

/// Row-by-row solver for `C Y = Z` with a banded LTT `C`.
///
/// Each pushed row `zᵢ` yields `yᵢ = (zᵢ − Σ_{j=1}^{min(i, p−1)} c_j y_{i−j}) / c₀`.
/// Only the last `p − 1` outputs are retained, so memory is `O(p·d)`
/// regardless of how many rows are processed.
#[derive(Debug, Clone)]
pub struct BandedSolver {
    c: Vec<f64>,
    history: VecDeque<Vec<f64>>,
    peak_history: usize,
}

impl BandedSolver {
    pub fn new(c: &ToeplitzColumn) -> Result<Self> {
        if c.coeffs()[0] == 0.0 {
            return Err(Error::Singular);
        }
        let p = c.bandwidth().unwrap_or(c.len()).min(c.support_len().max(1));
        Ok(Self {
            c: c.coeffs()[..p].to_vec(),
            history: VecDeque::with_capacity(p.saturating_sub(1)),
            peak_history: 0,
        })
    }

    /// Effective bandwidth `p`.
    pub fn bandwidth(&self) -> usize {
        self.c.len()
    }

    /// Number of past rows currently buffered.
    pub fn buffered(&self) -> usize {
        self.history.len()
    }

    /// Largest number of rows ever buffered.
    pub fn peak_buffered(&self) -> usize {
        self.peak_history
    }

    pub fn push(&mut self, z: &[f64]) -> Vec<f64> {
        let mut y = z.to_vec();
        // history[0] is y_{i−1}, history[1] is y_{i−2}, ...
        for (j, prev) in self.history.iter().enumerate() {
            let cj = self.c[j + 1];
            if cj != 0.0 {
                for (yk, pk) in y.iter_mut().zip(prev) {
                    *yk -= cj * pk;
                }
            }
        }
        let c0 = self.c[0];
        y.iter_mut().for_each(|v| *v /= c0);
        if self.c.len() > 1 {
            if self.history.len() == self.c.len() - 1 {
                self.history.pop_back();
            }
            self.history.push_front(y.clone());
            self.peak_history = self.peak_history.max(self.history.len());
        }
        y
    }
}

/// Solves `C Y = rhs` for a banded LTT `C`, with `rhs` given as `n` rows.
pub fn banded_forward_solve(c: &ToeplitzColumn, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if rhs.len() != c.len() {
        return Err(Error::DimensionMismatch {
            expected: c.len(),
            actual: rhs.len(),
        });
    }
    let mut solver = BandedSolver::new(c)?;
    Ok(rhs.iter().map(|z| solver.push(z)).collect())
}
