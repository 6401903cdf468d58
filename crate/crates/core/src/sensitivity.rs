//! Sensitivity of a noise-correlation matrix `C` under b-min-separated
//! participation.
//!
//! A participation pattern is an index set `π ⊆ {0, …, n−1}` with at most `k`
//! elements, any two of which are at least `b` apart. The sensitivity is
//! bounded by `max_π √(Σ_{i,j∈π} |(CᵀC)_{ij}|)`, with equality when `CᵀC` is
//! entrywise non-negative. Three exact shortcuts exist:
//!
//! * monotone non-negative Toeplitz `C`: the maximum is attained at
//!   `π = {0, b, 2b, …}`, giving a closed form;
//! * `C` with bandwidth at most `b`: columns in `π` have disjoint support, so
//!   the problem reduces to a dynamic program over column norms;
//! * `k = 1`: the largest column norm.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dense::DenseLowerTriangular;
use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::factorization::MatrixHandle;
use crate::toeplitz::{check_monotone, ToeplitzColumn};

/// Slack allowed in the monotonicity check of the closed form.
pub const MONOTONE_TOL: f64 = 1e-12;

/// Gram entries above `-EXACTNESS_TOL` count as non-negative.
pub const EXACTNESS_TOL: f64 = 1e-12;

/// Default cap on `n` for [`sens_upper_bound_generic`].
pub const DEFAULT_ENUMERATION_MAX_N: usize = 16;

/// Largest number of participation sets the automatic dispatch will enumerate.
pub const ENUMERATION_BUDGET: u128 = 5_000_000;

/// `n` steps, minimum separation `b`, at most `k` participations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipationSchema {
    pub n: usize,
    pub b: usize,
    pub k: usize,
}

impl ParticipationSchema {
    pub fn new(n: usize, b: usize, k: usize) -> Result<Self> {
        let s = Self { n, b, k };
        s.validate()?;
        Ok(s)
    }

    /// A single participation per data item.
    pub fn single(n: usize) -> Self {
        Self {
            n,
            b: n.max(1),
            k: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("n must be >= 1"));
        }
        if self.b == 0 {
            return Err(invalid("separation b must be >= 1"));
        }
        if self.k == 0 {
            return Err(invalid("participation count k must be >= 1"));
        }
        if 1 + (self.k - 1) * self.b > self.n {
            return Err(invalid(format!(
                "k = {} exceeds ceil(n / b) = {} for n = {}, b = {}",
                self.k,
                max_participations(self.n, self.b),
                self.n,
                self.b
            )));
        }
        Ok(())
    }
}

/// `ceil(n / b)`, the largest admissible `k`.
pub fn max_participations(n: usize, b: usize) -> usize {
    n.div_ceil(b.max(1))
}

/// How a sensitivity value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SensitivityMethod {
    ClosedForm,
    BandedDp,
    MaxColumnNorm,
    Enumeration,
}

impl SensitivityMethod {
    pub fn label(self) -> &'static str {
        match self {
            SensitivityMethod::ClosedForm => "closed-form",
            SensitivityMethod::BandedDp => "banded-dp",
            SensitivityMethod::MaxColumnNorm => "max-column-norm",
            SensitivityMethod::Enumeration => "brute-force",
        }
    }
}

/// A sensitivity value, flagged as exact or as an upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub value: f64,
    pub exact: bool,
    pub method: SensitivityMethod,
}

fn check_order(n: usize, schema: &ParticipationSchema) -> Result<()> {
    schema.validate()?;
    if n != schema.n {
        return Err(Error::DimensionMismatch {
            expected: schema.n,
            actual: n,
        });
    }
    Ok(())
}

/// `‖Σ_{j<k} M[·, jb]‖` for a Toeplitz column, without any precondition check.
fn shifted_column_sum_norm(m: &[f64], schema: &ParticipationSchema) -> f64 {
    let (b, k) = (schema.b, schema.k);
    m.iter()
        .enumerate()
        .map(|(i, _)| {
            let terms = (k - 1).min(i / b);
            let s: f64 = (0..=terms).map(|j| m[i - j * b]).sum();
            s * s
        })
        .sum::<f64>()
        .sqrt()
}

/// Closed-form sensitivity of a Toeplitz matrix with non-increasing,
/// non-negative coefficients: `‖Σ_{j=0}^{k−1} M[·, jb]‖`.
pub fn sens_toeplitz_closed_form(m: &ToeplitzColumn, schema: &ParticipationSchema) -> Result<f64> {
    check_order(m.len(), schema)?;
    check_monotone(m.coeffs(), MONOTONE_TOL, false)?;
    Ok(shifted_column_sum_norm(m.coeffs(), schema))
}

/// Closed form for any monotone non-negative Toeplitz column.
///
/// Non-decreasing columns (for example `A_{1,β}` with `β > 0`) also qualify:
/// every Gram entry `(MᵀM)_{ij}` is then non-increasing in both `i` and `j`,
/// so the componentwise-smallest admissible set `{0, b, …, (k−1)b}` is again
/// a maximizer.
pub fn sens_toeplitz_monotone(m: &ToeplitzColumn, schema: &ParticipationSchema) -> Result<f64> {
    check_order(m.len(), schema)?;
    check_monotone(m.coeffs(), MONOTONE_TOL, false)
        .or_else(|_| check_monotone(m.coeffs(), MONOTONE_TOL, true))?;
    Ok(shifted_column_sum_norm(m.coeffs(), schema))
}

/// Squared column norms of a factor.
pub fn column_norms_sq(c: &MatrixHandle) -> Vec<f64> {
    match c {
        MatrixHandle::Toeplitz(t) => {
            // Column i holds m_0 … m_{n−1−i}; accumulate prefix sums of m_j².
            let n = t.len();
            let mut prefix = Vec::with_capacity(n);
            let mut acc = 0.0;
            for x in t.coeffs() {
                acc += x * x;
                prefix.push(acc);
            }
            (0..n).map(|i| prefix[n - 1 - i]).collect()
        }
        MatrixHandle::Dense(d) => d.column_norms_sq(),
    }
}

/// Best total weight of an index set with at most `k` elements, pairwise at
/// least `b` apart.
fn max_separated_sum(w: &[f64], b: usize, k: usize) -> f64 {
    let n = w.len();
    // best[s][i]: optimum over positions >= i using at most s picks.
    let mut prev = vec![0.0; n + 1];
    for _ in 1..=k {
        let mut cur = vec![0.0f64; n + 1];
        for i in (0..n).rev() {
            let take = w[i] + prev.get(i + b).copied().unwrap_or(0.0);
            cur[i] = cur[i + 1].max(take);
        }
        prev = cur;
    }
    prev[0]
}

/// Sensitivity of a matrix whose bandwidth does not exceed `b`.
pub fn sens_banded_dp(c: &MatrixHandle, schema: &ParticipationSchema) -> Result<f64> {
    check_order(c.order(), schema)?;
    let bw = c.bandwidth();
    if bw > schema.b {
        return Err(Error::BandwidthExceedsSeparation {
            bandwidth: bw,
            b: schema.b,
        });
    }
    let w = column_norms_sq(c);
    Ok(max_separated_sum(&w, schema.b, schema.k).sqrt())
}

/// `Σ_{s=0}^{k} binom(n − (s−1)(b−1), s)`, the size of the participation
/// family (including the empty set).
pub fn participation_set_count(schema: &ParticipationSchema) -> u128 {
    let (n, b, k) = (schema.n as i128, schema.b as i128, schema.k as i128);
    let mut total: u128 = 0;
    for s in 0..=k {
        let top = n - (s - 1) * (b - 1);
        if top < s {
            break;
        }
        total = total.saturating_add(binomial(top as u128, s as u128));
    }
    total
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Iterator over every admissible participation set, 0-based, in
/// lexicographic order starting with the empty set.
#[derive(Debug, Clone)]
pub struct ParticipationSets {
    n: usize,
    b: usize,
    k: usize,
    current: Vec<usize>,
    started: bool,
    done: bool,
}

/// All index sets of size at most `k` with pairwise gaps of at least `b`.
pub fn enumerate_participation_sets(schema: &ParticipationSchema) -> ParticipationSets {
    ParticipationSets {
        n: schema.n,
        b: schema.b,
        k: schema.k,
        current: Vec::new(),
        started: false,
        done: false,
    }
}

impl Iterator for ParticipationSets {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(Vec::new());
        }
        // Extend with the smallest admissible index if room remains.
        let next_start = self.current.last().map_or(0, |&x| x + self.b);
        if self.current.len() < self.k && next_start < self.n {
            self.current.push(next_start);
            return Some(self.current.clone());
        }
        // Otherwise advance the last element, backtracking as needed.
        while let Some(last) = self.current.pop() {
            if last + 1 < self.n {
                self.current.push(last + 1);
                return Some(self.current.clone());
            }
        }
        self.done = true;
        None
    }
}

/// Value of the participation-set maximization, exact or as an upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenericSensitivity {
    pub value: f64,
    /// True when every entry of `CᵀC` is non-negative, making the bound tight.
    pub exact: bool,
}

/// Limit on brute-force enumeration size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationLimit {
    pub max_n: usize,
}

impl Default for EnumerationLimit {
    fn default() -> Self {
        Self {
            max_n: DEFAULT_ENUMERATION_MAX_N,
        }
    }
}

impl EnumerationLimit {
    pub fn unlimited() -> Self {
        Self { max_n: usize::MAX }
    }
}

/// `max_π √(Σ_{i,j∈π} |(CᵀC)_{ij}|)` by exhaustive enumeration.
pub fn sens_upper_bound_generic(
    c: &DenseLowerTriangular,
    schema: &ParticipationSchema,
    limit: EnumerationLimit,
) -> Result<GenericSensitivity> {
    sens_upper_bound_generic_with(c, schema, limit, Exec::default())
}

pub fn sens_upper_bound_generic_with(
    c: &DenseLowerTriangular,
    schema: &ParticipationSchema,
    limit: EnumerationLimit,
    exec: Exec,
) -> Result<GenericSensitivity> {
    check_order(c.order(), schema)?;
    if schema.n > limit.max_n {
        return Err(Error::TooLarge(format!(
            "n = {} exceeds the enumeration cap {}; raise the cap or use the \
             closed form / banded dynamic program",
            schema.n, limit.max_n
        )));
    }
    let gram = c.gram();
    Ok(enumerate_gram(&gram, schema, exec))
}

fn enumerate_gram(
    gram: &DMatrix<f64>,
    schema: &ParticipationSchema,
    exec: Exec,
) -> GenericSensitivity {
    let n = schema.n;
    let exact = gram.iter().all(|&g| g >= -EXACTNESS_TOL);
    let abs = gram.map(f64::abs);
    // Split the search by the first chosen index; the maximum is
    // order-independent, so the result is deterministic.
    let best_by_first = exec.map_range(n, |first| {
        let mut chosen = vec![first];
        let start = abs[(first, first)];
        search(&abs, schema, &mut chosen, start)
    });
    let best = best_by_first.into_iter().fold(0.0, f64::max);
    GenericSensitivity {
        value: best.sqrt(),
        exact,
    }
}

fn search(
    abs: &DMatrix<f64>,
    schema: &ParticipationSchema,
    chosen: &mut Vec<usize>,
    value: f64,
) -> f64 {
    let mut best = value;
    if chosen.len() == schema.k {
        return best;
    }
    let last = *chosen.last().expect("non-empty");
    for next in last + schema.b..schema.n {
        let mut add = abs[(next, next)];
        for &i in chosen.iter() {
            add += 2.0 * abs[(i, next)];
        }
        chosen.push(next);
        best = best.max(search(abs, schema, chosen, value + add));
        chosen.pop();
    }
    best
}

/// Exact sensitivity when one of the shortcuts applies, otherwise the
/// enumeration bound if the family is small enough.
pub fn sensitivity(c: &MatrixHandle, schema: &ParticipationSchema) -> Result<Sensitivity> {
    sensitivity_with(c, schema, Exec::default())
}

pub fn sensitivity_with(
    c: &MatrixHandle,
    schema: &ParticipationSchema,
    exec: Exec,
) -> Result<Sensitivity> {
    check_order(c.order(), schema)?;
    if let MatrixHandle::Toeplitz(t) = c {
        if let Ok(value) = sens_toeplitz_monotone(t, schema) {
            return Ok(Sensitivity {
                value,
                exact: true,
                method: SensitivityMethod::ClosedForm,
            });
        }
    }
    if c.bandwidth() <= schema.b {
        return Ok(Sensitivity {
            value: sens_banded_dp(c, schema)?,
            exact: true,
            method: SensitivityMethod::BandedDp,
        });
    }
    if schema.k == 1 {
        let value = column_norms_sq(c).into_iter().fold(0.0, f64::max).sqrt();
        return Ok(Sensitivity {
            value,
            exact: true,
            method: SensitivityMethod::MaxColumnNorm,
        });
    }
    let count = participation_set_count(schema);
    if count > ENUMERATION_BUDGET {
        return Err(Error::TooLarge(format!(
            "{count} participation sets for n = {}, b = {}, k = {}",
            schema.n, schema.b, schema.k
        )));
    }
    let g = enumerate_gram(&c.to_dense().gram(), schema, exec);
    Ok(Sensitivity {
        value: g.value,
        exact: g.exact,
        method: SensitivityMethod::Enumeration,
    })
}
