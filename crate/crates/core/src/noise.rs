//! Streaming correlated noise `ζ·C⁻¹Z` and a Monte Carlo check of the
//! expected-error formula.
//!
//! Gaussian variates come from ChaCha8 seeded with `seed_from_u64(seed)` and
//! are drawn in row-major `(row, coordinate)` order. [`gaussian_rows`]
//! reproduces the exact variates a stream consumes, for use as a dense oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analysis::expected_error_with;
use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::factorization::{Factorization, MatrixHandle};
use crate::sensitivity::ParticipationSchema;
use crate::toeplitz::{convolve_truncated, BandedSolver, ConvStrategy, ToeplitzColumn};

/// Draws `n` rows of `d` i.i.d. `N(0, s²)` variates in stream order.
pub fn gaussian_rows(seed: u64, n: usize, d: usize, s: f64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| draw_row(&mut rng, d, s)).collect()
}

fn draw_row(rng: &mut ChaCha8Rng, d: usize, s: f64) -> Vec<f64> {
    (0..d)
        .map(|_| s * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Single-owner generator of the rows `ζ·[C⁻¹Z]_{i,·}`.
///
/// Holds at most `p − 1` past rows, so memory is `O(p·d)` independent of `n`.
#[derive(Debug, Clone)]
pub struct NoiseStreamState {
    solver: BandedSolver,
    rng: ChaCha8Rng,
    n: usize,
    d: usize,
    step: usize,
    sigma: f64,
    zeta: f64,
    sens: f64,
}

impl NoiseStreamState {
    /// `c` is the noise-shaping column; its length is the number of rows `n`.
    pub fn new(
        c: &ToeplitzColumn,
        d: usize,
        sigma: f64,
        zeta: f64,
        sens: f64,
        seed: u64,
    ) -> Result<Self> {
        if d == 0 {
            return Err(invalid("noise dimension d must be at least 1"));
        }
        for (name, v) in [("sigma", sigma), ("zeta", zeta), ("sens", sens)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(Self {
            solver: BandedSolver::new(c)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
            n: c.len(),
            d,
            step: 0,
            sigma,
            zeta,
            sens,
        })
    }

    /// Standard deviation `s = σ·sens` of the entries of `Z`.
    pub fn noise_scale(&self) -> f64 {
        self.sigma * self.sens
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn remaining(&self) -> usize {
        self.n - self.step
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn bandwidth(&self) -> usize {
        self.solver.bandwidth()
    }

    /// Rows currently buffered; equals `min(step, p − 1)`.
    pub fn buffered(&self) -> usize {
        self.solver.buffered()
    }

    pub fn peak_buffered(&self) -> usize {
        self.solver.peak_buffered()
    }

    /// Emits the next row `ζ·yᵢ`.
    pub fn next_noise_row(&mut self) -> Result<Vec<f64>> {
        if self.step >= self.n {
            return Err(Error::StreamExhausted(self.n));
        }
        let s = self.noise_scale();
        let z = draw_row(&mut self.rng, self.d, s);
        let mut y = self.solver.push(&z);
        self.step += 1;
        y.iter_mut().for_each(|v| *v *= self.zeta);
        Ok(y)
    }
}

impl Iterator for NoiseStreamState {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        self.next_noise_row().ok()
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining(), Some(self.remaining()))
    }
}

/// Result of [`simulate_mechanism`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub trials: usize,
    pub d: usize,
    pub sigma: f64,
    /// Noise scale `s = σ·sens(C)` used for `Z`.
    pub noise_scale: f64,
    /// `sqrt(mean ‖BZ‖²_F / (n·d))`.
    pub estimate: f64,
    /// Delta-method standard error of `estimate`.
    pub std_error: f64,
    /// `σ·E(B, C)`, the value `estimate` targets.
    pub analytic: f64,
    /// Per-coordinate mean of `Θ^MF − Θ = −BZ`, row-major `n × d`.
    pub mean_residual: Vec<f64>,
    /// Standard error of each entry of `mean_residual`.
    pub residual_std_error: Vec<f64>,
}

impl MonteCarloReport {
    /// `|estimate − analytic|` in units of the standard error (0 when both agree exactly).
    pub fn z_score(&self) -> f64 {
        let diff = (self.estimate - self.analytic).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / self.std_error
        }
    }
}

/// Trials are processed in fixed-size chunks so the reduction order, and
/// hence the result, does not depend on scheduling.
const CHUNK: usize = 32;

#[derive(Clone)]
struct Partial {
    sq: f64,
    sq2: f64,
    sum: Vec<f64>,
    sum2: Vec<f64>,
}

impl Partial {
    fn zeros(len: usize) -> Self {
        Self {
            sq: 0.0,
            sq2: 0.0,
            sum: vec![0.0; len],
            sum2: vec![0.0; len],
        }
    }

    fn merge(&mut self, other: &Partial) {
        self.sq += other.sq;
        self.sq2 += other.sq2;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sum2.iter_mut().zip(&other.sum2) {
            *a += b;
        }
    }
}

/// Row-major `B·Z` for `Z` given as `n` rows of width `d`.
fn apply_b(b: &MatrixHandle, z: &[Vec<f64>], d: usize) -> Vec<f64> {
    let n = z.len();
    let mut out = vec![0.0; n * d];
    match b {
        MatrixHandle::Toeplitz(t) => {
            let coeffs = &t.coeffs()[..t.support_len().max(1)];
            for k in 0..d {
                let col: Vec<f64> = z.iter().map(|r| r[k]).collect();
                let y = convolve_truncated(coeffs, &col, n, ConvStrategy::Auto);
                for (i, v) in y.into_iter().enumerate() {
                    out[i * d + k] = v;
                }
            }
        }
        MatrixHandle::Dense(m) => {
            for i in 0..n {
                let dst = &mut out[i * d..(i + 1) * d];
                for (&bij, zrow) in m.row(i).iter().zip(z) {
                    if bij != 0.0 {
                        for (o, zv) in dst.iter_mut().zip(zrow) {
                            *o += bij * zv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Monte Carlo estimate of `sqrt(E‖BZ‖²_F / (n·d))` with `Z ~ N(0, s²)`,
/// `s = σ·sens(C)`.
///
/// Trial `t` draws from ChaCha8 seeded with `seed` on stream `t`, so results
/// are identical for every execution strategy.
pub fn simulate_mechanism(
    f: &Factorization,
    schema: &ParticipationSchema,
    d: usize,
    sigma: f64,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloReport> {
    simulate_mechanism_with(f, schema, d, sigma, trials, seed, Exec::default())
}

pub fn simulate_mechanism_with(
    f: &Factorization,
    schema: &ParticipationSchema,
    d: usize,
    sigma: f64,
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<MonteCarloReport> {
    if trials == 0 {
        return Err(invalid("trials must be at least 1"));
    }
    if d == 0 {
        return Err(invalid("noise dimension d must be at least 1"));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(invalid(format!(
            "sigma must be finite and non-negative, got {sigma}"
        )));
    }
    let report = expected_error_with(f, schema, exec)?;
    let s = sigma * report.sens;
    let n = f.spec.n;
    let len = n * d;

    let chunks = trials.div_ceil(CHUNK);
    let partials = exec.map_range(chunks, |ci| {
        let mut acc = Partial::zeros(len);
        for t in ci * CHUNK..((ci + 1) * CHUNK).min(trials) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let z: Vec<Vec<f64>> = (0..n).map(|_| draw_row(&mut rng, d, s)).collect();
            let bz = apply_b(&f.b, &z, d);
            let sq: f64 = bz.iter().map(|v| v * v).sum::<f64>() / len as f64;
            acc.sq += sq;
            acc.sq2 += sq * sq;
            for (i, v) in bz.iter().enumerate() {
                acc.sum[i] -= v;
                acc.sum2[i] += v * v;
            }
        }
        acc
    });
    let mut total = Partial::zeros(len);
    for p in &partials {
        total.merge(p);
    }

    let t = trials as f64;
    let mean_sq = total.sq / t;
    let var_sq = if trials > 1 {
        ((total.sq2 - t * mean_sq * mean_sq) / (t - 1.0)).max(0.0)
    } else {
        0.0
    };
    let estimate = mean_sq.sqrt();
    let std_error = if estimate > 0.0 {
        (var_sq / t).sqrt() / (2.0 * estimate)
    } else {
        0.0
    };
    let mean_residual: Vec<f64> = total.sum.iter().map(|v| v / t).collect();
    let residual_std_error = total
        .sum2
        .iter()
        .zip(&mean_residual)
        .map(|(s2, m)| {
            if trials > 1 {
                (((s2 - t * m * m) / (t - 1.0)).max(0.0) / t).sqrt()
            } else {
                0.0
            }
        })
        .collect();

    Ok(MonteCarloReport {
        trials,
        d,
        sigma,
        noise_scale: s,
        estimate,
        std_error,
        analytic: sigma * report.expected_error,
        mean_residual,
        residual_std_error,
    })
}
