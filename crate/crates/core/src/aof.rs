//! Approximately optimal factorization (AOF).
//!
//! Minimizes `trace(AᵀA S⁻¹)` over symmetric positive definite `S` with unit
//! diagonal and `S[i, j] = 0` for `|i − j| ≥ band`, by projected gradient
//! descent. The step size is found by backtracking until the trial point is
//! positive definite and lowers the objective; after every accepted step it
//! is allowed to grow again. `C` is then the lower-triangular factor with
//! `CᵀC = S`, after lifting eigenvalues of `S` to a floor of `√(1/n)`.
//!
//! With unit diagonal every column of `C` has norm one, so for a banded `C`
//! the expected error is `√(k · trace(AᵀA S⁻¹) / n)`.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::dense::DenseLowerTriangular;
use crate::error::{invalid, Error, Result};
use crate::factorization::{Factorization, FactorizationKind, MatrixHandle, RECONSTRUCTION_TOL};
use crate::workload::{workload_column, WorkloadSpec};

/// Largest `n` the CLI accepts without an explicit override.
pub const DEFAULT_MAX_N: usize = 2000;

/// The optimization problem for one workload and band constraint.
#[derive(Debug, Clone)]
pub struct AofProblem {
    pub spec: WorkloadSpec,
    pub band: usize,
    /// `AᵀA`.
    pub gram: DMatrix<f64>,
    a: DMatrix<f64>,
}

impl AofProblem {
    pub fn new(spec: WorkloadSpec, band: usize) -> Result<Self> {
        spec.validate()?;
        if band == 0 || band > spec.n {
            return Err(invalid(format!("band {band} outside 1..={}", spec.n)));
        }
        let a = workload_column(&spec).to_dense().to_matrix();
        let gram = a.transpose() * &a;
        Ok(Self {
            spec,
            band,
            gram,
            a,
        })
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    /// The dense workload matrix `A`.
    pub fn workload(&self) -> &DMatrix<f64> {
        &self.a
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        i.abs_diff(j) < self.band
    }

    /// Zeroes the diagonal and every entry outside the band.
    fn project_direction(&self, g: &mut DMatrix<f64>) {
        let n = self.n();
        for j in 0..n {
            for i in 0..n {
                if i == j || !self.in_band(i, j) {
                    g[(i, j)] = 0.0;
                }
            }
        }
    }

    /// Whether `s` has unit diagonal (to `tol`) and exact zeros off the band.
    pub fn is_feasible(&self, s: &DMatrix<f64>, tol: f64) -> bool {
        let n = self.n();
        (0..n).all(|i| {
            (s[(i, i)] - 1.0).abs() <= tol && (0..n).all(|j| self.in_band(i, j) || s[(i, j)] == 0.0)
        })
    }
}

/// Where the iteration starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialPoint {
    /// `S₀ = Id`, feasible for every band.
    #[default]
    Identity,
    /// The band-truncated square root with columns rescaled to unit norm.
    BandedSqrt,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AofOptions {
    pub max_iters: usize,
    /// Relative objective decrease over `window` accepted steps that counts
    /// as converged.
    pub tol: f64,
    pub window: usize,
    pub initial: InitialPoint,
    pub initial_step: f64,
    pub backtrack: f64,
    pub growth: f64,
    pub max_backtracks: usize,
    /// Eigenvalue floor for extraction; `None` means `√(1/n)`.
    pub floor: Option<f64>,
}

impl Default for AofOptions {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            tol: 1e-8,
            window: 5,
            initial: InitialPoint::Identity,
            initial_step: 1.0,
            backtrack: 0.5,
            growth: 2.0,
            max_backtracks: 60,
            floor: None,
        }
    }
}

/// Progress snapshot passed to the observer after each accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AofProgress {
    pub iteration: usize,
    pub objective: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct AofSolution {
    /// Optimized `S` before the eigenvalue floor.
    pub s: DMatrix<f64>,
    /// Lower-triangular `C` with `CᵀC` equal to the floored `S`.
    pub c: DenseLowerTriangular,
    pub objective_trace: f64,
    /// Objective after every accepted step, starting with the initial point.
    pub objective_history: Vec<f64>,
    /// Number of accepted steps.
    pub iterations: usize,
    pub converged: bool,
    pub floor_applied: bool,
}

fn cholesky(s: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(s.clone())
}

/// `trace(G S⁻¹)`, evaluated through a Cholesky solve.
pub fn aof_objective(s: &DMatrix<f64>, gram: &DMatrix<f64>) -> Result<f64> {
    check_square(s, gram)?;
    let chol = cholesky(s).ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.solve(gram).trace())
}

/// Gradient of `S ↦ trace(G S⁻¹)`: `−S⁻¹ G S⁻¹`, symmetrized.
pub fn aof_gradient(s: &DMatrix<f64>, gram: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(s, gram)?;
    let chol = cholesky(s).ok_or(Error::NotPositiveDefinite)?;
    let w = chol.solve(gram);
    let g = -chol.solve(&w.transpose());
    Ok((&g + g.transpose()) * 0.5)
}

fn check_square(s: &DMatrix<f64>, gram: &DMatrix<f64>) -> Result<()> {
    if !s.is_square() || s.shape() != gram.shape() {
        return Err(Error::DimensionMismatch {
            expected: gram.nrows(),
            actual: s.nrows(),
        });
    }
    Ok(())
}

/// `trace(AᵀA S⁻¹) = ‖L⁻¹Aᵀ‖²_F` for `S = LLᵀ`.
fn objective_from_chol(chol: &Cholesky<f64, Dyn>, a_t: &DMatrix<f64>) -> f64 {
    let x = chol
        .l_dirty()
        .solve_lower_triangular(a_t)
        .expect("Cholesky factor has a positive diagonal");
    x.norm_squared()
}

fn initial_point(problem: &AofProblem, initial: InitialPoint) -> DMatrix<f64> {
    let n = problem.n();
    match initial {
        InitialPoint::Identity => DMatrix::identity(n, n),
        InitialPoint::BandedSqrt => {
            let c = crate::factorization::bsr_c(&problem.spec, problem.band)
                .expect("band validated on construction")
                .to_dense();
            let g = c.gram();
            let d: Vec<f64> = (0..n).map(|i| g[(i, i)].sqrt()).collect();
            DMatrix::from_fn(n, n, |i, j| {
                if problem.in_band(i, j) {
                    g[(i, j)] / (d[i] * d[j])
                } else {
                    0.0
                }
            })
        }
    }
}

/// Runs projected gradient descent and extracts `C`.
pub fn aof_solve(problem: &AofProblem, options: &AofOptions) -> AofSolution {
    aof_solve_with_progress(problem, options, |_| {})
}

pub fn aof_solve_with_progress(
    problem: &AofProblem,
    options: &AofOptions,
    mut progress: impl FnMut(&AofProgress),
) -> AofSolution {
    let n = problem.n();
    let a_t = problem.a.transpose();
    let mut s = initial_point(problem, options.initial);
    let mut chol = cholesky(&s).expect("initial point is positive definite");
    let mut objective = objective_from_chol(&chol, &a_t);
    let mut history = vec![objective];
    let mut step = options.initial_step;
    let mut converged = false;
    let mut accepted = 0;

    while accepted < options.max_iters {
        // ∇ = −(S⁻¹Aᵀ)(S⁻¹Aᵀ)ᵀ, restricted to the free entries.
        let v = chol.solve(&a_t);
        let mut direction = &v * v.transpose();
        problem.project_direction(&mut direction);
        // Moving against the gradient means adding `direction`.
        if direction.amax() == 0.0 {
            converged = true;
            break;
        }

        let mut next = None;
        for _ in 0..=options.max_backtracks {
            let trial = &s + &direction * step;
            if let Some(tc) = cholesky(&trial) {
                let f = objective_from_chol(&tc, &a_t);
                if f < objective {
                    next = Some((trial, tc, f));
                    break;
                }
            }
            step *= options.backtrack;
        }
        let Some((trial, tc, f)) = next else {
            // No decrease found even for tiny steps: stationary to precision.
            converged = true;
            break;
        };
        s = trial;
        chol = tc;
        objective = f;
        accepted += 1;
        history.push(objective);
        progress(&AofProgress {
            iteration: accepted,
            objective,
            step,
        });
        step *= options.growth;

        if history.len() > options.window {
            let old = history[history.len() - 1 - options.window];
            if (old - objective) / objective.abs() < options.tol {
                converged = true;
                break;
            }
        }
    }

    let floor = options.floor.unwrap_or((1.0 / n as f64).sqrt());
    let (c, floor_applied) = extract_c_with_floor(&s, floor);
    AofSolution {
        s,
        c,
        objective_trace: objective,
        objective_history: history,
        iterations: accepted,
        converged,
        floor_applied,
    }
}

/// Lifts eigenvalues of `s` below `floor` up to `floor`, then returns the
/// lower-triangular `C` with `CᵀC = S` and whether any eigenvalue moved.
pub fn extract_c_with_floor(s: &DMatrix<f64>, floor: f64) -> (DenseLowerTriangular, bool) {
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let min = eig.eigenvalues.min();
    let (target, applied) = if min >= floor {
        (sym, false)
    } else {
        let clamped = eig.eigenvalues.map(|l| l.max(floor));
        let v = &eig.eigenvectors;
        let m = v * DMatrix::from_diagonal(&clamped) * v.transpose();
        ((&m + m.transpose()) * 0.5, true)
    };
    let c = reverse_cholesky(&target).expect("eigenvalues are bounded below by the floor");
    (c, applied)
}

/// Lower-triangular `C` with `CᵀC = S`, via the Cholesky factor of the
/// index-reversed matrix.
pub fn reverse_cholesky(s: &DMatrix<f64>) -> Result<DenseLowerTriangular> {
    let n = s.nrows();
    let flipped = DMatrix::from_fn(n, n, |i, j| s[(n - 1 - i, n - 1 - j)]);
    let chol = Cholesky::new(flipped).ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    Ok(DenseLowerTriangular::from_fn(n, |i, j| {
        l[(n - 1 - j, n - 1 - i)]
    }))
}

/// Wraps a solution as the factorization `A = (A C⁻¹) · C`.
pub fn factorization_from_solution(
    problem: &AofProblem,
    solution: &AofSolution,
) -> Result<Factorization> {
    let n = problem.n();
    let c = solution.c.to_matrix();
    // Bᵀ = C⁻ᵀ Aᵀ with Cᵀ upper triangular.
    let bt = c
        .transpose()
        .solve_upper_triangular(&problem.a.transpose())
        .ok_or(Error::Singular)?;
    let b = DenseLowerTriangular::from_fn(n, |i, j| bt[(j, i)]);
    let fact = Factorization {
        kind: FactorizationKind::Aof,
        spec: problem.spec,
        bandwidth: Some(problem.band),
        b: MatrixHandle::Dense(b),
        c: MatrixHandle::Dense(solution.c.clone()),
    };
    fact.validate(RECONSTRUCTION_TOL)?;
    Ok(fact)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &m * m.transpose() + DMatrix::identity(n, n) * (n as f64 * 0.1)
    }

    #[test]
    fn objective_examples() {
        let id = DMatrix::<f64>::identity(5, 5);
        assert!((aof_objective(&id, &id).unwrap() - 5.0).abs() < 1e-14);
        let p = AofProblem::new(WorkloadSpec::new(6, 1.0, 0.0).unwrap(), 6).unwrap();
        assert!((aof_objective(&DMatrix::identity(6, 6), &p.gram).unwrap() - 21.0).abs() < 1e-12);
        let not_pd = -DMatrix::<f64>::identity(3, 3);
        assert_eq!(
            aof_objective(&not_pd, &DMatrix::identity(3, 3)),
            Err(Error::NotPositiveDefinite)
        );
    }

    #[test]
    fn objective_matches_explicit_inverse() {
        for seed in 0..5 {
            let s = random_spd(12, seed);
            let g = random_spd(12, seed + 100);
            let explicit = (&g * s.clone().try_inverse().unwrap()).trace();
            let got = aof_objective(&s, &g).unwrap();
            assert!((got - explicit).abs() <= 1e-10 * explicit.abs());
        }
    }

    #[test]
    fn gradient_examples() {
        let id = DMatrix::<f64>::identity(4, 4);
        let g = aof_gradient(&id, &id).unwrap();
        assert!((g + &id).amax() < 1e-15);
        let s = random_spd(6, 3);
        let gram = random_spd(6, 4);
        let g = aof_gradient(&s, &gram).unwrap();
        assert!((&g - g.transpose()).amax() < 1e-12);
    }

    #[test]
    fn single_step_problem() {
        let p = AofProblem::new(WorkloadSpec::new(1, 0.7, 0.1).unwrap(), 1).unwrap();
        let sol = aof_solve(&p, &AofOptions::default());
        assert_eq!(sol.iterations, 0);
        assert!(sol.converged);
        assert_eq!(sol.c.get(0, 0), 1.0);
        assert_eq!(sol.objective_trace, 1.0);
    }

    #[test]
    fn diagonal_band_returns_identity() {
        let p = AofProblem::new(WorkloadSpec::new(12, 1.0, 0.9).unwrap(), 1).unwrap();
        let sol = aof_solve(&p, &AofOptions::default());
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.s, DMatrix::identity(12, 12));
        assert!(!sol.floor_applied);
        assert_eq!(sol.c, DenseLowerTriangular::identity(12));
    }

    #[test]
    fn iterates_stay_feasible_and_decrease() {
        let p = AofProblem::new(WorkloadSpec::new(24, 1.0, 0.5).unwrap(), 4).unwrap();
        let sol = aof_solve(
            &p,
            &AofOptions {
                max_iters: 200,
                ..Default::default()
            },
        );
        assert!(p.is_feasible(&sol.s, 1e-12));
        assert!(sol.objective_history.windows(2).all(|w| w[1] < w[0]));
        assert!(sol.iterations > 0);
        assert_eq!(reverse_cholesky(&sol.s).unwrap().lower_bandwidth(), 4);
        if !sol.floor_applied {
            assert_eq!(sol.c.lower_bandwidth(), 4);
        }
    }

    #[test]
    fn floor_clamps_small_eigenvalues() {
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1e-12]));
        let (c, applied) = extract_c_with_floor(&s, 0.5f64.sqrt());
        assert!(applied);
        let ctc = c.gram();
        assert!((ctc[(1, 1)] - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((ctc[(0, 0)] - 1.0).abs() < 1e-12);

        let id = DMatrix::<f64>::identity(3, 3);
        let (c, applied) = extract_c_with_floor(&id, 0.5);
        assert!(!applied);
        assert_eq!(c, DenseLowerTriangular::identity(3));
    }

    #[test]
    fn extraction_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 32;
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let s = (&m + m.transpose()) * 0.5;
        let floor = (1.0 / n as f64).sqrt();
        let (c, applied) = extract_c_with_floor(&s, floor);
        assert!(applied);
        let eig = SymmetricEigen::new(s.clone());
        let floored = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(floor)))
            * eig.eigenvectors.transpose();
        let diff = (c.gram() - &floored).norm() / floored.norm();
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn reverse_cholesky_is_lower() {
        let s = random_spd(7, 11);
        let c = reverse_cholesky(&s).unwrap();
        assert!((c.gram() - &s).norm() < 1e-10 * s.norm());
    }
}
