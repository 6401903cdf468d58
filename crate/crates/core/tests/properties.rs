mod common;

use bandfact::analysis::{expected_error, lower_bound};
use bandfact::aof::{aof_objective, aof_solve, extract_c_with_floor, AofOptions, AofProblem};
use bandfact::factorization::{binomial_half_coefficients, bsr_b, bsr_c, sqrt_coefficients};
use bandfact::noise::{gaussian_rows, simulate_mechanism};
use bandfact::sensitivity::{
    enumerate_participation_sets, participation_set_count, sens_banded_dp, sens_toeplitz_monotone,
    sens_upper_bound_generic, EnumerationLimit,
};
use bandfact::toeplitz::{
    banded_forward_solve, convolve_truncated, ltt_inverse, ltt_multiply, ConvStrategy,
};
use bandfact::workload::{e1_singular_value, nuclear_norm_lower_bound};
use bandfact::{
    make_factorization, sensitivity, workload_column, DenseLowerTriangular, FactorizationKind,
    MatrixHandle, NoiseStreamState, ParticipationSchema, ToeplitzColumn, WorkloadSpec,
};
use common::{brute_sens, conv, ltt_dense, rel_diff, workload_oracle};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn column(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    len.prop_flat_map(|n| (0.5f64..2.0, prop::collection::vec(-1.0f64..1.0, n - 1)))
        .prop_map(|(c0, rest)| std::iter::once(c0).chain(rest).collect())
}

fn decreasing(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    len.prop_flat_map(|n| (0.1f64..3.0, prop::collection::vec(0.0f64..=1.0, n - 1)))
        .prop_map(|(c0, ratios)| {
            let mut v = vec![c0];
            for r in ratios {
                let last = *v.last().unwrap();
                v.push(last * r);
            }
            v
        })
}

fn spec(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = WorkloadSpec> {
    (n, prop_oneof![Just(1.0), 0.5f64..1.0], 0.0f64..1.0).prop_map(|(n, alpha, frac)| {
        WorkloadSpec::new(n, alpha, (frac * alpha).min(0.999 * alpha)).unwrap()
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn multiplication_matches_dense(a in column(1..=24), seed in any::<u64>()) {
        let n = a.len();
        let b: Vec<f64> = (0..n).map(|i| ((seed.wrapping_add(i as u64) % 97) as f64 / 50.0) - 1.0).collect();
        let ta = ToeplitzColumn::new(a.clone()).unwrap();
        let tb = ToeplitzColumn::new(b.clone()).unwrap();
        let prod = ltt_multiply(&ta, &tb).unwrap();
        let dense = ltt_dense(&a) * ltt_dense(&b);
        let col: Vec<f64> = dense.column(0).iter().copied().collect();
        prop_assert!(max_abs_diff(prod.coeffs(), &col) < 1e-12);
        let rev = ltt_multiply(&tb, &ta).unwrap();
        prop_assert!(max_abs_diff(prod.coeffs(), rev.coeffs()) < 1e-12);
    }

    #[test]
    fn inverse_is_two_sided(a in decreasing(1..=40)) {
        let t = ToeplitzColumn::new(a).unwrap();
        let inv = ltt_inverse(&t).unwrap();
        let id = ltt_multiply(&t, &inv).unwrap();
        let scale = inv.coeffs().iter().fold(1.0f64, |m, v| m.max(v.abs())) * t.coeffs()[0];
        prop_assert!((id.coeffs()[0] - 1.0).abs() < 1e-12 * scale);
        prop_assert!(id.coeffs()[1..].iter().all(|v| v.abs() < 1e-10 * scale));
    }

    #[test]
    fn fft_matches_direct(a in prop::collection::vec(-1.0f64..1.0, 1..700), b in prop::collection::vec(-1.0f64..1.0, 1..700)) {
        let n = a.len().max(b.len());
        let direct = convolve_truncated(&a, &b, n, ConvStrategy::Direct);
        let fft = convolve_truncated(&a, &b, n, ConvStrategy::Fft);
        prop_assert!(max_abs_diff(&direct, &fft) < 1e-10);
        prop_assert!(max_abs_diff(&direct, &conv(&a, &b, n)) < 1e-12);
    }

    #[test]
    fn banded_solve_matches_dense(a in decreasing(2..=48), p_frac in 0.0f64..1.0, d in 1usize..4, seed in any::<u64>()) {
        let n = a.len();
        let p = 1 + ((n - 1) as f64 * p_frac) as usize;
        let c = ToeplitzColumn::banded(a, p).unwrap();
        let rhs = gaussian_rows(seed, n, d, 1.0);
        let got = banded_forward_solve(&c, &rhs).unwrap();
        let z = DMatrix::from_fn(n, d, |i, k| rhs[i][k]);
        let want = ltt_dense(c.coeffs()).solve_lower_triangular(&z).unwrap();
        let scale = want.amax().max(1.0);
        for i in 0..n {
            for k in 0..d {
                prop_assert!((got[i][k] - want[(i, k)]).abs() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn workload_matches_summation(s in spec(1..=200)) {
        let got = workload_column(&s);
        let want = workload_oracle(s.n, s.alpha, s.beta);
        for (x, y) in got.coeffs().iter().zip(&want) {
            prop_assert!(rel_diff(*x, *y) < 1e-10);
        }
    }

    #[test]
    fn factorizations_reconstruct(s in spec(1..=120), p_frac in 0.0f64..1.0) {
        let p = 1 + ((s.n - 1) as f64 * p_frac) as usize;
        for (kind, bw) in [
            (FactorizationKind::Bsr, Some(p)),
            (FactorizationKind::SquareRoot, None),
            (FactorizationKind::BaselineInputPerturbation, None),
            (FactorizationKind::BaselineOutputPerturbation, None),
        ] {
            let f = make_factorization(kind, &s, bw).unwrap();
            prop_assert!(f.reconstruction_error() < 1e-10);
        }
    }

    #[test]
    fn bsr_identities(s in spec(2..=200), p_frac in 0.0f64..1.0) {
        let p = 1 + ((s.n - 1) as f64 * p_frac) as usize;
        let c = sqrt_coefficients(&s).c;
        let b = bsr_b(&s, p).unwrap();
        let cp = bsr_c(&s, p).unwrap();
        for (j, (&got, &cj)) in cp.coeffs().iter().zip(&c).enumerate() {
            prop_assert_eq!(got, if j < p { cj } else { 0.0 });
        }
        for (&bj, &cj) in b.coeffs().iter().zip(&c).take(p) {
            prop_assert!(rel_diff(bj, cj) < 1e-10);
        }
        for j in 0..p {
            if p + j < s.n {
                prop_assert!(rel_diff(b.coeffs()[p + j], 2.0 * c[p + j]) < 1e-10);
            }
        }
    }

    #[test]
    fn sqrt_coefficient_bounds(s in spec(2..=600)) {
        let c = sqrt_coefficients(&s).c;
        let r = binomial_half_coefficients(s.n);
        prop_assert_eq!(c[0], 1.0);
        let mut partial = 0.0;
        for j in 1..s.n {
            let jf = j as f64;
            prop_assert!(1.0 / (2.0 * jf.sqrt()) <= r[j] * (1.0 + 1e-12));
            prop_assert!(r[j] <= 1.0 / (std::f64::consts::PI * jf).sqrt() * (1.0 + 1e-12));
            prop_assert!(c[j] <= c[j - 1] * (1.0 + 1e-12));
            let aj = s.alpha.powi(j as i32);
            prop_assert!(aj / (2.0 * (jf + 1.0).sqrt()) <= c[j] * (1.0 + 1e-9));
            prop_assert!(c[j] <= aj / ((1.0 - s.beta / s.alpha) * (jf + 1.0).sqrt()) * (1.0 + 1e-9));
            partial += c[j] * c[j];
        }
        // Σc_j² ≥ 1 + Σ_{j≥1} α^{2j}/(4(j+1)) follows from the lower coefficient bound.
        let lower: f64 = 1.0 + (1..s.n).map(|j| s.alpha.powi(2 * j as i32) / (4.0 * (j + 1) as f64)).sum::<f64>();
        prop_assert!(1.0 + partial >= lower * (1.0 - 1e-9));
    }

    #[test]
    fn closed_form_matches_brute_force(m in decreasing(1..=10), schema_seed in any::<prop::sample::Index>()) {
        let n = m.len();
        let pairs: Vec<(usize, usize)> = common::schemas(n);
        let (b, k) = pairs[schema_seed.index(pairs.len())];
        let schema = ParticipationSchema::new(n, b, k).unwrap();
        let got = sens_toeplitz_monotone(&ToeplitzColumn::new(m.clone()).unwrap(), &schema).unwrap();
        prop_assert!(rel_diff(got, brute_sens(&ltt_dense(&m), b, k)) < 1e-12);
        // Reversed order: a non-decreasing column.
        let mut inc = m.clone();
        inc.reverse();
        let got = sens_toeplitz_monotone(&ToeplitzColumn::new(inc.clone()).unwrap(), &schema).unwrap();
        prop_assert!(rel_diff(got, brute_sens(&ltt_dense(&inc), b, k)) < 1e-12);
    }

    #[test]
    fn generic_bound_matches_oracle(vals in prop::collection::vec(-1.0f64..1.0, 55), n in 1usize..=10, schema_seed in any::<prop::sample::Index>()) {
        let c = DenseLowerTriangular::from_fn(n, |i, j| vals[i * (i + 1) / 2 + j]);
        let pairs = common::schemas(n);
        let (b, k) = pairs[schema_seed.index(pairs.len())];
        let schema = ParticipationSchema::new(n, b, k).unwrap();
        let got = sens_upper_bound_generic(&c, &schema, EnumerationLimit::default()).unwrap();
        prop_assert!(rel_diff(got.value, brute_sens(&c.to_matrix(), b, k)) < 1e-12);
    }

    #[test]
    fn sensitivity_monotone_in_k_and_b(m in decreasing(2..=12)) {
        let n = m.len();
        let c = ltt_dense(&m);
        let dense = DenseLowerTriangular::from_matrix(&c).unwrap();
        let value = |b: usize, k: usize| {
            sens_upper_bound_generic(&dense, &ParticipationSchema::new(n, b, k).unwrap(), EnumerationLimit::default())
                .unwrap()
                .value
        };
        for b in 1..=n {
            let kmax = 1 + (n - 1) / b;
            for k in 1..kmax {
                prop_assert!(value(b, k + 1) >= value(b, k) * (1.0 - 1e-12));
            }
            if b < n {
                for k in 1..=1 + (n - 1) / (b + 1) {
                    prop_assert!(value(b + 1, k) <= value(b, k) * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn banded_dp_matches_brute_force(vals in prop::collection::vec(-1.0f64..1.0, 78), n in 1usize..=12, b_seed in any::<prop::sample::Index>(), p_seed in any::<prop::sample::Index>()) {
        let b = 1 + b_seed.index(n);
        let p = 1 + p_seed.index(b);
        let c = DenseLowerTriangular::from_fn(n, |i, j| if i - j < p { vals[i * (i + 1) / 2 + j] } else { 0.0 });
        for k in 1..=1 + (n - 1) / b {
            let schema = ParticipationSchema::new(n, b, k).unwrap();
            let got = sens_banded_dp(&MatrixHandle::Dense(c.clone()), &schema).unwrap();
            prop_assert!(rel_diff(got, brute_sens(&c.to_matrix(), b, k)) < 1e-12);
        }
    }

    #[test]
    fn sensitivity_sandwich(m in decreasing(1..=64), schema_seed in any::<prop::sample::Index>()) {
        let n = m.len();
        let pairs = common::schemas(n);
        let (b, k) = pairs[schema_seed.index(pairs.len())];
        let t = ToeplitzColumn::new(m).unwrap();
        let fro = t.frobenius_norm_sq();
        let s = sensitivity(&MatrixHandle::Toeplitz(t), &ParticipationSchema::new(n, b, k).unwrap()).unwrap();
        let s2 = s.value * s.value;
        prop_assert!(s2 <= k as f64 * fro * (1.0 + 1e-12));
        if k * b <= n {
            prop_assert!(s2 >= k as f64 / n as f64 * fro * (1.0 - 1e-12));
        }
    }

    #[test]
    fn set_enumeration_count(n in 1usize..=14, b_seed in any::<prop::sample::Index>(), k_seed in any::<prop::sample::Index>()) {
        let b = 1 + b_seed.index(n);
        let k = 1 + k_seed.index(1 + (n - 1) / b);
        let schema = ParticipationSchema::new(n, b, k).unwrap();
        let sets: Vec<Vec<usize>> = enumerate_participation_sets(&schema).collect();
        prop_assert_eq!(sets.len() as u128, participation_set_count(&schema));
        for s in &sets {
            prop_assert!(s.len() <= k);
            prop_assert!(s.windows(2).all(|w| w[1] >= w[0] + b));
        }
    }

    #[test]
    fn expected_error_above_lower_bound(s in spec(2..=300), b_frac in 0.0f64..1.0) {
        let b = 1 + ((s.n - 1) as f64 * b_frac) as usize;
        let k = 1 + (s.n - 1) / b;
        let schema = ParticipationSchema::new(s.n, b, k).unwrap();
        for (kind, p) in [(FactorizationKind::Bsr, Some(b)), (FactorizationKind::SquareRoot, None), (FactorizationKind::BaselineInputPerturbation, None)] {
            let f = make_factorization(kind, &s, p).unwrap();
            let e = expected_error(&f, &schema).unwrap().expected_error;
            prop_assert!(e >= lower_bound(&s, &schema) * (1.0 - 1e-9));
        }
    }

    #[test]
    fn noise_stream_matches_dense_solve(a in decreasing(1..=96), p_frac in 0.0f64..1.0, d in 1usize..=8, seed in any::<u64>(), zeta in 0.1f64..3.0) {
        let n = a.len();
        let p = 1 + ((n - 1) as f64 * p_frac) as usize;
        let c = ToeplitzColumn::banded(a, p).unwrap();
        let mut st = NoiseStreamState::new(&c, d, 1.0, zeta, 1.0, seed).unwrap();
        let z = gaussian_rows(seed, n, d, 1.0);
        let want = ltt_dense(c.coeffs()).solve_lower_triangular(&DMatrix::from_fn(n, d, |i, k| z[i][k])).unwrap() * zeta;
        let scale = want.amax().max(1e-300);
        for i in 0..n {
            let row = st.next_noise_row().unwrap();
            prop_assert_eq!(st.buffered(), (i + 1).min(p - 1));
            for k in 0..d {
                prop_assert!((row[k] - want[(i, k)]).abs() <= 1e-9 * scale);
            }
        }
        prop_assert!(st.next_noise_row().is_err());
        prop_assert!(st.peak_buffered() < p);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn aof_iterates_feasible_and_monotone(n in 2usize..=20, band_seed in any::<prop::sample::Index>(), beta in 0.0f64..0.9) {
        let band = 1 + band_seed.index(n);
        let problem = AofProblem::new(WorkloadSpec::new(n, 1.0, beta).unwrap(), band).unwrap();
        let sol = aof_solve(&problem, &AofOptions { max_iters: 300, ..Default::default() });
        prop_assert!(problem.is_feasible(&sol.s, 1e-12));
        prop_assert!(sol.objective_history.windows(2).all(|w| w[1] < w[0]));
        let f = aof_objective(&sol.s, &problem.gram).unwrap();
        prop_assert!(rel_diff(f, sol.objective_trace) < 1e-9);
        // The identity start point is never beaten by the final iterate in reverse.
        let id = aof_objective(&DMatrix::identity(n, n), &problem.gram).unwrap();
        prop_assert!(sol.objective_trace <= id);
    }
}

#[test]
fn e1_singular_values_match_svd() {
    for n in [1usize, 3, 10, 40] {
        let m = ltt_dense(&vec![1.0; n]);
        let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        for (i, s) in sv.iter().enumerate() {
            assert!(rel_diff(e1_singular_value(i + 1, n).unwrap(), *s) < 1e-10);
        }
    }
}

#[test]
fn nuclear_norm_bound_holds() {
    for n in [1usize, 5, 20, 100, 300] {
        for beta in [0.0, 0.5, 0.9] {
            let s = WorkloadSpec::new(n, 1.0, beta).unwrap();
            let nuclear: f64 = ltt_dense(workload_column(&s).coeffs())
                .singular_values()
                .iter()
                .sum();
            assert!(
                nuclear >= nuclear_norm_lower_bound(&s) * (1.0 - 1e-12),
                "n={n} β={beta}"
            );
        }
        let s = WorkloadSpec::new(n, 0.8, 0.3).unwrap();
        let nuclear: f64 = ltt_dense(workload_column(&s).coeffs())
            .singular_values()
            .iter()
            .sum();
        assert!(nuclear >= nuclear_norm_lower_bound(&s) * (1.0 - 1e-12));
    }
}

#[test]
fn floor_keeps_extraction_consistent() {
    let problem = AofProblem::new(WorkloadSpec::new(30, 1.0, 0.9).unwrap(), 30).unwrap();
    let sol = aof_solve(
        &problem,
        &AofOptions {
            max_iters: 400,
            ..Default::default()
        },
    );
    let (c, _) = extract_c_with_floor(&sol.s, 0.0);
    let diff = (c.gram() - &sol.s).amax();
    assert!(diff < 1e-9 * sol.s.amax());
}

#[test]
fn monte_carlo_unbiased_and_consistent() {
    let spec = WorkloadSpec::new(40, 1.0, 0.5).unwrap();
    let schema = ParticipationSchema::new(40, 10, 4).unwrap();
    let f = make_factorization(FactorizationKind::Bsr, &spec, Some(10)).unwrap();
    let r = simulate_mechanism(&f, &schema, 2, 1.0, 4000, 99).unwrap();
    assert!(r.z_score() <= 3.0, "z = {}", r.z_score());
    // Bonferroni over 80 coordinates keeps the family-wise false alarm below 1%.
    for (m, se) in r.mean_residual.iter().zip(&r.residual_std_error) {
        assert!(m.abs() <= 4.0 * se, "{m} vs {se}");
    }
    let b = make_factorization(FactorizationKind::BaselineOutputPerturbation, &spec, None).unwrap();
    let r = simulate_mechanism(&b, &ParticipationSchema::single(40), 1, 1.0, 2000, 5).unwrap();
    assert!(r.z_score() <= 3.0, "z = {}", r.z_score());
}
