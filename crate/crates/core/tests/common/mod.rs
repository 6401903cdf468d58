//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's own numerics.
#![allow(dead_code)]

use nalgebra::DMatrix;

/// Dense lower-triangular Toeplitz matrix with first column `col`.
pub fn ltt_dense(col: &[f64]) -> DMatrix<f64> {
    let n = col.len();
    DMatrix::from_fn(n, n, |i, j| if i >= j { col[i - j] } else { 0.0 })
}

/// First column of `A_{α,β}` by explicit double summation.
pub fn workload_oracle(n: usize, alpha: f64, beta: f64) -> Vec<f64> {
    (0..n)
        .map(|j| {
            (0..=j)
                .map(|i| alpha.powi(i as i32) * beta.powi((j - i) as i32))
                .sum()
        })
        .collect()
}

/// Truncated convolution, schoolbook.
pub fn conv(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (i, &x) in a.iter().enumerate().take(n) {
        for (j, &y) in b.iter().enumerate().take(n - i) {
            out[i + j] += x * y;
        }
    }
    out
}

/// `max_π Σ_{i,j∈π} |G_ij|` over all admissible index sets, by bitmask.
pub fn brute_sens(c: &DMatrix<f64>, b: usize, k: usize) -> f64 {
    let n = c.ncols();
    assert!(n <= 20);
    let g = c.transpose() * c;
    let mut best = 0.0f64;
    for mask in 1u32..(1 << n) {
        if mask.count_ones() as usize > k {
            continue;
        }
        let idx: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        if idx.windows(2).any(|w| w[1] - w[0] < b) {
            continue;
        }
        let s: f64 = idx
            .iter()
            .flat_map(|&i| idx.iter().map(move |&j| (i, j)))
            .map(|(i, j)| g[(i, j)].abs())
            .sum();
        best = best.max(s);
    }
    best.sqrt()
}

/// Admissible `(b, k)` pairs for order `n`.
pub fn schemas(n: usize) -> Vec<(usize, usize)> {
    (1..=n)
        .flat_map(|b| (1..=1 + (n - 1) / b).map(move |k| (b, k)))
        .collect()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
