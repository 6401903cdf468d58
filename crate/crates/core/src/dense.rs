//! Dense lower-triangular matrices, used for verification and by the AOF
//! solver whose factors are not Toeplitz.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A square lower-triangular matrix in packed row-major storage.
///
/// Row `i` holds the `i + 1` entries `(i, 0) ..= (i, i)`; everything above the
/// diagonal is implicitly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLowerTriangular {
    n: usize,
    data: Vec<f64>,
}

#[inline]
fn offset(i: usize) -> usize {
    i * (i + 1) / 2
}

impl DenseLowerTriangular {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; offset(n)],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds the matrix from `f(i, j)` evaluated on the lower triangle.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(offset(n));
        for i in 0..n {
            for j in 0..=i {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    /// Takes the lower triangle of a square matrix. Entries above the diagonal
    /// must be exactly zero.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                actual: m.ncols(),
            });
        }
        let n = m.nrows();
        for i in 0..n {
            for j in i + 1..n {
                if m[(i, j)] != 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "entry ({i}, {j}) above the diagonal is nonzero"
                    )));
                }
            }
        }
        Ok(Self::from_fn(n, |i, j| m[(i, j)]))
    }

    pub fn order(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.data[offset(i) + j]
        }
    }

    /// Sets entry `(i, j)`; panics if `j > i`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(j <= i, "({i}, {j}) lies above the diagonal");
        self.data[offset(i) + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[offset(i)..offset(i + 1)]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// Squared Euclidean norm of every column.
    pub fn column_norms_sq(&self) -> Vec<f64> {
        let mut norms = vec![0.0; self.n];
        for i in 0..self.n {
            for (j, x) in self.row(i).iter().enumerate() {
                norms[j] += x * x;
            }
        }
        norms
    }

    /// Number of nonzero diagonals, counting the main one. The zero matrix
    /// has bandwidth 0.
    pub fn lower_bandwidth(&self) -> usize {
        let mut bw = 0;
        for i in 0..self.n {
            if let Some(j) = self.row(i).iter().position(|&x| x != 0.0) {
                bw = bw.max(i - j + 1);
            }
        }
        bw
    }

    /// Product of two lower-triangular matrices.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: other.n,
            });
        }
        Ok(Self::from_fn(self.n, |i, j| {
            (j..=i).map(|l| self.get(i, l) * other.get(l, j)).sum()
        }))
    }

    /// Gram matrix `MᵀM` as a dense symmetric matrix.
    pub fn gram(&self) -> DMatrix<f64> {
        let m = self.to_matrix();
        m.transpose() * m
    }

    /// Solves `M Y = rhs` by plain forward substitution, where `rhs` is given
    /// as `n` rows of equal dimension.
    pub fn forward_solve(&self, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if rhs.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: rhs.len(),
            });
        }
        let d = rhs.first().map_or(0, Vec::len);
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(self.n);
        for (i, row) in rhs.iter().enumerate() {
            let diag = self.get(i, i);
            if diag == 0.0 {
                return Err(Error::Singular);
            }
            let mut y = row.clone();
            if y.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: y.len(),
                });
            }
            for (j, prev) in out.iter().enumerate() {
                let m = self.get(i, j);
                if m != 0.0 {
                    for (yk, pk) in y.iter_mut().zip(prev) {
                        *yk -= m * pk;
                    }
                }
            }
            y.iter_mut().for_each(|v| *v /= diag);
            out.push(y);
        }
        Ok(out)
    }
}
