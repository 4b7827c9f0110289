//! Small dense linear-algebra kernels and the power-iteration spectral norm.

use rand::Rng;

use crate::rng::{substream, streams};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self::from_row_major(r, c, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `out = self * x`
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }

    /// `out = self^T * y`
    pub fn matvec_t_into(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.fill(0.0);
        for (i, &yi) in y.iter().enumerate() {
            axpy(yi, self.row(i), out);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_into(x, &mut out);
        out
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// A linear map usable by [`spectral_norm`].
pub trait LinearMap {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
    fn apply_t(&self, y: &[f64], out: &mut [f64]);
}

impl LinearMap for DenseMatrix {
    fn nrows(&self) -> usize {
        self.rows
    }
    fn ncols(&self) -> usize {
        self.cols
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.matvec_into(x, out)
    }
    fn apply_t(&self, y: &[f64], out: &mut [f64]) {
        self.matvec_t_into(y, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

pub const POWER_ITERATION_CAP: usize = 10_000;
const RESTARTS: u64 = 3;

/// Largest singular value by power iteration on `M^T M` from random starts.
/// Returns the best estimate over restarts; `converged` is false if any
/// restart hit the iteration cap.
pub fn spectral_norm(map: &dyn LinearMap, tol: f64) -> SpectralEstimate {
    assert!(tol > 0.0, "tol must be positive");
    let (m, n) = (map.nrows(), map.ncols());
    if m == 0 || n == 0 {
        return SpectralEstimate {
            value: 0.0,
            converged: true,
            iterations: 0,
        };
    }
    let mut best = SpectralEstimate {
        value: 0.0,
        converged: true,
        iterations: 0,
    };
    let mut mv = vec![0.0; m];
    let mut next = vec![0.0; n];
    for restart in 0..RESTARTS {
        let mut rng = substream(restart, streams::POWER);
        let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        let mut sigma = 0.0;
        let mut converged = false;
        let mut it = 0;
        while it < POWER_ITERATION_CAP {
            it += 1;
            map.apply(&v, &mut mv);
            map.apply_t(&mv, &mut next);
            let gram = norm(&next);
            if gram == 0.0 {
                sigma = 0.0;
                converged = true;
                break;
            }
            // ||M^T M v|| with unit v converges to sigma_max^2 from below.
            let new_sigma = gram.sqrt();
            for (vi, ni) in v.iter_mut().zip(&next) {
                *vi = ni / gram;
            }
            let done = (new_sigma - sigma).abs() <= tol * new_sigma;
            sigma = new_sigma;
            if done && it > 2 {
                converged = true;
                break;
            }
        }
        best.iterations += it;
        best.converged &= converged;
        best.value = best.value.max(sigma);
    }
    best
}

/// Largest eigenvalue of a symmetric positive semidefinite dense matrix.
pub fn sym_max_eigenvalue(m: &DenseMatrix) -> f64 {
    let eig = nalgebra::SymmetricEigen::new(m.to_nalgebra());
    eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Solves `m x = b` by LU; `None` if singular.
pub fn solve(m: &DenseMatrix, b: &[f64]) -> Option<Vec<f64>> {
    let lu = m.to_nalgebra().lu();
    lu.solve(&nalgebra::DVector::from_column_slice(b))
        .map(|x| x.iter().copied().collect())
}
