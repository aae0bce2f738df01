//! Dense row-major matrices of `f64` acting on generic vectors.

use nalgebra::DMatrix;

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct RowMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RowMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RowMat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(m[(i, j)]);
            }
        }
        RowMat { rows, cols, data }
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn transpose(&self) -> Self {
        let mut t = RowMat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn mul_vec<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| T::dot_f64(self.row(i), x)).collect()
    }

    pub fn mul_vec_f64(&self, x: &[f64]) -> Vec<f64> {
        self.mul_vec(x)
    }
}

/// Lower-triangular Cholesky factor stored row-major.
#[derive(Clone, Debug)]
pub struct CholFactor {
    pub dim: usize,
    lower: Vec<f64>,
    inv_diag: Vec<f64>,
    /// Strictly lower part of row i, scaled by -1/L_ii, for forward substitution.
    fwd_rows: Vec<Vec<f64>>,
    /// Strictly upper part of row i of L^T, scaled by -1/L_ii, for back substitution.
    bwd_rows: Vec<Vec<f64>>,
    pub log_det: f64,
}

impl CholFactor {
    pub fn new(m: &DMatrix<f64>) -> Option<Self> {
        let dim = m.nrows();
        let chol = nalgebra::Cholesky::new(m.clone())?;
        let l = chol.l();
        let mut lower = vec![0.0; dim * dim];
        let mut log_det = 0.0;
        for i in 0..dim {
            for j in 0..=i {
                lower[i * dim + j] = l[(i, j)];
            }
            let d = l[(i, i)];
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            log_det += 2.0 * d.ln();
        }
        let inv_diag: Vec<f64> = (0..dim).map(|i| 1.0 / lower[i * dim + i]).collect();
        let fwd_rows = (0..dim)
            .map(|i| (0..i).map(|j| -lower[i * dim + j] * inv_diag[i]).collect())
            .collect();
        let bwd_rows = (0..dim)
            .map(|i| ((i + 1)..dim).map(|j| -lower[j * dim + i] * inv_diag[i]).collect())
            .collect();
        Some(CholFactor { dim, lower, inv_diag, fwd_rows, bwd_rows, log_det })
    }

    pub fn lower(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.lower)
    }

    /// Reconstructs the factored matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let l = self.lower();
        &l * l.transpose()
    }

    /// Solves `L y = b`.
    pub fn solve_lower<T: Scalar>(&self, b: &[T]) -> Vec<T> {
        let mut y: Vec<T> = Vec::with_capacity(self.dim);
        for i in 0..self.dim {
            let s = T::dot_f64(&self.fwd_rows[i], &y[..i]);
            y.push(s + b[i] * self.inv_diag[i]);
        }
        y
    }

    /// Solves `L^T z = y`.
    pub fn solve_upper<T: Scalar>(&self, y: &[T]) -> Vec<T> {
        let mut z = vec![T::zero(); self.dim];
        for i in (0..self.dim).rev() {
            let s = T::dot_f64(&self.bwd_rows[i], &z[i + 1..]);
            z[i] = s + y[i] * self.inv_diag[i];
        }
        z
    }

    /// Solves `(L L^T) z = b`.
    pub fn solve<T: Scalar>(&self, b: &[T]) -> Vec<T> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `L xi` for a standard normal `xi` gives a draw with covariance `L L^T`.
    pub fn mul_lower(&self, xi: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..=i).map(|j| self.lower[i * self.dim + j] * xi[j]).sum())
            .collect()
    }

    /// Log density of `N(mean, L L^T)` at `x`.
    pub fn log_normal_density(&self, x: &[f64], mean: &[f64]) -> f64 {
        let r: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
        let y = self.solve_lower(&r);
        let quad: f64 = y.iter().map(|v| v * v).sum();
        -0.5 * (self.dim as f64) * (2.0 * std::f64::consts::PI).ln() - 0.5 * self.log_det - 0.5 * quad
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_match_nalgebra() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let f = CholFactor::new(&a).unwrap();
        let b = [1.0, -2.0, 0.5];
        let z = f.solve(&b);
        let expect = a.clone().lu().solve(&nalgebra::DVector::from_row_slice(&b)).unwrap();
        for i in 0..3 {
            assert!((z[i] - expect[i]).abs() < 1e-12);
        }
        assert!((f.log_det - a.determinant().ln()).abs() < 1e-12);
        assert!((f.matrix() - a).abs().max() < 1e-12);
    }

    #[test]
    fn indefinite_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(CholFactor::new(&a).is_none());
    }
}
