//! Small dense helpers for the d ≤ 10 vectors and matrices that the samplers
//! touch on every step. Matrices are row-major `Vec<f64>`.

use crate::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    /// Factor `matrix` (row-major, `dim × dim`). Fails on the first
    /// non-positive pivot and reports its index.
    pub fn new(matrix: &[f64], dim: usize) -> Result<Self> {
        if matrix.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: matrix.len(),
            });
        }
        for i in 0..dim {
            for j in 0..i {
                let (a, b) = (matrix[i * dim + j], matrix[j * dim + i]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::InvalidArgument(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let mut lower = vec![0.0; dim * dim];
        for j in 0..dim {
            let mut diag = matrix[j * dim + j];
            for k in 0..j {
                diag -= lower[j * dim + k] * lower[j * dim + k];
            }
            if !(diag > 0.0) {
                return Err(Error::NotPositiveDefinite {
                    pivot: j,
                    value: diag,
                });
            }
            let ljj = diag.sqrt();
            lower[j * dim + j] = ljj;
            for i in (j + 1)..dim {
                let mut v = matrix[i * dim + j];
                for k in 0..j {
                    v -= lower[i * dim + k] * lower[j * dim + k];
                }
                lower[i * dim + j] = v / ljj;
            }
        }
        Ok(Self { dim, lower })
    }

    pub fn identity(dim: usize) -> Self {
        let mut lower = vec![0.0; dim * dim];
        for i in 0..dim {
            lower[i * dim + i] = 1.0;
        }
        Self { dim, lower }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    /// log det(A) = 2 Σ log Lᵢᵢ.
    pub fn log_det(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.lower[i * self.dim + i].ln())
            .sum::<f64>()
            * 2.0
    }

    /// out = L v
    pub fn mul_lower(&self, v: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let row = &self.lower[i * d..i * d + i + 1];
            out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    /// out = A v = L Lᵀ v
    pub fn mul_matrix(&self, v: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let mut tmp = vec![0.0; d];
        for (j, t) in tmp.iter_mut().enumerate() {
            *t = (j..d).map(|i| self.lower[i * d + j] * v[i]).sum();
        }
        self.mul_lower(&tmp, out);
    }

    /// |v|²_A = vᵀ A⁻¹ v, computed by one forward substitution.
    pub fn mahalanobis_sq(&self, v: &[f64]) -> f64 {
        let d = self.dim;
        if d == 1 {
            let z = v[0] / self.lower[0];
            return z * z;
        }
        let mut z = [0.0f64; 16];
        let mut heap;
        let z: &mut [f64] = if d <= 16 {
            &mut z[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut acc = 0.0;
        for i in 0..d {
            let mut s = v[i];
            for k in 0..i {
                s -= self.lower[i * d + k] * z[k];
            }
            z[i] = s / self.lower[i * d + i];
            acc += z[i] * z[i];
        }
        acc
    }

    /// out = L⁻¹ v, so that |v|²_A = |out|².
    pub fn whiten(&self, v: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let mut s = v[i];
            for k in 0..i {
                s -= self.lower[i * d + k] * out[k];
            }
            out[i] = s / self.lower[i * d + i];
        }
    }

    /// The full matrix L Lᵀ.
    pub fn matrix(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = (0..=i.min(j))
                    .map(|k| self.lower[i * d + k] * self.lower[j * d + k])
                    .sum();
            }
        }
        out
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn identity(dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim * dim];
    for i in 0..dim {
        m[i * dim + i] = 1.0;
    }
    m
}

/// Inverse of a symmetric positive definite matrix via nalgebra.
pub fn spd_inverse(matrix: &[f64], dim: usize) -> Result<Vec<f64>> {
    let m = nalgebra::DMatrix::from_row_slice(dim, dim, matrix);
    let chol = nalgebra::Cholesky::new(m).ok_or(Error::NotPositiveDefinite {
        pivot: 0,
        value: f64::NAN,
    })?;
    let inv = chol.inverse();
    let mut out = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            out[i * dim + j] = inv[(i, j)];
        }
    }
    Ok(out)
}
