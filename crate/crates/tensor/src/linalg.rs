//! LU factorization with partial pivoting for small dense square matrices.

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

/// `P·A = L·U` with unit-diagonal `L`. Row `i` of `P·A` is row `perm[i]` of `A`.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    n: usize,
    lu: Vec<T>,
    perm: Vec<usize>,
    sign: T,
}

fn square_side<T: Real>(a: &Tensor<T>, op: &'static str) -> Result<usize> {
    match a.shape() {
        [r, c] if r == c => Ok(*r),
        other => Err(TensorError::InvalidShape {
            op,
            detail: format!("expected a square matrix, got {other:?}"),
        }),
    }
}

impl<T: Real> Lu<T> {
    pub fn factor(a: &Tensor<T>) -> Result<Self> {
        let n = square_side(a, "lu")?;
        let mut lu = a.data().to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = T::one();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| {
                    lu[i * n + col]
                        .abs()
                        .partial_cmp(&lu[j * n + col].abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(col);
            if pivot != col {
                for k in 0..n {
                    lu.swap(pivot * n + k, col * n + k);
                }
                perm.swap(pivot, col);
                sign = -sign;
            }
            let p = lu[col * n + col];
            if p == T::zero() {
                continue;
            }
            for row in col + 1..n {
                let factor = lu[row * n + col] / p;
                lu[row * n + col] = factor;
                if factor != T::zero() {
                    for k in col + 1..n {
                        lu[row * n + k] = lu[row * n + k] - factor * lu[col * n + k];
                    }
                }
            }
        }
        Ok(Lu { n, lu, perm, sign })
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn det(&self) -> T {
        (0..self.n).fold(self.sign, |d, i| d * self.lu[i * self.n + i])
    }

    /// `log|det A|`, accumulated as a sum of pivot logs in `f64`.
    pub fn log_abs_det(&self) -> f64 {
        (0..self.n)
            .map(|i| self.lu[i * self.n + i].abs().as_f64().ln())
            .sum()
    }

    /// Errors when `|det A| < min_abs_det`.
    pub fn ensure_nonsingular(&self, op: &'static str, min_abs_det: f64) -> Result<()> {
        let log_det = self.log_abs_det();
        if !(log_det >= min_abs_det.ln()) {
            return Err(TensorError::Singular {
                op,
                det_abs: log_det.exp(),
            });
        }
        Ok(())
    }

    /// Solves `A·X = B` for row-major `B` of shape `n×k`.
    pub fn solve(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        let k = self.rhs_columns(b)?;
        let n = self.n;
        let src = b.data();
        let mut x = vec![T::zero(); n * k];
        for i in 0..n {
            x[i * k..(i + 1) * k].copy_from_slice(&src[self.perm[i] * k..(self.perm[i] + 1) * k]);
        }
        for i in 0..n {
            for j in 0..i {
                let l = self.lu[i * n + j];
                if l != T::zero() {
                    for c in 0..k {
                        x[i * k + c] = x[i * k + c] - l * x[j * k + c];
                    }
                }
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let u = self.lu[i * n + j];
                if u != T::zero() {
                    for c in 0..k {
                        x[i * k + c] = x[i * k + c] - u * x[j * k + c];
                    }
                }
            }
            let d = self.lu[i * n + i];
            for c in 0..k {
                x[i * k + c] = x[i * k + c] / d;
            }
        }
        Tensor::new(b.shape(), x)
    }

    /// Solves `Aᵀ·X = B` for row-major `B` of shape `n×k`.
    pub fn solve_transposed(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        let k = self.rhs_columns(b)?;
        let n = self.n;
        let mut w = b.data().to_vec();
        // Uᵀ is lower triangular.
        for i in 0..n {
            for j in 0..i {
                let u = self.lu[j * n + i];
                if u != T::zero() {
                    for c in 0..k {
                        w[i * k + c] = w[i * k + c] - u * w[j * k + c];
                    }
                }
            }
            let d = self.lu[i * n + i];
            for c in 0..k {
                w[i * k + c] = w[i * k + c] / d;
            }
        }
        // Lᵀ is unit upper triangular.
        for i in (0..n).rev() {
            for j in i + 1..n {
                let l = self.lu[j * n + i];
                if l != T::zero() {
                    for c in 0..k {
                        w[i * k + c] = w[i * k + c] - l * w[j * k + c];
                    }
                }
            }
        }
        let mut x = vec![T::zero(); n * k];
        for i in 0..n {
            x[self.perm[i] * k..(self.perm[i] + 1) * k].copy_from_slice(&w[i * k..(i + 1) * k]);
        }
        Tensor::new(b.shape(), x)
    }

    pub fn inverse(&self) -> Result<Tensor<T>> {
        self.solve(&Tensor::eye(self.n))
    }

    fn rhs_columns(&self, b: &Tensor<T>) -> Result<usize> {
        match b.shape() {
            [r, k] if *r == self.n => Ok(*k),
            other => Err(TensorError::ShapeMismatch {
                op: "lu_solve",
                lhs: vec![self.n, self.n],
                rhs: other.to_vec(),
            }),
        }
    }
}
