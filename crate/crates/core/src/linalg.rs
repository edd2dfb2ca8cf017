//! Small dense symmetric matrices and the spectral functions the integrators
//! need: square roots, the friction exponential and the Ornstein–Uhlenbeck
//! variance map.
//!
//! Matrices are tiny (the parameter dimension, rarely above a few dozen), so
//! everything is built on a cyclic Jacobi eigensolver.

use thiserror::Error;

/// Eigenvalues in `[-PSD_TOL, 0)` are treated as round-off and clamped to zero.
pub const PSD_TOL: f64 = 1e-10;

/// Below this value of `|λ|·dt` the OU variance map uses its `λ → 0` limit.
pub const EIG_TOL: f64 = 1e-12;

const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not positive semi-definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("matrix is singular (smallest eigenvalue {min_eigenvalue:e})")]
    Singular { min_eigenvalue: f64 },
    #[error("symmetric eigensolver failed to converge")]
    NoConvergence,
}

/// A real symmetric `d × d` matrix.
///
/// Only the upper triangle is stored, so `get(i, j) == get(j, i)` holds by
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    packed: Vec<f64>,
}

#[inline]
fn packed_index(dim: usize, i: usize, j: usize) -> usize {
    let (r, c) = if i <= j { (i, j) } else { (j, i) };
    r * dim - r * (r + 1) / 2 + c
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be at least 1");
        SymMatrix {
            dim,
            packed: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, s);
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds a matrix from `f(i, j)` evaluated on the upper triangle only.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Builds a matrix from the upper triangle of a row-major dense array.
    pub fn from_dense_upper(dim: usize, dense: &[f64]) -> Self {
        assert_eq!(dense.len(), dim * dim);
        Self::from_fn(dim, |i, j| dense[i * dim + j])
    }

    /// Wraps an already packed upper triangle (row by row).
    pub fn from_packed(dim: usize, packed: Vec<f64>) -> Self {
        assert_eq!(packed.len(), dim * (dim + 1) / 2);
        SymMatrix { dim, packed }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.packed[packed_index(self.dim, i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = packed_index(self.dim, i, j);
        self.packed[k] = v;
    }

    /// Upper triangle, row by row.
    pub fn packed(&self) -> &[f64] {
        &self.packed
    }

    pub fn packed_mut(&mut self) -> &mut [f64] {
        &mut self.packed
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = self.get(i, j);
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            packed: self.packed.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix, LinalgError> {
        self.check_dim(other)?;
        Ok(SymMatrix {
            dim: self.dim,
            packed: self
                .packed
                .iter()
                .zip(&other.packed)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix, LinalgError> {
        self.check_dim(other)?;
        Ok(SymMatrix {
            dim: self.dim,
            packed: self
                .packed
                .iter()
                .zip(&other.packed)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    fn check_dim(&self, other: &SymMatrix) -> Result<(), LinalgError> {
        if self.dim != other.dim {
            return Err(LinalgError::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        Ok(())
    }

    /// `out = M x`.
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        debug_assert_eq!(x.len(), d);
        debug_assert_eq!(out.len(), d);
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += self.get(i, j) * x[j];
            }
            out[i] = acc;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let v = self.get(i, j);
                acc += v * v;
            }
        }
        acc.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.packed.iter().all(|v| v.is_finite())
    }

    pub fn eigen(&self) -> Result<SpectralDecomp, LinalgError> {
        jacobi_eigen(self)
    }
}

/// Frobenius inner product `Σ_ij A_ij B_ij`.
pub fn frobenius(a: &SymMatrix, b: &SymMatrix) -> Result<f64, LinalgError> {
    a.check_dim(b)?;
    let mut acc = 0.0;
    for i in 0..a.dim {
        for j in 0..a.dim {
            acc += a.get(i, j) * b.get(i, j);
        }
    }
    Ok(acc)
}

/// Eigendecomposition `M = Q Λ Qᵀ`.
#[derive(Debug, Clone)]
pub struct SpectralDecomp {
    pub eigenvalues: Vec<f64>,
    /// Row-major `d × d`; column `k` is the eigenvector of `eigenvalues[k]`.
    pub eigenvectors: Vec<f64>,
}

impl SpectralDecomp {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// `Q f(Λ) Qᵀ`, symmetric by construction.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> SymMatrix {
        let d = self.dim();
        let q = &self.eigenvectors;
        let fl: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        SymMatrix::from_fn(d, |i, j| {
            let mut acc = 0.0;
            for k in 0..d {
                acc += q[i * d + k] * fl[k] * q[j * d + k];
            }
            acc
        })
    }
}

fn jacobi_eigen(m: &SymMatrix) -> Result<SpectralDecomp, LinalgError> {
    let d = m.dim();
    if !m.is_finite() {
        return Err(LinalgError::NoConvergence);
    }
    let mut a = m.to_dense();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    if d == 1 {
        return Ok(SpectralDecomp {
            eigenvalues: vec![a[0]],
            eigenvectors: v,
        });
    }
    let total: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                off += a[i * d + j] * a[i * d + j];
            }
        }
        if off.sqrt() <= f64::EPSILON * 1e-2 * total || off == 0.0 {
            let eigenvalues = (0..d).map(|i| a[i * d + i]).collect();
            return Ok(SpectralDecomp {
                eigenvalues,
                eigenvectors: v,
            });
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                a[p * d + q] = 0.0;
                a[q * d + p] = 0.0;
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(LinalgError::NoConvergence)
}

/// Symmetric square root of a positive semi-definite matrix.
pub fn sym_sqrt(m: &SymMatrix) -> Result<SymMatrix, LinalgError> {
    sym_sqrt_tol(m, PSD_TOL)
}

pub fn sym_sqrt_tol(m: &SymMatrix, tol_psd: f64) -> Result<SymMatrix, LinalgError> {
    let eig = m.eigen()?;
    let min = eig.min_eigenvalue();
    if min < -tol_psd {
        return Err(LinalgError::NotPsd {
            min_eigenvalue: min,
        });
    }
    Ok(eig.map(|l| l.max(0.0).sqrt()))
}

/// Inverse square root; eigenvalues at or below `floor` (after clamping) are
/// rejected as singular.
pub fn sym_inv_sqrt(m: &SymMatrix, floor: f64) -> Result<SymMatrix, LinalgError> {
    let eig = m.eigen()?;
    let min = eig.min_eigenvalue();
    if min < -PSD_TOL {
        return Err(LinalgError::NotPsd {
            min_eigenvalue: min,
        });
    }
    if min.max(0.0) <= floor {
        return Err(LinalgError::Singular {
            min_eigenvalue: min,
        });
    }
    Ok(eig.map(|l| 1.0 / l.sqrt()))
}

/// Scalar OU half-step coefficients for friction eigenvalue `lambda`:
/// returns `(exp(-dt·λ/2), γ(1 - exp(-dt·λ))/λ)`.
///
/// The variance is positive for every real `λ`, including negative ones; at
/// `|λ|·dt ≤ EIG_TOL` it takes the limit value `γ·dt`.
#[inline]
pub fn ou_scalar(lambda: f64, gamma: f64, dt: f64) -> (f64, f64) {
    let mean = (-0.5 * dt * lambda).exp();
    let var = if (lambda * dt).abs() <= EIG_TOL {
        gamma * dt
    } else {
        -gamma * (-dt * lambda).exp_m1() / lambda
    };
    (mean, var)
}

/// Matrix OU half-step coefficients: `mean_factor = exp(-dt ξ / 2)` and
/// `noise_sqrt = g(ξ)^{1/2}` with `g(λ) = γ(1 - e^{-dt λ})/λ` applied
/// spectrally.
pub fn ou_coefficients(
    xi: &SymMatrix,
    gamma: f64,
    dt: f64,
) -> Result<(SymMatrix, SymMatrix), LinalgError> {
    let eig = xi.eigen()?;
    let mean = eig.map(|l| ou_scalar(l, gamma, dt).0);
    let noise = eig.map(|l| ou_scalar(l, gamma, dt).1.sqrt());
    Ok((mean, noise))
}
