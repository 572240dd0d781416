use serde::{Deserialize, Serialize};

use super::tensor::{matmul, Tensor};
use crate::error::{FedError, Result};

const SYMMETRY_TOL: f64 = 1e-9;

/// Square matrix known to be symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricMatrix(Tensor);

impl SymmetricMatrix {
    /// Validates symmetry (relative to the largest entry) and stores the
    /// exactly symmetrized matrix.
    pub fn new(m: Tensor) -> Result<Self> {
        if m.shape().len() != 2 || m.rows() != m.cols() {
            return Err(FedError::Validation(format!(
                "symmetric matrix must be square, got shape {:?}",
                m.shape()
            )));
        }
        let n = m.rows();
        let scale = m.data().iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for i in 0..n {
            for j in (i + 1)..n {
                if (m.get(i, j) - m.get(j, i)).abs() > SYMMETRY_TOL * scale {
                    return Err(FedError::Validation(format!(
                        "matrix not symmetric at ({i},{j}): {} vs {}",
                        m.get(i, j),
                        m.get(j, i)
                    )));
                }
            }
        }
        Ok(SymmetricMatrix(m.symmetrized()))
    }

    /// Symmetrizes without checking.
    pub fn from_symmetrized(m: &Tensor) -> Self {
        SymmetricMatrix(m.symmetrized())
    }

    pub fn identity(n: usize) -> Self {
        SymmetricMatrix(Tensor::eye(n))
    }

    pub fn zeros(n: usize) -> Self {
        SymmetricMatrix(Tensor::zeros(&[n, n]))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn add_ridge(&self, ridge: f64) -> SymmetricMatrix {
        let mut t = self.0.clone();
        for i in 0..self.dim() {
            let v = t.get(i, i) + ridge;
            t.set(i, i, v);
        }
        SymmetricMatrix(t)
    }

    pub fn add(&self, other: &SymmetricMatrix) -> Result<SymmetricMatrix> {
        Ok(SymmetricMatrix(self.0.add(&other.0)?))
    }

    /// `f(M) = V f(Λ) Vᵀ`
    pub fn spectral_map(&self, f: impl Fn(f64) -> Result<f64>) -> Result<SymmetricMatrix> {
        let eig = sym_eig(self)?;
        let n = self.dim();
        let mut out = Tensor::zeros(&[n, n]);
        for (k, &lambda) in eig.values.iter().enumerate() {
            let fl = f(lambda)?;
            for i in 0..n {
                let vik = eig.vectors.get(i, k) * fl;
                if vik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    let cur = out.get(i, j);
                    out.set(i, j, cur + vik * eig.vectors.get(j, k));
                }
            }
        }
        Ok(SymmetricMatrix::from_symmetrized(&out))
    }

    /// `M^{-1/2}` via the eigendecomposition; fails unless positive definite.
    pub fn inverse_sqrt(&self) -> Result<SymmetricMatrix> {
        self.spectral_map(|l| {
            if l <= 0.0 {
                Err(FedError::Numeric(format!(
                    "inverse square root of a matrix with eigenvalue {l:e}; increase the ridge"
                )))
            } else {
                Ok(1.0 / l.sqrt())
            }
        })
    }
}

/// Eigenvalues in descending order and the matching orthonormal eigenvectors
/// stored column-wise.
#[derive(Debug, Clone)]
pub struct EigenResult {
    pub values: Vec<f64>,
    pub vectors: Tensor,
}

/// Full spectral decomposition by cyclic Jacobi rotations.
pub fn sym_eig(m: &SymmetricMatrix) -> Result<EigenResult> {
    let n = m.dim();
    let mut a = m.as_tensor().clone();
    let mut v = Tensor::eye(n);
    let scale = a.frobenius_norm();
    if !scale.is_finite() {
        return Err(FedError::Numeric(
            "non-finite matrix passed to sym_eig".into(),
        ));
    }

    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a.get(i, j) * a.get(i, j);
            }
        }
        if off.sqrt() <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vectors = Tensor::zeros(&[n, n]);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, dst, v.get(r, src));
        }
    }
    Ok(EigenResult { values, vectors })
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(m: &SymmetricMatrix) -> Result<Tensor> {
    let n = m.dim();
    let a = m.as_tensor();
    let mut l = Tensor::zeros(&[n, n]);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(FedError::Numeric(format!(
                "matrix is not positive definite (pivot {j} = {d:e}); increase the ridge"
            )));
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / djj);
        }
    }
    Ok(l)
}

/// Solves `M X = B` for SPD `M`.
pub fn spd_solve(m: &SymmetricMatrix, b: &Tensor) -> Result<Tensor> {
    let l = cholesky(m)?;
    let n = m.dim();
    if b.rows() != n {
        return Err(FedError::Shape(format!(
            "spd_solve: rhs has {} rows, matrix is {n}x{n}",
            b.rows()
        )));
    }
    let cols = b.cols();
    let mut x = b.clone();
    for c in 0..cols {
        for i in 0..n {
            let mut s = x.get(i, c);
            for k in 0..i {
                s -= l.get(i, k) * x.get(k, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
        for i in (0..n).rev() {
            let mut s = x.get(i, c);
            for k in (i + 1)..n {
                s -= l.get(k, i) * x.get(k, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
    }
    Ok(x)
}

/// `V diag(values) Vᵀ` reconstruction, mostly for tests.
pub fn reconstruct(eig: &EigenResult) -> Result<Tensor> {
    let scaled = {
        let mut t = eig.vectors.clone();
        for r in 0..t.rows() {
            for (c, lam) in eig.values.iter().enumerate() {
                let v = t.get(r, c) * lam;
                t.set(r, c, v);
            }
        }
        t
    };
    matmul(&scaled, &eig.vectors.transpose())
}

/// Orthonormalizes the columns of `m` by modified Gram-Schmidt.
pub fn orthonormalize_columns(m: &Tensor) -> Result<Tensor> {
    let (rows, cols) = (m.rows(), m.cols());
    let mut q = m.clone();
    for j in 0..cols {
        for k in 0..j {
            let proj: f64 = (0..rows).map(|r| q.get(r, k) * q.get(r, j)).sum();
            for r in 0..rows {
                let v = q.get(r, j) - proj * q.get(r, k);
                q.set(r, j, v);
            }
        }
        let norm: f64 = (0..rows).map(|r| q.get(r, j).powi(2)).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return Err(FedError::Numeric(format!(
                "column {j} is linearly dependent; cannot orthonormalize"
            )));
        }
        for r in 0..rows {
            let v = q.get(r, j) / norm;
            q.set(r, j, v);
        }
    }
    Ok(q)
}
