//! Exact scatter statistics, the trace-ratio objective and the batch LDA
//! solution used to verify the streaming learner.

use crate::error::{FedError, Result};
use crate::numerics::linalg::spd_solve;
use crate::numerics::{matmul, sym_eig, SymmetricMatrix, Tensor};

/// Within- and between-client scatter of one set of representations.
#[derive(Debug, Clone)]
pub struct ScatterPair {
    pub within: SymmetricMatrix,
    pub between: SymmetricMatrix,
}

impl ScatterPair {
    /// `Σ_G = Σ_W + Σ_B`
    pub fn global(&self) -> Result<SymmetricMatrix> {
        self.within.add(&self.between)
    }

    /// Scatters of `c = Pᵀz` given scatters of `z`.
    pub fn project(&self, basis: &ProjectionBasis) -> Result<ScatterPair> {
        let p = basis.as_tensor();
        let proj = |m: &SymmetricMatrix| -> Result<SymmetricMatrix> {
            let mp = matmul(m.as_tensor(), p)?;
            Ok(SymmetricMatrix::from_symmetrized(&matmul(
                &p.transpose(),
                &mp,
            )?))
        };
        Ok(ScatterPair {
            within: proj(&self.within)?,
            between: proj(&self.between)?,
        })
    }
}

/// A `d × r` projection `P`; representations are mapped by `c = Pᵀz`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis(Tensor);

impl ProjectionBasis {
    pub fn new(p: Tensor) -> Result<Self> {
        if p.shape().len() != 2 || p.cols() == 0 || p.cols() > p.rows() {
            return Err(FedError::Validation(format!(
                "projection must be d × r with 1 ≤ r ≤ d, got {:?}",
                p.shape()
            )));
        }
        if !p.is_finite() {
            return Err(FedError::Numeric(
                "projection has non-finite entries".into(),
            ));
        }
        Ok(ProjectionBasis(p))
    }

    pub fn identity(d: usize, r: usize) -> Self {
        ProjectionBasis(Tensor::eye_rect(d, r))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn rank(&self) -> usize {
        self.0.cols()
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn column_norms(&self) -> Vec<f64> {
        (0..self.rank())
            .map(|c| self.0.column(c).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }

    /// Column norms inside `(0, 10]`: a coarse health check, not a
    /// normalization requirement.
    pub fn column_norms_sane(&self) -> bool {
        self.column_norms().iter().all(|&n| n > 0.0 && n <= 10.0)
    }
}

fn validate_batches(batches: &[Tensor]) -> Result<usize> {
    let first = batches
        .first()
        .ok_or_else(|| FedError::Validation("scatter needs at least one client".into()))?;
    if first.shape().len() != 2 {
        return Err(FedError::Validation("client batch must be n × d".into()));
    }
    let d = first.cols();
    for (i, b) in batches.iter().enumerate() {
        if b.shape().len() != 2 || b.cols() != d {
            return Err(FedError::Validation(format!(
                "client {i} has dimension {:?}, expected {d}",
                b.shape()
            )));
        }
        if b.rows() == 0 {
            return Err(FedError::Validation(format!(
                "client {i} has no representations"
            )));
        }
    }
    Ok(d)
}

pub(crate) fn mean_row(b: &Tensor) -> Vec<f64> {
    let d = b.cols();
    let mut m = vec![0.0; d];
    for r in 0..b.rows() {
        for (acc, v) in m.iter_mut().zip(b.row(r)) {
            *acc += v;
        }
    }
    let n = b.rows() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Adds `w · v vᵀ` to the upper triangle of `acc` (caller mirrors).
fn add_outer_upper(acc: &mut Tensor, v: &[f64], w: f64) {
    let d = v.len();
    for i in 0..d {
        let vi = v[i] * w;
        if vi == 0.0 {
            continue;
        }
        let row = acc.row_mut(i);
        for j in i..d {
            row[j] += vi * v[j];
        }
    }
}

fn mirror_upper(acc: &mut Tensor) {
    let d = acc.rows();
    for i in 0..d {
        for j in 0..i {
            let v = acc.get(j, i);
            acc.set(i, j, v);
        }
    }
}

/// Unnormalized `Σ_j (z_j − mean)(z_j − mean)ᵀ`.
pub(crate) fn centered_scatter_sum(b: &Tensor, mean: &[f64]) -> Tensor {
    let d = b.cols();
    let mut acc = Tensor::zeros(&[d, d]);
    let mut dev = vec![0.0; d];
    for r in 0..b.rows() {
        for ((o, x), m) in dev.iter_mut().zip(b.row(r)).zip(mean) {
            *o = x - m;
        }
        add_outer_upper(&mut acc, &dev, 1.0);
    }
    mirror_upper(&mut acc);
    acc
}

/// Average of per-client covariances, each client centered on its own mean,
/// weighted by client size.
pub fn within_client_scatter(batches: &[Tensor]) -> Result<SymmetricMatrix> {
    let d = validate_batches(batches)?;
    let total: usize = batches.iter().map(Tensor::rows).sum();
    let mut acc = Tensor::zeros(&[d, d]);
    for b in batches {
        let m = mean_row(b);
        acc.axpy(1.0, &centered_scatter_sum(b, &m))?;
    }
    Ok(SymmetricMatrix::from_symmetrized(
        &acc.scale(1.0 / total as f64),
    ))
}

/// Size-weighted scatter of client means around the global mean.
pub fn between_client_scatter(batches: &[Tensor]) -> Result<SymmetricMatrix> {
    let d = validate_batches(batches)?;
    let total: usize = batches.iter().map(Tensor::rows).sum();
    let means: Vec<Vec<f64>> = batches.iter().map(mean_row).collect();
    let mut global = vec![0.0; d];
    for (b, m) in batches.iter().zip(&means) {
        for (g, v) in global.iter_mut().zip(m) {
            *g += b.rows() as f64 * v;
        }
    }
    global.iter_mut().for_each(|g| *g /= total as f64);

    let mut acc = Tensor::zeros(&[d, d]);
    for (b, m) in batches.iter().zip(&means) {
        let dev: Vec<f64> = m.iter().zip(&global).map(|(a, g)| a - g).collect();
        add_outer_upper(&mut acc, &dev, b.rows() as f64);
    }
    mirror_upper(&mut acc);
    Ok(SymmetricMatrix::from_symmetrized(
        &acc.scale(1.0 / total as f64),
    ))
}

pub fn scatter_pair(batches: &[Tensor]) -> Result<ScatterPair> {
    Ok(ScatterPair {
        within: within_client_scatter(batches)?,
        between: between_client_scatter(batches)?,
    })
}

/// `Tr((Σ_W + ridge·I)⁻¹ Σ_B)` for scatters already expressed in the
/// projected space.
pub fn trace_ratio_objective(pair: &ScatterPair, ridge: f64) -> Result<f64> {
    if ridge < 0.0 {
        return Err(FedError::Validation(format!(
            "ridge must be ≥ 0, got {ridge}"
        )));
    }
    if pair.within.dim() != pair.between.dim() {
        return Err(FedError::Shape("scatter dimensions differ".into()));
    }
    let w = pair.within.add_ridge(ridge);
    let x = spd_solve(&w, pair.between.as_tensor())?;
    Ok(x.trace())
}

/// Objective of `basis` on raw-space scatters: `Tr((Pᵀ(Σ_W+ridge·I)P)⁻¹ PᵀΣ_BP)`.
pub fn projected_objective(pair: &ScatterPair, basis: &ProjectionBasis, ridge: f64) -> Result<f64> {
    let regularized = ScatterPair {
        within: pair.within.add_ridge(ridge),
        between: pair.between.clone(),
    };
    trace_ratio_objective(&regularized.project(basis)?, 0.0)
}

/// Exact maximizer of the trace ratio: `P* = Σ_W^{-1/2} Φ` with `Φ` the top-r
/// eigenvectors of `Σ_W^{-1/2} Σ_G Σ_W^{-1/2}`.
pub fn lda_oracle(pair: &ScatterPair, r: usize, ridge: f64) -> Result<ProjectionBasis> {
    let d = pair.within.dim();
    if r == 0 || r > d {
        return Err(FedError::Validation(format!(
            "requested rank {r} for dimension {d}"
        )));
    }
    let w = pair.within.add_ridge(ridge);
    let w_inv_sqrt = w.inverse_sqrt()?;
    let g = w.add(&pair.between)?;
    let whitened = matmul(
        w_inv_sqrt.as_tensor(),
        &matmul(g.as_tensor(), w_inv_sqrt.as_tensor())?,
    )?;
    let eig = sym_eig(&SymmetricMatrix::from_symmetrized(&whitened))?;
    let phi = eig.vectors.first_columns(r);
    ProjectionBasis::new(matmul(w_inv_sqrt.as_tensor(), &phi)?)
}

/// Sum of the top-r eigenvalues of `(Σ_W+ridge·I)⁻¹Σ_B`, the optimum of the
/// trace ratio.
pub fn optimal_objective(pair: &ScatterPair, r: usize, ridge: f64) -> Result<f64> {
    let w = pair.within.add_ridge(ridge);
    let wis = w.inverse_sqrt()?;
    let m = matmul(
        wis.as_tensor(),
        &matmul(pair.between.as_tensor(), wis.as_tensor())?,
    )?;
    let eig = sym_eig(&SymmetricMatrix::from_symmetrized(&m))?;
    Ok(eig.values.iter().take(r).sum())
}

/// Principal angles (radians, ascending) between the column spans of two
/// bases of equal rank.
pub fn principal_angles(a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    use crate::numerics::linalg::orthonormalize_columns;
    let qa = orthonormalize_columns(a)?;
    let qb = orthonormalize_columns(b)?;
    let m = matmul(&qa.transpose(), &qb)?;
    let mtm = SymmetricMatrix::from_symmetrized(&matmul(&m.transpose(), &m)?);
    let eig = sym_eig(&mtm)?;
    Ok(eig
        .values
        .iter()
        .map(|&s2| s2.clamp(0.0, 1.0).sqrt().acos())
        .collect())
}
