//! Metrics on distributions induced by frame metrics on local presentations.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::distribution::{stable_kernel, LocalPresentation, DEFAULT_JET_ORDER};
use crate::error::{Error, Result};
use crate::linalg::{self, ExprMatrix};
use crate::symexpr::{Chart, Expr};

pub use crate::distribution::pullback_metric_along_submersion;

/// Symmetric `n × n` matrix `R G⁻¹ Rᵀ` of a presentation with anchor matrix `R`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cometric {
    pub matrix: ExprMatrix,
    /// Anchor matrix `R` and inverse frame metric with `g* = R G⁻¹ Rᵀ`.
    factor: Option<(ExprMatrix, ExprMatrix)>,
}

impl Cometric {
    pub fn dim(&self) -> usize {
        self.matrix.len()
    }

    pub fn evaluate(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        linalg::eval_matrix(&self.matrix, p)
    }

    /// Rank at `p`, read off the factor `R L` with `L Lᵀ = G⁻¹` so that small singular values
    /// are not squared below the cutoff.
    pub fn rank_at(&self, p: &[f64]) -> Result<usize> {
        if let Some((r, ginv)) = &self.factor {
            let r = linalg::eval_matrix(r, p)?;
            if let Some(c) = linalg::eval_matrix(ginv, p)?.cholesky() {
                return Ok(linalg::rank(&(r * c.l())));
            }
        }
        Ok(linalg::rank(&self.evaluate(p)?))
    }

    /// `ξᵀ g* ξ` at `p`.
    pub fn norm_sq(&self, p: &[f64], xi: &[f64]) -> Result<f64> {
        let g = self.evaluate(p)?;
        let v = DVector::from_column_slice(xi);
        Ok((v.transpose() * g * &v)[(0, 0)])
    }

    pub fn render(&self, chart: &Chart) -> Vec<Vec<String>> {
        self.matrix.iter().map(|r| r.iter().map(|e| e.render(chart)).collect()).collect()
    }
}

/// Inverse frame metric, with a fast path for the identity.
pub fn frame_cometric(p: &LocalPresentation) -> Result<ExprMatrix> {
    if linalg::is_identity(&p.frame_metric) {
        return Ok(p.frame_metric.clone());
    }
    linalg::inverse(&p.frame_metric, p.base_region()).ok_or_else(|| Error::RankDeficient("frame metric is singular".into()))
}

pub fn induced_cometric(p: &LocalPresentation) -> Result<Cometric> {
    let r = p.anchor_matrix();
    let ginv = frame_cometric(p)?;
    let matrix = if linalg::is_identity(&ginv) {
        linalg::mat_mul(&r, &linalg::transpose(&r))
    } else {
        linalg::mat_mul(&linalg::mat_mul(&r, &ginv), &linalg::transpose(&r))
    };
    Ok(Cometric { matrix, factor: Some((r, ginv)) })
}

/// `⟨ω, ω'⟩` on `E*` for two realizations: `ωᵀ G⁻¹ ω'`.
pub fn dual_inner(p: &LocalPresentation, a: &[Expr], b: &[Expr]) -> Result<Expr> {
    let ginv = frame_cometric(p)?;
    let k = p.rank();
    Ok(Expr::sum((0..k).flat_map(|i| {
        let ginv = &ginv;
        (0..k).filter(move |&j| !ginv[i][j].is_zero()).map(move |j| &(&a[i] * &ginv[i][j]) * &b[j])
    })))
}

fn frame_factor(p: &LocalPresentation, x: &[f64]) -> Result<DMatrix<f64>> {
    let g = linalg::eval_matrix(&p.frame_metric, x)?;
    g.cholesky()
        .map(|c| c.l().transpose())
        .ok_or_else(|| Error::InvalidInput(format!("frame metric not positive definite at {x:?}")))
}

/// Projection of `c` onto the `G`-orthogonal complement of the kernel of `E_x -> fiber_x`,
/// expressed in `G^{1/2}` coordinates.
fn reduced(p: &LocalPresentation, x: &[f64], c: &[f64]) -> Result<DVector<f64>> {
    let kern = stable_kernel(&p.anchor, x, DEFAULT_JET_ORDER)?;
    let l = frame_factor(p, x)?;
    let lc = &l * DVector::from_column_slice(c);
    if kern.ncols() == 0 {
        return Ok(lc);
    }
    let lk = &l * kern;
    let (z, _) = linalg::lstsq(&lk, &lc);
    Ok(lc - lk * z)
}

/// Quotient norm of the class of `Σ coeffs_j σ_j` in the fiber at `x`.
pub fn fiber_norm(p: &LocalPresentation, x: &[f64], coeffs: &[f64]) -> Result<f64> {
    if coeffs.len() != p.rank() {
        return Err(Error::DimensionMismatch(format!("{} coefficients for a rank {} presentation", coeffs.len(), p.rank())));
    }
    Ok(reduced(p, x, coeffs)?.norm())
}

/// Gram matrix of the fiber inner product on the classes of a fiber basis.
#[derive(Clone, Debug, Serialize)]
pub struct FiberMetricProbe {
    pub point: Vec<f64>,
    pub basis_indices: Vec<usize>,
    pub gram: Vec<Vec<f64>>,
}

pub fn fiber_metric_probe(p: &LocalPresentation, x: &[f64]) -> Result<FiberMetricProbe> {
    let d = p.as_distribution("probe")?;
    let report = crate::distribution::fiber_dims(&d, x, DEFAULT_JET_ORDER)?;
    let k = p.rank();
    let vecs: Vec<DVector<f64>> = report
        .basis_indices
        .iter()
        .map(|&j| {
            let mut e = vec![0.0; k];
            e[j] = 1.0;
            reduced(p, x, &e)
        })
        .collect::<Result<_>>()?;
    let gram = vecs.iter().map(|a| vecs.iter().map(|b| a.dot(b)).collect()).collect();
    Ok(FiberMetricProbe { point: x.to_vec(), basis_indices: report.basis_indices, gram })
}
