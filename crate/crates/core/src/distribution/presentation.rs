use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::membership::{membership_in, MembershipMode, DEFAULT_TOL};
use super::{evaluate_fields, fiber_dims, restrict_fields, Distribution, DEFAULT_JET_ORDER};
use crate::error::{Error, Result};
use crate::linalg::{self, ExprMatrix};
use crate::symexpr::{Chart, Expr, Region};
use crate::vectorcalc::VectorField;

const REGION_HALVINGS: usize = 10;

/// Trivial anchored bundle over a box: anchor fields and a frame metric.
#[derive(Clone, Debug)]
pub struct LocalPresentation {
    /// Chart whose region is the base box of the presentation.
    pub chart: Chart,
    pub anchor: Vec<VectorField>,
    pub frame_metric: ExprMatrix,
    /// Point at which the presentation is minimal, when known.
    pub center: Option<Vec<f64>>,
}

impl LocalPresentation {
    /// Presentation with the identity frame metric.
    pub fn new(chart: Chart, anchor: Vec<VectorField>) -> Result<Self> {
        let k = anchor.len();
        Self::with_metric(chart, anchor, linalg::identity(k))
    }

    /// Checks symmetry and positive definiteness of the frame metric at 32 samples.
    pub fn with_metric(chart: Chart, anchor: Vec<VectorField>, frame_metric: ExprMatrix) -> Result<Self> {
        let k = anchor.len();
        if frame_metric.len() != k || frame_metric.iter().any(|r| r.len() != k) {
            return Err(Error::DimensionMismatch(format!("frame metric must be {k}x{k}")));
        }
        if let Some(a) = anchor.iter().find(|a| a.dim() != chart.dim()) {
            return Err(Error::DimensionMismatch(format!("anchor field of dimension {} on a {}-dimensional chart", a.dim(), chart.dim())));
        }
        for i in 0..k {
            for j in 0..i {
                if !linalg::is_zero_on(&(&frame_metric[i][j] - &frame_metric[j][i]), &chart.region) {
                    return Err(Error::InvalidInput("frame metric is not symmetric".into()));
                }
            }
        }
        if !linalg::is_identity(&frame_metric) {
            for p in chart.region.sample_points(32, 0x6672_616d) {
                let g = linalg::eval_matrix(&frame_metric, &p)?;
                if g.cholesky().is_none() {
                    return Err(Error::InvalidInput(format!("frame metric is not positive definite at {p:?}")));
                }
            }
        }
        Ok(LocalPresentation { chart, anchor, frame_metric, center: None })
    }

    pub fn base_region(&self) -> &Region {
        &self.chart.region
    }

    pub fn rank(&self) -> usize {
        self.anchor.len()
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn anchor_matrix(&self) -> ExprMatrix {
        super::anchor_matrix(&self.anchor, self.dim())
    }

    /// Same anchor and metric over a smaller box.
    pub fn restricted(&self, region: &Region) -> Result<Self> {
        let chart = self.chart.with_region(region.clone())?;
        Ok(LocalPresentation {
            anchor: restrict_fields(&self.anchor, region),
            frame_metric: self.frame_metric.iter().map(|r| r.iter().map(|e| e.restrict(region)).collect()).collect(),
            chart,
            center: self.center.clone(),
        })
    }

    pub fn as_distribution(&self, label: &str) -> Result<Distribution> {
        Distribution::new(self.chart.clone(), self.anchor.clone(), label)
    }
}

fn generates(gens: &[VectorField], anchor: &[VectorField], region: &Region) -> bool {
    gens.iter().all(|g| {
        membership_in(g, anchor, region, MembershipMode::Symbolic, DEFAULT_TOL)
            .map(|m| m.member)
            .unwrap_or(false)
    })
}

/// Minimal local presentation at `p`: the fiber basis generators over the largest
/// tested box around `p` on which they still generate.
pub fn minimal_presentation(d: &Distribution, p: &[f64]) -> Result<LocalPresentation> {
    let report = fiber_dims(d, p, DEFAULT_JET_ORDER).map_err(|e| match e {
        Error::JetUnstable { .. } => Error::NoStableBasis(e.to_string()),
        other => other,
    })?;
    let anchor: Vec<VectorField> = report.basis_indices.iter().map(|&j| d.generators[j].clone()).collect();
    let mut candidates = vec![d.chart.region.clone()];
    let scale = d
        .chart
        .region
        .sampling_box()
        .iter()
        .map(|(lo, hi)| hi - lo)
        .fold(0.0f64, f64::max);
    let mut r = scale / 2.0;
    for _ in 0..REGION_HALVINGS {
        if let Some(b) = d.chart.region.around(p, r) {
            candidates.push(b);
        }
        r /= 2.0;
    }
    for region in candidates {
        if !region.contains(p) {
            continue;
        }
        if generates(&d.generators, &anchor, &region) {
            let chart = d.chart.with_region(region.clone())?;
            let mut lp = LocalPresentation::new(chart, restrict_fields(&anchor, &region))?;
            lp.center = Some(p.to_vec());
            return Ok(lp);
        }
    }
    Err(Error::NoStableBasis(format!("no box around {p:?} on which the fiber basis generates")))
}

fn solve_rows(src: &[VectorField], dst: &[VectorField], region: &Region) -> Result<ExprMatrix> {
    src.iter()
        .enumerate()
        .map(|(i, f)| {
            let m = membership_in(f, dst, region, MembershipMode::Symbolic, DEFAULT_TOL)?;
            match (m.member, m.coefficients) {
                (true, Some(c)) => Ok(c),
                _ => Err(Error::NotEquivalent(format!("anchor field {i} has no membership certificate: {}", m.certificate))),
            }
        })
        .collect()
}

/// Matrix `A` with `src.anchor[i] = Σ_j A[i][j] dst.anchor[j]` over the overlap.
pub fn transition_matrix(src: &LocalPresentation, dst: &LocalPresentation) -> Result<ExprMatrix> {
    let overlap = src
        .base_region()
        .intersect(dst.base_region())
        .ok_or_else(|| Error::NotEquivalent("base regions do not overlap".into()))?;
    let a = solve_rows(&src.anchor, &dst.anchor, &overlap)?;
    let center = dst.center.clone().or_else(|| src.center.clone()).filter(|c| overlap.contains(c));
    if let Some(x) = center {
        // An independent solve with the destination frame reversed must agree at x.
        let rev: Vec<VectorField> = dst.anchor.iter().rev().cloned().collect();
        if let Ok(b) = solve_rows(&src.anchor, &rev, &overlap) {
            let k = dst.rank();
            for (ra, rb) in a.iter().zip(&b) {
                for j in 0..k {
                    let va = ra[j].evaluate(&x)?;
                    let vb = rb[k - 1 - j].evaluate(&x)?;
                    if (va - vb).abs() > 1e-9 * (1.0 + va.abs()) {
                        return Err(Error::NotEquivalent(format!("transition is not unique at {x:?}")));
                    }
                }
            }
        }
    }
    Ok(a)
}

/// Metric on the target of the surjection `p` (`k × ℓ`) making it a Riemannian
/// submersion from `(R^ℓ, g_src)`: `G_dst = (P G_src⁻¹ Pᵀ)⁻¹`.
pub fn pullback_metric_along_submersion(p: &ExprMatrix, g_src: &ExprMatrix, region: &Region) -> Result<ExprMatrix> {
    let k = p.len();
    let l = g_src.len();
    if p.iter().any(|r| r.len() != l) {
        return Err(Error::DimensionMismatch(format!("submersion must be {k}x{l}")));
    }
    let ginv = linalg::inverse(g_src, region).ok_or_else(|| Error::RankDeficient("source frame metric is singular".into()))?;
    let m = linalg::mat_mul(&linalg::mat_mul(p, &ginv), &linalg::transpose(p));
    let pts = region.sample_points(16, 0x7375_626d);
    for x in &pts {
        let pm = linalg::eval_matrix(p, x)?;
        if linalg::rank(&pm) < k {
            return Err(Error::RankDeficient(format!("submersion has rank below {k} at {x:?}")));
        }
    }
    let g_dst = linalg::inverse(&m, region).ok_or_else(|| Error::RankDeficient("induced cometric is singular".into()))?;
    // Adjoint isometry: <Pᵀu, Pᵀv>_{src*} = <u, v>_{dst*}.
    let mut rng = ChaCha8Rng::seed_from_u64(0x6973_6f6d);
    for x in &pts {
        let pm = linalg::eval_matrix(p, x)?;
        let gs = linalg::eval_matrix(g_src, x)?;
        let gd = linalg::eval_matrix(&g_dst, x)?;
        let (Some(gs_inv), Some(gd_inv)) = (gs.try_inverse(), gd.try_inverse()) else {
            return Err(Error::RankDeficient(format!("metric not invertible at {x:?}")));
        };
        let u = DMatrix::from_fn(k, 1, |_, _| rng.random_range(-1.0..1.0));
        let v = DMatrix::from_fn(k, 1, |_, _| rng.random_range(-1.0..1.0));
        let lhs = (pm.transpose() * &u).transpose() * &gs_inv * (pm.transpose() * &v);
        let rhs = u.transpose() * gd_inv * &v;
        if (lhs[(0, 0)] - rhs[(0, 0)]).abs() > 1e-9 * (1.0 + rhs[(0, 0)].abs()) {
            return Err(Error::RankDeficient(format!("isometry check failed at {x:?}")));
        }
    }
    Ok(g_dst)
}

/// Fiber product of two presentations over a minimal one at `x`.
#[derive(Clone, Debug)]
pub struct EquivalenceWitness {
    pub presentation: LocalPresentation,
    /// `rank(a) × rank(W)`: frame of `W` in terms of the frame of `a`.
    pub proj_a: ExprMatrix,
    pub proj_b: ExprMatrix,
    pub minimal_rank: usize,
    /// Largest sampled defect of the two commuting triangles.
    pub residual: f64,
    /// Transition from `a` to `b` when one exists.
    pub transition_ab: Option<ExprMatrix>,
}

pub fn pullback_equivalence(a: &LocalPresentation, b: &LocalPresentation, x: &[f64]) -> Result<EquivalenceWitness> {
    let overlap = a
        .base_region()
        .intersect(b.base_region())
        .filter(|r| r.contains(x))
        .ok_or_else(|| Error::NotEquivalent(format!("{x:?} is not in both base regions")))?;
    let a = a.restricted(&overlap)?;
    let b = b.restricted(&overlap)?;
    let m = minimal_presentation(&a.as_distribution("a")?, x)?;
    let m = m.restricted(&overlap)?;
    let ta = transition_matrix(&a, &m)?;
    let tb = transition_matrix(&b, &m)?;
    let (ra, rb, mk) = (a.rank(), b.rank(), m.rank());
    // Kernel of [Aᵀ | -Bᵀ].
    let lhs: ExprMatrix = (0..mk)
        .map(|j| (0..ra).map(|i| ta[i][j].clone()).chain((0..rb).map(|i| -tb[i][j].clone())).collect())
        .collect();
    let sol = linalg::solve_expr(&lhs, &vec![Expr::zero(); mk], &overlap)
        .ok_or_else(|| Error::NotEquivalent("fiber product system is inconsistent".into()))?;
    let q = sol.nullspace.len();
    let proj_a: ExprMatrix = (0..ra).map(|i| (0..q).map(|c| sol.nullspace[c][i].clone()).collect()).collect();
    let proj_b: ExprMatrix = (0..rb).map(|i| (0..q).map(|c| sol.nullspace[c][ra + i].clone()).collect()).collect();
    let combine = |proj: &ExprMatrix, anchor: &[VectorField], c: usize| {
        anchor.iter().enumerate().fold(VectorField::zero(a.dim()), |acc, (i, f)| acc.add(&f.scale(&proj[i][c])))
    };
    let w_anchor: Vec<VectorField> = (0..q).map(|c| combine(&proj_a, &a.anchor, c)).collect();
    let w_b: Vec<VectorField> = (0..q).map(|c| combine(&proj_b, &b.anchor, c)).collect();
    let mut residual = 0.0f64;
    for p in overlap.sample_points(64, 0x7769_746e) {
        let (Ok(u), Ok(v)) = (evaluate_fields(&w_anchor, &p), evaluate_fields(&w_b, &p)) else { continue };
        residual = residual.max((u - v).abs().max());
    }
    if residual > 1e-10 {
        return Err(Error::NotEquivalent(format!("commuting triangle defect {residual:.3e}")));
    }
    let mut presentation = LocalPresentation::new(a.chart.clone(), w_anchor)?;
    presentation.center = Some(x.to_vec());
    Ok(EquivalenceWitness {
        presentation,
        proj_a,
        proj_b,
        minimal_rank: mk,
        residual,
        transition_ab: transition_matrix(&a, &b).ok(),
    })
}
