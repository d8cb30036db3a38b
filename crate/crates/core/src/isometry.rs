//! Diffeomorphisms between charts, pushforwards, isometry checks and the commutation of
//! pullback with horizontal Laplacians.

use nalgebra::DVector;
use serde::Serialize;

use crate::distribution::{membership_in, Distribution, LocalPresentation, MembershipMode, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::laplacian::HorizontalLaplacian;
use crate::linalg::{self, ExprMatrix};
use crate::metric::{fiber_norm, induced_cometric};
use crate::symexpr::{equal_on, Chart, EqualityWitness, Expr};
use crate::vectorcalc::{Density, VectorField};

const SAMPLE_SEED: u64 = 0x150;

/// A map between charts given by both directions.
#[derive(Clone, Debug)]
pub struct Diffeo {
    pub src: Chart,
    pub dst: Chart,
    pub forward: Vec<Expr>,
    pub inverse: Vec<Expr>,
    pub jacobian: ExprMatrix,
}

fn jacobian(f: &[Expr], n: usize) -> ExprMatrix {
    f.iter().map(|fi| (0..n).map(|j| fi.differentiate(j)).collect()).collect()
}

fn is_identity_map(composed: &[Expr], chart: &Chart) -> Option<String> {
    for (i, c) in composed.iter().enumerate() {
        let w = equal_on(c, &Expr::coord(i), &chart.region);
        if !w.holds() {
            return Some(format!("component {i}: {w:?}"));
        }
    }
    None
}

impl Diffeo {
    pub fn new(src: Chart, dst: Chart, forward: Vec<Expr>, inverse: Vec<Expr>) -> Result<Self> {
        let n = src.dim();
        if dst.dim() != n || forward.len() != n || inverse.len() != n {
            return Err(Error::DimensionMismatch("a diffeomorphism needs n components in both directions between n-dimensional charts".into()));
        }
        if let Some(why) = is_identity_map(&inverse.iter().map(|g| g.substitute(&forward)).collect::<Result<Vec<_>>>()?, &src) {
            return Err(Error::InvalidInput(format!("inverse after forward is not the identity: {why}")));
        }
        if let Some(why) = is_identity_map(&forward.iter().map(|g| g.substitute(&inverse)).collect::<Result<Vec<_>>>()?, &dst) {
            return Err(Error::InvalidInput(format!("forward after inverse is not the identity: {why}")));
        }
        let jac = jacobian(&forward, n);
        let det = linalg::det(&jac).compile();
        for p in src.region.sample_points(32, SAMPLE_SEED) {
            if det.eval(&p)?.abs() < 1e-12 {
                return Err(Error::InvalidInput(format!("Jacobian is singular at {p:?}")));
            }
        }
        Ok(Diffeo { src, dst, forward, inverse, jacobian: jac })
    }

    pub fn parse(src: Chart, dst: Chart, forward: &[&str], inverse: &[&str]) -> Result<Self> {
        let f = forward.iter().map(|s| Expr::parse(s, &src)).collect::<Result<_>>()?;
        let g = inverse.iter().map(|s| Expr::parse(s, &dst)).collect::<Result<_>>()?;
        Self::new(src, dst, f, g)
    }

    pub fn identity(chart: Chart) -> Self {
        let n = chart.dim();
        let id: Vec<Expr> = (0..n).map(Expr::coord).collect();
        Diffeo { src: chart.clone(), dst: chart, forward: id.clone(), inverse: id, jacobian: linalg::identity(n) }
    }

    pub fn dim(&self) -> usize {
        self.src.dim()
    }

    pub fn inverted(&self) -> Self {
        Diffeo {
            src: self.dst.clone(),
            dst: self.src.clone(),
            forward: self.inverse.clone(),
            inverse: self.forward.clone(),
            jacobian: jacobian(&self.inverse, self.dim()),
        }
    }

    /// `self ∘ g`.
    pub fn after(&self, g: &Diffeo) -> Result<Diffeo> {
        let forward = self.forward.iter().map(|e| e.substitute(&g.forward)).collect::<Result<Vec<_>>>()?;
        let inverse = g.inverse.iter().map(|e| e.substitute(&self.inverse)).collect::<Result<Vec<_>>>()?;
        let jac = jacobian(&forward, self.dim());
        Ok(Diffeo { src: g.src.clone(), dst: self.dst.clone(), forward, inverse, jacobian: jac })
    }

    /// `u ∘ f` for a function on the target chart.
    pub fn pull_function(&self, u: &Expr) -> Result<Expr> {
        u.substitute(&self.forward)
    }

    pub fn point(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward.iter().map(|e| e.evaluate(x)).collect()
    }
}

/// `(f_*X)(y) = J(f⁻¹(y)) X(f⁻¹(y))`.
pub fn pushforward(f: &Diffeo, x: &VectorField) -> Result<VectorField> {
    let n = f.dim();
    if x.dim() != n {
        return Err(Error::DimensionMismatch("field and map live on different dimensions".into()));
    }
    let coeffs = (0..n)
        .map(|i| Expr::sum((0..n).map(|j| &f.jacobian[i][j] * &x.coeffs[j])).substitute(&f.inverse))
        .collect::<Result<_>>()?;
    Ok(VectorField::new(coeffs))
}

#[derive(Clone, Debug, Serialize)]
pub struct PreservationReport {
    pub preserved: bool,
    /// Certificates for `f_* X_a ∈ D′`, then for `f⁻¹_* X′_b ∈ D`.
    pub forward: Vec<String>,
    pub backward: Vec<String>,
}

pub fn check_distribution_preserved(f: &Diffeo, d: &Distribution, d2: &Distribution) -> Result<PreservationReport> {
    let mut preserved = true;
    let mut forward = vec![];
    for x in &d.generators {
        let y = pushforward(f, x)?;
        let m = membership_in(&y, &d2.generators, &d2.chart.region, MembershipMode::Symbolic, DEFAULT_TOL)?;
        preserved &= m.member;
        forward.push(format!("{}: {}", if m.member { "member" } else { "not a member" }, m.certificate));
    }
    let g = f.inverted();
    let mut backward = vec![];
    for x in &d2.generators {
        let y = pushforward(&g, x)?;
        let m = membership_in(&y, &d.generators, &d.chart.region, MembershipMode::Symbolic, DEFAULT_TOL)?;
        preserved &= m.member;
        backward.push(format!("{}: {}", if m.member { "member" } else { "not a member" }, m.certificate));
    }
    Ok(PreservationReport { preserved, forward, backward })
}

#[derive(Clone, Debug, Serialize)]
pub struct IsometryReport {
    pub isometry: bool,
    pub canonical: bool,
    pub max_defect: f64,
    pub fiber_norm_checks: usize,
    pub fiber_norm_defect: f64,
}

/// Compares `g′*(f(x))` with `J(x) g*(x) J(x)ᵀ`, then spot-checks fiber norms of pushed generators.
pub fn check_isometry(f: &Diffeo, p: &LocalPresentation, p2: &LocalPresentation) -> Result<IsometryReport> {
    let g = induced_cometric(p)?.matrix;
    let g2 = induced_cometric(p2)?.matrix;
    let jt = linalg::transpose(&f.jacobian);
    let pushed = linalg::mat_mul(&linalg::mat_mul(&f.jacobian, &g), &jt);
    let mut canonical = true;
    let mut max_defect = 0.0f64;
    let mut isometry = true;
    for (i, row) in g2.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            let lhs = e.substitute(&f.forward)?;
            match equal_on(&lhs, &pushed[i][j], p.base_region()) {
                EqualityWitness::Canonical => {}
                EqualityWitness::Sampled { max_defect: d, .. } => {
                    canonical = false;
                    max_defect = max_defect.max(d);
                }
                EqualityWitness::Differs { defect, .. } => {
                    canonical = false;
                    isometry = false;
                    max_defect = max_defect.max(defect);
                }
                EqualityWitness::Undecided { .. } => {
                    canonical = false;
                    isometry = false;
                    max_defect = f64::INFINITY;
                }
            }
        }
    }
    let (checks, fiber_norm_defect) = fiber_spot_checks(f, p, p2)?;
    if fiber_norm_defect > 1e-8 {
        isometry = false;
    }
    Ok(IsometryReport { isometry, canonical, max_defect, fiber_norm_checks: checks, fiber_norm_defect })
}

/// `‖[f_*X_a]‖_{f(x)}` against `‖[X_a]‖_x` at 16 sample points.
fn fiber_spot_checks(f: &Diffeo, p: &LocalPresentation, p2: &LocalPresentation) -> Result<(usize, f64)> {
    let pushed: Vec<VectorField> = p.anchor.iter().map(|x| pushforward(f, x)).collect::<Result<_>>()?;
    let mut worst = 0.0f64;
    let mut count = 0;
    for x in p.base_region().sample_points(16, SAMPLE_SEED + 1) {
        let y = f.point(&x)?;
        if !p2.base_region().contains(&y) {
            continue;
        }
        let Ok(frame) = crate::distribution::evaluate_fields(&p2.anchor, &y) else { continue };
        for (a, v) in pushed.iter().enumerate() {
            let mut e = vec![0.0; p.rank()];
            e[a] = 1.0;
            let Ok(n1) = fiber_norm(p, &x, &e) else { continue };
            let b = DVector::from_vec(v.evaluate(&y)?);
            let (c, _) = linalg::lstsq(&frame, &b);
            let Ok(n2) = fiber_norm(p2, &y, c.as_slice()) else { continue };
            worst = worst.max((n1 - n2).abs() / n1.max(1.0));
            count += 1;
        }
    }
    Ok((count, worst))
}

/// Weight of `f*μ′`: `m′(f(x)) |det J(x)|`.
pub fn pullback_density(f: &Diffeo, mu2: &Density) -> Result<Expr> {
    let det = linalg::det(&f.jacobian);
    let p = f.src.region.sample_points(1, SAMPLE_SEED + 2).remove(0);
    let sign = if det.evaluate(&p)? < 0.0 { -1 } else { 1 };
    Ok(&mu2.weight.substitute(&f.forward)? * &det.scale(&crate::symexpr::q(sign)))
}

#[derive(Clone, Debug, Serialize)]
pub struct CommutationReport {
    pub corpus_size: usize,
    pub canonical_zero: bool,
    pub max_sampled_residual: f64,
    #[serde(skip)]
    pub residuals: Vec<Expr>,
}

/// Test functions on an `n`-dimensional chart.
pub fn function_corpus(n: usize) -> Vec<Expr> {
    let c = |i: usize| Expr::coord(i % n);
    let mut out = vec![];
    for i in 0..n {
        out.push(c(i));
    }
    for i in 0..n {
        out.push(&c(i) * &c(i + 1));
    }
    let extra = [
        &(&c(0) * &c(0)) * &c(0),
        &(&c(0) * &c(0)) - &(&c(1) * &c(n.saturating_sub(1))),
        Expr::exp(c(0)),
        &Expr::exp(c(1)) * &c(0),
        &(&c(0) * &c(1)) * &(&c(0) + &c(n.saturating_sub(1))),
        &(&c(1) * &c(1)) * &(&c(1) * &c(1)),
    ];
    out.extend(extra);
    out.truncate(12);
    while out.len() < 12 {
        let k = out.len() as i64;
        out.push(Expr::coord_power(&vec![k % 3 + 1; n]));
    }
    out
}

/// `f* ∘ Δ′ − Δ ∘ f*` on a 12-function corpus; requires `f*μ′ = μ`.
pub fn check_laplacian_commutation(f: &Diffeo, lap: &HorizontalLaplacian, lap2: &HorizontalLaplacian, exec: Exec) -> Result<CommutationReport> {
    let w = pullback_density(f, &lap2.density)?;
    let region = lap.presentation.base_region();
    match equal_on(&w, &lap.density.weight, region) {
        EqualityWitness::Canonical | EqualityWitness::Sampled { .. } => {}
        EqualityWitness::Differs { defect, .. } => return Err(Error::DensityMismatch(defect)),
        EqualityWitness::Undecided { .. } => return Err(Error::DensityMismatch(f64::NAN)),
    }
    let corpus = function_corpus(f.dim());
    let residuals = exec.try_map_range(corpus.len(), |i| -> Result<Expr> {
        let u = &corpus[i];
        let a = f.pull_function(&lap2.operator.apply(u))?;
        let b = lap.operator.apply(&f.pull_function(u)?);
        Ok(&a - &b)
    })?;
    let canonical_zero = residuals.iter().all(Expr::is_zero);
    let mut max_sampled_residual = 0.0f64;
    for r in residuals.iter().filter(|r| !r.is_zero()) {
        max_sampled_residual = max_sampled_residual.max(match equal_on(r, &Expr::zero(), region) {
            EqualityWitness::Canonical => 0.0,
            EqualityWitness::Sampled { max_defect, .. } => max_defect,
            EqualityWitness::Differs { defect, .. } => defect,
            EqualityWitness::Undecided { .. } => f64::INFINITY,
        });
    }
    Ok(CommutationReport { corpus_size: corpus.len(), canonical_zero, max_sampled_residual, residuals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laplacian::horizontal_laplacian;

    fn c(n: usize) -> Chart {
        Chart::standard(n, None)
    }

    fn rotation() -> Diffeo {
        Diffeo::parse(c(2), c(2), &["3/5*x - 4/5*y", "4/5*x + 3/5*y"], &["3/5*x + 4/5*y", "-4/5*x + 3/5*y"]).unwrap()
    }

    fn heis_translation() -> Diffeo {
        // left translation by (1, 2, 3)
        Diffeo::parse(c(3), c(3), &["x + 1", "y + 2", "z + 3 + 1/2*(y - 2*x)"], &["x - 1", "y - 2", "z - 3 - 1/2*(y - 2*x)"]).unwrap()
    }

    fn pres(gens: &[&[&str]], n: usize) -> LocalPresentation {
        let ch = c(n);
        let a = gens.iter().map(|g| VectorField::parse(g, &ch).unwrap()).collect();
        LocalPresentation::new(ch, a).unwrap()
    }

    fn gl2() -> LocalPresentation {
        pres(&[&["x", "0"], &["0", "x"], &["y", "0"], &["0", "y"]], 2)
    }

    fn heis() -> LocalPresentation {
        pres(&[&["1", "0", "-1/2*y"], &["0", "1", "1/2*x"]], 3)
    }

    #[test]
    fn bad_inverse_is_rejected() {
        assert!(Diffeo::parse(c(1), c(1), &["2*x"], &["x"]).is_err());
    }

    #[test]
    fn pushforwards() {
        let t = Diffeo::parse(c(2), c(2), &["x + 1", "y"], &["x - 1", "y"]).unwrap();
        let dx = VectorField::partial(2, 0);
        assert_eq!(pushforward(&t, &dx).unwrap(), dx);
        let radial = VectorField::parse(&["x", "y"], &c(2)).unwrap();
        assert_eq!(pushforward(&rotation(), &radial).unwrap(), radial);
        let x = heis().anchor[0].clone();
        assert_eq!(pushforward(&heis_translation(), &x).unwrap(), x);
    }

    #[test]
    fn functorial_and_natural() {
        let f = rotation();
        let g = Diffeo::parse(c(2), c(2), &["x + y^3", "y"], &["x - y^3", "y"]).unwrap();
        let fg = f.after(&g).unwrap();
        let x = VectorField::parse(&["x*y", "1 + x^2"], &c(2)).unwrap();
        let y = VectorField::parse(&["y", "x^3"], &c(2)).unwrap();
        assert_eq!(pushforward(&fg, &x).unwrap(), pushforward(&f, &pushforward(&g, &x).unwrap()).unwrap());
        let lhs = pushforward(&g, &x.bracket(&y).unwrap()).unwrap();
        let rhs = pushforward(&g, &x).unwrap().bracket(&pushforward(&g, &y).unwrap()).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn preservation() {
        let d = gl2().as_distribution("gl2").unwrap();
        assert!(check_distribution_preserved(&rotation(), &d, &d).unwrap().preserved);
        let t = Diffeo::parse(c(2), c(2), &["x + 1", "y"], &["x - 1", "y"]).unwrap();
        assert!(!check_distribution_preserved(&t, &d, &d).unwrap().preserved);
        assert!(check_distribution_preserved(&Diffeo::identity(c(2)), &d, &d).unwrap().preserved);
    }

    #[test]
    fn isometries() {
        let r = check_isometry(&rotation(), &gl2(), &gl2()).unwrap();
        assert!(r.isometry && r.canonical, "{r:?}");
        assert!(r.fiber_norm_checks > 0);
        let h = check_isometry(&heis_translation(), &heis(), &heis()).unwrap();
        assert!(h.isometry && h.canonical, "{h:?}");
        let s = Diffeo::parse(c(2), c(2), &["2*x", "2*y"], &["1/2*x", "1/2*y"]).unwrap();
        assert!(check_isometry(&s, &gl2(), &gl2()).unwrap().isometry);
    }

    #[test]
    fn commutation() {
        let mu = Density::lebesgue();
        let l = horizontal_laplacian(&gl2(), &mu).unwrap();
        let r = check_laplacian_commutation(&rotation(), &l, &l, Exec::default()).unwrap();
        assert!(r.canonical_zero);
        assert_eq!(r.corpus_size, 12);
        let id = check_laplacian_commutation(&Diffeo::identity(c(2)), &l, &l, Exec::default()).unwrap();
        assert!(id.canonical_zero);
        let h = horizontal_laplacian(&heis(), &mu).unwrap();
        assert!(check_laplacian_commutation(&heis_translation(), &h, &h, Exec::default()).unwrap().canonical_zero);
        let s = Diffeo::parse(c(2), c(2), &["2*x", "2*y"], &["1/2*x", "1/2*y"]).unwrap();
        assert!(matches!(check_laplacian_commutation(&s, &l, &l, Exec::default()), Err(Error::DensityMismatch(_))));
    }
}
