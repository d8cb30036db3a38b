//! Horizontal differential, its adjoint and the horizontal Laplacian with its symbols,
//! quadrature identities and partition-of-unity localization.

use nalgebra::DVector;
use num_traits::{Signed, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::distribution::{membership_in, stable_kernel, Distribution, LocalPresentation, MembershipMode, DEFAULT_JET_ORDER, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{self, ExprMatrix};
use crate::metric::{frame_cometric, induced_cometric, Cometric};
use crate::quadrature::{integrate_weighted, nodes_for, BumpTrial, CompiledOperator, TensorRule};
use crate::symexpr::{check_smooth, equal_on, Atom, Chart, Compiled, EqualityWitness, Expr, FlatArg, Region, Q};
use crate::vectorcalc::{divergence, formal_adjoint, DiffOperator, Density, OneForm, VectorField};

/// A section of `E*` over the base box, in the dual frame.
#[derive(Clone, Debug)]
pub struct DualSection {
    pub presentation: LocalPresentation,
    pub realization: Vec<Expr>,
}

impl DualSection {
    pub fn new(presentation: LocalPresentation, realization: Vec<Expr>) -> Result<Self> {
        if realization.len() != presentation.rank() {
            return Err(Error::DimensionMismatch(format!(
                "realization of length {} for a rank {} presentation",
                realization.len(),
                presentation.rank()
            )));
        }
        Ok(DualSection { presentation, realization })
    }

    pub fn is_zero(&self) -> bool {
        self.realization.iter().all(Expr::is_zero)
    }

    /// First component whose realization fails the smoothness check on the base box.
    pub fn smoothness_defect(&self) -> Option<(usize, String)> {
        let region = self.presentation.base_region();
        self.realization.iter().enumerate().find_map(|(a, e)| check_smooth(e, region).map(|why| (a, why)))
    }
}

/// `d_D u`, realized as `(X_a u)_a`.
pub fn horizontal_differential(u: &Expr, p: &LocalPresentation) -> DualSection {
    let realization = p.anchor.iter().map(|x| x.apply(u)).collect();
    DualSection { presentation: p.clone(), realization }
}

/// Realization of a one-form: `(⟨ω, X_a⟩)_a`.
pub fn realize_dual(omega: &OneForm, p: &LocalPresentation) -> Result<DualSection> {
    if omega.coeffs.len() != p.dim() {
        return Err(Error::DimensionMismatch(format!("{}-form components on a {}-dimensional chart", omega.coeffs.len(), p.dim())));
    }
    let realization = p.anchor.iter().map(|x| omega.pair(x)).collect();
    Ok(DualSection { presentation: p.clone(), realization })
}

/// `d*_D ω = Σ_a X_a*(ω̃_a)` with `ω̃ = G⁻¹ ω`.
pub fn adjoint_differential(omega: &DualSection, mu: &Density) -> Result<Expr> {
    let p = &omega.presentation;
    let ginv = frame_cometric(p)?;
    let k = p.rank();
    let tilde: Vec<Expr> = if linalg::is_identity(&ginv) {
        omega.realization.clone()
    } else {
        (0..k).map(|a| Expr::sum((0..k).map(|b| &ginv[a][b] * &omega.realization[b]))).collect()
    };
    let mut acc = Expr::zero();
    for (x, w) in p.anchor.iter().zip(&tilde) {
        if w.is_zero() {
            continue;
        }
        acc = &acc - &(&x.apply(w) + &(&divergence(x, mu)? * w));
    }
    Ok(acc)
}

/// `√e` when `e` is a single term with a square rational coefficient and even exponents.
pub fn exact_sqrt(e: &Expr) -> Option<Expr> {
    if e.num_terms() != 1 {
        return None;
    }
    let (m, c) = e.terms().next()?;
    if c.is_negative() {
        return None;
    }
    let root = |v: &num_bigint::BigInt| {
        let r = v.sqrt();
        (&r * &r == *v).then_some(r)
    };
    let c = Q::new(root(c.numer())?, root(c.denom())?);
    let mut acc = Expr::constant(c);
    for (a, k) in m.atoms() {
        let f = match a {
            // exp(f)^k = exp(k f / 2)^2
            Atom::Exp(arg) => Expr::exp(arg.scale(&Q::new(k.into(), 2.into()))),
            _ if k % 2 == 0 => Expr::atom(a.clone(), k / 2),
            _ => return None,
        };
        acc = &acc * &f;
    }
    Some(acc)
}

/// `L` with `L Lᵀ = A`, built from exact square roots and exact divisions.
pub fn symbolic_cholesky(a: &ExprMatrix) -> Result<ExprMatrix> {
    let k = a.len();
    let mut l = vec![vec![Expr::zero(); k]; k];
    for j in 0..k {
        let d = &a[j][j] - &Expr::sum((0..j).map(|m| &l[j][m] * &l[j][m]));
        if d.is_zero() {
            // a zero pivot is only consistent with a zero column below it
            for i in j + 1..k {
                let r = &a[i][j] - &Expr::sum((0..j).map(|m| &l[i][m] * &l[j][m]));
                if !r.is_zero() {
                    return Err(Error::NonSymbolicCholesky(format!("zero pivot in column {j}")));
                }
            }
            continue;
        }
        let s = exact_sqrt(&d).ok_or_else(|| Error::NonSymbolicCholesky(format!("no exact square root for pivot {j}")))?;
        let sinv = s.recip()?;
        for i in j + 1..k {
            let r = &a[i][j] - &Expr::sum((0..j).map(|m| &l[i][m] * &l[j][m]));
            l[i][j] = &r * &sinv;
        }
        l[j][j] = s;
    }
    Ok(l)
}

/// How the operator was assembled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LaplacianForm {
    SumOfSquares,
    Divergence,
}

/// `Δ_D = d*_D d_D` on a presentation with a density.
#[derive(Clone, Debug)]
pub struct HorizontalLaplacian {
    pub presentation: LocalPresentation,
    pub density: Density,
    pub operator: DiffOperator,
    /// Orthonormalized anchor fields `X̃ = R L`; empty in divergence form.
    pub fields: Vec<VectorField>,
    /// `(X̃_a*, X̃_a)` with `Δ = Σ X̃_a* X̃_a`.
    pub pairs: Vec<(DiffOperator, DiffOperator)>,
    pub cometric: Cometric,
    pub form: LaplacianForm,
}

/// Sum-of-squares Laplacian; fails with `NonSymbolicCholesky` when `G⁻¹` has no exact factor.
pub fn horizontal_laplacian(p: &LocalPresentation, mu: &Density) -> Result<HorizontalLaplacian> {
    let ginv = frame_cometric(p)?;
    let fields = if linalg::is_identity(&ginv) {
        p.anchor.clone()
    } else {
        let l = symbolic_cholesky(&ginv)?;
        let k = p.rank();
        (0..k)
            .map(|b| {
                let mut f = VectorField::zero(p.dim());
                for (a, x) in p.anchor.iter().enumerate() {
                    if !l[a][b].is_zero() {
                        f = f.add(&x.scale(&l[a][b]));
                    }
                }
                f
            })
            .filter(|f| !f.is_zero())
            .collect()
    };
    let mut operator = DiffOperator::zero(p.dim());
    let mut pairs = vec![];
    for x in &fields {
        let xs = formal_adjoint(x, mu)?;
        let xo = x.as_operator();
        operator = operator.add(&xs.compose(&xo)?);
        pairs.push((xs, xo));
    }
    Ok(HorizontalLaplacian {
        presentation: p.clone(),
        density: mu.clone(),
        operator,
        fields,
        pairs,
        cometric: induced_cometric(p)?,
        form: LaplacianForm::SumOfSquares,
    })
}

/// `Δu = −(1/m) Σ ∂_i(m g^{ij} ∂_j u)` straight from the cometric.
pub fn divergence_laplacian(p: &LocalPresentation, mu: &Density) -> Result<HorizontalLaplacian> {
    let cometric = induced_cometric(p)?;
    let operator = divergence_form(&cometric, mu)?;
    Ok(HorizontalLaplacian {
        presentation: p.clone(),
        density: mu.clone(),
        operator,
        fields: vec![],
        pairs: vec![],
        cometric,
        form: LaplacianForm::Divergence,
    })
}

/// Sum-of-squares form when available, divergence form otherwise.
pub fn laplacian_any_form(p: &LocalPresentation, mu: &Density) -> Result<HorizontalLaplacian> {
    match horizontal_laplacian(p, mu) {
        Err(Error::NonSymbolicCholesky(_)) => divergence_laplacian(p, mu),
        r => r,
    }
}

pub fn divergence_form(g: &Cometric, mu: &Density) -> Result<DiffOperator> {
    let n = g.dim();
    let minv = if mu.is_lebesgue() { Expr::one() } else { mu.weight.recip()? };
    let mut op = DiffOperator::zero(n);
    for i in 0..n {
        for j in 0..n {
            let gij = &g.matrix[i][j];
            if gij.is_zero() {
                continue;
            }
            let mut a = vec![0u32; n];
            a[i] += 1;
            a[j] += 1;
            op.add_term(a, -gij.clone());
            let mut b = vec![0u32; n];
            b[j] = 1;
            let c = if mu.is_lebesgue() { gij.differentiate(i) } else { &(&mu.weight * gij).differentiate(i) * &minv };
            op.add_term(b, -c);
        }
    }
    Ok(op)
}

/// `Σ_ab X_a* ∘ (G⁻¹)_ab ∘ X_b`, the composition `d* ∘ d` in the original frame.
pub fn d_star_d(p: &LocalPresentation, mu: &Density) -> Result<DiffOperator> {
    let ginv = frame_cometric(p)?;
    let mut op = DiffOperator::zero(p.dim());
    for (a, xa) in p.anchor.iter().enumerate() {
        let xs = formal_adjoint(xa, mu)?;
        for (b, xb) in p.anchor.iter().enumerate() {
            if ginv[a][b].is_zero() {
                continue;
            }
            let inner = xb.as_operator().scale(&ginv[a][b]);
            op = op.add(&xs.compose(&inner)?);
        }
    }
    Ok(op)
}

impl HorizontalLaplacian {
    pub fn chart(&self) -> &Chart {
        &self.presentation.chart
    }

    pub fn dim(&self) -> usize {
        self.presentation.dim()
    }

    /// Pointwise `Σ (X̃_a w)²`, or `∇wᵀ g* ∇w` in divergence form.
    pub fn energy_density(&self, w: &Expr) -> Expr {
        if self.form == LaplacianForm::SumOfSquares {
            return Expr::sum(self.fields.iter().map(|x| {
                let v = x.apply(w);
                &v * &v
            }));
        }
        let n = self.dim();
        let grad: Vec<Expr> = (0..n).map(|i| w.differentiate(i)).collect();
        Expr::sum((0..n).flat_map(|i| {
            let grad = &grad;
            let g = &self.cometric.matrix;
            (0..n).filter(move |&j| !g[i][j].is_zero()).map(move |j| &(&grad[i] * &g[i][j]) * &grad[j])
        }))
    }
}

/// `σ(x, ξ)` with `ξ` appended to the chart as coordinates `xi1..xin`.
#[derive(Clone, Debug)]
pub struct SymbolFn {
    pub chart: Chart,
    pub expr_in_xi: Expr,
    pub flavor: SymbolFlavor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SymbolFlavor {
    Manifold,
    Longitudinal,
}

impl SymbolFn {
    /// `M` with `σ = ξᵀ M ξ`.
    pub fn coefficient_matrix(&self) -> ExprMatrix {
        let n = self.chart.dim() / 2;
        let mut m = vec![vec![Expr::zero(); n]; n];
        for (mono, c) in self.expr_in_xi.terms() {
            let mut xi = vec![];
            let mut rest = mono.clone();
            for (a, k) in mono.atoms() {
                if let Atom::Coord(i) = a {
                    if *i >= n {
                        xi.extend(std::iter::repeat_n(*i - n, k as usize));
                        rest = rest.without(a);
                    }
                }
            }
            let coef = Expr::monomial(rest, c.clone());
            match xi[..] {
                [i, j] if i == j => m[i][i] = &m[i][i] + &coef,
                [i, j] => {
                    let half = coef.scale(&Q::new(1.into(), 2.into()));
                    m[i][j] = &m[i][j] + &half;
                    m[j][i] = &m[j][i] + &half;
                }
                _ => unreachable!("symbols are homogeneous of degree 2"),
            }
        }
        m
    }

    pub fn render(&self) -> String {
        self.expr_in_xi.render(&self.chart)
    }

    pub fn evaluate(&self, x: &[f64], xi: &[f64]) -> Result<f64> {
        self.expr_in_xi.evaluate(&[x, xi].concat())
    }
}

fn xi_chart(chart: &Chart) -> Result<Chart> {
    let n = chart.dim();
    let mut names = chart.names.clone();
    let mut bounds = chart.region.bounds.clone();
    for i in 1..=n {
        let mut name = format!("xi{i}");
        while names.contains(&name) {
            name.push('_');
        }
        names.push(name);
        bounds.push((f64::NEG_INFINITY, f64::INFINITY));
    }
    Chart::from_names(names, Some(Region::new(bounds)?))
}

/// `σ(x, ξ) = −Σ_{|α|=2} c_α(x) ξ^α`.
pub fn principal_symbol(lap: &HorizontalLaplacian) -> Result<SymbolFn> {
    let n = lap.dim();
    let chart = xi_chart(lap.chart())?;
    let mut acc = Expr::zero();
    for (alpha, c) in &lap.operator.terms {
        if alpha.iter().sum::<u32>() != 2 {
            continue;
        }
        let mut exps = vec![0i64; 2 * n];
        for (i, &a) in alpha.iter().enumerate() {
            exps[n + i] = a as i64;
        }
        acc = &acc - &(c * &Expr::coord_power(&exps));
    }
    Ok(SymbolFn { chart, expr_in_xi: acc, flavor: SymbolFlavor::Manifold })
}

/// `|ι*ξ|²` in the dual fiber metric at `p`, for `ξ` given on the generator classes of `F`.
pub fn longitudinal_symbol(lap: &HorizontalLaplacian, f: &Distribution, p: &[f64], xi_f: &[f64]) -> Result<f64> {
    if xi_f.len() != f.num_generators() {
        return Err(Error::DimensionMismatch(format!("{} covector entries for {} generators", xi_f.len(), f.num_generators())));
    }
    let pres = &lap.presentation;
    let idx: Vec<usize> = pres
        .anchor
        .iter()
        .map(|x| {
            f.generators
                .iter()
                .position(|g| g == x)
                .ok_or_else(|| Error::InvalidInput("the larger distribution must list every generator of D".into()))
        })
        .collect::<Result<_>>()?;
    let kern = stable_kernel(&f.generators, p, DEFAULT_JET_ORDER)?;
    let xi = DVector::from_column_slice(xi_f);
    let scale = 1f64.max(xi.norm());
    if kern.ncols() > 0 && (kern.transpose() * &xi).amax() > 1e-9 * scale {
        return Err(Error::InvalidInput("covector does not vanish on the kernel of the fiber map".into()));
    }
    let v = DVector::from_iterator(idx.len(), idx.iter().map(|&j| xi_f[j]));
    let ginv = linalg::eval_matrix(&frame_cometric(pres)?, p)?;
    Ok((v.transpose() * ginv * &v)[(0, 0)])
}

/// Both sides of the Dirichlet identity for `w = u · bump(box)`.
#[derive(Clone, Debug, Serialize)]
pub struct DirichletCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

pub fn dirichlet_form_check(lap: &HorizontalLaplacian, u: &Expr, bounds: &[(f64, f64)], exec: Exec) -> Result<DirichletCheck> {
    let ev = PointwiseLaplacian::new(lap);
    let w = BumpTrial::new(u, bounds, 2);
    let rule = TensorRule::adapted(bounds, coefficient_exprs(lap).into_iter().chain([u]), nodes_for(bounds.len()));
    let lhs = ev.integrate(&rule, exec, |p| Ok(ev.op(&w, p)? * w.value(p)?))?;
    let rhs = ev.integrate(&rule, exec, |p| ev.energy(&w, p))?;
    Ok(DirichletCheck { lhs, rhs, residual: (lhs - rhs).abs() })
}

/// `|∫(Δu)v dμ − ∫u(Δv) dμ|` for `u, v` multiplied by the box bump.
pub fn symmetry_check(lap: &HorizontalLaplacian, u: &Expr, v: &Expr, bounds: &[(f64, f64)], exec: Exec) -> Result<f64> {
    let ev = PointwiseLaplacian::new(lap);
    let rule = TensorRule::adapted(bounds, coefficient_exprs(lap).into_iter().chain([u, v]), nodes_for(bounds.len()));
    let (u, v) = (BumpTrial::new(u, bounds, 2), BumpTrial::new(v, bounds, 2));
    let a = ev.integrate(&rule, exec, |p| Ok(ev.op(&u, p)? * v.value(p)?))?;
    let c = ev.integrate(&rule, exec, |p| Ok(u.value(p)? * ev.op(&v, p)?))?;
    Ok((a - c).abs())
}

fn coefficient_exprs(lap: &HorizontalLaplacian) -> Vec<&Expr> {
    let mut out: Vec<&Expr> = lap.operator.terms.values().collect();
    out.extend(lap.fields.iter().flat_map(|x| x.coeffs.iter()));
    out.extend(lap.cometric.matrix.iter().flatten());
    out.push(&lap.density.weight);
    out
}

enum Energy {
    Fields(Vec<Vec<Compiled>>),
    Cometric(Vec<(usize, usize, Compiled)>),
}

/// Operator, energy density and density weight lowered for quadrature.
struct PointwiseLaplacian {
    op: CompiledOperator,
    energy: Energy,
    weight: Option<Compiled>,
}

impl PointwiseLaplacian {
    fn new(lap: &HorizontalLaplacian) -> Self {
        let energy = match lap.form {
            LaplacianForm::SumOfSquares => {
                Energy::Fields(lap.fields.iter().map(|x| x.coeffs.iter().map(Expr::compile).collect()).collect())
            }
            LaplacianForm::Divergence => {
                let g = &lap.cometric.matrix;
                let n = lap.dim();
                Energy::Cometric(
                    (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|&(i, j)| !g[i][j].is_zero()).map(|(i, j)| (i, j, g[i][j].compile())).collect(),
                )
            }
        };
        let weight = (!lap.density.is_lebesgue()).then(|| lap.density.weight.compile());
        PointwiseLaplacian { op: CompiledOperator::new(&lap.operator), energy, weight }
    }

    fn op(&self, w: &BumpTrial, p: &[f64]) -> Result<f64> {
        w.apply(&self.op, p)
    }

    fn energy(&self, w: &BumpTrial, p: &[f64]) -> Result<f64> {
        let grad = w.gradient(p)?;
        let mut acc = 0.0;
        match &self.energy {
            Energy::Fields(fields) => {
                for f in fields {
                    let mut xw = 0.0;
                    for (c, g) in f.iter().zip(&grad) {
                        if *g != 0.0 {
                            xw += c.eval(p)? * g;
                        }
                    }
                    acc += xw * xw;
                }
            }
            Energy::Cometric(entries) => {
                for (i, j, c) in entries {
                    acc += grad[*i] * c.eval(p)? * grad[*j];
                }
            }
        }
        Ok(acc)
    }

    fn integrate<F>(&self, rule: &TensorRule, exec: Exec, f: F) -> Result<f64>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync + Send,
    {
        integrate_weighted(rule, exec, self.weight.as_ref(), f)
    }
}

/// `{(sub-box, φ_α)}` with `Σ φ_α² = 1`.
#[derive(Clone, Debug)]
pub struct PartitionOfUnity {
    pub chart: Chart,
    pub pieces: Vec<(Region, Expr)>,
    pub sum_check: EqualityWitness,
}

impl PartitionOfUnity {
    pub fn new(chart: Chart, pieces: Vec<(Region, Expr)>) -> Result<Self> {
        let s = Expr::sum(pieces.iter().map(|(_, f)| f * f));
        let sum_check = equal_on(&s, &Expr::one(), &chart.region);
        if !sum_check.holds() {
            return Err(Error::InvalidInput(format!("squares of the partition do not sum to one: {sum_check:?}")));
        }
        Ok(PartitionOfUnity { chart, pieces, sum_check })
    }

    pub fn single(chart: Chart) -> Result<Self> {
        let r = chart.region.clone();
        Self::new(chart, vec![(r, Expr::one())])
    }

    /// `cos(π s / 2)` and `sin(π s / 2)` with a flat step `s` from 0 at `x_var = c` to 1 at `x_var = d`.
    pub fn trig_pair(chart: Chart, var: usize, c: Q, d: Q) -> Result<Self> {
        if c >= d {
            return Err(Error::InvalidInput("overlap interval must be ordered".into()));
        }
        let up = Expr::flat(FlatArg { var, neg: false, shift: c.clone() });
        let down = Expr::flat(FlatArg { var, neg: true, shift: d.clone() });
        let s = &up * &(&up + &down).recip()?;
        let arg = (&Expr::pi() * &s).scale(&Q::new(1.into(), 2.into()));
        let (lo, hi) = chart.region.bounds[var];
        let mut left = chart.region.clone();
        left.bounds[var] = (lo, d.to_f64().unwrap_or(hi).min(hi));
        let mut right = chart.region.clone();
        right.bounds[var] = (c.to_f64().unwrap_or(lo).max(lo), hi);
        Self::new(chart, vec![(left, Expr::cos(arg.clone())), (right, Expr::sin(arg))])
    }

    /// Products `φ_α ψ_β` with intersected sub-boxes.
    pub fn product(&self, other: &PartitionOfUnity) -> Result<Self> {
        let mut pieces = vec![];
        for (ra, fa) in &self.pieces {
            for (rb, fb) in &other.pieces {
                if let Some(r) = ra.intersect(rb) {
                    pieces.push((r, fa * fb));
                }
            }
        }
        Self::new(self.chart.clone(), pieces)
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }
}

/// Residual of `Δ = Σ φΔφ + ½ Σ [[Δ, φ], φ]` and the double commutators.
#[derive(Clone, Debug)]
pub struct ImsReport {
    pub residual: DiffOperator,
    pub canonical_zero: bool,
    /// Largest sampled coefficient of the residual when it is not canonically zero.
    pub sampled_defect: f64,
    pub remainders: Vec<DiffOperator>,
    pub max_remainder_order: usize,
}

impl ImsReport {
    pub fn holds(&self) -> bool {
        (self.canonical_zero || self.sampled_defect < 1e-10) && self.max_remainder_order == 0
    }
}

const SUPPORT_SAMPLES: usize = 256;

pub fn ims_localization_check(lap: &HorizontalLaplacian, pu: &PartitionOfUnity) -> Result<ImsReport> {
    let n = lap.dim();
    let base = lap.presentation.base_region();
    for (a, (sub, phi)) in pu.pieces.iter().enumerate() {
        let c = phi.compile();
        let pts = pu.chart.region.sample_points(SUPPORT_SAMPLES, 0x1a5 + a as u64);
        for p in pts.iter().filter(|p| !sub.contains(p) || !base.contains(p)) {
            let v = c.eval(p)?;
            if v.abs() > 1e-12 {
                return Err(Error::SupportViolation(format!("piece {a} is {v:.3e} at {p:?}")));
            }
        }
    }
    let delta = &lap.operator;
    let mut rhs = DiffOperator::zero(n);
    let mut remainders = vec![];
    for (_, phi) in &pu.pieces {
        let m = DiffOperator::multiplication(n, phi.clone());
        rhs = rhs.add(&m.compose(delta)?.compose(&m)?);
        let dd = delta.commutator(&m)?.commutator(&m)?;
        rhs = rhs.add(&dd.scale(&Expr::rational(1, 2)));
        remainders.push(dd);
    }
    let residual = delta.sub(&rhs);
    let canonical_zero = residual.is_zero();
    let mut sampled_defect: f64 = 0.0;
    for c in residual.terms.values() {
        match equal_on(c, &Expr::zero(), &pu.chart.region) {
            EqualityWitness::Canonical => {}
            EqualityWitness::Sampled { max_defect, .. } => sampled_defect = sampled_defect.max(max_defect),
            EqualityWitness::Differs { defect, .. } => sampled_defect = sampled_defect.max(defect),
            EqualityWitness::Undecided { .. } => sampled_defect = f64::INFINITY,
        }
    }
    let max_remainder_order = remainders.iter().map(DiffOperator::order).max().unwrap_or(0);
    Ok(ImsReport { residual, canonical_zero, sampled_defect, remainders, max_remainder_order })
}

/// Empirical lower bound for `C` in `‖Xu‖² ≤ C((Δu, u) + ‖u‖²)`.
#[derive(Clone, Debug, Serialize)]
pub struct XEstimate {
    pub trials: usize,
    pub max_ratio: f64,
    pub ratios: Vec<f64>,
}

pub fn x_estimate_probe(
    x: &VectorField,
    lap: &HorizontalLaplacian,
    bounds: &[(f64, f64)],
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<XEstimate> {
    let region = Region::new(bounds.to_vec())?;
    let m = membership_in(x, &lap.presentation.anchor, &region, MembershipMode::Symbolic, DEFAULT_TOL)?;
    if !m.member {
        return Err(Error::NotAMember(m.certificate));
    }
    let n = lap.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // random quadratic polynomials with coefficients k/8, k in [-8, 8]
    let monos: Vec<Vec<i64>> = (0..n)
        .flat_map(|i| (i..n).map(move |j| (i, j)))
        .map(|(i, j)| {
            let mut e = vec![0; n];
            e[i] += 1;
            e[j] += 1;
            e
        })
        .chain((0..n).map(|i| {
            let mut e = vec![0; n];
            e[i] = 1;
            e
        }))
        .chain(std::iter::once(vec![0; n]))
        .collect();
    let us: Vec<Expr> = (0..trials)
        .map(|_| {
            let poly = Expr::sum(monos.iter().map(|e| Expr::coord_power(e).scale(&Q::new(rng.random_range(-8i64..=8).into(), 8.into()))));
            if poly.is_zero() {
                Expr::one()
            } else {
                poly
            }
        })
        .collect();
    let rule = TensorRule::adapted(bounds, coefficient_exprs(lap).into_iter().chain(&x.coeffs), nodes_for(bounds.len()));
    let ev = PointwiseLaplacian::new(lap);
    let xc: Vec<Compiled> = x.coeffs.iter().map(Expr::compile).collect();
    let ratios = exec.try_map_range(trials, |t| -> Result<f64> {
        let u = BumpTrial::new(&us[t], bounds, 1);
        let xu = |p: &[f64]| -> Result<f64> {
            let g = u.gradient(p)?;
            xc.iter().zip(&g).try_fold(0.0, |acc, (c, gi)| Ok(acc + c.eval(p)? * gi))
        };
        let num = ev.integrate(&rule, Exec::Sequential, |p| xu(p).map(|v| v * v))?;
        let e = ev.integrate(&rule, Exec::Sequential, |p| ev.energy(&u, p))?;
        let l2 = ev.integrate(&rule, Exec::Sequential, |p| u.value(p).map(|v| v * v))?;
        Ok(num / (e + l2))
    })?;
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(XEstimate { trials, max_ratio, ratios })
}

/// Canonical comparison of two Laplacians after restriction to the overlap of their boxes.
pub fn agree_on_overlap(a: &HorizontalLaplacian, b: &HorizontalLaplacian) -> Result<bool> {
    let r = a
        .presentation
        .base_region()
        .intersect(b.presentation.base_region())
        .ok_or_else(|| Error::InvalidInput("presentations do not overlap".into()))?;
    Ok(a.operator.restrict(&r).sub(&b.operator.restrict(&r)).is_zero())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::{q, Chart};

    fn chart(n: usize) -> Chart {
        Chart::standard(n, None)
    }

    fn pres(gens: &[&[&str]], n: usize) -> LocalPresentation {
        let c = chart(n);
        let a = gens.iter().map(|g| VectorField::parse(g, &c).unwrap()).collect();
        LocalPresentation::new(c, a).unwrap()
    }

    fn e(s: &str, n: usize) -> Expr {
        Expr::parse(s, &chart(n)).unwrap()
    }

    fn op(pairs: &[(&[u32], &str)], n: usize) -> DiffOperator {
        let mut o = DiffOperator::zero(n);
        for (a, c) in pairs {
            o.add_term(a.to_vec(), e(c, n));
        }
        o
    }

    fn gl2() -> LocalPresentation {
        pres(&[&["x", "0"], &["0", "x"], &["y", "0"], &["0", "y"]], 2)
    }

    fn heis() -> LocalPresentation {
        pres(&[&["1", "0", "-1/2*y"], &["0", "1", "1/2*x"]], 3)
    }

    #[test]
    fn differentials() {
        let u = e("x^2*y + y^3", 2);
        let d = horizontal_differential(&u, &gl2());
        let ux = u.differentiate(0);
        let uy = u.differentiate(1);
        let x = e("x", 2);
        let y = e("y", 2);
        assert_eq!(d.realization, vec![&x * &ux, &x * &uy, &y * &ux, &y * &uy]);
        assert!(horizontal_differential(&e("3", 2), &gl2()).is_zero());
        let gr = pres(&[&["1", "0"], &["0", "x"]], 2);
        let w = realize_dual(&OneForm::new(vec![Expr::zero(), Expr::one()]), &gr).unwrap();
        assert_eq!(w.realization, vec![Expr::zero(), e("x", 2)]);
    }

    #[test]
    fn adjoint_matches_divergence_formula() {
        let (w1, w2) = (e("x*y^2 + 1", 2), e("x^3 - y", 2));
        let s = realize_dual(&OneForm::new(vec![w1.clone(), w2.clone()]), &gl2()).unwrap();
        let r = e("x^2 + y^2", 2);
        let expect = -(&(&r * &w1).differentiate(0) + &(&r * &w2).differentiate(1));
        assert_eq!(adjoint_differential(&s, &Density::lebesgue()).unwrap(), expect);
        let h = heis();
        let (a, b) = (e("x*z", 3), e("y^2 + z", 3));
        let s = DualSection::new(h.clone(), vec![a.clone(), b.clone()]).unwrap();
        let expect = -(&h.anchor[0].apply(&a) + &h.anchor[1].apply(&b));
        assert_eq!(adjoint_differential(&s, &Density::lebesgue()).unwrap(), expect);
    }

    #[test]
    fn laplacians_match_hand_expansions() {
        let mu = Density::lebesgue();
        let l = horizontal_laplacian(&gl2(), &mu).unwrap();
        // −∂x((x²+y²)∂x) − ∂y((x²+y²)∂y)
        let expect = op(&[(&[2, 0], "-x^2 - y^2"), (&[0, 2], "-x^2 - y^2"), (&[1, 0], "-2*x"), (&[0, 1], "-2*y")], 2);
        assert_eq!(l.operator, expect);
        let path = pres(&[&["1", "0"], &["0", "flatplus(x)"]], 2);
        let l = horizontal_laplacian(&path, &mu).unwrap();
        let f2 = e("flatplus(x)^2", 2);
        let expect = op(&[(&[2, 0], "-1")], 2).add(&DiffOperator::partial(&[0, 2]).scale(&-f2));
        assert_eq!(l.operator, expect);
        let h = horizontal_laplacian(&heis(), &mu).unwrap();
        let x = heis().anchor[0].as_operator();
        let y = heis().anchor[1].as_operator();
        let expect = x.compose(&x).unwrap().add(&y.compose(&y).unwrap()).neg();
        assert_eq!(h.operator, expect);
    }

    #[test]
    fn three_forms_agree() {
        let mu = Density::new(e("exp(x)", 2), &Region::unbounded(2)).unwrap();
        for p in [gl2(), pres(&[&["1", "0"], &["0", "x"]], 2)] {
            let sos = horizontal_laplacian(&p, &mu).unwrap();
            let div = divergence_laplacian(&p, &mu).unwrap();
            assert_eq!(sos.operator, div.operator);
            assert_eq!(sos.operator, d_star_d(&p, &mu).unwrap());
        }
        // non-identity frame metric with exact factor: G⁻¹ = diag(4, x²)
        let c = chart(2);
        let a = vec![VectorField::parse(&["1", "0"], &c).unwrap(), VectorField::parse(&["0", "1"], &c).unwrap()];
        let g = vec![vec![e("1/4", 2), Expr::zero()], vec![Expr::zero(), e("1/(x^2 + 1)", 2)]];
        let p = LocalPresentation::with_metric(c, a, g).unwrap();
        let mu = Density::lebesgue();
        assert!(matches!(horizontal_laplacian(&p, &mu), Err(Error::NonSymbolicCholesky(_))));
        let div = laplacian_any_form(&p, &mu).unwrap();
        assert_eq!(div.form, LaplacianForm::Divergence);
        assert_eq!(div.operator, d_star_d(&p, &mu).unwrap());
    }

    #[test]
    fn cholesky_factors() {
        let a = vec![vec![e("4", 1), e("2*x", 1)], vec![e("2*x", 1), e("x^2 + 9", 1)]];
        let l = symbolic_cholesky(&a).unwrap();
        let llt = linalg::mat_mul(&l, &linalg::transpose(&l));
        assert_eq!(llt, a);
        assert!(exact_sqrt(&e("2", 1)).is_none());
        assert_eq!(exact_sqrt(&e("9/4*x^4*exp(x)", 1)).unwrap(), e("3/2*x^2*exp(1/2*x)", 1));
    }

    #[test]
    fn symbols() {
        let mu = Density::lebesgue();
        for p in [gl2(), heis(), pres(&[&["1"]], 1)] {
            let l = horizontal_laplacian(&p, &mu).unwrap();
            let s = principal_symbol(&l).unwrap();
            assert_eq!(s.coefficient_matrix(), induced_cometric(&p).unwrap().matrix);
        }
        let l = horizontal_laplacian(&heis(), &mu).unwrap();
        let s = principal_symbol(&l).unwrap();
        let c = &s.chart;
        let expect = Expr::parse("(xi1 - 1/2*y*xi3)^2 + (xi2 + 1/2*x*xi3)^2", c).unwrap();
        assert_eq!(s.expr_in_xi, expect);
    }

    #[test]
    fn longitudinal() {
        let mu = Density::lebesgue();
        let h = heis();
        let l = horizontal_laplacian(&h, &mu).unwrap();
        let mut gens = h.anchor.clone();
        gens.push(VectorField::partial(3, 2));
        let f = Distribution::new(h.chart.clone(), gens, "hull").unwrap();
        assert_eq!(longitudinal_symbol(&l, &f, &[0.0; 3], &[0.0, 0.0, 1.0]).unwrap(), 0.0);
        assert!((longitudinal_symbol(&l, &f, &[0.0; 3], &[1.0, 0.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
        // involutive case: |ξ|² against the squared fiber norm of the generator class
        let d = pres(&[&["1"]], 1);
        let l = horizontal_laplacian(&d, &mu).unwrap();
        let f = d.as_distribution("d").unwrap();
        let v = longitudinal_symbol(&l, &f, &[0.2], &[2.0]).unwrap();
        let nrm = crate::metric::fiber_norm(&d, &[0.2], &[1.0]).unwrap();
        assert!((v - 4.0 / (nrm * nrm)).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_and_symmetry() {
        let mu = Density::lebesgue();
        let b = [(-1.0, 1.0), (-1.0, 1.0)];
        let l = horizontal_laplacian(&gl2(), &mu).unwrap();
        let r = dirichlet_form_check(&l, &e("x*y", 2), &b, Exec::default()).unwrap();
        assert!(r.residual < 1e-8, "{r:?}");
        assert!(r.lhs > 0.0);
        let s = symmetry_check(&l, &e("x + y^2", 2), &e("1 - x*y", 2), &b, Exec::default()).unwrap();
        assert!(s < 1e-8);
    }

    #[test]
    fn ims_one_dimensional() {
        let c = Chart::new(&["x"], Some(Region::new(vec![(-2.0, 2.0)]).unwrap())).unwrap();
        let p = LocalPresentation::new(c.clone(), vec![VectorField::partial(1, 0)]).unwrap();
        let l = horizontal_laplacian(&p, &Density::lebesgue()).unwrap();
        let one = ims_localization_check(&l, &PartitionOfUnity::single(c.clone()).unwrap()).unwrap();
        assert!(one.canonical_zero && one.remainders[0].is_zero());
        let pu = PartitionOfUnity::trig_pair(c, 0, Q::new((-1).into(), 2.into()), Q::new(1.into(), 2.into())).unwrap();
        let r = ims_localization_check(&l, &pu).unwrap();
        assert!(r.holds(), "{:?}", r.sampled_defect);
        assert!(r.canonical_zero);
        for ((_, phi), dd) in pu.pieces.iter().zip(&r.remainders) {
            let d = phi.differentiate(0);
            let expect = (&d * &d).scale(&q(-2));
            assert_eq!(dd.order(), 0);
            assert!(equal_on(&dd.coefficient(&[0]), &expect, &pu.chart.region).holds());
        }
    }

    #[test]
    fn support_violation() {
        let c = Chart::new(&["x"], Some(Region::new(vec![(-2.0, 2.0)]).unwrap())).unwrap();
        let p = LocalPresentation::new(c.clone(), vec![VectorField::partial(1, 0)]).unwrap();
        let l = horizontal_laplacian(&p, &Density::lebesgue()).unwrap();
        let mut pu = PartitionOfUnity::trig_pair(c, 0, q(0), q(1)).unwrap();
        pu.pieces[0].0.bounds[0] = (-2.0, 0.5);
        assert!(matches!(ims_localization_check(&l, &pu), Err(Error::SupportViolation(_))));
    }

    #[test]
    fn x_estimates() {
        let d = pres(&[&["1 + x^2"]], 1);
        let l = horizontal_laplacian(&d, &Density::lebesgue()).unwrap();
        let r = x_estimate_probe(&d.anchor[0], &l, &[(-1.0, 1.0)], 8, 7, Exec::default()).unwrap();
        assert!(r.max_ratio <= 1.0 + 1e-8);
        let g = pres(&[&["1", "0"], &["0", "x"]], 2);
        let l = horizontal_laplacian(&g, &Density::lebesgue()).unwrap();
        let dy = VectorField::partial(2, 1);
        assert!(matches!(x_estimate_probe(&dy, &l, &[(-1.0, 1.0), (-1.0, 1.0)], 4, 1, Exec::default()), Err(Error::NotAMember(_))));
    }

    #[test]
    fn dual_regularity_fixture() {
        let path = pres(&[&["1", "0"], &["0", "flatplus(x)"]], 2);
        let smooth = realize_dual(&OneForm::new(vec![Expr::zero(), e("exp(1/2*x^-1)", 2)]), &path).unwrap();
        assert!(smooth.smoothness_defect().is_none());
        let rough = realize_dual(&OneForm::new(vec![Expr::zero(), e("exp(x^-1)", 2)]), &path).unwrap();
        assert!(rough.smoothness_defect().is_some());
    }
}
