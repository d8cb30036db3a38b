//! Foliated forms as realizations on `ΛᵏE*`, the Chevalley–Eilenberg differential and the
//! Hodge Laplacian `dd* + d*d`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::distribution::LocalPresentation;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::liehull::StructureCoefficients;
use crate::linalg::{self, ExprMatrix};
use crate::metric::frame_cometric;
use crate::quadrature::{integrate_weighted, nodes_for, BumpTrial, CompiledOperator, TensorRule};
use crate::symexpr::{equal_on, Compiled, EqualityWitness, Expr};
use crate::vectorcalc::{DiffOperator, Density};

/// Increasing `k`-subsets of `0..r` in lexicographic order.
pub fn subsets(r: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, r: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..r {
            cur.push(i);
            go(i + 1, r, k, cur, out);
            cur.pop();
        }
    }
    let mut out = vec![];
    if k <= r {
        go(0, r, k, &mut vec![], &mut out);
    }
    out
}

/// Sign of the permutation sorting `idx`, with the sorted indices; `None` on repeats.
fn sort_sign(idx: &[usize]) -> Option<(i64, Vec<usize>)> {
    let mut v = idx.to_vec();
    let mut sign = 1;
    for i in 0..v.len() {
        for j in 0..v.len() - 1 - i {
            if v[j] > v[j + 1] {
                v.swap(j, j + 1);
                sign = -sign;
            }
        }
    }
    if v.windows(2).any(|w| w[0] == w[1]) {
        return None;
    }
    Some((sign, v))
}

/// Section of `ΛᵏE*` stored on increasing index sets.
#[derive(Clone, Debug)]
pub struct FoliatedKForm {
    pub degree: usize,
    pub presentation: LocalPresentation,
    pub components: BTreeMap<Vec<usize>, Expr>,
}

impl FoliatedKForm {
    pub fn new(degree: usize, presentation: LocalPresentation, components: BTreeMap<Vec<usize>, Expr>) -> Result<Self> {
        let r = presentation.rank();
        if degree > r {
            return Err(Error::DegreeOverflow(degree));
        }
        for idx in components.keys() {
            if idx.len() != degree || idx.windows(2).any(|w| w[0] >= w[1]) || idx.iter().any(|&i| i >= r) {
                return Err(Error::InvalidInput(format!("bad index set {idx:?} for a degree {degree} form")));
            }
        }
        let components = components.into_iter().filter(|(_, e)| !e.is_zero()).collect();
        Ok(FoliatedKForm { degree, presentation, components })
    }

    pub fn zero(degree: usize, presentation: LocalPresentation) -> Self {
        FoliatedKForm { degree, presentation, components: BTreeMap::new() }
    }

    pub fn function(u: Expr, presentation: LocalPresentation) -> Self {
        let mut c = BTreeMap::new();
        if !u.is_zero() {
            c.insert(vec![], u);
        }
        FoliatedKForm { degree: 0, presentation, components: c }
    }

    /// `η(i_1, …, i_k)` for any index order.
    pub fn get(&self, idx: &[usize]) -> Expr {
        match sort_sign(idx) {
            None => Expr::zero(),
            Some((s, v)) => self.components.get(&v).map_or_else(Expr::zero, |e| e.scale(&crate::symexpr::q(s))),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.components.is_empty()
    }

    /// Components on all increasing index sets, zeros included.
    pub fn dense(&self) -> Vec<Expr> {
        subsets(self.presentation.rank(), self.degree).iter().map(|i| self.get(i)).collect()
    }
}

/// Realization of the ordinary form `Σ_J ω_J dx^J`: `η(I) = Σ_J ω_J det(X_{i_a}^{j_b})`.
pub fn pullback_form(omega: &BTreeMap<Vec<usize>, Expr>, degree: usize, p: &LocalPresentation) -> Result<FoliatedKForm> {
    let r = p.rank();
    let mut comps = BTreeMap::new();
    for i in subsets(r, degree) {
        let mut acc = Expr::zero();
        for (j, w) in omega {
            if j.len() != degree {
                return Err(Error::DimensionMismatch(format!("component {j:?} in a degree {degree} form")));
            }
            let m: ExprMatrix = i.iter().map(|&a| j.iter().map(|&b| p.anchor[a].coeffs[b].clone()).collect()).collect();
            let d = if degree == 0 { Expr::one() } else { linalg::det(&m) };
            acc = &acc + &(w * &d);
        }
        comps.insert(i, acc);
    }
    FoliatedKForm::new(degree, p.clone(), comps)
}

fn table(sc: &StructureCoefficients, p: &LocalPresentation) -> Result<Vec<Vec<Vec<Expr>>>> {
    if sc.fields != p.anchor {
        return Err(Error::InvalidInput("structure coefficients belong to a different frame".into()));
    }
    sc.table.clone().ok_or_else(|| Error::InvalidInput("structure coefficients are not symbolic".into()))
}

/// Matrix of `d: ΛᵏE* -> Λᵏ⁺¹E*`: rows are `(k+1)`-subsets, columns `k`-subsets.
pub fn ce_matrix(k: usize, sc: &StructureCoefficients, p: &LocalPresentation) -> Result<Vec<Vec<DiffOperator>>> {
    let r = p.rank();
    if k + 1 > r {
        return Err(Error::DegreeOverflow(k + 1));
    }
    let c = table(sc, p)?;
    let n = p.dim();
    let cols = subsets(r, k);
    let col_of: BTreeMap<Vec<usize>, usize> = cols.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let rows = subsets(r, k + 1);
    let mut out = vec![vec![DiffOperator::zero(n); cols.len()]; rows.len()];
    for (ri, idx) in rows.iter().enumerate() {
        for a in 0..=k {
            let rest: Vec<usize> = idx.iter().enumerate().filter(|&(t, _)| t != a).map(|(_, &v)| v).collect();
            let sign = if a % 2 == 0 { 1 } else { -1 };
            let x = p.anchor[idx[a]].as_operator().scale(&Expr::int(sign));
            let ci = col_of[&rest];
            out[ri][ci] = out[ri][ci].add(&x);
        }
        for a in 0..=k {
            for b in a + 1..=k {
                let sign = if (a + b) % 2 == 0 { 1 } else { -1 };
                let rest: Vec<usize> = idx.iter().enumerate().filter(|&(t, _)| t != a && t != b).map(|(_, &v)| v).collect();
                for (m, cm) in c[idx[a]][idx[b]].iter().enumerate() {
                    if cm.is_zero() {
                        continue;
                    }
                    let full: Vec<usize> = std::iter::once(m).chain(rest.iter().copied()).collect();
                    let Some((s, sorted)) = sort_sign(&full) else { continue };
                    let ci = col_of[&sorted];
                    out[ri][ci].add_term(vec![0; n], cm.scale(&crate::symexpr::q(sign * s)));
                }
            }
        }
    }
    Ok(out)
}

fn apply_matrix(m: &[Vec<DiffOperator>], v: &[Expr]) -> Vec<Expr> {
    m.iter().map(|row| Expr::sum(row.iter().zip(v).filter(|(_, e)| !e.is_zero()).map(|(o, e)| o.apply(e)))).collect()
}

pub fn ce_differential(eta: &FoliatedKForm, sc: &StructureCoefficients) -> Result<FoliatedKForm> {
    let p = &eta.presentation;
    let m = ce_matrix(eta.degree, sc, p)?;
    let vals = apply_matrix(&m, &eta.dense());
    let comps = subsets(p.rank(), eta.degree + 1).into_iter().zip(vals).collect();
    FoliatedKForm::new(eta.degree + 1, p.clone(), comps)
}

#[derive(Clone, Debug, Serialize)]
pub struct DegreeTable {
    pub degree: usize,
    pub rows: Vec<Vec<usize>>,
    pub cols: Vec<Vec<usize>>,
    /// Nonzero entries `(row, col, operator)`.
    pub entries: Vec<(usize, usize, String)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DegreeResidual {
    pub degree: usize,
    pub corpus_size: usize,
    pub canonical_zero: bool,
    pub sampled_defect: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComplexReport {
    pub degrees: Vec<usize>,
    pub d_tables: Vec<DegreeTable>,
    pub residuals: Vec<DegreeResidual>,
    /// Degrees above the generic pointwise rank: realizations exist, sections of the fiber bundle vanish.
    pub realization_constrained: Vec<usize>,
    pub gauge: String,
}

impl ComplexReport {
    pub fn holds(&self) -> bool {
        self.residuals.iter().all(|r| r.canonical_zero)
    }
}

/// Test functions for the pulled-back corpus.
fn corpus_functions(n: usize) -> Vec<Expr> {
    let x = Expr::coord(0);
    let z = Expr::coord(n - 1);
    vec![&(&x * &z) + &Expr::one(), &(&x * &x) - &(&(&z * &z) * &z), &Expr::exp(x.clone()) * &z]
}

pub fn d_squared_check(p: &LocalPresentation, sc: &StructureCoefficients, k_max: usize, exec: Exec) -> Result<ComplexReport> {
    let r = p.rank();
    let n = p.dim();
    let k_max = k_max.min(r);
    let mut d_tables = vec![];
    for k in (0..=k_max).filter(|&k| k < r) {
        let m = ce_matrix(k, sc, p)?;
        let mut entries = vec![];
        for (i, row) in m.iter().enumerate() {
            for (j, o) in row.iter().enumerate() {
                if !o.is_zero() {
                    entries.push((i, j, o.render(&p.chart)));
                }
            }
        }
        d_tables.push(DegreeTable { degree: k, rows: subsets(r, k + 1), cols: subsets(r, k), entries });
    }
    let funcs = corpus_functions(n);
    let degrees: Vec<usize> = (0..=k_max).collect();
    let checked: Vec<usize> = degrees.iter().copied().filter(|&k| k + 2 <= r).collect();
    let residuals = exec.try_map_range(checked.len(), |t| -> Result<DegreeResidual> {
        let k = checked[t];
        let d0 = ce_matrix(k, sc, p)?;
        let d1 = ce_matrix(k + 1, sc, p)?;
        let mut canonical_zero = true;
        let mut sampled_defect = 0.0f64;
        let mut size = 0;
        for j in subsets(n, k) {
            for f in &funcs {
                let omega = BTreeMap::from([(j.clone(), f.clone())]);
                let eta = pullback_form(&omega, k, p)?;
                let dd = apply_matrix(&d1, &apply_matrix(&d0, &eta.dense()));
                size += 1;
                for e in dd.iter().filter(|e| !e.is_zero()) {
                    canonical_zero = false;
                    match equal_on(e, &Expr::zero(), p.base_region()) {
                        EqualityWitness::Sampled { max_defect, .. } => sampled_defect = sampled_defect.max(max_defect),
                        EqualityWitness::Differs { defect, .. } => sampled_defect = sampled_defect.max(defect),
                        EqualityWitness::Undecided { .. } => sampled_defect = f64::INFINITY,
                        EqualityWitness::Canonical => {}
                    }
                }
            }
        }
        Ok(DegreeResidual { degree: k, corpus_size: size, canonical_zero, sampled_defect })
    })?;
    let generic = p
        .base_region()
        .sample_points(16, 0x11fe)
        .iter()
        .filter_map(|q| crate::distribution::evaluate_fields(&p.anchor, q).ok())
        .map(|m| linalg::rank(&m))
        .max()
        .unwrap_or(0);
    let realization_constrained = (generic + 1..=r).collect();
    Ok(ComplexReport { degrees, d_tables, residuals, realization_constrained, gauge: sc.choice.clone() })
}

/// Gram matrix of `ΛᵏE*` from `G⁻¹`: minors `det(G⁻¹[I, J])`.
pub fn exterior_gram(ginv: &ExprMatrix, k: usize) -> ExprMatrix {
    let idx = subsets(ginv.len(), k);
    idx.iter()
        .map(|i| {
            idx.iter()
                .map(|j| {
                    if k == 0 {
                        return Expr::one();
                    }
                    let m: ExprMatrix = i.iter().map(|&a| j.iter().map(|&b| ginv[a][b].clone()).collect()).collect();
                    linalg::det(&m)
                })
                .collect()
        })
        .collect()
}

/// `Δᵏ` acting on the dense component vector of a degree `k` form.
#[derive(Clone, Debug)]
pub struct HodgeLaplacian {
    pub degree: usize,
    pub index_sets: Vec<Vec<usize>>,
    pub operator: Vec<Vec<DiffOperator>>,
    pub gram: ExprMatrix,
}

impl HodgeLaplacian {
    pub fn apply(&self, eta: &FoliatedKForm) -> Vec<Expr> {
        apply_matrix(&self.operator, &eta.dense())
    }

    /// Pointwise `⟨α, β⟩_k`.
    pub fn pair(&self, a: &[Expr], b: &[Expr]) -> Expr {
        let m = a.len();
        Expr::sum((0..m).flat_map(|i| (0..m).map(move |j| (i, j))).filter(|&(i, j)| !self.gram[i][j].is_zero()).map(|(i, j)| &(&a[i] * &self.gram[i][j]) * &b[j]))
    }
}

fn mat_compose(a: &[Vec<DiffOperator>], b: &[Vec<DiffOperator>], n: usize) -> Result<Vec<Vec<DiffOperator>>> {
    let cols = b.first().map_or(0, Vec::len);
    let mut out = vec![vec![DiffOperator::zero(n); cols]; a.len()];
    for (i, row) in a.iter().enumerate() {
        for (t, o) in row.iter().enumerate() {
            if o.is_zero() {
                continue;
            }
            for j in 0..cols {
                if !b[t][j].is_zero() {
                    out[i][j] = out[i][j].add(&o.compose(&b[t][j])?);
                }
            }
        }
    }
    Ok(out)
}

fn mult_matrix(m: &ExprMatrix, n: usize) -> Vec<Vec<DiffOperator>> {
    m.iter().map(|r| r.iter().map(|e| DiffOperator::multiplication(n, e.clone())).collect()).collect()
}

/// Formal adjoint of `d: Λᵏ -> Λᵏ⁺¹` against `μ` and the exterior Gram matrices.
fn d_adjoint(d: &[Vec<DiffOperator>], g_lo: &ExprMatrix, g_hi: &ExprMatrix, mu: &Density, p: &LocalPresentation) -> Result<Vec<Vec<DiffOperator>>> {
    let n = p.dim();
    let rows = d.first().map_or(0, Vec::len);
    let mut adj = vec![vec![DiffOperator::zero(n); d.len()]; rows];
    for (i, row) in d.iter().enumerate() {
        for (j, o) in row.iter().enumerate() {
            if !o.is_zero() {
                adj[j][i] = o.adjoint(mu)?;
            }
        }
    }
    let mut out = mat_compose(&adj, &mult_matrix(g_hi, n), n)?;
    if !linalg::is_identity(g_lo) {
        let inv = linalg::inverse(g_lo, p.base_region()).ok_or_else(|| Error::RankDeficient("exterior Gram matrix is singular".into()))?;
        out = mat_compose(&mult_matrix(&inv, n), &out, n)?;
    }
    Ok(out)
}

pub fn hodge_laplacian(k: usize, p: &LocalPresentation, sc: &StructureCoefficients, mu: &Density) -> Result<HodgeLaplacian> {
    let r = p.rank();
    if k > r {
        return Err(Error::DegreeOverflow(k));
    }
    let n = p.dim();
    let ginv = frame_cometric(p)?;
    let gram = exterior_gram(&ginv, k);
    let size = subsets(r, k).len();
    let mut op = vec![vec![DiffOperator::zero(n); size]; size];
    if k < r {
        let d = ce_matrix(k, sc, p)?;
        let ds = d_adjoint(&d, &gram, &exterior_gram(&ginv, k + 1), mu, p)?;
        op = mat_compose(&ds, &d, n)?;
    }
    if k > 0 {
        let d = ce_matrix(k - 1, sc, p)?;
        let ds = d_adjoint(&d, &exterior_gram(&ginv, k - 1), &gram, mu, p)?;
        let dd = mat_compose(&d, &ds, n)?;
        for i in 0..size {
            for j in 0..size {
                op[i][j] = op[i][j].add(&dd[i][j]);
            }
        }
    }
    Ok(HodgeLaplacian { degree: k, index_sets: subsets(r, k), operator: op, gram })
}

/// `|∫⟨Δα, β⟩ dμ − ∫⟨α, Δβ⟩ dμ|` and `∫⟨Δα, α⟩ dμ` for bump-localized components.
pub fn hodge_symmetry_check(
    h: &HodgeLaplacian,
    p: &LocalPresentation,
    mu: &Density,
    a: &[Expr],
    b: &[Expr],
    bounds: &[(f64, f64)],
    exec: Exec,
) -> Result<(f64, f64)> {
    // validates degree and component count
    FoliatedKForm::new(h.degree, p.clone(), h.index_sets.iter().cloned().zip(a.iter().cloned()).collect())?;
    FoliatedKForm::new(h.degree, p.clone(), h.index_sets.iter().cloned().zip(b.iter().cloned()).collect())?;
    let m = h.index_sets.len();
    let exprs = h.operator.iter().flatten().flat_map(|o| o.terms.values()).chain(h.gram.iter().flatten()).chain([&mu.weight]).chain(a).chain(b);
    let rule = TensorRule::adapted(bounds, exprs, nodes_for(bounds.len()));
    let ops: Vec<Vec<Option<CompiledOperator>>> =
        h.operator.iter().map(|r| r.iter().map(|o| (!o.is_zero()).then(|| CompiledOperator::new(o))).collect()).collect();
    let gram: Vec<(usize, usize, Compiled)> =
        (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).filter(|&(i, j)| !h.gram[i][j].is_zero()).map(|(i, j)| (i, j, h.gram[i][j].compile())).collect();
    let weight = (!mu.is_lebesgue()).then(|| mu.weight.compile());
    let ta: Vec<BumpTrial> = a.iter().map(|e| BumpTrial::new(e, bounds, 2)).collect();
    let tb: Vec<BumpTrial> = b.iter().map(|e| BumpTrial::new(e, bounds, 2)).collect();
    let lap = |t: &[BumpTrial], x: &[f64]| -> Result<Vec<f64>> {
        ops.iter()
            .map(|row| row.iter().zip(t).try_fold(0.0, |acc, (o, u)| Ok(acc + o.as_ref().map_or(Ok(0.0), |o| u.apply(o, x))?)))
            .collect()
    };
    let vals = |t: &[BumpTrial], x: &[f64]| -> Result<Vec<f64>> { t.iter().map(|u| u.value(x)).collect() };
    let pair = |u: &[f64], v: &[f64], x: &[f64]| -> Result<f64> { gram.iter().try_fold(0.0, |acc, (i, j, g)| Ok(acc + u[*i] * g.eval(x)? * v[*j])) };
    let x = integrate_weighted(&rule, exec, weight.as_ref(), |q| pair(&lap(&ta, q)?, &vals(&tb, q)?, q))?;
    let y = integrate_weighted(&rule, exec, weight.as_ref(), |q| pair(&vals(&ta, q)?, &lap(&tb, q)?, q))?;
    let z = integrate_weighted(&rule, exec, weight.as_ref(), |q| pair(&lap(&ta, q)?, &vals(&ta, q)?, q))?;
    Ok(((x - y).abs(), z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liehull::structure_coefficients;
    use crate::symexpr::Chart;
    use crate::vectorcalc::VectorField;

    fn pres(gens: &[&[&str]], n: usize) -> LocalPresentation {
        let c = Chart::standard(n, None);
        let a = gens.iter().map(|g| VectorField::parse(g, &c).unwrap()).collect();
        LocalPresentation::new(c, a).unwrap()
    }

    fn e(s: &str) -> Expr {
        Expr::parse(s, &Chart::standard(2, None)).unwrap()
    }

    fn sc(p: &LocalPresentation) -> StructureCoefficients {
        structure_coefficients(&p.as_distribution("f").unwrap()).unwrap()
    }

    fn flat() -> LocalPresentation {
        pres(&[&["1", "0"], &["0", "1"]], 2)
    }

    fn gl2() -> LocalPresentation {
        pres(&[&["x", "0"], &["0", "x"], &["y", "0"], &["0", "y"]], 2)
    }

    #[test]
    fn degree_zero_is_the_horizontal_differential() {
        let p = flat();
        let u = e("x^2*y");
        let d = ce_differential(&FoliatedKForm::function(u.clone(), p.clone()), &sc(&p)).unwrap();
        assert_eq!(d.dense(), vec![e("2*x*y"), e("x^2")]);
    }

    #[test]
    fn classical_exterior_derivative() {
        let p = flat();
        let eta = pullback_form(&BTreeMap::from([(vec![1], e("x"))]), 1, &p).unwrap();
        let d = ce_differential(&eta, &sc(&p)).unwrap();
        assert_eq!(d.get(&[0, 1]), Expr::one());
        assert_eq!(d.get(&[1, 0]), -Expr::one());
        assert!(matches!(ce_differential(&d, &sc(&p)), Err(Error::DegreeOverflow(3))));
    }

    #[test]
    fn gl2_complex() {
        let p = gl2();
        let s = sc(&p);
        let eta = pullback_form(&BTreeMap::from([(vec![0], Expr::one())]), 1, &p).unwrap();
        let d = ce_differential(&eta, &s).unwrap();
        // d(dx) = 0: the structure terms cancel the derivative terms
        assert!(d.is_zero(), "{:?}", d.components);
        let r = d_squared_check(&p, &s, 2, Exec::default()).unwrap();
        assert!(r.holds(), "{:?}", r.residuals);
        assert_eq!(r.realization_constrained, vec![3, 4]);
        let flat_r = d_squared_check(&flat(), &sc(&flat()), 2, Exec::default()).unwrap();
        assert!(flat_r.holds());
    }

    #[test]
    fn hodge() {
        let mu = Density::lebesgue();
        let p = flat();
        let s = sc(&p);
        let h1 = hodge_laplacian(1, &p, &s, &mu).unwrap();
        let lap = DiffOperator::partial(&[2, 0]).add(&DiffOperator::partial(&[0, 2])).neg();
        assert_eq!(h1.operator[0][0], lap);
        assert_eq!(h1.operator[1][1], lap);
        assert!(h1.operator[0][1].is_zero());
        for q in [flat(), gl2()] {
            let h0 = hodge_laplacian(0, &q, &sc(&q), &mu).unwrap();
            let l = crate::laplacian::horizontal_laplacian(&q, &mu).unwrap();
            assert_eq!(h0.operator[0][0], l.operator);
        }
        let p = gl2();
        let h = hodge_laplacian(1, &p, &sc(&p), &mu).unwrap();
        let a = [e("x"), e("y^2"), e("1"), e("x*y")];
        let b = [e("1 + y"), e("x"), e("x^2"), e("0")];
        let (sym, pos) = hodge_symmetry_check(&h, &p, &mu, &a, &b, &[(-1.0, 1.0), (-1.0, 1.0)], Exec::default()).unwrap();
        assert!(sym < 1e-8, "{sym}");
        assert!(pos >= -1e-10);
    }
}
