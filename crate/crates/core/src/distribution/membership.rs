use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_traits::Zero;
use serde::Serialize;

use super::{anchor_matrix, restrict_fields, Distribution};
use crate::error::{Error, Result};
use crate::linalg::{self, solve_expr};
use crate::symexpr::{check_smooth, Expr, Monomial, Region, Q};
use crate::vectorcalc::VectorField;

pub const DEFAULT_TOL: f64 = 1e-9;
const SAMPLES: usize = 64;
const SAMPLE_SEED: u64 = 0x6d65_6d62;
const MAX_ANSATZ_DEGREE: i64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MembershipMode {
    /// Exact elimination first, sampled least squares only when it cannot decide.
    Symbolic,
    Sampled,
}

/// Outcome of a membership query and how it was decided.
#[derive(Clone, Debug, Serialize)]
pub struct Membership {
    pub member: bool,
    /// Mode that produced the verdict.
    pub mode: MembershipMode,
    #[serde(skip)]
    pub coefficients: Option<Vec<Expr>>,
    pub residual: Option<f64>,
    pub certificate: String,
}

impl Membership {
    fn symbolic(member: bool, coefficients: Option<Vec<Expr>>, certificate: impl Into<String>) -> Self {
        Membership { member, mode: MembershipMode::Symbolic, coefficients, residual: None, certificate: certificate.into() }
    }
}

/// Membership of `x` in the module generated by `d` over the chart region.
pub fn module_membership(x: &VectorField, d: &Distribution, mode: MembershipMode, tol: f64) -> Result<Membership> {
    membership_in(x, &d.generators, &d.chart.region, mode, tol)
}

/// Membership of `x` in the module generated by `gens` over smooth functions on `region`.
pub fn membership_in(x: &VectorField, gens: &[VectorField], region: &Region, mode: MembershipMode, tol: f64) -> Result<Membership> {
    if let Some(g) = gens.iter().find(|g| g.dim() != x.dim()) {
        return Err(Error::DimensionMismatch(format!("generator of dimension {} against a field of dimension {}", g.dim(), x.dim())));
    }
    let x = &restrict_fields(std::slice::from_ref(x), region)[0];
    let gens = restrict_fields(gens, region);
    if mode == MembershipMode::Symbolic {
        if let Some(m) = symbolic(x, &gens, region) {
            return Ok(m);
        }
    }
    sampled(x, &gens, region, tol)
}

fn smooth_all(v: &[Expr], region: &Region) -> Option<String> {
    v.iter().find_map(|e| check_smooth(&e.restrict(region), region))
}

fn combinations(k: usize, r: usize) -> Vec<Vec<usize>> {
    let mut out = vec![];
    let mut cur = vec![];
    fn go(start: usize, k: usize, r: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == r {
            out.push(cur.clone());
            return;
        }
        for i in start..k {
            cur.push(i);
            go(i + 1, k, r, cur, out);
            cur.pop();
        }
    }
    go(0, k, r, &mut cur, &mut out);
    out
}

fn symbolic(x: &VectorField, gens: &[VectorField], region: &Region) -> Option<Membership> {
    let n = x.dim();
    let k = gens.len();
    let nonzero: Vec<usize> = (0..k).filter(|&j| !gens[j].is_zero()).collect();
    if nonzero.is_empty() {
        return Some(if x.is_zero() {
            Membership::symbolic(true, Some(vec![Expr::zero(); k]), "zero field")
        } else {
            Membership::symbolic(false, None, "all generators vanish on the region")
        });
    }
    let a = anchor_matrix(gens, n);
    let sol = match solve_expr(&a, &x.coeffs, region) {
        None => return Some(Membership::symbolic(false, None, "not in the pointwise span on an open dense set")),
        Some(s) => s,
    };
    if sol.free.is_empty() {
        return Some(match smooth_all(&sol.particular, region) {
            None => Membership::symbolic(true, Some(sol.particular), "unique solution over the function field"),
            Some(why) => Membership::symbolic(false, None, format!("unique solution is not smooth: {why}")),
        });
    }
    // Field-independent subsets that generate the module.
    let r = sol.pivots.len();
    'subsets: for s in combinations(k, r) {
        let sub: Vec<VectorField> = s.iter().map(|&j| gens[j].clone()).collect();
        let a_s = anchor_matrix(&sub, n);
        for j in (0..k).filter(|j| !s.contains(j)) {
            match solve_expr(&a_s, &gens[j].coeffs, region) {
                Some(t) if t.free.is_empty() && smooth_all(&t.particular, region).is_none() => {}
                _ => continue 'subsets,
            }
        }
        let t = solve_expr(&a_s, &x.coeffs, region)?;
        if !t.free.is_empty() {
            continue;
        }
        return Some(match smooth_all(&t.particular, region) {
            None => {
                let mut c = vec![Expr::zero(); k];
                for (i, &j) in s.iter().enumerate() {
                    c[j] = t.particular[i].clone();
                }
                Membership::symbolic(true, Some(c), format!("generating subset {s:?}"))
            }
            Some(why) => Membership::symbolic(false, None, format!("coefficient over generating subset {s:?} is not smooth: {why}")),
        });
    }
    let poly = x.coeffs.iter().chain(gens.iter().flat_map(|g| g.coeffs.iter())).all(Expr::is_polynomial);
    if poly {
        let deg = x.coeffs.iter().filter_map(Expr::coord_degree).max().unwrap_or(0);
        for d in 0..=(deg + 1).min(MAX_ANSATZ_DEGREE) {
            if let Some(c) = polynomial_ansatz(x, gens, d) {
                return Some(Membership::symbolic(true, Some(c), format!("polynomial coefficients of degree {d}")));
            }
        }
        return Some(Membership::symbolic(false, None, "no polynomial certificate"));
    }
    None
}

fn monomials_up_to(n: usize, d: i64) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p: Vec<i64>| {
                let used: i64 = p.iter().sum();
                (0..=(d - used)).map(move |e| [p.clone(), vec![e]].concat())
            })
            .collect();
    }
    out
}

/// Polynomial coefficients `f_j` of degree at most `d` with `Σ f_j X_j = X`.
fn polynomial_ansatz(x: &VectorField, gens: &[VectorField], d: i64) -> Option<Vec<Expr>> {
    let n = x.dim();
    let monos = monomials_up_to(n, d);
    let unknowns: Vec<(usize, Expr)> = (0..gens.len()).flat_map(|j| monos.iter().map(move |m| (j, Expr::coord_power(m)))).collect();
    let mut rows: BTreeMap<(usize, Monomial), usize> = BTreeMap::new();
    let mut entries: Vec<(usize, usize, Q)> = vec![];
    for (col, (j, m)) in unknowns.iter().enumerate() {
        for i in 0..n {
            for (mono, c) in (m * &gens[*j].coeffs[i]).terms() {
                let len = rows.len();
                let r = *rows.entry((i, mono.clone())).or_insert(len);
                entries.push((r, col, c.clone()));
            }
        }
    }
    let mut rhs_entries = vec![];
    for i in 0..n {
        for (mono, c) in x.coeffs[i].terms() {
            let len = rows.len();
            let r = *rows.entry((i, mono.clone())).or_insert(len);
            rhs_entries.push((r, c.clone()));
        }
    }
    let mut a = vec![vec![Q::zero(); unknowns.len()]; rows.len()];
    for (r, c, v) in entries {
        a[r][c] += v;
    }
    let mut b = vec![Q::zero(); rows.len()];
    for (r, v) in rhs_entries {
        b[r] += v;
    }
    let sol = linalg::solve_q(&a, &b)?;
    let mut coeffs = vec![Expr::zero(); gens.len()];
    for ((j, m), c) in unknowns.iter().zip(sol) {
        if !c.is_zero() {
            coeffs[*j] = &coeffs[*j] + &m.scale(&c);
        }
    }
    Some(coeffs)
}

fn sampled(x: &VectorField, gens: &[VectorField], region: &Region, tol: f64) -> Result<Membership> {
    let xc: Vec<_> = x.coeffs.iter().map(Expr::compile).collect();
    let gc: Vec<Vec<_>> = gens.iter().map(|g| g.coeffs.iter().map(Expr::compile).collect()).collect();
    let n = x.dim();
    let mut worst = 0.0f64;
    let mut used = 0;
    for p in region.sample_points(SAMPLES, SAMPLE_SEED) {
        let Ok(b) = xc.iter().map(|c| c.eval(&p)).collect::<Result<Vec<f64>>>() else { continue };
        let mut a = DMatrix::zeros(n, gens.len());
        let mut ok = true;
        for (j, g) in gc.iter().enumerate() {
            for i in 0..n {
                match g[i].eval(&p) {
                    Ok(v) => a[(i, j)] = v,
                    Err(_) => ok = false,
                }
            }
        }
        if !ok {
            continue;
        }
        let b = DVector::from_vec(b);
        let (_, r) = linalg::lstsq(&a, &b);
        worst = worst.max(r / b.norm().max(1.0));
        used += 1;
    }
    if used == 0 {
        return Err(Error::SingularPoint("no regular sample point in the region".into()));
    }
    let certificate = format!("least squares over {used} samples");
    if worst <= tol {
        Ok(Membership { member: true, mode: MembershipMode::Sampled, coefficients: None, residual: Some(worst), certificate })
    } else if worst >= 10.0 * tol {
        Ok(Membership { member: false, mode: MembershipMode::Sampled, coefficients: None, residual: Some(worst), certificate })
    } else {
        Err(Error::Inconclusive { residual: worst, tol })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::Chart;

    fn dist(gens: &[&[&str]], n: usize) -> Distribution {
        Distribution::parse(Chart::standard(n, None), gens, "t").unwrap()
    }

    #[test]
    fn grushin_dy_is_not_a_member_globally() {
        let g = dist(&[&["1", "0"], &["0", "x"]], 2);
        let dy = VectorField::parse(&["0", "1"], &g.chart).unwrap();
        let m = module_membership(&dy, &g, MembershipMode::Symbolic, DEFAULT_TOL).unwrap();
        assert!(!m.member);
        let half = Region::new(vec![(0.0, f64::INFINITY), (f64::NEG_INFINITY, f64::INFINITY)]).unwrap();
        let m = membership_in(&dy, &g.generators, &half, MembershipMode::Symbolic, DEFAULT_TOL).unwrap();
        assert!(m.member);
        let c = m.coefficients.unwrap();
        assert!(c[0].is_zero());
        assert_eq!(c[1], Expr::parse("x^-1", &g.chart).unwrap());
        let s = membership_in(&dy, &g.generators, &half, MembershipMode::Sampled, DEFAULT_TOL).unwrap();
        assert!(s.member && s.residual.unwrap() < 1e-12);
    }

    #[test]
    fn gl2_radial_field() {
        let gl = dist(&[&["x", "0"], &["0", "x"], &["y", "0"], &["0", "y"]], 2);
        let r = VectorField::parse(&["x", "y"], &gl.chart).unwrap();
        let m = module_membership(&r, &gl, MembershipMode::Symbolic, DEFAULT_TOL).unwrap();
        assert!(m.member);
        let c = m.coefficients.unwrap();
        let rec = Expr::sum((0..4).map(|j| &c[j] * &gl.generators[j].coeffs[0]));
        assert_eq!(rec, gl.generators[0].coeffs[0].clone());
        let one: Vec<Expr> = c.iter().cloned().collect();
        assert_eq!(one, vec![Expr::one(), Expr::zero(), Expr::zero(), Expr::one()]);
        let dx = VectorField::parse(&["1", "0"], &gl.chart).unwrap();
        assert!(!module_membership(&dx, &gl, MembershipMode::Symbolic, DEFAULT_TOL).unwrap().member);
    }

    #[test]
    fn heisenberg_dz() {
        let h = dist(&[&["1", "0", "-1/2*y"], &["0", "1", "1/2*x"]], 3);
        let dz = VectorField::parse(&["0", "0", "1"], &h.chart).unwrap();
        assert!(!module_membership(&dz, &h, MembershipMode::Symbolic, DEFAULT_TOL).unwrap().member);
        let s = module_membership(&dz, &h, MembershipMode::Sampled, DEFAULT_TOL).unwrap();
        assert!(!s.member && s.residual.unwrap() > 0.1);
    }

    #[test]
    fn pathological_brackets() {
        let p = dist(&[&["1", "0"], &["0", "flatplus(x)"]], 2);
        let y1 = VectorField::parse(&["0", "x^-2*flatplus(x)"], &p.chart).unwrap();
        assert!(!module_membership(&y1, &p, MembershipMode::Symbolic, DEFAULT_TOL).unwrap().member);
        let right = Region::new(vec![(0.5, 2.0), (-1.0, 1.0)]).unwrap();
        assert!(membership_in(&y1, &p.generators, &right, MembershipMode::Symbolic, DEFAULT_TOL).unwrap().member);
    }
}
