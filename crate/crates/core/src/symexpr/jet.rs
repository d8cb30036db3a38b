use std::collections::HashMap;

use super::{q_to_f64, Atom, Expr, Monomial, Q};
use crate::error::{Error, Result};

/// Index set of multi-indices `|α| <= order` in `n` variables with a product table.
#[derive(Clone, Debug)]
pub struct JetSpace {
    pub n: usize,
    pub order: usize,
    pub indices: Vec<Vec<u32>>,
    lookup: HashMap<Vec<u32>, usize>,
    table: Vec<(u32, u32, u32)>,
}

/// Truncated multivariate power series in `t = x - p`.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub c: Vec<f64>,
}

impl JetSpace {
    pub fn new(n: usize, order: usize) -> Self {
        let mut indices: Vec<Vec<u32>> = vec![];
        for deg in 0..=order {
            let mut cur = vec![0u32; n];
            gen(n, deg as u32, 0, &mut cur, &mut indices);
        }
        let lookup: HashMap<Vec<u32>, usize> = indices.iter().cloned().enumerate().map(|(i, a)| (a, i)).collect();
        let deg = |a: &Vec<u32>| a.iter().sum::<u32>() as usize;
        let mut table = vec![];
        for (i, a) in indices.iter().enumerate() {
            for (j, b) in indices.iter().enumerate() {
                if deg(a) + deg(b) <= order {
                    let s: Vec<u32> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                    table.push((i as u32, j as u32, lookup[&s] as u32));
                }
            }
        }
        JetSpace { n, order, indices, lookup, table }
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    pub fn index(&self, alpha: &[u32]) -> Option<usize> {
        self.lookup.get(alpha).copied()
    }

    pub fn degree(&self, idx: usize) -> usize {
        self.indices[idx].iter().sum::<u32>() as usize
    }

    pub fn zero(&self) -> Series {
        Series { c: vec![0.0; self.dim()] }
    }

    pub fn constant(&self, v: f64) -> Series {
        let mut s = self.zero();
        s.c[0] = v;
        s
    }

    /// `p_i + t_i`.
    pub fn var(&self, i: usize, p_i: f64) -> Series {
        let mut s = self.constant(p_i);
        if self.order >= 1 {
            let mut a = vec![0u32; self.n];
            a[i] = 1;
            s.c[self.lookup[&a]] = 1.0;
        }
        s
    }

    /// `t^β` (zero when `|β|` exceeds the order).
    pub fn monomial(&self, beta: &[u32]) -> Series {
        let mut s = self.zero();
        if let Some(&k) = self.lookup.get(beta) {
            s.c[k] = 1.0;
        }
        s
    }

    pub fn add(&self, a: &Series, b: &Series) -> Series {
        Series { c: a.c.iter().zip(&b.c).map(|(x, y)| x + y).collect() }
    }

    pub fn scale(&self, a: &Series, s: f64) -> Series {
        Series { c: a.c.iter().map(|x| x * s).collect() }
    }

    pub fn mul(&self, a: &Series, b: &Series) -> Series {
        let mut out = self.zero();
        for &(i, j, k) in &self.table {
            let (ai, bj) = (a.c[i as usize], b.c[j as usize]);
            if ai != 0.0 && bj != 0.0 {
                out.c[k as usize] += ai * bj;
            }
        }
        out
    }

    /// `f(a)` from the Taylor coefficients `d[m] = f^(m)(a_0)/m!`.
    pub fn compose(&self, a: &Series, d: &[f64]) -> Series {
        let mut v = a.clone();
        v.c[0] = 0.0;
        let mut r = self.constant(d[self.order]);
        for m in (0..self.order).rev() {
            r = self.mul(&r, &v);
            r.c[0] += d[m];
        }
        r
    }

    pub fn exp(&self, a: &Series) -> Series {
        let e = a.c[0].exp();
        let d: Vec<f64> = (0..=self.order).map(|m| e / factorial(m)).collect();
        self.compose(a, &d)
    }

    pub fn sin(&self, a: &Series) -> Series {
        let d: Vec<f64> = (0..=self.order)
            .map(|m| (a.c[0] + m as f64 * std::f64::consts::FRAC_PI_2).sin() / factorial(m))
            .collect();
        self.compose(a, &d)
    }

    pub fn cos(&self, a: &Series) -> Series {
        let d: Vec<f64> = (0..=self.order)
            .map(|m| (a.c[0] + m as f64 * std::f64::consts::FRAC_PI_2).cos() / factorial(m))
            .collect();
        self.compose(a, &d)
    }

    pub fn recip(&self, a: &Series) -> Option<Series> {
        let a0 = a.c[0];
        if a0 == 0.0 {
            return None;
        }
        let d: Vec<f64> = (0..=self.order).map(|m| (-1f64).powi(m as i32) / a0.powi(m as i32 + 1)).collect();
        Some(self.compose(a, &d))
    }

    pub fn powi(&self, a: &Series, k: i64) -> Option<Series> {
        let base = if k < 0 { self.recip(a)? } else { a.clone() };
        let mut acc = self.constant(1.0);
        for _ in 0..k.unsigned_abs() {
            acc = self.mul(&acc, &base);
        }
        Some(acc)
    }
}

fn gen(n: usize, left: u32, pos: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if pos == n - 1 {
        cur[pos] = left;
        out.push(cur.clone());
        cur[pos] = 0;
        return;
    }
    for k in (0..=left).rev() {
        cur[pos] = k;
        gen(n, left - k, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

fn factorial(m: usize) -> f64 {
    (1..=m).map(|k| k as f64).product()
}

fn singular(what: &str, p: &[f64]) -> Error {
    Error::SingularPoint(format!("{what} at {p:?}"))
}

pub(crate) fn series_of_atom(sp: &JetSpace, a: &Atom, k: i64, p: &[f64]) -> Result<Series> {
    let base = match a {
        Atom::Coord(i) => sp.var(*i, p[*i]),
        Atom::Pi => sp.constant(std::f64::consts::PI),
        Atom::Flat(f) => {
            let u0 = f.u(p[f.var]);
            if u0 <= 0.0 {
                if k > 0 {
                    return Ok(sp.zero());
                }
                return Err(singular("reciprocal of a vanishing flat function", p));
            }
            let u = sp.scale(&sp.add(&sp.var(f.var, p[f.var]), &sp.constant(-q_to_f64(&f.shift))), f.sign());
            let w = sp.recip(&u).ok_or_else(|| singular("flat argument", p))?;
            sp.exp(&sp.scale(&w, -1.0))
        }
        Atom::Exp(e) => sp.exp(&series_of_expr(sp, e, p)?),
        Atom::Sin(e) => sp.sin(&series_of_expr(sp, e, p)?),
        Atom::Cos(e) => sp.cos(&series_of_expr(sp, e, p)?),
        Atom::Recip(e) => sp.recip(&series_of_expr(sp, e, p)?).ok_or_else(|| singular("reciprocal pole", p))?,
        Atom::Piecewise(pw) => {
            if p[pw.var] > q_to_f64(&pw.threshold) {
                series_of_expr(sp, &pw.above, p)?
            } else {
                series_of_expr(sp, &pw.below, p)?
            }
        }
    };
    sp.powi(&base, k).ok_or_else(|| singular("pole", p))
}

/// Series of `coef * monomial`, skipping atoms selected by `skip`.
///
/// A nonzero `log_offset` evaluates the product of the non-vanishing flat factors as a single
/// exponential divided by `e^{log_offset}`, so that terms far below the underflow threshold
/// keep their relative size.
pub(crate) fn series_of_monomial(
    sp: &JetSpace,
    m: &Monomial,
    coef: &Q,
    p: &[f64],
    skip: &dyn Fn(&Atom) -> bool,
    log_offset: f64,
) -> Result<Series> {
    // Vanishing flats kill the term before any pole is expanded.
    for (a, k) in m.atoms() {
        if let Atom::Flat(f) = a {
            if k > 0 && f.u(p[f.var]) <= 0.0 && !skip(a) {
                return Ok(sp.zero());
            }
        }
    }
    let mut acc = sp.constant(q_to_f64(coef));
    let mut expo: Option<Series> = None;
    for (a, k) in m.atoms() {
        if skip(a) {
            continue;
        }
        if let (Atom::Flat(f), true) = (a, log_offset != 0.0) {
            let u = sp.scale(&sp.add(&sp.var(f.var, p[f.var]), &sp.constant(-q_to_f64(&f.shift))), f.sign());
            let w = sp.recip(&u).ok_or_else(|| singular("flat argument", p))?;
            let w = sp.scale(&w, -(k as f64));
            expo = Some(match expo {
                Some(e) => sp.add(&e, &w),
                None => w,
            });
            continue;
        }
        acc = sp.mul(&acc, &series_of_atom(sp, a, k, p)?);
    }
    if log_offset != 0.0 {
        let e = sp.add(&expo.unwrap_or_else(|| sp.zero()), &sp.constant(-log_offset));
        acc = sp.mul(&acc, &sp.exp(&e));
    }
    Ok(acc)
}

pub(crate) fn series_of_expr(sp: &JetSpace, e: &Expr, p: &[f64]) -> Result<Series> {
    let mut acc = sp.zero();
    for (m, c) in e.terms() {
        acc = sp.add(&acc, &series_of_monomial(sp, m, c, p, &|_| false, 0.0)?);
    }
    Ok(acc)
}

/// Table of `∂^α e(p) / α!` for `|α| <= order`.
#[derive(Clone, Debug)]
pub struct JetTable {
    pub indices: Vec<Vec<u32>>,
    pub coeffs: Vec<f64>,
}

impl JetTable {
    pub fn get(&self, alpha: &[u32]) -> f64 {
        self.indices.iter().position(|a| a == alpha).map_or(0.0, |i| self.coeffs[i])
    }
}

pub fn taylor_jet(e: &Expr, p: &[f64], order: usize) -> Result<JetTable> {
    let sp = JetSpace::new(p.len(), order);
    let s = series_of_expr(&sp, e, p)?;
    Ok(JetTable { indices: sp.indices.clone(), coeffs: s.c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::Chart;

    fn p2(s: &str) -> Expr {
        Expr::parse(s, &Chart::new(&["x", "y"], None).unwrap()).unwrap()
    }

    #[test]
    fn polynomial_jet() {
        let t = taylor_jet(&p2("x^2 + y^2"), &[0.0, 0.0], 2).unwrap();
        assert_eq!(t.get(&[2, 0]), 1.0);
        assert_eq!(t.get(&[0, 2]), 1.0);
        assert_eq!(t.get(&[1, 1]), 0.0);
        assert_eq!(t.get(&[0, 0]), 0.0);
    }

    #[test]
    fn flat_jets_vanish() {
        let t = taylor_jet(&p2("flatplus(x)"), &[0.0, 0.0], 4).unwrap();
        assert!(t.coeffs.iter().all(|&c| c == 0.0));
        let t = taylor_jet(&p2("x^-5*flatplus(x)"), &[0.0, 0.0], 3).unwrap();
        assert!(t.coeffs.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn exp_jet_1d() {
        let c = Chart::new(&["x"], None).unwrap();
        let t = taylor_jet(&Expr::parse("exp(x)", &c).unwrap(), &[0.0], 3).unwrap();
        let want = [1.0, 1.0, 0.5, 1.0 / 6.0];
        for (k, w) in want.iter().enumerate() {
            assert!((t.get(&[k as u32]) - w).abs() < 1e-15);
        }
    }

    #[test]
    fn poles_are_reported() {
        assert!(taylor_jet(&p2("x^-1"), &[0.0, 1.0], 2).is_err());
    }
}
