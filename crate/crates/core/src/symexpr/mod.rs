//! Exact symbolic scalar expressions on a coordinate chart.
//!
//! An [`Expr`] is a finite sum of rational multiples of monomials. A monomial is a product
//! of atoms raised to integer powers (negative powers allowed). Atoms are coordinates,
//! `pi`, shifted flat functions, `exp`, `sin`, `cos`, reciprocals of non-monomial
//! expressions and half-space piecewise expressions. Every constructor returns the
//! canonical form, so structural equality is canonical equality.
//!
//! Canonical rules:
//! * at most one `exp` atom per monomial, with power 1 (`exp(a)exp(b) = exp(a+b)`);
//! * `sin(a)^k` with `k >= 2` is rewritten as `sin(a)^(k-2) (1 - cos(a)^2)`;
//! * `sin`/`cos` arguments are sign-normalized;
//! * `recip(p)` holds a primitive polynomial-like `p` (monomial content removed, leading
//!   coefficient 1) and a reciprocal power is cancelled against its numerator whenever
//!   exact division by `p` succeeds.

mod chart;
mod diff;
mod eval;
mod jet;
mod parse;
mod print;
mod sample;
mod smooth;
mod upoly;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub use chart::{Chart, Region};
pub use eval::Compiled;
pub use jet::{taylor_jet, JetSpace, JetTable, Series};
pub use sample::{equal, equal_on, EqualityWitness};
pub use smooth::{check_smooth, pole_order};

pub(crate) use jet::series_of_monomial;

/// Exact rational number.
pub type Q = BigRational;

pub fn q(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn qf(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn q_to_f64(v: &Q) -> f64 {
    v.to_f64().unwrap_or_else(|| {
        let n = v.numer().to_f64().unwrap_or(f64::NAN);
        let d = v.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

/// `flat(u) = exp(-1/u)` for `u > 0` and `0` otherwise, with `u = ±(x_var - shift)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlatArg {
    pub var: usize,
    pub neg: bool,
    pub shift: Q,
}

impl FlatArg {
    pub fn plus(var: usize) -> Self {
        FlatArg { var, neg: false, shift: Q::zero() }
    }

    pub fn sign(&self) -> f64 {
        if self.neg {
            -1.0
        } else {
            1.0
        }
    }

    /// The argument `u` at coordinate value `x`.
    pub fn u(&self, x: f64) -> f64 {
        self.sign() * (x - q_to_f64(&self.shift))
    }

    /// The argument as an expression.
    pub fn arg_expr(&self) -> Expr {
        let e = &Expr::coord(self.var) - &Expr::constant(self.shift.clone());
        if self.neg {
            -e
        } else {
            e
        }
    }
}

/// `above` where `x_var > threshold`, `below` elsewhere.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Piecewise {
    pub var: usize,
    pub threshold: Q,
    pub above: Expr,
    pub below: Expr,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    Coord(usize),
    Pi,
    Flat(FlatArg),
    Cos(Expr),
    Sin(Expr),
    Exp(Expr),
    Recip(Expr),
    Piecewise(Box<Piecewise>),
}

impl Atom {
    /// Atoms whose products obey extra rewrite rules.
    fn interacts(&self) -> bool {
        matches!(self, Atom::Exp(_) | Atom::Sin(_) | Atom::Piecewise(_))
    }
}

/// Product of atoms with nonzero integer exponents.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial(pub(crate) BTreeMap<Atom, i64>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(BTreeMap::new())
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&Atom, i64)> {
        self.0.iter().map(|(a, &k)| (a, k))
    }

    pub fn exponent(&self, a: &Atom) -> i64 {
        self.0.get(a).copied().unwrap_or(0)
    }

    /// Exponent vector over the coordinates if the monomial involves coordinates only.
    pub fn coord_exponents(&self, n: usize) -> Option<Vec<i64>> {
        let mut v = vec![0; n];
        for (a, k) in self.atoms() {
            match a {
                Atom::Coord(i) if *i < n => v[*i] = k,
                _ => return None,
            }
        }
        Some(v)
    }

    pub(crate) fn without(&self, a: &Atom) -> Monomial {
        let mut m = self.0.clone();
        m.remove(a);
        Monomial(m)
    }
}

/// Canonical symbolic expression.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Expr {
    pub(crate) terms: BTreeMap<Monomial, Q>,
}

type RawMono = BTreeMap<Atom, i64>;

impl Expr {
    pub fn zero() -> Self {
        Expr { terms: BTreeMap::new() }
    }

    pub fn one() -> Self {
        Self::constant(Q::one())
    }

    pub fn int(n: i64) -> Self {
        Self::constant(q(n))
    }

    pub fn rational(n: i64, d: i64) -> Self {
        Self::constant(qf(n, d))
    }

    pub fn constant(c: Q) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(Monomial::one(), c);
        }
        Expr { terms }
    }

    pub fn coord(i: usize) -> Self {
        Self::atom(Atom::Coord(i), 1)
    }

    pub fn pi() -> Self {
        Self::atom(Atom::Pi, 1)
    }

    /// `flatplus(x_i)`.
    pub fn flatplus(i: usize) -> Self {
        Self::flat(FlatArg::plus(i))
    }

    pub fn flat(f: FlatArg) -> Self {
        Self::atom(Atom::Flat(f), 1)
    }

    /// Single atom power; goes through normalization.
    pub fn atom(a: Atom, k: i64) -> Self {
        let mut m = RawMono::new();
        m.insert(a, k);
        let mut out = BTreeMap::new();
        norm_mono(m, Q::one(), &mut out);
        cancel_recips(finish(out))
    }

    pub fn monomial(m: Monomial, c: Q) -> Self {
        let mut out = BTreeMap::new();
        norm_mono(m.0, c, &mut out);
        cancel_recips(finish(out))
    }

    /// `x^e` for a coordinate exponent vector (negative entries allowed).
    pub fn coord_power(exps: &[i64]) -> Self {
        let m: RawMono = exps
            .iter()
            .enumerate()
            .filter(|(_, &k)| k != 0)
            .map(|(i, &k)| (Atom::Coord(i), k))
            .collect();
        Expr { terms: BTreeMap::from([(Monomial(m), Q::one())]) }
    }

    pub fn exp(arg: Expr) -> Self {
        if arg.is_zero() {
            return Expr::one();
        }
        Self::atom(Atom::Exp(arg), 1)
    }

    pub fn sin(arg: Expr) -> Self {
        if arg.is_zero() {
            return Expr::zero();
        }
        if arg.leading_negative() {
            return -Self::atom(Atom::Sin(-arg), 1);
        }
        Self::atom(Atom::Sin(arg), 1)
    }

    pub fn cos(arg: Expr) -> Self {
        if arg.is_zero() {
            return Expr::one();
        }
        if arg.leading_negative() {
            return Self::atom(Atom::Cos(-arg), 1);
        }
        Self::atom(Atom::Cos(arg), 1)
    }

    pub fn piecewise(var: usize, threshold: Q, above: Expr, below: Expr) -> Self {
        if above == below {
            return above;
        }
        Self::atom(Atom::Piecewise(Box::new(Piecewise { var, threshold, above, below })), 1)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.as_constant().is_some_and(|c| c.is_one())
    }

    pub fn as_constant(&self) -> Option<Q> {
        match self.terms.len() {
            0 => Some(Q::zero()),
            1 => {
                let (m, c) = self.terms.iter().next().unwrap();
                m.is_one().then(|| c.clone())
            }
            _ => None,
        }
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Q)> {
        self.terms.iter()
    }

    /// Coefficient of a monomial (zero if absent).
    pub fn coefficient(&self, m: &Monomial) -> Q {
        self.terms.get(m).cloned().unwrap_or_else(Q::zero)
    }

    fn leading_negative(&self) -> bool {
        self.terms.iter().next_back().is_some_and(|(_, c)| c.is_negative())
    }

    /// Polynomial in the coordinates with nonnegative exponents only.
    pub fn is_polynomial(&self) -> bool {
        self.terms.keys().all(|m| m.atoms().all(|(a, k)| matches!(a, Atom::Coord(_)) && k > 0))
    }

    /// Total degree in the coordinates (ignoring other atoms); `None` for zero.
    pub fn coord_degree(&self) -> Option<i64> {
        self.terms
            .keys()
            .map(|m| m.atoms().filter(|(a, _)| matches!(a, Atom::Coord(_))).map(|(_, k)| k).sum())
            .max()
    }

    /// All atoms appearing at top level.
    pub fn atoms(&self) -> BTreeSet<Atom> {
        self.terms.keys().flat_map(|m| m.0.keys().cloned()).collect()
    }

    /// Coordinate hyperplanes `x_var = c` where a flat factor switches on or a piecewise atom
    /// switches branch, anywhere in the tree.
    pub fn breakpoints(&self) -> BTreeSet<(usize, Q)> {
        let mut out = BTreeSet::new();
        for m in self.terms.keys() {
            for a in m.0.keys() {
                match a {
                    Atom::Flat(f) => {
                        out.insert((f.var, f.shift.clone()));
                    }
                    Atom::Piecewise(p) => {
                        out.insert((p.var, p.threshold.clone()));
                        out.extend(p.above.breakpoints());
                        out.extend(p.below.breakpoints());
                    }
                    Atom::Exp(e) | Atom::Sin(e) | Atom::Cos(e) | Atom::Recip(e) => out.extend(e.breakpoints()),
                    _ => {}
                }
            }
        }
        out
    }

    /// Whether any atom anywhere in the tree satisfies `pred`.
    pub fn any_atom(&self, pred: &dyn Fn(&Atom) -> bool) -> bool {
        self.terms.keys().any(|m| {
            m.0.keys().any(|a| {
                pred(a)
                    || match a {
                        Atom::Exp(e) | Atom::Sin(e) | Atom::Cos(e) | Atom::Recip(e) => e.any_atom(pred),
                        Atom::Piecewise(p) => p.above.any_atom(pred) || p.below.any_atom(pred),
                        _ => false,
                    }
            })
        })
    }

    /// Largest coordinate index referenced, if any.
    pub fn max_coord(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        let mut upd = |i: usize| best = Some(best.map_or(i, |b| b.max(i)));
        for m in self.terms.keys() {
            for a in m.0.keys() {
                match a {
                    Atom::Coord(i) => upd(*i),
                    Atom::Flat(f) => upd(f.var),
                    Atom::Exp(e) | Atom::Sin(e) | Atom::Cos(e) | Atom::Recip(e) => {
                        if let Some(i) = e.max_coord() {
                            upd(i)
                        }
                    }
                    Atom::Piecewise(p) => {
                        upd(p.var);
                        for e in [&p.above, &p.below] {
                            if let Some(i) = e.max_coord() {
                                upd(i)
                            }
                        }
                    }
                    Atom::Pi => {}
                }
            }
        }
        best
    }

    pub fn scale(&self, c: &Q) -> Expr {
        if c.is_zero() {
            return Expr::zero();
        }
        Expr { terms: self.terms.iter().map(|(m, v)| (m.clone(), v * c)).collect() }
    }

    /// Reciprocal. Monomials invert exactly; other expressions become a `recip` atom
    /// times the inverse of their monomial content.
    pub fn recip(&self) -> Result<Expr> {
        if self.is_zero() {
            return Err(Error::SingularPoint("reciprocal of zero".into()));
        }
        if self.terms.len() == 1 {
            let (m, c) = self.terms.iter().next().unwrap();
            let inv: RawMono = m.0.iter().map(|(a, &k)| (a.clone(), -k)).collect();
            let mut out = BTreeMap::new();
            norm_mono(inv, c.recip(), &mut out);
            return Ok(cancel_recips(finish(out)));
        }
        // Monomial content: the minimum exponent of every atom over all terms.
        let atoms = self.atoms();
        let mut content = RawMono::new();
        for a in atoms {
            let mn = self.terms.keys().map(|m| m.exponent(&a)).min().unwrap_or(0);
            if mn != 0 {
                content.insert(a, mn);
            }
        }
        let mut prim: BTreeMap<Monomial, Q> = BTreeMap::new();
        for (m, c) in &self.terms {
            let mut mm = m.0.clone();
            for (a, k) in &content {
                let e = mm.get(a).copied().unwrap_or(0) - k;
                if e == 0 {
                    mm.remove(a);
                } else {
                    mm.insert(a.clone(), e);
                }
            }
            prim.insert(Monomial(mm), c.clone());
        }
        let prim = Expr { terms: prim };
        let vars: Vec<Atom> = prim.atoms().into_iter().collect();
        let lead = prim
            .terms
            .iter()
            .max_by(|a, b| lex_key(a.0, &vars).cmp(&lex_key(b.0, &vars)))
            .map(|(_, c)| c.clone())
            .unwrap();
        let prim = prim.scale(&lead.recip());
        let inv_content: RawMono = content.into_iter().map(|(a, k)| (a, -k)).collect();
        let mut out = BTreeMap::new();
        norm_mono(inv_content, lead.recip(), &mut out);
        let factor = finish(out);
        Ok(factor * recip_atoms(prim))
    }

    pub fn div(&self, other: &Expr) -> Result<Expr> {
        Ok(self * &other.recip()?)
    }

    pub fn pow(&self, k: i64) -> Result<Expr> {
        if k < 0 {
            return self.recip()?.pow(-k);
        }
        let mut base = self.clone();
        let mut acc = Expr::one();
        let mut k = k as u64;
        while k > 0 {
            if k & 1 == 1 {
                acc = &acc * &base;
            }
            k >>= 1;
            if k > 0 {
                base = &base * &base;
            }
        }
        Ok(acc)
    }

    /// Sum of an iterator of expressions.
    pub fn sum<I: IntoIterator<Item = Expr>>(it: I) -> Expr {
        let mut acc = BTreeMap::new();
        for e in it {
            add_into(&mut acc, &e, &Q::one());
        }
        cancel_recips(finish(acc))
    }
}

/// `1/p` for a primitive normalized `p`, split into univariate factors where possible.
fn recip_atoms(p: Expr) -> Expr {
    let atoms = p.atoms();
    let var = match (atoms.len(), atoms.iter().next()) {
        (1, Some(Atom::Coord(j))) => *j,
        _ => return Expr::atom(Atom::Recip(p), 1),
    };
    let deg = p.coord_degree().unwrap_or(0);
    if deg < 2 || p.terms.keys().any(|m| m.exponent(&Atom::Coord(var)) < 0) {
        return Expr::atom(Atom::Recip(p), 1);
    }
    let mut poly = vec![Q::zero(); deg as usize + 1];
    for (m, c) in &p.terms {
        poly[m.exponent(&Atom::Coord(var)) as usize] = c.clone();
    }
    let mut acc = Expr::one();
    for (f, k) in upoly::factor(&poly) {
        let fe = Expr::sum(f.iter().enumerate().map(|(i, c)| {
            let mut e = vec![0i64; var + 1];
            e[var] = i as i64;
            Expr::coord_power(&e).scale(c)
        }));
        let r = if fe == Expr::coord(var) {
            let mut e = vec![0i64; var + 1];
            e[var] = -k;
            Expr::coord_power(&e)
        } else {
            Expr::atom(Atom::Recip(fe), k)
        };
        acc = mul_raw(&acc, &r);
    }
    cancel_recips(acc)
}

fn lex_key(m: &Monomial, vars: &[Atom]) -> Vec<i64> {
    vars.iter().map(|a| m.exponent(a)).collect()
}

fn finish(mut map: BTreeMap<Monomial, Q>) -> Expr {
    map.retain(|_, c| !c.is_zero());
    Expr { terms: map }
}

fn add_into(acc: &mut BTreeMap<Monomial, Q>, e: &Expr, s: &Q) {
    for (m, c) in &e.terms {
        let entry = acc.entry(m.clone()).or_insert_with(Q::zero);
        *entry += c * s;
    }
}

fn add_raw(a: &Expr, b: &Expr) -> Expr {
    let mut acc = a.terms.clone();
    add_into(&mut acc, b, &Q::one());
    finish(acc)
}

fn sub_raw(a: &Expr, b: &Expr) -> Expr {
    let mut acc = a.terms.clone();
    add_into(&mut acc, b, &-Q::one());
    finish(acc)
}

fn mul_raw(a: &Expr, b: &Expr) -> Expr {
    let mut out = BTreeMap::new();
    for (ma, ca) in &a.terms {
        for (mb, cb) in &b.terms {
            let mut m = ma.0.clone();
            for (at, k) in &mb.0 {
                *m.entry(at.clone()).or_insert(0) += k;
            }
            norm_mono(m, ca * cb, &mut out);
        }
    }
    finish(out)
}

fn single(m: RawMono, c: Q) -> Expr {
    let mut out = BTreeMap::new();
    norm_mono(m, c, &mut out);
    finish(out)
}

/// Normalize one raw monomial and accumulate the resulting terms into `out`.
fn norm_mono(mut m: RawMono, c: Q, out: &mut BTreeMap<Monomial, Q>) {
    if c.is_zero() {
        return;
    }
    m.retain(|_, k| *k != 0);
    if !m.keys().any(|a| a.interacts() || matches!(a, Atom::Recip(_))) {
        *out.entry(Monomial(m)).or_insert_with(Q::zero) += c;
        return;
    }
    // exp merging
    let exps: Vec<(Atom, i64)> = m.iter().filter(|(a, _)| matches!(a, Atom::Exp(_))).map(|(a, &k)| (a.clone(), k)).collect();
    if exps.len() > 1 || exps.first().is_some_and(|(_, k)| *k != 1) {
        let mut total = Expr::zero();
        for (a, k) in &exps {
            m.remove(a);
            if let Atom::Exp(arg) = a {
                total = add_raw(&total, &arg.scale(&q(*k)));
            }
        }
        let total = cancel_recips(total);
        if !total.is_zero() {
            m.insert(Atom::Exp(total), 1);
        }
    }
    // sin^k, k >= 2
    if let Some((a, k)) = m.iter().find(|(a, &k)| matches!(a, Atom::Sin(_)) && k >= 2).map(|(a, &k)| (a.clone(), k)) {
        let arg = match &a {
            Atom::Sin(e) => e.clone(),
            _ => unreachable!(),
        };
        m.insert(a, k - 2);
        let rest = single(m, c);
        let mut cos2 = RawMono::new();
        cos2.insert(Atom::Cos(arg), 2);
        let factor = sub_raw(&Expr::one(), &single(cos2, Q::one()));
        add_into(out, &mul_raw(&rest, &factor), &Q::one());
        return;
    }
    // recip(p)^k with k < 0 is p^|k|
    if let Some((a, k)) = m.iter().find(|(a, &k)| matches!(a, Atom::Recip(_)) && k < 0).map(|(a, &k)| (a.clone(), k)) {
        let p = match &a {
            Atom::Recip(e) => e.clone(),
            _ => unreachable!(),
        };
        m.remove(&a);
        let mut acc = single(m, c);
        for _ in 0..(-k) {
            acc = mul_raw(&acc, &p);
        }
        add_into(out, &acc, &Q::one());
        return;
    }
    // piecewise powers and products with a common half-space
    let pws: Vec<(Atom, i64)> = m
        .iter()
        .filter(|(a, &k)| matches!(a, Atom::Piecewise(_)) && k > 0)
        .map(|(a, &k)| (a.clone(), k))
        .collect();
    if !pws.is_empty() {
        let mut groups: BTreeMap<(usize, Q), Vec<(Piecewise, i64)>> = BTreeMap::new();
        for (a, k) in &pws {
            if let Atom::Piecewise(p) = a {
                groups.entry((p.var, p.threshold.clone())).or_default().push(((**p).clone(), *k));
            }
        }
        let needs = groups.values().any(|g| g.len() > 1 || g[0].1 > 1);
        if needs {
            for (a, _) in &pws {
                m.remove(a);
            }
            let mut acc = single(m, c);
            for ((var, thr), g) in groups {
                let mut above = Expr::one();
                let mut below = Expr::one();
                for (p, k) in g {
                    for _ in 0..k {
                        above = mul_raw(&above, &p.above);
                        below = mul_raw(&below, &p.below);
                    }
                }
                let above = cancel_recips(above);
                let below = cancel_recips(below);
                let f = if above == below {
                    above
                } else {
                    let mut pm = RawMono::new();
                    pm.insert(Atom::Piecewise(Box::new(Piecewise { var, threshold: thr, above, below })), 1);
                    Expr { terms: BTreeMap::from([(Monomial(pm), Q::one())]) }
                };
                acc = mul_raw(&acc, &f);
            }
            add_into(out, &acc, &Q::one());
            return;
        }
    }
    *out.entry(Monomial(m)).or_insert_with(Q::zero) += c;
}

/// Cancel reciprocal atoms against numerators divisible by their polynomial.
fn cancel_recips(mut e: Expr) -> Expr {
    for _ in 0..6 {
        let recips: BTreeSet<Expr> = e
            .terms
            .keys()
            .flat_map(|m| {
                m.0.iter().filter_map(|(a, &k)| match a {
                    Atom::Recip(p) if k > 0 => Some(p.clone()),
                    _ => None,
                })
            })
            .collect();
        if recips.is_empty() {
            return e;
        }
        let mut changed = false;
        for p in recips {
            if p.atoms().iter().any(|a| a.interacts()) {
                continue;
            }
            let ratom = Atom::Recip(p.clone());
            loop {
                let kmax = e.terms.keys().map(|m| m.exponent(&ratom)).max().unwrap_or(0);
                if kmax <= 0 {
                    break;
                }
                let mut top = BTreeMap::new();
                let mut rest = BTreeMap::new();
                for (m, c) in &e.terms {
                    if m.exponent(&ratom) == kmax {
                        top.insert(m.without(&ratom), c.clone());
                    } else {
                        rest.insert(m.clone(), c.clone());
                    }
                }
                let top = Expr { terms: top };
                match divide_exact(&top, &p) {
                    Some(quot) => {
                        let mut rm = RawMono::new();
                        rm.insert(ratom.clone(), kmax - 1);
                        let lowered = mul_raw(&quot, &single(rm, Q::one()));
                        e = add_raw(&Expr { terms: rest }, &lowered);
                        changed = true;
                    }
                    None => break,
                }
            }
        }
        if !changed {
            return e;
        }
    }
    e
}

/// Exact division `n / p` treating the atoms of `p` as polynomial variables and every
/// other atom as part of the coefficients. Laurent exponents in `n` are shifted first.
fn divide_exact(n: &Expr, p: &Expr) -> Option<Expr> {
    let vars: Vec<Atom> = p.atoms().into_iter().collect();
    if vars.is_empty() {
        return None;
    }
    let split = |e: &Expr| -> BTreeMap<Vec<i64>, Expr> {
        let mut out: BTreeMap<Vec<i64>, BTreeMap<Monomial, Q>> = BTreeMap::new();
        for (m, c) in &e.terms {
            let key = lex_key(m, &vars);
            let mut rest = m.0.clone();
            for v in &vars {
                rest.remove(v);
            }
            *out.entry(key).or_default().entry(Monomial(rest)).or_insert_with(Q::zero) += c;
        }
        out.into_iter().map(|(k, v)| (k, finish(v))).filter(|(_, v)| !v.is_zero()).collect()
    };
    let pp = split(p);
    let (lead_p, lc) = pp.iter().next_back().map(|(k, v)| (k.clone(), v.as_constant()))?;
    let lc = lc?;
    let mut nn = split(n);
    let nv = vars.len();
    let mut shift = vec![0i64; nv];
    for k in nn.keys() {
        for i in 0..nv {
            shift[i] = shift[i].min(k[i]);
        }
    }
    nn = nn
        .into_iter()
        .map(|(k, v)| (k.iter().zip(&shift).map(|(a, s)| a - s).collect(), v))
        .collect();
    let mut quot: BTreeMap<Vec<i64>, Expr> = BTreeMap::new();
    let inv_lc = lc.recip();
    let mut steps = 0;
    while let Some((lead, coef)) = nn.iter().next_back().map(|(k, v)| (k.clone(), v.clone())) {
        steps += 1;
        if steps > 4000 {
            return None;
        }
        if lead.iter().zip(&lead_p).any(|(a, b)| a < b) {
            return None;
        }
        let qv: Vec<i64> = lead.iter().zip(&lead_p).map(|(a, b)| a - b).collect();
        let qc = coef.scale(&inv_lc);
        for (pk, pc) in &pp {
            let key: Vec<i64> = qv.iter().zip(pk).map(|(a, b)| a + b).collect();
            let prod = mul_raw(&qc, pc);
            let cur = nn.remove(&key).unwrap_or_default();
            let next = sub_raw(&cur, &prod);
            if !next.is_zero() {
                nn.insert(key, next);
            }
        }
        let cur = quot.remove(&qv).unwrap_or_default();
        quot.insert(qv, add_raw(&cur, &qc));
    }
    let mut acc = Expr::zero();
    for (k, c) in quot {
        let m: RawMono = vars
            .iter()
            .zip(k.iter().zip(&shift))
            .filter(|(_, (a, s))| *a + *s != 0)
            .map(|(v, (a, s))| (v.clone(), a + s))
            .collect();
        acc = add_raw(&acc, &mul_raw(&c, &single(m, Q::one())));
    }
    Some(acc)
}

impl Add for &Expr {
    type Output = Expr;
    fn add(self, rhs: &Expr) -> Expr {
        cancel_recips(add_raw(self, rhs))
    }
}
impl Sub for &Expr {
    type Output = Expr;
    fn sub(self, rhs: &Expr) -> Expr {
        cancel_recips(sub_raw(self, rhs))
    }
}
impl Mul for &Expr {
    type Output = Expr;
    fn mul(self, rhs: &Expr) -> Expr {
        cancel_recips(mul_raw(self, rhs))
    }
}
impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        self.scale(&-Q::one())
    }
}
impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        (&self).neg()
    }
}
macro_rules! owned_ops {
    ($tr:ident, $f:ident) => {
        impl $tr for Expr {
            type Output = Expr;
            fn $f(self, rhs: Expr) -> Expr {
                (&self).$f(&rhs)
            }
        }
        impl $tr<&Expr> for Expr {
            type Output = Expr;
            fn $f(self, rhs: &Expr) -> Expr {
                (&self).$f(rhs)
            }
        }
        impl $tr<Expr> for &Expr {
            type Output = Expr;
            fn $f(self, rhs: Expr) -> Expr {
                self.$f(&rhs)
            }
        }
    };
}
owned_ops!(Add, add);
owned_ops!(Sub, sub);
owned_ops!(Mul, mul);

impl From<i64> for Expr {
    fn from(n: i64) -> Self {
        Expr::int(n)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.max_coord().map_or(1, |i| i + 1);
        let names = Chart::standard(n, None).names;
        f.write_str(&print::render(self, &names))
    }
}

impl Expr {
    /// Parse in the expression grammar using the chart's coordinate names.
    pub fn parse(s: &str, chart: &Chart) -> Result<Expr> {
        parse::parse(s, &chart.names)
    }

    /// Parse with explicit coordinate names.
    pub fn parse_with(s: &str, names: &[String]) -> Result<Expr> {
        parse::parse(s, names)
    }

    /// Canonical text form using the chart's coordinate names.
    pub fn render(&self, chart: &Chart) -> String {
        print::render(self, &chart.names)
    }

    pub fn render_with(&self, names: &[String]) -> String {
        print::render(self, names)
    }

    /// Canonicalization is performed by every constructor; this is the identity.
    pub fn canonicalize(&self) -> Expr {
        self.clone()
    }

    pub fn compile(&self) -> Compiled {
        Compiled::new(self)
    }

    /// IEEE double value at `p`.
    pub fn evaluate(&self, p: &[f64]) -> Result<f64> {
        Compiled::new(self).eval(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Expr {
        Expr::coord(0)
    }
    fn y() -> Expr {
        Expr::coord(1)
    }

    #[test]
    fn commutative_collection() {
        let a = &x() * &y() + &y() * &x();
        let b = Expr::int(2) * x() * y();
        assert_eq!(a, b);
        assert_eq!(&a - &b, Expr::zero());
    }

    #[test]
    fn exp_merges() {
        let e = Expr::exp(x()) * Expr::exp(-x());
        assert!(e.is_one());
        let f = Expr::exp(x()) * Expr::exp(y());
        assert_eq!(f, Expr::exp(x() + y()));
        assert_eq!(Expr::exp(x()).recip().unwrap(), Expr::exp(-x()));
    }

    #[test]
    fn sin_square_reduces() {
        let s = Expr::sin(x());
        let c = Expr::cos(x());
        let one = &s * &s + &c * &c;
        assert!(one.is_one());
        assert_eq!(Expr::sin(-x()), -Expr::sin(x()));
        assert_eq!(Expr::cos(-x()), Expr::cos(x()));
    }

    #[test]
    fn recip_cancels() {
        let p = x() + Expr::one();
        let r = p.recip().unwrap();
        assert!((&r * &p).is_one());
        let q2 = (&p * &p).recip().unwrap();
        assert_eq!(&q2 * &p, r);
        // content is pulled out: 1/(x^2 + x) = x^-1 recip(x + 1)
        let s = (&x() * &x() + x()).recip().unwrap();
        assert_eq!(s, Expr::coord_power(&[-1]) * r.clone());
        // (x^2 - 1) / (x - 1) = x + 1
        let num = &x() * &x() - Expr::one();
        let den = x() - Expr::one();
        assert_eq!(num.div(&den).unwrap(), x() + Expr::one());
        // laurent numerators
        let lau = (Expr::coord_power(&[-1]) + Expr::one()).div(&(x() + Expr::one())).unwrap();
        assert_eq!(lau, Expr::coord_power(&[-1]));
    }

    #[test]
    fn monomial_inverse_and_pow() {
        let m = Expr::int(3) * x() * x() * y();
        let inv = m.recip().unwrap();
        assert!((&m * &inv).is_one());
        assert_eq!(x().pow(-2).unwrap(), Expr::coord_power(&[-2]));
        assert!(Expr::zero().recip().is_err());
    }

    #[test]
    fn piecewise_products() {
        let p = Expr::piecewise(0, q(0), x(), Expr::zero());
        let p2 = &p * &p;
        assert_eq!(p2, Expr::piecewise(0, q(0), &x() * &x(), Expr::zero()));
        assert_eq!(Expr::piecewise(0, q(1), y(), y()), y());
    }
}
