use super::{q, Atom, Expr, FlatArg, Region};
use crate::error::{Error, Result};

impl Expr {
    /// Exact partial derivative with respect to coordinate `i`.
    pub fn differentiate(&self, i: usize) -> Expr {
        let mut parts = Vec::new();
        for (m, c) in self.terms() {
            for (a, k) in m.atoms() {
                let da = d_atom(a, i);
                if da.is_zero() {
                    continue;
                }
                let mut rest = m.0.clone();
                rest.insert(a.clone(), k - 1);
                let base = Expr::monomial(super::Monomial(rest), c * q(k));
                parts.push(&base * &da);
            }
        }
        Expr::sum(parts)
    }

    /// `∂^α` for a multi-index.
    pub fn derivative(&self, alpha: &[usize]) -> Expr {
        let mut e = self.clone();
        for (i, &k) in alpha.iter().enumerate() {
            for _ in 0..k {
                e = e.differentiate(i);
            }
        }
        e
    }

    /// Replace every coordinate `x_i` by `map[i]`.
    ///
    /// Flat atoms and piecewise thresholds can only follow coordinates mapped to
    /// `±x_j + c`; anything else is reported as not representable.
    pub fn substitute(&self, map: &[Expr]) -> Result<Expr> {
        let mut parts = Vec::with_capacity(self.num_terms());
        for (m, c) in self.terms() {
            let mut acc = Expr::constant(c.clone());
            for (a, k) in m.atoms() {
                let s = subst_atom(a, map)?;
                acc = &acc * &s.pow(k)?;
            }
            parts.push(acc);
        }
        Ok(Expr::sum(parts))
    }

    /// Simplify on an open box: flat atoms that vanish identically there are dropped and
    /// piecewise atoms whose threshold lies outside are resolved.
    pub fn restrict(&self, region: &Region) -> Expr {
        let mut parts = Vec::with_capacity(self.num_terms());
        'terms: for (m, c) in self.terms() {
            let mut acc = Expr::constant(c.clone());
            for (a, k) in m.atoms() {
                let r = match a {
                    Atom::Flat(f) => {
                        if flat_vanishes_on(f, region) && k > 0 {
                            continue 'terms;
                        }
                        Expr::atom(a.clone(), 1)
                    }
                    Atom::Exp(e) => Expr::exp(e.restrict(region)),
                    Atom::Sin(e) => Expr::sin(e.restrict(region)),
                    Atom::Cos(e) => Expr::cos(e.restrict(region)),
                    Atom::Recip(e) => match e.restrict(region).recip() {
                        Ok(r) => r,
                        Err(_) => Expr::atom(a.clone(), 1),
                    },
                    Atom::Piecewise(p) => {
                        let (lo, hi) = region.bounds[p.var];
                        let t = super::q_to_f64(&p.threshold);
                        if lo >= t {
                            p.above.restrict(region)
                        } else if hi <= t {
                            p.below.restrict(region)
                        } else {
                            Expr::piecewise(p.var, p.threshold.clone(), p.above.restrict(region), p.below.restrict(region))
                        }
                    }
                    _ => Expr::atom(a.clone(), 1),
                };
                match r.pow(k) {
                    Ok(v) => acc = &acc * &v,
                    Err(_) => acc = &acc * &Expr::atom(a.clone(), k),
                }
            }
            parts.push(acc);
        }
        Expr::sum(parts)
    }
}

/// Whether `flat(u)` is identically zero on the box.
pub(crate) fn flat_vanishes_on(f: &FlatArg, region: &Region) -> bool {
    let (lo, hi) = region.bounds[f.var];
    let c = super::q_to_f64(&f.shift);
    if f.neg {
        lo >= c
    } else {
        hi <= c
    }
}

/// Whether `flat(u)` is strictly positive on the box.
pub(crate) fn flat_positive_on(f: &FlatArg, region: &Region) -> bool {
    let (lo, hi) = region.bounds[f.var];
    let c = super::q_to_f64(&f.shift);
    if f.neg {
        hi <= c
    } else {
        lo >= c
    }
}

fn d_atom(a: &Atom, i: usize) -> Expr {
    match a {
        Atom::Coord(j) => {
            if *j == i {
                Expr::one()
            } else {
                Expr::zero()
            }
        }
        Atom::Pi => Expr::zero(),
        Atom::Flat(f) => {
            if f.var != i {
                return Expr::zero();
            }
            // d/dx exp(-1/u) = u' u^-2 exp(-1/u) with u = s (x - c), u' = s, u^2 = (x - c)^2
            let base = &Expr::coord(i) - &Expr::constant(f.shift.clone());
            let inv2 = base.pow(-2).expect("x - c is not zero");
            let s = if f.neg { Expr::int(-1) } else { Expr::one() };
            &(&s * &inv2) * &Expr::atom(a.clone(), 1)
        }
        Atom::Exp(e) => &e.differentiate(i) * &Expr::atom(a.clone(), 1),
        Atom::Sin(e) => &e.differentiate(i) * &Expr::cos(e.clone()),
        Atom::Cos(e) => -(&e.differentiate(i) * &Expr::sin(e.clone())),
        Atom::Recip(p) => {
            let dp = p.differentiate(i);
            if dp.is_zero() {
                return Expr::zero();
            }
            -(&dp * &Expr::atom(a.clone(), 2))
        }
        Atom::Piecewise(p) => Expr::piecewise(p.var, p.threshold.clone(), p.above.differentiate(i), p.below.differentiate(i)),
    }
}

fn affine_of(e: &Expr) -> Option<(usize, bool, super::Q)> {
    super::parse::flat_from_arg(e).map(|f| (f.var, f.neg, f.shift))
}

fn subst_atom(a: &Atom, map: &[Expr]) -> Result<Expr> {
    Ok(match a {
        Atom::Coord(i) => map
            .get(*i)
            .cloned()
            .ok_or_else(|| Error::DimensionMismatch(format!("substitution misses coordinate {i}")))?,
        Atom::Pi => Expr::pi(),
        Atom::Flat(f) => {
            // u = s (x - c); x = a x_j + b with a = ±1 (a x_j + b - c = a (x_j - a (c - b)))
            let img = map
                .get(f.var)
                .ok_or_else(|| Error::DimensionMismatch(format!("substitution misses coordinate {}", f.var)))?;
            let (j, aneg, sh) = affine_of(img).ok_or_else(|| {
                Error::NotRepresentable("flat function composed with a non-affine coordinate change".into())
            })?;
            // img = a (x_j - sh) with a = -1 if aneg, so img = a x_j - a sh, b = -a sh
            let a_sign = if aneg { -q(1) } else { q(1) };
            let b = -(&a_sign * &sh);
            let new_shift = &a_sign * &(&f.shift - &b);
            Expr::flat(FlatArg { var: j, neg: f.neg ^ aneg, shift: new_shift })
        }
        Atom::Exp(e) => Expr::exp(e.substitute(map)?),
        Atom::Sin(e) => Expr::sin(e.substitute(map)?),
        Atom::Cos(e) => Expr::cos(e.substitute(map)?),
        Atom::Recip(e) => e.substitute(map)?.recip()?,
        Atom::Piecewise(p) => {
            let img = &map[p.var];
            let (j, aneg, sh) = affine_of(img).ok_or_else(|| {
                Error::NotRepresentable("piecewise threshold under a non-affine coordinate change".into())
            })?;
            // x = a (x_j - sh); x > t  <=>  a (x_j - sh) > t
            let above = p.above.substitute(map)?;
            let below = p.below.substitute(map)?;
            if aneg {
                // -(x_j - sh) > t <=> x_j < sh - t
                Expr::piecewise(j, &sh - &p.threshold, below, above)
            } else {
                Expr::piecewise(j, &sh + &p.threshold, above, below)
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::{Chart, Region};

    fn c2() -> Chart {
        Chart::new(&["x", "y"], None).unwrap()
    }
    fn p(s: &str) -> Expr {
        Expr::parse(s, &c2()).unwrap()
    }

    #[test]
    fn polynomial_rule() {
        assert_eq!(p("x^2 + y^2").differentiate(0), p("2*x"));
    }

    #[test]
    fn flat_rule() {
        assert_eq!(p("flatplus(x)").differentiate(0), p("x^-2*flatplus(x)"));
        assert_eq!(p("flatplus(x)").differentiate(1), Expr::zero());
        assert_eq!(p("flatplus(x)*recip(x^2)"), p("flatplus(x)").differentiate(0));
        // shifted and reflected flats
        assert_eq!(p("flatplus(1 - x)").differentiate(0), p("-recip(x - 1)^2*flatplus(1 - x)"));
    }

    #[test]
    fn chain_rules() {
        assert_eq!(p("exp(x*y)").differentiate(1), p("x*exp(x*y)"));
        assert_eq!(p("sin(2*x)").differentiate(0), p("2*cos(2*x)"));
        assert_eq!(p("recip(x + y)").differentiate(0), p("-recip(x + y)^2"));
        assert_eq!(p("piecewise(x > 0; x^2; 0)").differentiate(0), p("piecewise(x > 0; 2*x; 0)"));
    }

    #[test]
    fn substitution() {
        let rot = [p("3/5*x - 4/5*y"), p("4/5*x + 3/5*y")];
        assert_eq!(p("x^2 + y^2").substitute(&rot).unwrap(), p("x^2 + y^2"));
        let tr = [p("x + 1"), p("y")];
        assert_eq!(p("flatplus(x)").substitute(&tr).unwrap(), p("flatplus(x + 1)"));
        let refl = [p("-x"), p("y")];
        assert_eq!(p("flatplus(x - 1)").substitute(&refl).unwrap(), p("flatplus(-x - 1)"));
        assert!(p("flatplus(x)").substitute(&[p("x^2"), p("y")]).is_err());
    }

    #[test]
    fn restriction() {
        let left = Region::new(vec![(-2.0, 0.0), (-1.0, 1.0)]).unwrap();
        assert_eq!(p("y + flatplus(x)*y").restrict(&left), p("y"));
        assert_eq!(p("piecewise(x > 0; x; 1)").restrict(&left), Expr::one());
    }
}
