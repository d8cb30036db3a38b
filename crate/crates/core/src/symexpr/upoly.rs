//! Dense univariate polynomials over the rationals, used to split reciprocal atoms.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};

use super::Q;

/// Coefficients in increasing degree, no trailing zeros.
pub(crate) type Poly = Vec<Q>;

fn trim(mut p: Poly) -> Poly {
    while p.last().is_some_and(|c| c.is_zero()) {
        p.pop();
    }
    p
}

fn monic(p: Poly) -> Poly {
    let p = trim(p);
    match p.last().cloned() {
        Some(l) => p.into_iter().map(|c| c / &l).collect(),
        None => p,
    }
}

fn deriv(p: &Poly) -> Poly {
    trim(p.iter().enumerate().skip(1).map(|(i, c)| c * Q::from_integer(BigInt::from(i))).collect())
}

/// Quotient and remainder.
fn divmod(a: &Poly, b: &Poly) -> (Poly, Poly) {
    let mut r = trim(a.clone());
    let b = trim(b.clone());
    let db = b.len() - 1;
    let lb = b[db].clone();
    if r.len() < b.len() {
        return (vec![], r);
    }
    let mut q = vec![Q::zero(); r.len() - db];
    while r.len() > db && !r.is_empty() {
        let k = r.len() - 1 - db;
        let c = r.last().unwrap() / &lb;
        for (i, bi) in b.iter().enumerate() {
            r[k + i] -= &c * bi;
        }
        q[k] = c;
        r = trim(r);
    }
    (trim(q), r)
}

fn gcd(a: &Poly, b: &Poly) -> Poly {
    let (mut a, mut b) = (trim(a.clone()), trim(b.clone()));
    while !b.is_empty() {
        let (_, r) = divmod(&a, &b);
        a = b;
        b = r;
    }
    monic(a)
}

/// Square-free factorization `p = lc * prod a_i^i` (Yun), returning `(a_i, i)` for
/// nonconstant monic `a_i`.
fn square_free(p: &Poly) -> Vec<(Poly, i64)> {
    let f = monic(p.clone());
    let fp = deriv(&f);
    let mut a = gcd(&f, &fp);
    let mut b = divmod(&f, &a).0;
    let mut c = divmod(&fp, &a).0;
    let mut d: Poly = trim(
        (0..c.len().max(deriv(&b).len()))
            .map(|i| c.get(i).cloned().unwrap_or_default() - deriv(&b).get(i).cloned().unwrap_or_default())
            .collect(),
    );
    let mut out = vec![];
    let mut i = 1;
    loop {
        a = gcd(&b, &d);
        if a.len() > 1 {
            out.push((a.clone(), i));
        }
        b = divmod(&b, &a).0;
        if b.len() <= 1 {
            break;
        }
        c = divmod(&d, &a).0;
        let db = deriv(&b);
        d = trim((0..c.len().max(db.len())).map(|k| c.get(k).cloned().unwrap_or_default() - db.get(k).cloned().unwrap_or_default()).collect());
        i += 1;
    }
    out
}

fn divisors(n: &BigInt) -> Option<Vec<BigInt>> {
    let n = n.abs().to_u64()?;
    if n == 0 || n > 1_000_000 {
        return None;
    }
    Some((1..=n).filter(|d| n % d == 0).map(BigInt::from).collect())
}

fn eval(p: &Poly, x: &Q) -> Q {
    p.iter().rev().fold(Q::zero(), |acc, c| acc * x + c)
}

/// Splits off rational roots of a monic square-free polynomial.
fn rational_linear(p: &Poly) -> Vec<Poly> {
    let mut rest = p.clone();
    let mut out = vec![];
    if rest.len() <= 2 {
        return vec![rest];
    }
    // Clear denominators.
    let den = rest.iter().fold(BigInt::one(), |acc, c| acc.lcm(c.denom()));
    let ints: Vec<BigInt> = rest.iter().map(|c| (c * Q::from_integer(den.clone())).to_integer()).collect();
    let low = ints.iter().position(|c| !c.is_zero()).unwrap_or(0);
    if low > 0 {
        out.push(vec![Q::zero(), Q::one()]);
        rest = divmod(&rest, &vec![Q::zero(), Q::one()]).0;
    }
    let (Some(ps), Some(qs)) = (divisors(&ints[low]), divisors(ints.last().unwrap())) else {
        out.push(rest);
        return out;
    };
    'outer: for pn in &ps {
        for qd in &qs {
            for s in [1, -1] {
                if rest.len() <= 2 {
                    break 'outer;
                }
                let r = Q::new(pn * BigInt::from(s), qd.clone());
                if eval(&rest, &r).is_zero() {
                    let lin = vec![-r.clone(), Q::one()];
                    rest = divmod(&rest, &lin).0;
                    out.push(lin);
                }
            }
        }
    }
    out.push(rest);
    out
}

/// Monic factors with multiplicities: square-free parts with rational roots split off.
pub(crate) fn factor(p: &Poly) -> Vec<(Poly, i64)> {
    let mut out = vec![];
    for (a, k) in square_free(p) {
        for f in rational_linear(&a) {
            if f.len() > 1 {
                out.push((f, k));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: &[i64]) -> Poly {
        v.iter().map(|&c| Q::from_integer(c.into())).collect()
    }

    #[test]
    fn factors() {
        // (x+1)^2
        assert_eq!(factor(&p(&[1, 2, 1])), vec![(p(&[1, 1]), 2)]);
        // x^2 - 1
        let f = factor(&p(&[-1, 0, 1]));
        assert_eq!(f.len(), 2);
        // x^2 + 1 stays
        assert_eq!(factor(&p(&[1, 0, 1])), vec![(p(&[1, 0, 1]), 1)]);
        // x (x-2)^3
        let f = factor(&p(&[0, -8, 12, -6, 1]));
        assert!(f.contains(&(p(&[0, 1]), 1)));
        assert!(f.contains(&(p(&[-2, 1]), 3)));
    }
}
