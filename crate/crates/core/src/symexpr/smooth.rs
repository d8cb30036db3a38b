use num_traits::{Signed, Zero};

use super::diff::{flat_positive_on, flat_vanishes_on};
use super::sample::SAMPLE_SEED;
use super::{q_to_f64, Atom, Expr, Monomial, Q};
use crate::symexpr::Region;

/// `None` if `e` is smooth on the open box, otherwise a short reason.
///
/// The check is term by term and therefore conservative: a sum of singular terms whose
/// singularities cancel is reported as singular unless the canonical form already
/// cancelled them.
pub fn check_smooth(e: &Expr, region: &Region) -> Option<String> {
    for (m, _) in e.terms() {
        if let Some(r) = check_term(m, region) {
            return Some(r);
        }
    }
    None
}

/// Largest total pole order over the terms: negative coordinate powers plus reciprocal powers.
pub fn pole_order(e: &Expr) -> usize {
    e.terms()
        .map(|(m, _)| {
            m.atoms()
                .map(|(a, k)| match a {
                    Atom::Coord(_) if k < 0 => (-k) as usize,
                    Atom::Recip(_) if k > 0 => k as usize,
                    _ => 0,
                })
                .sum::<usize>()
        })
        .max()
        .unwrap_or(0)
}

fn inside(region: &Region, var: usize, c: f64) -> bool {
    let (lo, hi) = region.bounds[var];
    lo < c && c < hi
}

/// Positive power of a flat atom on `var` whose zero point is `c`, with its sign.
fn flat_at(m: &Monomial, var: usize, c: &Q) -> Option<(i64, f64)> {
    m.atoms().find_map(|(a, k)| match a {
        Atom::Flat(f) if f.var == var && &f.shift == c && k > 0 => Some((k, f.sign())),
        _ => None,
    })
}

/// `a x_j + b` with `a != 0`, as `(j, root)`.
fn linear_root(p: &Expr) -> Option<(usize, Q)> {
    let mut var = None;
    let mut a = Q::zero();
    let mut b = Q::zero();
    for (m, c) in p.terms() {
        if m.is_one() {
            b = c.clone();
            continue;
        }
        let mut it = m.atoms();
        match (it.next(), it.next()) {
            (Some((Atom::Coord(j), 1)), None) if var.is_none() || var == Some(*j) => {
                var = Some(*j);
                a = c.clone();
            }
            _ => return None,
        }
    }
    let j = var?;
    Some((j, -b / a))
}

fn check_term(m: &Monomial, region: &Region) -> Option<String> {
    let zero = Q::zero();
    for (a, k) in m.atoms() {
        match a {
            Atom::Coord(i) if k < 0 => {
                if *i < region.dim() && region.excludes_zero(*i) {
                    continue;
                }
                if flat_at(m, *i, &zero).is_some() {
                    continue;
                }
                return Some(format!("pole of order {} in coordinate {} at 0", -k, i));
            }
            Atom::Coord(_) | Atom::Pi => {}
            Atom::Flat(f) => {
                if k < 0 && !flat_positive_on(f, region) {
                    return Some("reciprocal of a flat function that vanishes in the region".into());
                }
                if k > 0 && flat_vanishes_on(f, region) {
                    return None;
                }
            }
            Atom::Sin(arg) | Atom::Cos(arg) => {
                if let Some(r) = check_smooth(arg, region) {
                    return Some(r);
                }
            }
            Atom::Exp(arg) => {
                if let Some(r) = check_exp(m, arg, region) {
                    return Some(r);
                }
            }
            Atom::Recip(p) => {
                if let Some(r) = check_smooth(p, region) {
                    return Some(r);
                }
                if let Some((j, c)) = linear_root(p) {
                    if j >= region.dim() || !inside(region, j, q_to_f64(&c)) {
                        continue;
                    }
                    if flat_at(m, j, &c).is_some() {
                        continue;
                    }
                    return Some(format!("reciprocal of a linear factor vanishing at coordinate {} = {}", j, c));
                }
                if !sign_constant(p, region) {
                    return Some("reciprocal of a factor that changes sign or vanishes".into());
                }
            }
            Atom::Piecewise(pw) => {
                if inside(region, pw.var, q_to_f64(&pw.threshold)) {
                    return Some(format!("piecewise switch inside the region at coordinate {}", pw.var));
                }
                let active = if region.bounds[pw.var].0 >= q_to_f64(&pw.threshold) { &pw.above } else { &pw.below };
                if let Some(r) = check_smooth(active, region) {
                    return Some(r);
                }
            }
        }
    }
    None
}

/// `exp(arg)`: terms `c / x_i` are admissible when the axis avoids 0 or a flat factor
/// `flat(s x_i)^k` dominates them, i.e. `k - c s > 0`.
fn check_exp(m: &Monomial, arg: &Expr, region: &Region) -> Option<String> {
    let zero = Q::zero();
    let mut rest = Vec::new();
    for (t, c) in arg.terms() {
        let mut it = t.atoms();
        let pole = match (it.next(), it.next()) {
            (Some((Atom::Coord(i), -1)), None) => Some(*i),
            _ => None,
        };
        match pole {
            Some(i) if !(i < region.dim() && region.excludes_zero(i)) => {
                let Some((kf, s)) = flat_at(m, i, &zero) else {
                    return Some(format!("essential singularity in coordinate {} at 0", i));
                };
                let margin = Q::from_integer(kf.into()) - c * Q::from_integer(if s > 0.0 { 1 } else { -1 }.into());
                if !margin.is_positive() {
                    return Some(format!("exponential factor dominates the flat factor in coordinate {}", i));
                }
            }
            _ => rest.push(Expr::monomial(t.clone(), c.clone())),
        }
    }
    check_smooth(&Expr::sum(rest), region)
}

fn sign_constant(p: &Expr, region: &Region) -> bool {
    let f = p.compile();
    let mut pts = region.sample_points(64, SAMPLE_SEED);
    pts.extend(region.grid_points(5));
    let vals: Vec<f64> = pts.iter().map(|x| f.eval_or_nan(x)).filter(|v| v.is_finite()).collect();
    if vals.is_empty() {
        return false;
    }
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let pos = vals.iter().all(|&v| v > 1e-12 * scale);
    let neg = vals.iter().all(|&v| v < -1e-12 * scale);
    pos || neg
}
