use num_traits::{One, Signed};

use super::{Atom, Expr, Monomial, Q};

fn rational(c: &Q) -> String {
    if c.is_integer() {
        c.numer().to_string()
    } else {
        format!("{}/{}", c.numer(), c.denom())
    }
}

fn atom_base(a: &Atom, names: &[String]) -> String {
    let name = |i: usize| names.get(i).cloned().unwrap_or_else(|| format!("x{i}"));
    match a {
        Atom::Coord(i) => name(*i),
        Atom::Pi => "pi".into(),
        Atom::Flat(f) => format!("flatplus({})", render(&f.arg_expr(), names)),
        Atom::Exp(e) => format!("exp({})", render(e, names)),
        Atom::Sin(e) => format!("sin({})", render(e, names)),
        Atom::Cos(e) => format!("cos({})", render(e, names)),
        Atom::Recip(e) => format!("recip({})", render(e, names)),
        Atom::Piecewise(p) => format!(
            "piecewise({} > {}; {}; {})",
            name(p.var),
            rational(&p.threshold),
            render(&p.above, names),
            render(&p.below, names)
        ),
    }
}

fn monomial(m: &Monomial, names: &[String]) -> String {
    m.atoms()
        .map(|(a, k)| {
            let b = atom_base(a, names);
            if k == 1 {
                b
            } else {
                format!("{b}^{k}")
            }
        })
        .collect::<Vec<_>>()
        .join("*")
}

/// Canonical text. Terms are printed from the largest monomial down.
pub(crate) fn render(e: &Expr, names: &[String]) -> String {
    if e.is_zero() {
        return "0".into();
    }
    let mut out = String::new();
    for (idx, (m, c)) in e.terms.iter().rev().enumerate() {
        let neg = c.is_negative();
        let a = c.abs();
        let body = if m.is_one() {
            rational(&a)
        } else if a.is_one() {
            monomial(m, names)
        } else {
            format!("{}*{}", rational(&a), monomial(m, names))
        };
        match (idx, neg) {
            (0, false) => out.push_str(&body),
            (0, true) => {
                out.push('-');
                out.push_str(&body)
            }
            (_, false) => {
                out.push_str(" + ");
                out.push_str(&body)
            }
            (_, true) => {
                out.push_str(" - ");
                out.push_str(&body)
            }
        }
    }
    out
}
