use super::{q_to_f64, Atom, Expr};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Node {
    Coord(usize),
    Pi,
    Sin(Compiled),
    Cos(Compiled),
    Recip(Compiled),
    Piecewise { var: usize, thr: f64, above: Compiled, below: Compiled },
}

#[derive(Clone, Debug)]
struct Term {
    coef: f64,
    /// (var, sign, shift, power)
    flats: Vec<(usize, f64, f64, i32)>,
    exp_arg: Option<Compiled>,
    factors: Vec<(Node, i32)>,
}

/// Expression lowered to a tree of `f64` closures-free nodes for fast repeated evaluation.
///
/// Flat factors are evaluated first: a vanishing flat short-circuits the term before any
/// pole is touched. Flat and `exp` factors are combined in log space, so products such as
/// `flatplus(x) * exp(a/x)` with `a < 1` stay finite near `x = 0`.
#[derive(Clone, Debug)]
pub struct Compiled {
    terms: Vec<Term>,
}

#[derive(Debug)]
struct Singular;

impl Compiled {
    pub fn new(e: &Expr) -> Self {
        let terms = e
            .terms()
            .map(|(m, c)| {
                let mut t = Term { coef: q_to_f64(c), flats: vec![], exp_arg: None, factors: vec![] };
                for (a, k) in m.atoms() {
                    let k = k as i32;
                    match a {
                        Atom::Flat(f) => t.flats.push((f.var, f.sign(), q_to_f64(&f.shift), k)),
                        Atom::Exp(arg) => t.exp_arg = Some(Compiled::new(arg)),
                        Atom::Coord(i) => t.factors.push((Node::Coord(*i), k)),
                        Atom::Pi => t.factors.push((Node::Pi, k)),
                        Atom::Sin(e) => t.factors.push((Node::Sin(Compiled::new(e)), k)),
                        Atom::Cos(e) => t.factors.push((Node::Cos(Compiled::new(e)), k)),
                        Atom::Recip(e) => t.factors.push((Node::Recip(Compiled::new(e)), k)),
                        Atom::Piecewise(p) => t.factors.push((
                            Node::Piecewise {
                                var: p.var,
                                thr: q_to_f64(&p.threshold),
                                above: Compiled::new(&p.above),
                                below: Compiled::new(&p.below),
                            },
                            k,
                        )),
                    }
                }
                t
            })
            .collect();
        Compiled { terms }
    }

    fn ev(&self, x: &[f64]) -> std::result::Result<f64, Singular> {
        let mut sum = 0.0;
        'terms: for t in &self.terms {
            let mut log = 0.0;
            for &(var, s, c, k) in &t.flats {
                let u = s * (x[var] - c);
                if u <= 0.0 {
                    if k > 0 {
                        continue 'terms;
                    }
                    return Err(Singular);
                }
                log -= k as f64 / u;
            }
            if let Some(a) = &t.exp_arg {
                log += a.ev(x)?;
            }
            let mut v = t.coef;
            for (node, k) in &t.factors {
                let b = match node {
                    Node::Coord(i) => x[*i],
                    Node::Pi => std::f64::consts::PI,
                    Node::Sin(e) => e.ev(x)?.sin(),
                    Node::Cos(e) => e.ev(x)?.cos(),
                    Node::Recip(e) => {
                        let d = e.ev(x)?;
                        if d == 0.0 {
                            return Err(Singular);
                        }
                        1.0 / d
                    }
                    Node::Piecewise { var, thr, above, below } => {
                        if x[*var] > *thr {
                            above.ev(x)?
                        } else {
                            below.ev(x)?
                        }
                    }
                };
                if b == 0.0 && *k < 0 {
                    return Err(Singular);
                }
                v *= b.powi(*k);
            }
            let val = if log == 0.0 { v } else { v * log.exp() };
            if !val.is_finite() {
                return Err(Singular);
            }
            sum += val;
        }
        Ok(sum)
    }

    /// Value at `x`, or `SingularPoint` on a pole.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.ev(x).map_err(|_| Error::SingularPoint(format!("at {x:?}")))
    }

    /// Value at `x`, `NaN` on a pole.
    pub fn eval_or_nan(&self, x: &[f64]) -> f64 {
        self.ev(x).unwrap_or(f64::NAN)
    }
}
