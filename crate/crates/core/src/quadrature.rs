//! Tensor Gauss-Legendre quadrature on boxes and the fixed test bump.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::exec::Exec;
use crate::symexpr::{qf, Compiled, Expr, Q};
use crate::vectorcalc::DiffOperator;

pub const NODES: usize = 64;

/// Nodes per axis for box integrals in dimension `n`: 64 up to the plane, then fewer so the
/// tensor grid stays near `64²·8` points. Every count is exact for the bump-weighted
/// polynomial trials used by the checks.
pub fn nodes_for(n: usize) -> usize {
    match n {
        0..=2 => NODES,
        3 => 32,
        _ => 16,
    }
}

/// Nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Tensor-product rule on a box.
#[derive(Clone, Debug)]
pub struct TensorRule {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl TensorRule {
    pub fn new(bounds: &[(f64, f64)], n: usize) -> Self {
        Self::with_breaks(bounds, &vec![vec![]; bounds.len()], n)
    }

    /// Composite rule with `n` nodes on every panel between consecutive breaks of each axis.
    /// Breaks outside the open axis interval are ignored.
    pub fn with_breaks(bounds: &[(f64, f64)], breaks: &[Vec<f64>], n: usize) -> Self {
        let (x, w) = gauss_legendre(n);
        let mut points = vec![vec![]];
        let mut weights = vec![1.0];
        for (&(a, b), br) in bounds.iter().zip(breaks) {
            let mut cuts = vec![a];
            let mut inner: Vec<f64> = br.iter().copied().filter(|&t| t > a && t < b).collect();
            inner.sort_by(f64::total_cmp);
            inner.dedup();
            cuts.extend(inner);
            cuts.push(b);
            let axis: Vec<(f64, f64)> = cuts
                .windows(2)
                .flat_map(|s| {
                    let (c, h) = (0.5 * (s[0] + s[1]), 0.5 * (s[1] - s[0]));
                    x.iter().zip(&w).map(move |(xi, wi)| (c + h * xi, wi * h))
                })
                .collect();
            let mut np = Vec::with_capacity(points.len() * axis.len());
            let mut nw = Vec::with_capacity(points.len() * axis.len());
            for (p, pw) in points.iter().zip(&weights) {
                for (xi, wi) in &axis {
                    let mut q = p.clone();
                    q.push(*xi);
                    np.push(q);
                    nw.push(pw * wi);
                }
            }
            points = np;
            weights = nw;
        }
        TensorRule { points, weights }
    }

    /// Rule whose panels split at every flat or piecewise switch of the given expressions.
    pub fn adapted<'a>(bounds: &[(f64, f64)], exprs: impl IntoIterator<Item = &'a Expr>, n: usize) -> Self {
        let mut breaks = vec![vec![]; bounds.len()];
        for e in exprs {
            for (var, c) in e.breakpoints() {
                if var < breaks.len() {
                    breaks[var].push(crate::symexpr::q_to_f64(&c));
                }
            }
        }
        Self::with_breaks(bounds, &breaks, n)
    }

    /// `Σ w_i f(p_i)` with a deterministic reduction order.
    pub fn integrate<F>(&self, exec: Exec, f: F) -> f64
    where
        F: Fn(&[f64]) -> f64 + Sync + Send,
    {
        exec.sum_range(self.points.len(), 4096, |i| self.weights[i] * f(&self.points[i]))
    }
}

/// `Π (1 - t_i^2)^4` with `t_i` the affine map of the box axis onto `[-1, 1]`.
///
/// Box bounds are converted to rationals through their decimal representation.
pub fn bump(bounds: &[(f64, f64)]) -> Expr {
    let mut acc = Expr::one();
    for (i, &(a, b)) in bounds.iter().enumerate() {
        let (a, b) = (to_q(a), to_q(b));
        let mid = (&a + &b) / Q::from_integer(2.into());
        let half = (&b - &a) / Q::from_integer(2.into());
        let t = (&Expr::coord(i) - &Expr::constant(mid)).scale(&half.recip());
        let s = &Expr::one() - &(&t * &t);
        acc = &acc * &s.pow(4).expect("positive power");
    }
    acc
}

/// `∫ f m dx` over the rule, with `m = 1` when no weight is given. Fails on any
/// singular or non-finite sample.
pub fn integrate_weighted<F>(rule: &TensorRule, exec: Exec, weight: Option<&Compiled>, f: F) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64> + Sync + Send,
{
    let v = rule.integrate(exec, |p| {
        let m = weight.map_or(Ok(1.0), |m| m.eval(p));
        match (f(p), m) {
            (Ok(a), Ok(m)) => a * m,
            _ => f64::NAN,
        }
    });
    if v.is_finite() {
        Ok(v)
    } else {
        Err(crate::error::Error::SingularPoint("integrand is not finite on the quadrature grid".into()))
    }
}

/// `k`-th derivative of `(1 - s^2)^4` at `s`.
fn bump_factor(s: f64, k: u32) -> f64 {
    let mut c = [1.0, 0.0, -4.0, 0.0, 6.0, 0.0, -4.0, 0.0, 1.0];
    let mut deg = 8usize;
    for _ in 0..k {
        if deg == 0 {
            return 0.0;
        }
        for j in 0..deg {
            c[j] = c[j + 1] * (j + 1) as f64;
        }
        c[deg] = 0.0;
        deg -= 1;
    }
    c[..=deg].iter().rev().fold(0.0, |acc, a| acc * s + a)
}

/// `u · bump(box)` whose partial derivatives are evaluated by the Leibniz rule, so the
/// bump is never multiplied out symbolically.
#[derive(Clone, Debug)]
pub struct BumpTrial {
    bounds: Vec<(f64, f64)>,
    order: u32,
    derivs: BTreeMap<Vec<u32>, Compiled>,
}

fn multi_indices(n: usize, order: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p: Vec<u32>| {
                let used: u32 = p.iter().sum();
                (0..=order - used).map(move |k| [p.clone(), vec![k]].concat())
            })
            .collect();
    }
    out
}

impl BumpTrial {
    pub fn new(u: &Expr, bounds: &[(f64, f64)], order: u32) -> Self {
        let derivs = multi_indices(bounds.len(), order)
            .into_iter()
            .map(|a| {
                let counts: Vec<usize> = a.iter().map(|&k| k as usize).collect();
                let d = u.derivative(&counts).compile();
                (a, d)
            })
            .collect();
        BumpTrial { bounds: bounds.to_vec(), order, derivs }
    }

    fn bump_deriv(&self, beta: &[u32], p: &[f64]) -> f64 {
        self.bounds
            .iter()
            .zip(beta)
            .zip(p)
            .map(|((&(a, b), &k), &x)| {
                let half = 0.5 * (b - a);
                bump_factor((x - 0.5 * (a + b)) / half, k) / half.powi(k as i32)
            })
            .product()
    }

    /// `∂^α (u · bump)` at `p`, for `|α|` up to the construction order.
    pub fn deriv(&self, alpha: &[u32], p: &[f64]) -> Result<f64> {
        debug_assert!(alpha.iter().sum::<u32>() <= self.order);
        let mut acc = 0.0;
        for (gamma, du) in &self.derivs {
            if gamma.iter().zip(alpha).any(|(g, a)| g > a) {
                continue;
            }
            let beta: Vec<u32> = alpha.iter().zip(gamma).map(|(a, g)| a - g).collect();
            let b = self.bump_deriv(&beta, p);
            if b == 0.0 {
                continue;
            }
            let c: f64 = alpha.iter().zip(gamma).map(|(&a, &g)| binom(a, g)).product();
            acc += c * du.eval(p)? * b;
        }
        Ok(acc)
    }

    pub fn value(&self, p: &[f64]) -> Result<f64> {
        self.deriv(&vec![0; self.bounds.len()], p)
    }

    pub fn gradient(&self, p: &[f64]) -> Result<Vec<f64>> {
        (0..self.bounds.len())
            .map(|i| {
                let mut a = vec![0; self.bounds.len()];
                a[i] = 1;
                self.deriv(&a, p)
            })
            .collect()
    }

    /// `(P w)(p)` for `w = u · bump`.
    pub fn apply(&self, op: &CompiledOperator, p: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (alpha, c) in &op.terms {
            let cv = c.eval(p)?;
            if cv != 0.0 {
                acc += cv * self.deriv(alpha, p)?;
            }
        }
        Ok(acc)
    }
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Coefficients of a differential operator lowered for pointwise evaluation.
#[derive(Clone, Debug)]
pub struct CompiledOperator {
    pub order: u32,
    terms: Vec<(Vec<u32>, Compiled)>,
}

impl CompiledOperator {
    pub fn new(op: &DiffOperator) -> Self {
        CompiledOperator { order: op.order() as u32, terms: op.terms.iter().map(|(a, c)| (a.clone(), c.compile())).collect() }
    }
}

fn to_q(v: f64) -> Q {
    let s = format!("{v}");
    match s.split_once('.') {
        Some((int, frac)) => {
            let den = 10i64.pow(frac.len() as u32);
            let neg = int.starts_with('-');
            let whole: i64 = int.parse().unwrap_or(0);
            let f: i64 = frac.parse().unwrap_or(0);
            let num = whole.abs() * den + f;
            qf(if neg { -num } else { num }, den)
        }
        None => qf(s.parse().unwrap_or(0), 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_polynomials() {
        let r = TensorRule::new(&[(0.0, 2.0)], 8);
        let v = r.integrate(Exec::Sequential, |p| p[0].powi(7));
        assert!((v - 32.0).abs() < 1e-12);
        let r2 = TensorRule::new(&[(-1.0, 1.0), (0.0, 1.0)], NODES);
        let v = r2.integrate(Exec::default(), |p| p[0] * p[0] * p[1]);
        assert!((v - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn bump_vanishes_on_boundary() {
        let b = bump(&[(-1.5, 0.5)]);
        assert_eq!(b.evaluate(&[-1.5]).unwrap(), 0.0);
        assert_eq!(b.evaluate(&[0.5]).unwrap(), 0.0);
        assert_eq!(b.evaluate(&[-0.5]).unwrap(), 1.0);
        assert_eq!(to_q(-1.25), qf(-5, 4));
    }

    #[test]
    fn trial_derivatives_match_symbolic_product() {
        use crate::symexpr::Chart;
        let bounds = [(-1.0, 1.0), (-0.5, 1.5)];
        let u = Expr::parse("1 + x*y - exp(y)*x^2", &Chart::standard(2, None)).unwrap();
        let w = &u * &bump(&bounds);
        let t = BumpTrial::new(&u, &bounds, 2);
        for p in [[0.3, 0.2], [-0.7, 1.1], [0.0, -0.4]] {
            for alpha in multi_indices(2, 2) {
                let counts: Vec<usize> = alpha.iter().map(|&k| k as usize).collect();
                let exact = w.derivative(&counts).evaluate(&p).unwrap();
                let got = t.deriv(&alpha, &p).unwrap();
                assert!((exact - got).abs() < 1e-12 * (1.0 + exact.abs()), "{alpha:?}: {exact} vs {got}");
            }
        }
    }
}
