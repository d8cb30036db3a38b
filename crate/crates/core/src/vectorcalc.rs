//! First-order calculus: vector fields, densities, one-forms and linear differential
//! operators with expression coefficients.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::symexpr::{Chart, Expr, Region};

/// Highest operator order the composition routines will build.
pub const MAX_ORDER: usize = 4;

/// `X = Σ coeffs[i] ∂_i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VectorField {
    pub coeffs: Vec<Expr>,
}

impl VectorField {
    pub fn new(coeffs: Vec<Expr>) -> Self {
        VectorField { coeffs }
    }

    pub fn zero(n: usize) -> Self {
        VectorField { coeffs: vec![Expr::zero(); n] }
    }

    /// `∂_i` on an `n`-dimensional chart.
    pub fn partial(n: usize, i: usize) -> Self {
        let mut v = Self::zero(n);
        v.coeffs[i] = Expr::one();
        v
    }

    pub fn parse(coeffs: &[&str], chart: &Chart) -> Result<Self> {
        if coeffs.len() != chart.dim() {
            return Err(Error::DimensionMismatch(format!("{} coefficients on a {}-dimensional chart", coeffs.len(), chart.dim())));
        }
        Ok(VectorField { coeffs: coeffs.iter().map(|s| Expr::parse(s, chart)).collect::<Result<_>>()? })
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(Expr::is_zero)
    }

    pub fn apply(&self, u: &Expr) -> Expr {
        Expr::sum(self.coeffs.iter().enumerate().filter(|(_, c)| !c.is_zero()).map(|(i, c)| c * &u.differentiate(i)))
    }

    pub fn scale(&self, f: &Expr) -> Self {
        VectorField { coeffs: self.coeffs.iter().map(|c| c * f).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        VectorField { coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        VectorField { coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect() }
    }

    pub fn evaluate(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.coeffs.iter().map(|c| c.evaluate(p)).collect()
    }

    pub fn render(&self, chart: &Chart) -> Vec<String> {
        self.coeffs.iter().map(|c| c.render(chart)).collect()
    }

    /// `[X, Y]^i = Σ_j X^j ∂_j Y^i − Y^j ∂_j X^i`.
    pub fn bracket(&self, other: &Self) -> Result<Self> {
        lie_bracket(self, other)
    }

    pub fn as_operator(&self) -> DiffOperator {
        let n = self.dim();
        let mut op = DiffOperator::zero(n);
        for (i, c) in self.coeffs.iter().enumerate() {
            let mut a = vec![0u32; n];
            a[i] = 1;
            op.add_term(a, c.clone());
        }
        op
    }
}

pub fn lie_bracket(x: &VectorField, y: &VectorField) -> Result<VectorField> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch("bracket of fields on different charts".into()));
    }
    Ok(VectorField { coeffs: (0..x.dim()).map(|i| &x.apply(&y.coeffs[i]) - &y.apply(&x.coeffs[i])).collect() })
}

/// `μ = m dx_1 ... dx_n` with `m > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Density {
    pub weight: Expr,
}

impl Density {
    pub fn lebesgue() -> Self {
        Density { weight: Expr::one() }
    }

    /// Checks positivity at 32 sample points of the region.
    pub fn new(weight: Expr, region: &Region) -> Result<Self> {
        let f = weight.compile();
        for p in region.sample_points(32, 0xde75) {
            let v = f.eval(&p)?;
            if !(v > 0.0) {
                return Err(Error::InvalidInput(format!("density weight is not positive at {p:?}")));
            }
        }
        Ok(Density { weight })
    }

    pub fn is_lebesgue(&self) -> bool {
        self.weight.is_one()
    }
}

pub fn divergence(x: &VectorField, mu: &Density) -> Result<Expr> {
    let flat = Expr::sum(x.coeffs.iter().enumerate().map(|(i, c)| c.differentiate(i)));
    if mu.is_lebesgue() {
        return Ok(flat);
    }
    let dm = x.apply(&mu.weight);
    Ok(&flat + &(&dm * &mu.weight.recip()?))
}

/// `X* = −X − div_μ X`.
pub fn formal_adjoint(x: &VectorField, mu: &Density) -> Result<DiffOperator> {
    let mut op = x.as_operator().neg();
    op.add_term(vec![0; x.dim()], -divergence(x, mu)?);
    Ok(op)
}

/// `α = Σ coeffs[i] dx_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct OneForm {
    pub coeffs: Vec<Expr>,
}

impl OneForm {
    pub fn new(coeffs: Vec<Expr>) -> Self {
        OneForm { coeffs }
    }

    pub fn differential(u: &Expr, n: usize) -> Self {
        OneForm { coeffs: (0..n).map(|i| u.differentiate(i)).collect() }
    }

    pub fn pair(&self, x: &VectorField) -> Expr {
        Expr::sum(self.coeffs.iter().zip(&x.coeffs).map(|(a, b)| a * b))
    }
}

/// `P = Σ c_α ∂^α` with zero coefficients pruned.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DiffOperator {
    pub n: usize,
    #[serde(skip)]
    pub terms: BTreeMap<Vec<u32>, Expr>,
}

fn binom(n: u32, k: u32) -> i64 {
    (0..k).fold(1i64, |acc, i| acc * (n - i) as i64 / (i + 1) as i64)
}

/// All `γ <= α` componentwise.
fn sub_indices(alpha: &[u32]) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for &a in alpha {
        out = out.into_iter().flat_map(|p: Vec<u32>| (0..=a).map(move |g| [p.clone(), vec![g]].concat())).collect();
    }
    out
}

impl DiffOperator {
    pub fn zero(n: usize) -> Self {
        DiffOperator { n, terms: BTreeMap::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self::multiplication(n, Expr::one())
    }

    pub fn multiplication(n: usize, f: Expr) -> Self {
        let mut op = Self::zero(n);
        op.add_term(vec![0; n], f);
        op
    }

    /// `∂^α`.
    pub fn partial(alpha: &[u32]) -> Self {
        let mut op = Self::zero(alpha.len());
        op.add_term(alpha.to_vec(), Expr::one());
        op
    }

    pub fn add_term(&mut self, alpha: Vec<u32>, c: Expr) {
        if c.is_zero() {
            return;
        }
        let cur = self.terms.remove(&alpha).unwrap_or_default();
        let s = &cur + &c;
        if !s.is_zero() {
            self.terms.insert(alpha, s);
        }
    }

    pub fn coefficient(&self, alpha: &[u32]) -> Expr {
        self.terms.get(alpha).cloned().unwrap_or_default()
    }

    pub fn order(&self) -> usize {
        self.terms.keys().map(|a| a.iter().sum::<u32>() as usize).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn apply(&self, u: &Expr) -> Expr {
        Expr::sum(self.terms.iter().map(|(a, c)| {
            let a: Vec<usize> = a.iter().map(|&k| k as usize).collect();
            c * &u.derivative(&a)
        }))
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (a, c) in &other.terms {
            out.add_term(a.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        self.scale(&Expr::int(-1))
    }

    /// Left multiplication by a function.
    pub fn scale(&self, f: &Expr) -> Self {
        let mut out = Self::zero(self.n);
        for (a, c) in &self.terms {
            out.add_term(a.clone(), c * f);
        }
        out
    }

    /// `self ∘ other` by the Leibniz rule.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch("composition across charts".into()));
        }
        let ord = self.order() + other.order();
        if ord > MAX_ORDER {
            return Err(Error::OrderOverflow(ord));
        }
        let mut out = Self::zero(self.n);
        for (alpha, c) in &self.terms {
            for gamma in sub_indices(alpha) {
                let rest: Vec<usize> = alpha.iter().zip(&gamma).map(|(a, g)| (a - g) as usize).collect();
                let mult: i64 = alpha.iter().zip(&gamma).map(|(&a, &g)| binom(a, g)).product();
                for (beta, d) in &other.terms {
                    let coef = (c * &d.derivative(&gamma.iter().map(|&g| g as usize).collect::<Vec<_>>())).scale(&crate::symexpr::q(mult));
                    let key: Vec<u32> = rest.iter().zip(beta).map(|(&r, &b)| r as u32 + b).collect();
                    out.add_term(key, coef);
                }
            }
        }
        Ok(out)
    }

    pub fn commutator(&self, other: &Self) -> Result<Self> {
        Ok(self.compose(other)?.sub(&other.compose(self)?))
    }

    /// Formal adjoint against `μ`: `P* v = Σ_α (−1)^|α| m⁻¹ ∂^α(m c_α v)`.
    pub fn adjoint(&self, mu: &Density) -> Result<Self> {
        let minv = mu.weight.recip()?;
        let mut out = Self::zero(self.n);
        for (alpha, c) in &self.terms {
            let sign: i64 = if alpha.iter().sum::<u32>() % 2 == 0 { 1 } else { -1 };
            let g = &mu.weight * c;
            for gamma in sub_indices(alpha) {
                let rest: Vec<usize> = alpha.iter().zip(&gamma).map(|(a, g)| (a - g) as usize).collect();
                let mult: i64 = alpha.iter().zip(&gamma).map(|(&a, &g)| binom(a, g)).product();
                let coef = (&g.derivative(&rest) * &minv).scale(&crate::symexpr::q(sign * mult));
                out.add_term(gamma, coef);
            }
        }
        Ok(out)
    }

    /// Restricts every coefficient to the region (see [`Expr::restrict`]).
    pub fn restrict(&self, region: &Region) -> Self {
        let mut out = Self::zero(self.n);
        for (a, c) in &self.terms {
            out.add_term(a.clone(), c.restrict(region));
        }
        out
    }

    /// Coefficients keyed by names such as `dxdy`; `1` for order zero.
    pub fn keyed(&self, chart: &Chart) -> BTreeMap<String, String> {
        self.terms.iter().map(|(a, c)| (operator_key(a, chart), c.render(chart))).collect()
    }

    pub fn render(&self, chart: &Chart) -> String {
        let mut s = String::new();
        for (a, c) in self.terms.iter().rev() {
            if !s.is_empty() {
                s.push_str(" + ");
            }
            let _ = write!(s, "({})*{}", c.render(chart), operator_key(a, chart));
        }
        if s.is_empty() {
            s.push('0');
        }
        s
    }
}

pub fn operator_key(alpha: &[u32], chart: &Chart) -> String {
    let mut s = String::new();
    for (i, &k) in alpha.iter().enumerate() {
        for _ in 0..k {
            s.push('d');
            s.push_str(&chart.names[i]);
        }
    }
    if s.is_empty() {
        s.push('1');
    }
    s
}

/// Inverse of [`operator_key`].
pub fn parse_operator_key(key: &str, chart: &Chart) -> Result<Vec<u32>> {
    let mut alpha = vec![0u32; chart.dim()];
    if key == "1" {
        return Ok(alpha);
    }
    let mut rest = key;
    while !rest.is_empty() {
        let Some(r) = rest.strip_prefix('d') else {
            return Err(Error::Parse { pos: key.len() - rest.len(), msg: format!("bad operator key {key}") });
        };
        let (i, len) = chart
            .names
            .iter()
            .enumerate()
            .filter(|(_, n)| r.starts_with(n.as_str()))
            .max_by_key(|(_, n)| n.len())
            .map(|(i, n)| (i, n.len()))
            .ok_or_else(|| Error::Parse { pos: key.len() - r.len(), msg: format!("unknown coordinate in {key}") })?;
        alpha[i] += 1;
        rest = &r[len..];
    }
    Ok(alpha)
}
