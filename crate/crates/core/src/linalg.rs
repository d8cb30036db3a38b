//! Exact and floating-point linear algebra used by the module computations.

use nalgebra::{DMatrix, DVector};
use num_traits::{One, Zero};

use crate::symexpr::{equal_on, Expr, Region, Q};

/// Relative singular-value cutoff for numeric ranks.
pub const RANK_CUTOFF: f64 = 1e-9;

pub type ExprMatrix = Vec<Vec<Expr>>;

/// Reduced row echelon form over the rationals. Returns the pivot columns.
pub fn rref_q(m: &mut [Vec<Q>]) -> Vec<usize> {
    let rows = m.len();
    let cols = m.first().map_or(0, |r| r.len());
    let mut pivots = vec![];
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let Some(p) = (r..rows).find(|&i| !m[i][c].is_zero()) else { continue };
        m.swap(r, p);
        let inv = m[r][c].recip();
        for v in m[r].iter_mut() {
            *v *= &inv;
        }
        for i in 0..rows {
            if i != r && !m[i][c].is_zero() {
                let f = m[i][c].clone();
                for j in 0..cols {
                    let t = &f * &m[r][j];
                    m[i][j] -= t;
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    pivots
}

/// Solves `a x = b` over the rationals with free unknowns set to zero.
pub fn solve_q(a: &[Vec<Q>], b: &[Q]) -> Option<Vec<Q>> {
    let n = a.first().map_or(0, |r| r.len());
    let mut m: Vec<Vec<Q>> = a.iter().zip(b).map(|(r, v)| r.iter().cloned().chain([v.clone()]).collect()).collect();
    let piv = rref_q(&mut m);
    if piv.last() == Some(&n) {
        return None;
    }
    let mut x = vec![Q::zero(); n];
    for (i, &c) in piv.iter().enumerate() {
        x[c] = m[i][n].clone();
    }
    Some(x)
}

/// Zero test: canonical, then sampled on `region`.
pub fn is_zero_on(e: &Expr, region: &Region) -> bool {
    e.is_zero() || equal_on(e, &Expr::zero(), region).holds()
}

/// Result of Gauss-Jordan elimination over the field of expressions.
#[derive(Clone, Debug)]
pub struct ExprSolution {
    /// Solution with free unknowns set to zero.
    pub particular: Vec<Expr>,
    pub pivots: Vec<usize>,
    pub free: Vec<usize>,
    /// One homogeneous solution per free unknown.
    pub nullspace: Vec<Vec<Expr>>,
}

fn pivot_cost(e: &Expr) -> (bool, usize, usize) {
    (e.as_constant().is_none(), e.num_terms(), format!("{e}").len())
}

/// Solves `a x = b` over the function field. `None` when inconsistent.
pub fn solve_expr(a: &ExprMatrix, b: &[Expr], region: &Region) -> Option<ExprSolution> {
    let rows = a.len();
    let n = a.first().map_or(0, |r| r.len());
    let mut m: ExprMatrix = a.iter().zip(b).map(|(r, v)| r.iter().cloned().chain([v.clone()]).collect()).collect();
    for row in m.iter_mut() {
        for v in row.iter_mut() {
            if !v.is_zero() && is_zero_on(v, region) {
                *v = Expr::zero();
            }
        }
    }
    let mut pivots = vec![];
    let mut r = 0;
    for c in 0..n {
        if r == rows {
            break;
        }
        let Some(p) = (r..rows).filter(|&i| !m[i][c].is_zero()).min_by_key(|&i| pivot_cost(&m[i][c])) else {
            continue;
        };
        m.swap(r, p);
        let inv = m[r][c].recip().ok()?;
        for v in m[r].iter_mut() {
            *v = &*v * &inv;
        }
        m[r][c] = Expr::one();
        for i in 0..rows {
            if i == r || m[i][c].is_zero() {
                continue;
            }
            let f = m[i][c].clone();
            for j in 0..=n {
                let t = &m[i][j] - &(&f * &m[r][j]);
                m[i][j] = if !t.is_zero() && is_zero_on(&t, region) { Expr::zero() } else { t };
            }
            m[i][c] = Expr::zero();
        }
        pivots.push(c);
        r += 1;
    }
    if m[r..].iter().any(|row| !row[n].is_zero()) {
        return None;
    }
    let free: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
    let mut particular = vec![Expr::zero(); n];
    for (i, &c) in pivots.iter().enumerate() {
        particular[c] = m[i][n].clone();
    }
    let nullspace = free
        .iter()
        .map(|&f| {
            let mut v = vec![Expr::zero(); n];
            v[f] = Expr::one();
            for (i, &c) in pivots.iter().enumerate() {
                v[c] = -m[i][f].clone();
            }
            v
        })
        .collect();
    Some(ExprSolution { particular, pivots, free, nullspace })
}

pub fn mat_mul(a: &ExprMatrix, b: &ExprMatrix) -> ExprMatrix {
    let inner = b.len();
    let cols = b.first().map_or(0, |r| r.len());
    a.iter()
        .map(|row| (0..cols).map(|j| Expr::sum((0..inner).map(|k| &row[k] * &b[k][j]))).collect())
        .collect()
}

pub fn transpose(a: &ExprMatrix) -> ExprMatrix {
    let cols = a.first().map_or(0, |r| r.len());
    (0..cols).map(|j| a.iter().map(|r| r[j].clone()).collect()).collect()
}

pub fn identity(n: usize) -> ExprMatrix {
    (0..n).map(|i| (0..n).map(|j| if i == j { Expr::one() } else { Expr::zero() }).collect()).collect()
}

pub fn is_identity(a: &ExprMatrix) -> bool {
    a.iter().enumerate().all(|(i, r)| r.iter().enumerate().all(|(j, v)| if i == j { v.is_one() } else { v.is_zero() }))
}

pub fn is_diagonal_identity_q(a: &[Vec<Q>]) -> bool {
    a.iter().enumerate().all(|(i, r)| r.iter().enumerate().all(|(j, v)| *v == if i == j { Q::one() } else { Q::zero() }))
}

/// Determinant by cofactor expansion (small matrices only).
pub fn det(a: &ExprMatrix) -> Expr {
    let n = a.len();
    match n {
        0 => Expr::one(),
        1 => a[0][0].clone(),
        _ => {
            let mut parts = vec![];
            for j in 0..n {
                if a[0][j].is_zero() {
                    continue;
                }
                let minor: ExprMatrix =
                    a[1..].iter().map(|r| r.iter().enumerate().filter(|(c, _)| *c != j).map(|(_, v)| v.clone()).collect()).collect();
                let t = &a[0][j] * &det(&minor);
                parts.push(if j % 2 == 0 { t } else { -t });
            }
            Expr::sum(parts)
        }
    }
}

/// Inverse over the function field, `None` when singular.
pub fn inverse(a: &ExprMatrix, region: &Region) -> Option<ExprMatrix> {
    let n = a.len();
    if is_identity(a) {
        return Some(a.clone());
    }
    let mut cols = vec![vec![]; n];
    for (k, col) in cols.iter_mut().enumerate() {
        let e: Vec<Expr> = (0..n).map(|i| if i == k { Expr::one() } else { Expr::zero() }).collect();
        let s = solve_expr(a, &e, region)?;
        if !s.free.is_empty() {
            return None;
        }
        *col = s.particular;
    }
    Some(transpose(&cols))
}

pub fn eval_matrix(a: &ExprMatrix, p: &[f64]) -> crate::Result<DMatrix<f64>> {
    let rows = a.len();
    let cols = a.first().map_or(0, |r| r.len());
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = a[i][j].evaluate(p)?;
        }
    }
    Ok(m)
}

fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return vec![];
    }
    m.clone().svd(false, false).singular_values.iter().copied().collect()
}

/// Numeric rank with cutoff `RANK_CUTOFF * σ_max`.
pub fn rank(m: &DMatrix<f64>) -> usize {
    let s = singular_values(m);
    let smax = s.iter().fold(0.0f64, |a, &b| a.max(b));
    if smax <= f64::MIN_POSITIVE {
        return 0;
    }
    s.iter().filter(|&&v| v > RANK_CUTOFF * smax).count()
}

/// Number of singular values above an absolute threshold.
pub fn rank_abs(m: &DMatrix<f64>, tol: f64) -> usize {
    singular_values(m).iter().filter(|&&v| v > tol).count()
}

/// Orthonormal basis of the null space, as columns.
pub fn null_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    let c = m.ncols();
    let r = m.nrows().max(c);
    let mut sq = DMatrix::zeros(r, c);
    sq.view_mut((0, 0), (m.nrows(), c)).copy_from(m);
    let svd = sq.svd(false, true);
    let vt = svd.v_t.expect("requested");
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    let cut = if smax <= f64::MIN_POSITIVE { f64::INFINITY } else { RANK_CUTOFF * smax };
    let idx: Vec<usize> = (0..c).filter(|&i| !(svd.singular_values[i] > cut)).collect();
    let mut out = DMatrix::zeros(c, idx.len());
    for (k, &i) in idx.iter().enumerate() {
        for j in 0..c {
            out[(j, k)] = vt[(i, j)];
        }
    }
    out
}

/// Moore-Penrose pseudoinverse with the shared cutoff.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    if smax <= f64::MIN_POSITIVE {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    svd.pseudo_inverse(RANK_CUTOFF * smax).expect("eps is positive")
}

/// Minimum-norm least-squares solution and residual norm.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let x = pinv(a) * b;
    let r = (a * &x - b).norm();
    (x, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::{q, Chart};

    #[test]
    fn rational_solve() {
        let a = vec![vec![q(1), q(2)], vec![q(2), q(4)]];
        assert_eq!(solve_q(&a, &[q(3), q(6)]), Some(vec![q(3), q(0)]));
        assert_eq!(solve_q(&a, &[q(3), q(7)]), None);
    }

    #[test]
    fn expr_solve_grushin() {
        let c = Chart::new(&["x", "y"], None).unwrap();
        let e = |s: &str| Expr::parse(s, &c).unwrap();
        // columns are the generators d_x and x d_y; the target is d_y
        let a = vec![vec![e("1"), e("0")], vec![e("0"), e("x")]];
        let s = solve_expr(&a, &[e("0"), e("1")], &Region::unbounded(2)).unwrap();
        assert_eq!(s.particular[1], e("x^-1"));
        assert!(s.free.is_empty());
    }

    #[test]
    fn expr_nullspace() {
        let c = Chart::new(&["x", "y"], None).unwrap();
        let e = |s: &str| Expr::parse(s, &c).unwrap();
        let a = vec![vec![e("x"), e("y")]];
        let s = solve_expr(&a, &[e("0")], &Region::unbounded(2)).unwrap();
        assert_eq!(s.nullspace.len(), 1);
        let v = &s.nullspace[0];
        assert!((&(&e("x") * &v[0]) + &(&e("y") * &v[1])).is_zero());
    }

    #[test]
    fn inverse_and_det() {
        let c = Chart::new(&["x", "y"], None).unwrap();
        let e = |s: &str| Expr::parse(s, &c).unwrap();
        let a = vec![vec![e("1"), e("x")], vec![e("0"), e("2")]];
        assert_eq!(det(&a), e("2"));
        let inv = inverse(&a, &Region::unbounded(2)).unwrap();
        assert!(is_identity(&mat_mul(&a, &inv)));
    }

    #[test]
    fn numeric_helpers() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(rank(&m), 1);
        assert_eq!(null_space(&m).ncols(), 2);
        assert_eq!(rank(&DMatrix::zeros(2, 2)), 0);
        let p = pinv(&DMatrix::from_row_slice(1, 1, &[2.0]));
        assert!((p[(0, 0)] - 0.5).abs() < 1e-15);
    }
}
