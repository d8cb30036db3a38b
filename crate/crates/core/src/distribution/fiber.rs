use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;

use super::{evaluate_rank, Distribution};
use crate::error::{Error, Result};
use crate::linalg;
use crate::symexpr::{q_to_f64, series_of_monomial, Atom, Expr, FlatArg, JetSpace, Series};
use crate::vectorcalc::VectorField;

pub const DEFAULT_JET_ORDER: usize = 3;

/// Dimensions in the exact sequence `0 -> k_p -> fiber_p -> D_p -> 0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiberReport {
    pub point: Vec<f64>,
    pub dim_dx: usize,
    pub dim_fiber: usize,
    pub dim_kernel: usize,
    pub jet_order_used: usize,
    pub basis_indices: Vec<usize>,
    pub stable: bool,
}

impl FiberReport {
    pub fn triple(&self) -> (usize, usize, usize) {
        (self.dim_fiber, self.dim_dx, self.dim_kernel)
    }
}

/// Fiber dimensions at `p`, certified by agreement of jet orders `N` and `N + 1`.
pub fn fiber_dims(d: &Distribution, p: &[f64], jet_order: usize) -> Result<FiberReport> {
    let dim_dx = evaluate_rank(d, p)?;
    let (f0, basis) = fiber_at(&d.generators, p, jet_order)?;
    let (f1, _) = fiber_at(&d.generators, p, jet_order + 1)?;
    let trip = |f: usize| (f, dim_dx, f.saturating_sub(dim_dx));
    if f0 != f1 || f0 < dim_dx {
        return Err(Error::JetUnstable { order: jet_order, next: jet_order + 1, at_order: trip(f0), at_next: trip(f1) });
    }
    Ok(FiberReport {
        point: p.to_vec(),
        dim_dx,
        dim_fiber: f0,
        dim_kernel: f0 - dim_dx,
        jet_order_used: jet_order,
        basis_indices: basis,
        stable: true,
    })
}

/// Flat atoms vanishing at `p` together with their exponents.
type Signature = Vec<(FlatArg, i64)>;

struct Piece {
    shift: Vec<i64>,
    series: Series,
}

/// Splits one coefficient into formal flat blocks with Laurent shifts at `p`.
fn decompose(sp: &JetSpace, e: &Expr, p: &[f64], log_offset: f64) -> Result<BTreeMap<Signature, Vec<Piece>>> {
    let n = p.len();
    let mut out: BTreeMap<Signature, Vec<Piece>> = BTreeMap::new();
    'terms: for (m, c) in e.terms() {
        let mut sig = Signature::new();
        let mut shift = vec![0i64; n];
        let mut skip: Vec<Atom> = vec![];
        for (a, k) in m.atoms() {
            match a {
                Atom::Flat(f) => {
                    let u = f.u(p[f.var]);
                    if u.abs() < 1e-14 {
                        if k < 0 {
                            return Err(Error::SingularPoint(format!("reciprocal of a flat function at {p:?}")));
                        }
                        sig.push((f.clone(), k));
                        skip.push(a.clone());
                    } else if u < 0.0 {
                        if k > 0 {
                            continue 'terms;
                        }
                        return Err(Error::SingularPoint(format!("reciprocal of a vanishing flat function at {p:?}")));
                    }
                }
                Atom::Coord(i) if k < 0 && p[*i] == 0.0 => {
                    shift[*i] += k;
                    skip.push(a.clone());
                }
                Atom::Recip(q) => {
                    if let Some((j, root)) = linear_root(q) {
                        if (q_to_f64(&root) - p[j]).abs() < 1e-14 {
                            shift[j] -= k;
                            skip.push(a.clone());
                        }
                    }
                }
                _ => {}
            }
        }
        let skip_fn = |a: &Atom| skip.contains(a);
        let series = series_of_monomial(sp, m, c, p, &skip_fn, log_offset)?;
        out.entry(sig).or_default().push(Piece { shift, series });
    }
    Ok(out)
}

/// Log-magnitude of the largest flat factor product among the terms of a field at `p`,
/// when every term is far below the floating point range; `0` otherwise.
fn flat_log_scale(g: &VectorField, p: &[f64]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for e in &g.coeffs {
        'terms: for (m, _) in e.terms() {
            let mut l = 0.0;
            for (a, k) in m.atoms() {
                if let Atom::Flat(f) = a {
                    let u = f.u(p[f.var]);
                    if u <= 0.0 && k > 0 {
                        continue 'terms;
                    }
                    if u > 1e-14 {
                        l -= k as f64 / u;
                    }
                }
            }
            best = best.max(l);
        }
    }
    if best.is_finite() && best < -FLAT_RESCALE {
        best
    } else {
        0.0
    }
}

const FLAT_RESCALE: f64 = 50.0;

/// `(j, root)` for `x_j - root` (monic linear polynomials only).
fn linear_root(q: &Expr) -> Option<(usize, crate::symexpr::Q)> {
    let mut var = None;
    let mut root = crate::symexpr::q(0);
    for (m, c) in q.terms() {
        if m.is_one() {
            root = -c.clone();
            continue;
        }
        let mut it = m.atoms();
        match (it.next(), it.next()) {
            (Some((Atom::Coord(j), 1)), None) if *c == crate::symexpr::q(1) => var = Some(*j),
            _ => return None,
        }
    }
    var.map(|j| (j, root))
}

fn shifted(sp: &JetSpace, s: &Series, by: &[i64]) -> Series {
    let mut out = sp.zero();
    let shift: Vec<u32> = by.iter().map(|&b| b as u32).collect();
    for (i, a) in sp.indices.iter().enumerate() {
        if s.c[i] == 0.0 {
            continue;
        }
        let t: Vec<u32> = a.iter().zip(&shift).map(|(x, y)| x + y).collect();
        if let Some(k) = sp.index(&t) {
            out.c[k] += s.c[i];
        }
    }
    out
}

/// `(dim fiber, basis indices)` at jet order `order`.
pub(crate) fn fiber_at(gens: &[VectorField], p: &[f64], order: usize) -> Result<(usize, Vec<usize>)> {
    let lam = syzygy_values(gens, p, order)?;
    Ok(quotient_basis(&lam, gens.len()))
}

/// Orthonormal basis (columns) of `{g(p) : Σ g_j X_j = 0}` certified to jet order `order`:
/// the kernel of `R^k -> fiber_p`.
pub(crate) fn kernel_basis(gens: &[VectorField], p: &[f64], order: usize) -> Result<DMatrix<f64>> {
    let lam = syzygy_values(gens, p, order)?;
    let k = gens.len();
    if lam.ncols() == 0 {
        return Ok(DMatrix::zeros(k, 0));
    }
    let svd = lam.svd(true, false);
    let u = svd.u.expect("requested");
    let idx: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > LAMBDA_CUTOFF).collect();
    Ok(DMatrix::from_fn(k, idx.len(), |r, c| u[(r, idx[c])]))
}

const LAMBDA_CUTOFF: f64 = 1e-7;

/// [`kernel_basis`] with the order `N` / `N + 1` stability check.
pub(crate) fn stable_kernel(gens: &[VectorField], p: &[f64], order: usize) -> Result<DMatrix<f64>> {
    let a = kernel_basis(gens, p, order)?;
    let b = kernel_basis(gens, p, order + 1)?;
    if a.ncols() != b.ncols() {
        let dx = linalg::rank(&super::evaluate_fields(gens, p)?);
        let trip = |q: usize| (gens.len() - q, dx, (gens.len() - q).saturating_sub(dx));
        return Err(Error::JetUnstable { order, next: order + 1, at_order: trip(a.ncols()), at_next: trip(b.ncols()) });
    }
    Ok(a)
}

fn quotient_basis(lam: &DMatrix<f64>, k: usize) -> (usize, Vec<usize>) {
    // Columns of the kernel basis are orthonormal, so an absolute cutoff separates roundoff.
    let dim_lambda = linalg::rank_abs(lam, LAMBDA_CUTOFF);
    let dim_fiber = k - dim_lambda;
    let mut rows_v: Vec<Vec<f64>> = (0..lam.ncols()).map(|c| lam.column(c).iter().copied().collect()).collect();
    let mut basis = vec![];
    let mut cur = dim_lambda;
    for j in 0..k {
        if basis.len() == dim_fiber {
            break;
        }
        let mut e = vec![0.0; k];
        e[j] = 1.0;
        rows_v.push(e);
        let mat = DMatrix::from_fn(rows_v.len(), k, |r, c| rows_v[r][c]);
        let r = linalg::rank_abs(&mat, LAMBDA_CUTOFF);
        if r > cur {
            cur = r;
            basis.push(j);
        } else {
            rows_v.pop();
        }
    }
    (dim_fiber, basis)
}

/// Constant coefficients of jet-truncated syzygies, one column per kernel vector.
fn syzygy_values(gens: &[VectorField], p: &[f64], order: usize) -> Result<DMatrix<f64>> {
    let n = p.len();
    let k = gens.len();
    let sp = JetSpace::new(n, order);
    let dim = sp.dim();
    // (component, signature) -> per-generator pieces
    // Each generator is divided by e^{scale_j}; syzygies are mapped back at the end.
    let scales: Vec<f64> = gens.iter().map(|g| flat_log_scale(g, p)).collect();
    let mut blocks: BTreeMap<(usize, Signature), Vec<Vec<Piece>>> = BTreeMap::new();
    for (j, g) in gens.iter().enumerate() {
        for i in 0..n {
            for (sig, pieces) in decompose(&sp, &g.coeffs[i], p, scales[j])? {
                let e = blocks.entry((i, sig)).or_insert_with(|| (0..k).map(|_| vec![]).collect());
                e[j].extend(pieces);
            }
        }
    }
    // Normalize each flat signature by its largest pole order, shared across components.
    let mut nmax: BTreeMap<Signature, Vec<i64>> = BTreeMap::new();
    for ((_, sig), per_gen) in &blocks {
        let e = nmax.entry(sig.clone()).or_insert_with(|| vec![0; n]);
        for piece in per_gen.iter().flatten() {
            for v in 0..n {
                e[v] = e[v].max(-piece.shift[v]);
            }
        }
    }
    if let Some(v) = nmax.get(&Signature::new()) {
        if v.iter().any(|&s| s > 0) {
            return Err(Error::SingularPoint(format!("pole at {p:?}")));
        }
    }
    // Generators independent at p have no syzygies.
    let plain = blocks.keys().all(|(_, sig)| sig.is_empty())
        && blocks.values().flatten().flatten().all(|pc| pc.shift.iter().all(|&v| v == 0));
    if plain {
        let origin = sp.index(&vec![0; n]).expect("constant index");
        let mut vals = DMatrix::<f64>::zeros(n, k);
        for ((i, _), per_gen) in &blocks {
            for (j, pieces) in per_gen.iter().enumerate() {
                vals[(*i, j)] += pieces.iter().map(|pc| pc.series.c[origin]).sum::<f64>();
            }
        }
        if linalg::rank(&vals) == k {
            return Ok(DMatrix::zeros(k, 0));
        }
    }
    let nblocks = blocks.len();
    let rows = nblocks * dim;
    let cols = k * dim;
    let mut m = DMatrix::<f64>::zeros(rows.max(1), cols);
    for (b, ((_, sig), per_gen)) in blocks.iter().enumerate() {
        let norm = &nmax[sig];
        for (j, pieces) in per_gen.iter().enumerate() {
            let mut s = sp.zero();
            for piece in pieces {
                let by: Vec<i64> = piece.shift.iter().zip(norm).map(|(a, b)| a + b).collect();
                s = sp.add(&s, &shifted(&sp, &piece.series, &by));
            }
            // g_j = Σ_a c_{j,a} t^a contributes s[γ] c_{j,a} to the row of t^{a+γ}
            for (ai, a) in sp.indices.iter().enumerate() {
                for (gi, g) in sp.indices.iter().enumerate() {
                    if s.c[gi] == 0.0 {
                        continue;
                    }
                    let t: Vec<u32> = a.iter().zip(g).map(|(x, y)| x + y).collect();
                    if let Some(r) = sp.index(&t) {
                        m[(b * dim + r, j * dim + ai)] += s.c[gi];
                    }
                }
            }
        }
    }
    let kern = linalg::null_space(&m);
    // Values g(p) of the syzygies: the constant-coefficient rows.
    let mut lam = DMatrix::<f64>::zeros(k, kern.ncols());
    for j in 0..k {
        for c in 0..kern.ncols() {
            lam[(j, c)] = kern[(j * dim, c)];
        }
    }
    if scales.iter().any(|&l| l != 0.0) {
        unscale(&mut lam, &scales);
    }
    Ok(lam)
}

/// Maps syzygy values of `e^{-scale_j} X_j` back to the `X_j`, renormalizing each column in log space.
fn unscale(lam: &mut DMatrix<f64>, scales: &[f64]) {
    for mut col in lam.column_iter_mut() {
        let logs: Vec<f64> = col.iter().zip(scales).map(|(v, l)| v.abs().ln() - l).collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            continue;
        }
        for (v, lg) in col.iter_mut().zip(&logs) {
            *v = v.signum() * (lg - top).exp();
        }
        let nrm = col.norm();
        col /= nrm;
    }
    // Re-orthonormalize so that absolute rank cutoffs stay meaningful.
    if lam.ncols() > 0 {
        let svd = lam.clone().svd(true, false);
        let u = svd.u.expect("requested");
        let idx: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > LAMBDA_CUTOFF).collect();
        *lam = DMatrix::from_fn(lam.nrows(), idx.len(), |r, c| u[(r, idx[c])]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::Chart;

    fn dist(gens: &[&[&str]], n: usize) -> Distribution {
        Distribution::parse(Chart::standard(n, None), gens, "t").unwrap()
    }

    #[test]
    fn grushin_origin() {
        let g = dist(&[&["1", "0"], &["0", "x"]], 2);
        let r = fiber_dims(&g, &[0.0, 0.0], 2).unwrap();
        assert_eq!(r.triple(), (2, 1, 1));
        assert_eq!(r.basis_indices, vec![0, 1]);
    }

    #[test]
    fn pathological_points() {
        let d = dist(&[&["1", "0"], &["0", "flatplus(x)"]], 2);
        assert_eq!(fiber_dims(&d, &[-1.0, 0.0], 3).unwrap().triple(), (1, 1, 0));
        assert_eq!(fiber_dims(&d, &[1.0, 0.0], 3).unwrap().triple(), (2, 2, 0));
        assert_eq!(fiber_dims(&d, &[0.0, 0.7], 3).unwrap().triple(), (2, 1, 1));
        assert_eq!(fiber_dims(&d, &[-1.0, 0.0], 3).unwrap().basis_indices, vec![0]);
    }

    #[test]
    fn gl2_origin() {
        let gl = dist(&[&["x", "0"], &["0", "x"], &["y", "0"], &["0", "y"]], 2);
        assert_eq!(fiber_dims(&gl, &[0.0, 0.0], 1).unwrap().triple(), (4, 0, 4));
        assert_eq!(fiber_dims(&gl, &[0.0, 0.0], 3).unwrap().triple(), (4, 0, 4));
        // off the origin the module is locally free of rank 2
        assert_eq!(fiber_dims(&gl, &[1.0, 0.5], 3).unwrap().triple(), (2, 2, 0));
    }

    #[test]
    fn heisenberg_regular() {
        let h = dist(&[&["1", "0", "-1/2*y"], &["0", "1", "1/2*x"]], 3);
        assert_eq!(fiber_dims(&h, &[0.0, 0.0, 0.0], 3).unwrap().triple(), (2, 2, 0));
    }
}
