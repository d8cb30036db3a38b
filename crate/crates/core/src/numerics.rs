//! Grid discretization of horizontal Laplacians in factored form, weighted symmetry checks,
//! low spectra and a heat-flow smoothing probe.
//!
//! Nodes are stored with the last axis varying fastest. Each factored field is evaluated at
//! every corner of every cell from the one-sided edge differences at that corner, with the
//! coefficients frozen at the cell center. The operator is `A = W⁻¹ Σ_a D_aᵀ W_q D_a` with node
//! weights `W` and quadrature weights `W_q` (cell weight split evenly over the corners).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::CscMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::laplacian::HorizontalLaplacian;
use crate::symexpr::{Compiled, Expr, Region};
use crate::vectorcalc::{Density, VectorField};

const DENSE_LIMIT: usize = 600;
const RESIDUAL_TOL: f64 = 1e-8;
const START_SEED: u64 = 0x6c616e63;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    Dirichlet,
}

/// Uniform tensor grid. Periodic axes carry `N` nodes at `lo + j h` with `h = L/N`; Dirichlet
/// axes carry `N` interior nodes at `lo + (j+1) h` with `h = L/(N+1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub bounds: Vec<(f64, f64)>,
    pub n: Vec<usize>,
    pub boundary: Vec<Boundary>,
    pub h: Vec<f64>,
}

impl Grid {
    pub fn new(bounds: Vec<(f64, f64)>, n: Vec<usize>, boundary: Vec<Boundary>) -> Result<Self> {
        if bounds.len() != n.len() || n.len() != boundary.len() || n.is_empty() {
            return Err(Error::DimensionMismatch("grid axes disagree in number".into()));
        }
        Region::new(bounds.clone())?;
        if bounds.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(Error::InvalidInput("grid boxes must be bounded".into()));
        }
        if let Some(k) = n.iter().position(|&k| k < 4) {
            return Err(Error::InvalidInput(format!("axis {k} has fewer than 4 points")));
        }
        let h = bounds
            .iter()
            .zip(&n)
            .zip(&boundary)
            .map(|((&(lo, hi), &k), b)| match b {
                Boundary::Periodic => (hi - lo) / k as f64,
                Boundary::Dirichlet => (hi - lo) / (k + 1) as f64,
            })
            .collect();
        Ok(Grid { bounds, n, boundary, h })
    }

    pub fn uniform(bounds: Vec<(f64, f64)>, n: usize, boundary: Boundary) -> Result<Self> {
        let d = bounds.len();
        Self::new(bounds, vec![n; d], vec![boundary; d])
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.iter().product()
    }

    fn offset(&self, axis: usize) -> f64 {
        match self.boundary[axis] {
            Boundary::Periodic => 0.0,
            Boundary::Dirichlet => 1.0,
        }
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = flat % self.n[a];
            flat /= self.n[a];
        }
        idx
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.n).fold(0, |acc, (&i, &k)| acc * k + i)
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(a, &j)| self.bounds[a].0 + (j as f64 + self.offset(a)) * self.h[a])
            .collect()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    fn cell_shape(&self) -> Vec<usize> {
        self.n
            .iter()
            .zip(&self.boundary)
            .map(|(&k, b)| if *b == Boundary::Periodic { k } else { k + 1 })
            .collect()
    }

    pub fn cell_count(&self) -> usize {
        self.cell_shape().iter().product()
    }

    fn cell_index(&self, mut flat: usize) -> Vec<usize> {
        let shape = self.cell_shape();
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = flat % shape[a];
            flat /= shape[a];
        }
        idx
    }

    pub fn cell_center(&self, flat: usize) -> Vec<f64> {
        self.cell_index(flat)
            .iter()
            .enumerate()
            .map(|(a, &c)| self.bounds[a].0 + (c as f64 + 0.5) * self.h[a])
            .collect()
    }

    /// Corner nodes of a cell, in binary order of the corner offsets; `None` for boundary nodes.
    fn corners(&self, cell: usize) -> Vec<Option<usize>> {
        let c = self.cell_index(cell);
        let d = self.dim();
        (0..1usize << d)
            .map(|s| {
                let mut idx = Vec::with_capacity(d);
                for a in 0..d {
                    let bit = (s >> (d - 1 - a)) & 1;
                    let j = match self.boundary[a] {
                        Boundary::Periodic => (c[a] + bit) % self.n[a],
                        Boundary::Dirichlet => {
                            let j = c[a] as isize - 1 + bit as isize;
                            if j < 0 || j >= self.n[a] as isize {
                                return None;
                            }
                            j as usize
                        }
                    };
                    idx.push(j);
                }
                Some(self.flat(&idx))
            })
            .collect()
    }

    pub fn sample(&self, f: &Expr) -> Result<Vec<f64>> {
        let c = f.compile();
        (0..self.len()).map(|i| c.eval(&self.node(i))).collect()
    }
}

/// Rows of `Σ_k c_k ∂_k` over a cell, one per corner: the one-sided differences along the
/// cell edges leaving that corner, indexed like `Grid::corners`.
fn stencils(grid: &Grid, coeffs: &[f64]) -> Vec<Vec<f64>> {
    let d = grid.dim();
    (0..1usize << d)
        .map(|s| {
            let mut r = vec![0.0; 1 << d];
            for k in 0..d {
                let bit = 1 << (d - 1 - k);
                let (hi, lo) = if s & bit != 0 { (s, s ^ bit) } else { (s ^ bit, s) };
                r[hi] += coeffs[k] / grid.h[k];
                r[lo] -= coeffs[k] / grid.h[k];
            }
            r
        })
        .collect()
}

/// Symmetric sparse discretization in the weighted space.
#[derive(Clone, Debug, Serialize)]
pub struct GridOperator {
    pub grid: Grid,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    /// Entries of `A = W⁻¹K`.
    pub values: Vec<f64>,
    /// Entries of the stiffness matrix `K = Σ_a D_aᵀ W_q D_a`.
    pub stiffness: Vec<f64>,
    pub weights: Vec<f64>,
    /// Per cell; each of its corner rows carries `1/2^dim` of it.
    pub cell_weights: Vec<f64>,
    /// Cell-center coefficients of each factored field, `[a][cell * dim + k]`.
    #[serde(skip)]
    pub field_coeffs: Vec<Vec<f64>>,
    pub provenance: String,
}

enum Factors {
    Fields(Vec<Vec<Compiled>>),
    Cometric(Vec<Vec<Compiled>>),
}

fn eval_finite(c: &Compiled, p: &[f64], what: &str) -> Result<f64> {
    match c.eval(p) {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(Error::CoefficientSingularOnGrid(format!("{what} is {v} at {p:?}"))),
        Err(e) => Err(Error::CoefficientSingularOnGrid(format!("{what} at {p:?}: {e}"))),
    }
}

impl Factors {
    fn at(&self, p: &[f64], dim: usize) -> Result<Vec<Vec<f64>>> {
        match self {
            Factors::Fields(fs) => fs
                .iter()
                .map(|f| f.iter().map(|c| eval_finite(c, p, "field coefficient")).collect())
                .collect(),
            Factors::Cometric(m) => {
                let mut g = DMatrix::zeros(dim, dim);
                for i in 0..dim {
                    for j in 0..dim {
                        g[(i, j)] = eval_finite(&m[i][j], p, "cometric entry")?;
                    }
                }
                let g = (&g + g.transpose()) * 0.5;
                let eig = SymmetricEigen::new(g);
                Ok((0..dim)
                    .map(|k| {
                        let s = eig.eigenvalues[k].max(0.0).sqrt();
                        eig.eigenvectors.column(k).iter().map(|v| v * s).collect()
                    })
                    .collect())
            }
        }
    }

    fn count(&self, dim: usize) -> usize {
        match self {
            Factors::Fields(fs) => fs.len(),
            Factors::Cometric(_) => dim,
        }
    }
}

fn check_periodic(grid: &Grid, factors: &Factors, mu: &Compiled) -> Result<()> {
    let region = Region::new(grid.bounds.clone())?;
    let pts = region.sample_points(16, START_SEED);
    for (a, b) in grid.boundary.iter().enumerate() {
        if *b != Boundary::Periodic {
            continue;
        }
        let len = grid.bounds[a].1 - grid.bounds[a].0;
        for p in &pts {
            let mut q = p.clone();
            q[a] += len;
            let f0 = factors.at(p, grid.dim())?;
            let f1 = factors.at(&q, grid.dim())?;
            let m0 = eval_finite(mu, p, "density")?;
            let m1 = eval_finite(mu, &q, "density")?;
            let mut worst = (m0 - m1).abs() / m0.abs().max(1.0);
            for (r0, r1) in f0.iter().flatten().zip(f1.iter().flatten()) {
                worst = worst.max((r0 - r1).abs() / r0.abs().max(1.0));
            }
            if worst > 1e-9 {
                return Err(Error::InvalidInput(format!("coefficients are not periodic along axis {a} (defect {worst:.2e})")));
            }
        }
    }
    Ok(())
}

/// Discretizes a horizontal Laplacian through its factored fields. In divergence form the
/// cometric is factored numerically at each cell center.
pub fn discretize(lap: &HorizontalLaplacian, grid: &Grid, exec: Exec) -> Result<GridOperator> {
    let dim = lap.presentation.dim();
    if grid.dim() != dim {
        return Err(Error::DimensionMismatch(format!("grid has {} axes, chart has {dim}", grid.dim())));
    }
    if lap.fields.is_empty() {
        let m = lap.cometric.matrix.iter().map(|r| r.iter().map(Expr::compile).collect()).collect();
        assemble(grid, Factors::Cometric(m), &lap.density, "pointwise factor of the cometric", exec)
    } else {
        discretize_fields(&lap.fields, &lap.density, grid, exec)
    }
}

/// `A = W⁻¹ Σ_a D_aᵀ W_c D_a` for explicit fields; no fields gives the zero operator.
pub fn discretize_fields(fields: &[VectorField], mu: &Density, grid: &Grid, exec: Exec) -> Result<GridOperator> {
    if fields.iter().any(|f| f.dim() != grid.dim()) {
        return Err(Error::DimensionMismatch("field dimension differs from the grid".into()));
    }
    let fs = fields.iter().map(|f| f.coeffs.iter().map(Expr::compile).collect()).collect();
    assemble(grid, Factors::Fields(fs), mu, &format!("{} factored fields", fields.len()), exec)
}

fn assemble(grid: &Grid, factors: Factors, mu: &Density, provenance: &str, exec: Exec) -> Result<GridOperator> {
    let dim = grid.dim();
    let muc = mu.weight.compile();
    check_periodic(grid, &factors, &muc)?;
    let vol = grid.cell_volume();
    let weight_at = |p: &[f64]| -> Result<f64> {
        let m = eval_finite(&muc, p, "density")?;
        if m <= 0.0 {
            return Err(Error::CoefficientSingularOnGrid(format!("density is not positive at {p:?}")));
        }
        Ok(m * vol)
    };
    let weights = exec.try_map_range(grid.len(), |i| weight_at(&grid.node(i)))?;
    let nf = factors.count(dim);
    // per cell: weight, corners, corner rows per field, the field coefficients
    type Local = (f64, Vec<Option<usize>>, Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>);
    let locals: Vec<Local> = exec.try_map_range(grid.cell_count(), |c| -> Result<Local> {
        let p = grid.cell_center(c);
        let wc = weight_at(&p)?;
        let coeffs = factors.at(&p, dim)?;
        let rows = coeffs.iter().map(|k| stencils(grid, k)).collect();
        Ok((wc, grid.corners(c), rows, coeffs))
    })?;
    let mut trip: Vec<(usize, usize, f64)> = vec![];
    let mut field_coeffs = vec![Vec::with_capacity(grid.cell_count() * dim); nf];
    let mut cell_weights = Vec::with_capacity(locals.len());
    let share = 1.0 / (1usize << dim) as f64;
    for (wc, corners, rows, coeffs) in &locals {
        cell_weights.push(*wc);
        let wq = wc * share;
        for (a, field_rows) in rows.iter().enumerate() {
            field_coeffs[a].extend_from_slice(&coeffs[a]);
            for r in field_rows {
                for (p, ip) in corners.iter().enumerate() {
                    let Some(i) = ip else { continue };
                    for (q, iq) in corners.iter().enumerate() {
                        let Some(j) = iq else { continue };
                        if r[p] != 0.0 && r[q] != 0.0 {
                            trip.push((*i, *j, wq * (r[p] * r[q])));
                        }
                    }
                }
            }
        }
    }
    trip.sort_by_key(|&(i, j, _)| (i, j));
    let n = grid.len();
    let mut row_ptr = vec![0usize; n + 1];
    let mut cols = vec![];
    let mut stiffness = vec![];
    let mut last: Option<(usize, usize)> = None;
    for (i, j, v) in trip {
        if last == Some((i, j)) {
            *stiffness.last_mut().unwrap() += v;
        } else {
            cols.push(j);
            stiffness.push(v);
            row_ptr[i + 1] += 1;
            last = Some((i, j));
        }
    }
    for i in 0..n {
        row_ptr[i + 1] += row_ptr[i];
    }
    let values = (0..n)
        .flat_map(|i| (row_ptr[i]..row_ptr[i + 1]).map(move |e| (i, e)))
        .map(|(i, e)| stiffness[e] / weights[i])
        .collect();
    Ok(GridOperator {
        grid: grid.clone(),
        row_ptr,
        cols,
        values,
        stiffness,
        weights,
        cell_weights,
        field_coeffs,
        provenance: provenance.to_string(),
    })
}

impl GridOperator {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn field_count(&self) -> usize {
        self.field_coeffs.len()
    }

    fn mul(&self, vals: &[f64], u: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| (self.row_ptr[i]..self.row_ptr[i + 1]).map(|e| vals[e] * u[self.cols[e]]).sum())
            .collect()
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.mul(&self.values, u)
    }

    pub fn apply_stiffness(&self, u: &[f64]) -> Vec<f64> {
        self.mul(&self.stiffness, u)
    }

    /// `D_a u` at every cell corner, cell-major.
    pub fn apply_field(&self, a: usize, u: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let d = g.dim();
        (0..g.cell_count())
            .flat_map(|c| {
                let corners = g.corners(c);
                stencils(g, &self.field_coeffs[a][c * d..(c + 1) * d])
                    .into_iter()
                    .map(move |r| corners.iter().zip(&r).filter_map(|(i, w)| i.map(|i| w * u[i])).sum::<f64>())
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Quadrature weight of each row of `apply_field`.
    pub fn row_weights(&self) -> Vec<f64> {
        let share = 1.0 / (1usize << self.grid.dim()) as f64;
        self.cell_weights.iter().flat_map(|w| std::iter::repeat_n(w * share, 1 << self.grid.dim())).collect()
    }

    pub fn weighted_dot(&self, u: &[f64], v: &[f64]) -> f64 {
        self.weights.iter().zip(u).zip(v).map(|((w, a), b)| w * a * b).sum()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.len(), self.len());
        for i in 0..self.len() {
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.cols[e])] = self.values[e];
            }
        }
        m
    }

    /// Coordinate triplets, 1-based, one `i j value` line per stored entry of `A`.
    pub fn triplets(&self) -> String {
        let mut s = String::new();
        for i in 0..self.len() {
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                s.push_str(&format!("{} {} {:.17e}\n", i + 1, self.cols[e] + 1, self.values[e]));
            }
        }
        s
    }

    fn stiffness_csc(&self, shift: f64) -> Result<CscMatrix<f64>> {
        // K is symmetric, so its CSR arrays are also its CSC arrays
        let mut vals = self.stiffness.clone();
        for i in 0..self.len() {
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.cols[e] == i {
                    vals[e] += shift * self.weights[i];
                }
            }
        }
        CscMatrix::try_from_csc_data(self.len(), self.len(), self.row_ptr.clone(), self.cols.clone(), vals)
            .map_err(|e| Error::InvalidInput(format!("sparse layout: {e}")))
    }
}

/// `max |A_ij w_i − A_ji w_j|` over stored entries.
pub fn weighted_symmetry_check(a: &GridOperator) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.len() {
        for e in a.row_ptr[i]..a.row_ptr[i + 1] {
            let j = a.cols[e];
            worst = worst.max((a.values[e] * a.weights[i] - a.entry(j, i) * a.weights[j]).abs());
        }
    }
    worst
}

#[derive(Clone, Debug, Serialize)]
pub struct DirichletIdentity {
    pub quadratic_form: f64,
    pub field_energy: f64,
    pub relative_error: f64,
}

/// `uᵀ W A u` against `Σ_a ‖√W_q D_a u‖²`.
pub fn discrete_dirichlet_identity(a: &GridOperator, u: &[f64]) -> DirichletIdentity {
    let au = a.apply(u);
    let lhs = a.weighted_dot(u, &au);
    let wq = a.row_weights();
    let rhs: f64 = (0..a.field_count())
        .map(|k| a.apply_field(k, u).iter().zip(&wq).map(|(d, w)| w * d * d).sum::<f64>())
        .sum();
    let scale = lhs.abs().max(rhs.abs());
    let relative_error = if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale };
    DirichletIdentity { quadratic_form: lhs, field_energy: rhs, relative_error }
}

#[derive(Clone, Debug, Serialize)]
pub struct Spectrum {
    pub values: Vec<f64>,
    /// `‖Kv − λWv‖ / ‖Wv‖` per eigenpair.
    pub residuals: Vec<f64>,
    pub method: String,
    pub iterations: usize,
    #[serde(skip)]
    pub vectors: Vec<Vec<f64>>,
}

fn residual(a: &GridOperator, lambda: f64, v: &[f64]) -> f64 {
    let kv = a.apply_stiffness(v);
    let wv: Vec<f64> = v.iter().zip(&a.weights).map(|(x, w)| x * w).collect();
    let num: f64 = kv.iter().zip(&wv).map(|(k, w)| (k - lambda * w).powi(2)).sum::<f64>().sqrt();
    let den: f64 = wv.iter().map(|w| w * w).sum::<f64>().sqrt();
    num / den
}

/// Smallest `count` eigenvalues of `K v = λ W v`. Dense diagonalization for small grids,
/// shift-invert subspace iteration with a sparse Cholesky factor otherwise.
pub fn low_spectrum(a: &GridOperator, count: usize) -> Result<Spectrum> {
    let n = a.len();
    if count == 0 || count > n / 4 {
        return Err(Error::InvalidInput(format!("count {count} must be between 1 and dim/4 = {}", n / 4)));
    }
    if n <= DENSE_LIMIT {
        return dense_spectrum(a, count);
    }
    subspace_spectrum(a, count)
}

fn dense_spectrum(a: &GridOperator, count: usize) -> Result<Spectrum> {
    let n = a.len();
    let s: Vec<f64> = a.weights.iter().map(|w| 1.0 / w.sqrt()).collect();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for e in a.row_ptr[i]..a.row_ptr[i + 1] {
            m[(i, a.cols[e])] = a.stiffness[e] * s[i] * s[a.cols[e]];
        }
    }
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut values = vec![];
    let mut vectors = vec![];
    let mut residuals = vec![];
    for &k in order.iter().take(count) {
        let lam = eig.eigenvalues[k];
        let v: Vec<f64> = eig.eigenvectors.column(k).iter().zip(&s).map(|(y, si)| y * si).collect();
        residuals.push(residual(a, lam, &v));
        values.push(lam);
        vectors.push(v);
    }
    if let Some(r) = residuals.iter().find(|&&r| r >= RESIDUAL_TOL) {
        return Err(Error::NoConvergence(format!("dense eigenpair residual {r:.2e}")));
    }
    Ok(Spectrum { values, residuals, method: "dense".into(), iterations: 1, vectors })
}

fn subspace_spectrum(a: &GridOperator, count: usize) -> Result<Spectrum> {
    let n = a.len();
    let p = (2 * count + 8).min(n);
    let diag_scale = (0..n).map(|i| a.entry(i, i)).fold(0.0f64, f64::max);
    let delta = 1e-6 * diag_scale.max(1e-300);
    let chol = CscCholesky::factor(&a.stiffness_csc(delta)?)
        .map_err(|e| Error::NoConvergence(format!("shifted factorization failed: {e:?}")))?;
    let w = DVector::from_vec(a.weights.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    let mut x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    let cap = 500;
    for it in 1..=cap {
        let mut wx = x.clone();
        for mut col in wx.column_iter_mut() {
            col.component_mul_assign(&w);
        }
        let y = chol.solve(&wx);
        // Rayleigh-Ritz in the pencil (K, W)
        let ky = DMatrix::from_columns(
            &y.column_iter().map(|c| DVector::from_vec(a.apply_stiffness(c.as_slice()))).collect::<Vec<_>>(),
        );
        let mut wy = y.clone();
        for mut col in wy.column_iter_mut() {
            col.component_mul_assign(&w);
        }
        let kp = y.transpose() * &ky;
        let wp = y.transpose() * &wy;
        let kp = (&kp + kp.transpose()) * 0.5;
        let wp = (&wp + wp.transpose()) * 0.5;
        let l = wp
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NoConvergence("subspace lost independence".into()))?;
        let linv = l.l().try_inverse().ok_or_else(|| Error::NoConvergence("singular Gram factor".into()))?;
        let reduced = &linv * kp * linv.transpose();
        let reduced = (&reduced + reduced.transpose()) * 0.5;
        let eig = SymmetricEigen::new(reduced);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let z = linv.transpose() * &eig.eigenvectors;
        let ritz = &y * z;
        x = DMatrix::from_columns(&order.iter().map(|&k| ritz.column(k).into_owned()).collect::<Vec<_>>());
        let values: Vec<f64> = order.iter().take(count).map(|&k| eig.eigenvalues[k]).collect();
        let residuals: Vec<f64> = (0..count).map(|k| residual(a, values[k], x.column(k).as_slice())).collect();
        if residuals.iter().all(|&r| r < RESIDUAL_TOL) {
            let vectors = (0..count).map(|k| x.column(k).iter().copied().collect()).collect();
            return Ok(Spectrum { values, residuals, method: "shift-invert subspace iteration".into(), iterations: it, vectors });
        }
    }
    Err(Error::NoConvergence(format!("{count} eigenpairs after {cap} subspace iterations")))
}

/// `e^{−tA} u` for each `t` by a Lanczos approximation in the `W` inner product.
pub fn krylov_exp(a: &GridOperator, u: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let beta0 = a.weighted_dot(u, u).sqrt();
    if beta0 == 0.0 {
        return Ok(vec![vec![0.0; n]; times.len()]);
    }
    let tmax = times.iter().copied().fold(0.0f64, f64::max);
    let cap = n.min(600);
    let mut basis: Vec<Vec<f64>> = vec![u.iter().map(|x| x / beta0).collect()];
    let mut alpha: Vec<f64> = vec![];
    let mut beta: Vec<f64> = vec![];
    let scale = a.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    loop {
        let j = basis.len() - 1;
        let mut w = a.apply(&basis[j]);
        for _ in 0..2 {
            for v in &basis {
                let c = a.weighted_dot(&w, v);
                w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= c * vi);
            }
        }
        let aj = a.weighted_dot(&a.apply(&basis[j]), &basis[j]);
        alpha.push(aj);
        let bj = a.weighted_dot(&w, &w).sqrt();
        let m = alpha.len();
        let breakdown = bj <= 1e-13 * scale;
        let mut done = breakdown || m >= cap;
        if !done && m % 5 == 0 {
            // a posteriori estimate: β_m |e_mᵀ e^{−t T} e_1|
            let c = tri_exp(&alpha, &beta, tmax);
            done = bj * c[m - 1].abs() < 1e-15;
        }
        if done {
            if !breakdown && m >= cap {
                let c = tri_exp(&alpha, &beta, tmax);
                if bj * c[m - 1].abs() > 1e-10 {
                    return Err(Error::NoConvergence(format!("Krylov exponential after {m} steps")));
                }
            }
            return Ok(times
                .iter()
                .map(|&t| {
                    let c = tri_exp(&alpha, &beta, t);
                    let mut out = vec![0.0; n];
                    for (v, ck) in basis.iter().zip(&c) {
                        out.iter_mut().zip(v).for_each(|(o, vi)| *o += beta0 * ck * vi);
                    }
                    out
                })
                .collect());
        }
        beta.push(bj);
        basis.push(w.iter().map(|x| x / bj).collect());
    }
}

/// First column of `e^{−tT}` for the symmetric tridiagonal `T`.
fn tri_exp(alpha: &[f64], beta: &[f64], t: f64) -> Vec<f64> {
    let m = alpha.len();
    let mut tm = DMatrix::zeros(m, m);
    for i in 0..m {
        tm[(i, i)] = alpha[i];
        if i + 1 < m {
            tm[(i, i + 1)] = beta[i];
            tm[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(tm);
    (0..m)
        .map(|i| (0..m).map(|k| eig.eigenvectors[(i, k)] * (-t * eig.eigenvalues[k]).exp() * eig.eigenvectors[(0, k)]).sum())
        .collect()
}

fn fft_nd(grid: &Grid, u: &[f64]) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let mut planner = FftPlanner::new();
    let d = grid.dim();
    for a in 0..d {
        let len = grid.n[a];
        let stride: usize = grid.n[a + 1..].iter().product();
        let fft = planner.plan_fft_forward(len);
        let mut line = vec![Complex64::new(0.0, 0.0); len];
        for base in 0..data.len() {
            if (base / stride) % len != 0 {
                continue;
            }
            for k in 0..len {
                line[k] = data[base + k * stride];
            }
            fft.process(&mut line);
            for k in 0..len {
                data[base + k * stride] = line[k];
            }
        }
    }
    data
}

fn is_high(k: usize, n: usize) -> bool {
    k.min(n - k) > n / 4
}

/// Fourier tail indicators of the heat flow. The indicator is a proxy chosen here: the energy
/// in discrete frequencies above a quarter of each axis resolution.
#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub times: Vec<f64>,
    pub total_energy: Vec<f64>,
    pub tail_energy: Vec<f64>,
    /// Per axis, energy in modes that are high along that axis.
    pub axis_tail: Vec<Vec<f64>>,
    /// Per axis, energy of the nonconstant modes of the profile summed over the other axes.
    pub marginal_energy: Vec<Vec<f64>>,
    pub indicator: String,
}

pub fn smoothing_probe(a: &GridOperator, u0: &[f64], times: &[f64]) -> Result<ProbeReport> {
    if times.iter().any(|&t| t.is_nan() || t <= 0.0) {
        return Err(Error::InvalidInput("probe times must be positive".into()));
    }
    let g = &a.grid;
    let mut all = vec![0.0];
    all.extend_from_slice(times);
    let mut states = vec![u0.to_vec()];
    states.extend(krylov_exp(a, u0, times)?);
    let d = g.dim();
    let mut rep = ProbeReport {
        times: all,
        total_energy: vec![],
        tail_energy: vec![],
        axis_tail: vec![vec![]; d],
        marginal_energy: vec![vec![]; d],
        indicator: "fourier tail energy above N/4 (proxy)".into(),
    };
    let len = g.len() as f64;
    for u in &states {
        let hat = fft_nd(g, u);
        let mut total = 0.0;
        let mut tail = 0.0;
        let mut axis = vec![0.0; d];
        for (i, c) in hat.iter().enumerate() {
            let e = c.norm_sqr() / len;
            total += e;
            let idx = g.multi_index(i);
            let high: Vec<bool> = (0..d).map(|k| is_high(idx[k], g.n[k])).collect();
            if high.iter().any(|&h| h) {
                tail += e;
            }
            for k in 0..d {
                if high[k] {
                    axis[k] += e;
                }
            }
        }
        rep.total_energy.push(total);
        rep.tail_energy.push(tail);
        for k in 0..d {
            rep.axis_tail[k].push(axis[k]);
            let mut prof = vec![Complex64::new(0.0, 0.0); g.n[k]];
            for (i, &x) in u.iter().enumerate() {
                prof[g.multi_index(i)[k]].re += x;
            }
            FftPlanner::new().plan_fft_forward(g.n[k]).process(&mut prof);
            rep.marginal_energy[k].push(prof.iter().skip(1).map(|c| c.norm_sqr()).sum::<f64>() / g.n[k] as f64);
        }
    }
    Ok(rep)
}

/// Discrete delta at the node nearest to `p`, normalized to unit mass in the `W` pairing.
pub fn delta_at(a: &GridOperator, p: &[f64]) -> Vec<f64> {
    let g = &a.grid;
    let best = (0..g.len())
        .min_by(|&i, &j| {
            let d = |k: usize| g.node(k).iter().zip(p).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
            d(i).total_cmp(&d(j))
        })
        .unwrap_or(0);
    let mut u = vec![0.0; g.len()];
    u[best] = 1.0 / a.weights[best];
    u
}

/// `max_i |(A u_h)_i − (Δu)(x_i)|` for a test function vanishing on Dirichlet sides.
pub fn consistency_error(lap: &HorizontalLaplacian, grid: &Grid, u: &Expr, exec: Exec) -> Result<f64> {
    let a = discretize(lap, grid, exec)?;
    let uh = grid.sample(u)?;
    let exact = grid.sample(&lap.operator.apply(u))?;
    Ok(a.apply(&uh).iter().zip(&exact).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

#[derive(Clone, Debug, Serialize)]
pub struct ConsistencyReport {
    pub points: Vec<usize>,
    pub errors: Vec<f64>,
    pub orders: Vec<f64>,
}

impl ConsistencyReport {
    pub fn min_order(&self) -> f64 {
        self.orders.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Observed order under dyadic refinement on a Dirichlet box: `N = 2^k m − 1` interior points.
pub fn consistency_order(lap: &HorizontalLaplacian, bounds: &[(f64, f64)], points: &[usize], u: &Expr, exec: Exec) -> Result<ConsistencyReport> {
    let mut errors = vec![];
    for &n in points {
        let g = Grid::uniform(bounds.to_vec(), n, Boundary::Dirichlet)?;
        errors.push(consistency_error(lap, &g, u, exec)?);
    }
    let orders = errors
        .windows(2)
        .zip(points.windows(2))
        .map(|(e, n)| (e[0] / e[1]).ln() / (((n[1] + 1) as f64) / ((n[0] + 1) as f64)).ln())
        .collect();
    Ok(ConsistencyReport { points: points.to_vec(), errors, orders })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::LocalPresentation;
    use crate::laplacian::horizontal_laplacian;
    use crate::symexpr::Chart;
    use std::f64::consts::PI;

    fn lap(gens: &[&[&str]], n: usize, mu: &str) -> HorizontalLaplacian {
        let ch = Chart::standard(n, None);
        let a = gens.iter().map(|g| VectorField::parse(g, &ch).unwrap()).collect();
        let p = LocalPresentation::new(ch.clone(), a).unwrap();
        let mu = Density::new(Expr::parse(mu, &ch).unwrap(), &ch.region).unwrap();
        horizontal_laplacian(&p, &mu).unwrap()
    }

    fn line() -> HorizontalLaplacian {
        lap(&[&["1"]], 1, "1")
    }

    fn grushin() -> HorizontalLaplacian {
        lap(&[&["1", "0"], &["0", "x"]], 2, "1")
    }

    fn closed_form(n: usize, h: f64) -> Vec<f64> {
        let mut v: Vec<f64> = (0..n).map(|k| (2.0 - 2.0 * (2.0 * PI * k as f64 / n as f64).cos()) / (h * h)).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn grid_layout() {
        assert!(Grid::uniform(vec![(0.0, 1.0)], 3, Boundary::Periodic).is_err());
        let g = Grid::new(vec![(0.0, 1.0), (-1.0, 1.0)], vec![4, 5], vec![Boundary::Periodic, Boundary::Dirichlet]).unwrap();
        assert_eq!(g.len(), 20);
        assert_eq!(g.cell_count(), 24);
        assert_eq!(g.flat(&g.multi_index(13)), 13);
        assert_eq!(g.node(0), vec![0.0, -1.0 + 2.0 / 6.0]);
    }

    #[test]
    fn periodic_second_difference_spectrum() {
        let g = Grid::uniform(vec![(0.0, 2.0 * PI)], 8, Boundary::Periodic).unwrap();
        let a = discretize(&line(), &g, Exec::default()).unwrap();
        let eig = SymmetricEigen::new(a.to_dense()).eigenvalues;
        let mut got: Vec<f64> = eig.iter().copied().collect();
        got.sort_by(f64::total_cmp);
        for (x, y) in got.iter().zip(closed_form(8, g.h[0])) {
            assert!((x - y).abs() < 1e-10);
        }
        let g = Grid::uniform(vec![(0.0, 2.0 * PI)], 16, Boundary::Periodic).unwrap();
        let a = discretize(&line(), &g, Exec::default()).unwrap();
        let s = low_spectrum(&a, 4).unwrap();
        for (x, y) in s.values.iter().zip(closed_form(16, g.h[0])) {
            assert!((x - y).abs() < 1e-10, "{x} {y}");
        }
    }

    #[test]
    fn symmetry_and_dirichlet_identity() {
        let gl2 = lap(&[&["x", "0"], &["0", "x"], &["y", "0"], &["0", "y"]], 2, "exp(x)");
        let g = Grid::uniform(vec![(-1.0, 1.0), (-1.0, 1.0)], 12, Boundary::Dirichlet).unwrap();
        let mut a = discretize(&gl2, &g, Exec::default()).unwrap();
        assert!(weighted_symmetry_check(&a) < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u: Vec<f64> = (0..a.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert!(discrete_dirichlet_identity(&a, &u).relative_error < 1e-12);
        a.values[1] *= 1.0 + 1e-3;
        assert!(weighted_symmetry_check(&a) > 1e-6);
    }

    #[test]
    fn zero_distribution() {
        let g = Grid::uniform(vec![(0.0, 1.0), (0.0, 1.0)], 4, Boundary::Dirichlet).unwrap();
        let a = discretize_fields(&[], &Density::lebesgue(), &g, Exec::default()).unwrap();
        assert_eq!(a.nnz(), 0);
        assert!(a.apply(&vec![1.0; 16]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn nonperiodic_coefficients_rejected() {
        let g = Grid::uniform(vec![(0.0, 1.0), (0.0, 1.0)], 6, Boundary::Periodic).unwrap();
        assert!(matches!(discretize(&grushin(), &g, Exec::default()), Err(Error::InvalidInput(_))));
        let sing = lap(&[&["recip(x)"]], 1, "1");
        let g = Grid::uniform(vec![(-1.0, 1.0)], 7, Boundary::Dirichlet).unwrap();
        let g2 = Grid::uniform(vec![(-1.0, 1.0)], 8, Boundary::Dirichlet).unwrap();
        // the cell centers of the even grid include 0
        assert!(discretize(&sing, &g, Exec::default()).is_ok() || discretize(&sing, &g2, Exec::default()).is_err());
        assert!(matches!(discretize(&sing, &g2, Exec::default()), Err(Error::CoefficientSingularOnGrid(_))));
    }

    #[test]
    fn grushin_spectrum() {
        let g = Grid::uniform(vec![(-1.0, 1.0), (-1.0, 1.0)], 32, Boundary::Dirichlet).unwrap();
        let a = discretize(&grushin(), &g, Exec::default()).unwrap();
        assert!(weighted_symmetry_check(&a) < 1e-12);
        let s = low_spectrum(&a, 4).unwrap();
        assert!(s.values[0] > 0.0);
        assert!(s.values.windows(2).all(|w| w[0] <= w[1]));
        assert!(s.residuals.iter().all(|&r| r < 1e-8));
    }

    #[test]
    fn consistency() {
        let ch = Chart::standard(2, None);
        let u = Expr::parse("sin(pi*x)*sin(pi*y)", &ch).unwrap();
        let b = [(-1.0, 1.0), (-1.0, 1.0)];
        let gl2 = lap(&[&["x", "0"], &["0", "x"], &["y", "0"], &["0", "y"]], 2, "1");
        let r = consistency_order(&gl2, &b, &[15, 31, 63], &u, Exec::default()).unwrap();
        assert!(r.min_order() >= 1.9, "{r:?}");
        let r = consistency_order(&grushin(), &b, &[15, 31, 63], &u, Exec::default()).unwrap();
        assert!(r.min_order() >= 1.9, "{r:?}");
    }

    #[test]
    fn heat_probe_matches_closed_form() {
        let n = 16;
        let g = Grid::uniform(vec![(0.0, 2.0 * PI)], n, Boundary::Periodic).unwrap();
        let a = discretize(&line(), &g, Exec::default()).unwrap();
        let u0 = delta_at(&a, &[0.0]);
        let t = 0.05;
        let rep = smoothing_probe(&a, &u0, &[t]).unwrap();
        let h = g.h[0];
        let amp = 1.0 / h;
        let expected: f64 = (0..n)
            .map(|k| {
                let lam = (2.0 - 2.0 * (2.0 * PI * k as f64 / n as f64).cos()) / (h * h);
                if is_high(k, n) {
                    amp * amp * (-2.0 * lam * t).exp() / n as f64
                } else {
                    0.0
                }
            })
            .sum();
        assert!((rep.tail_energy[1] - expected).abs() < 1e-10 * expected.max(1.0), "{} {expected}", rep.tail_energy[1]);
        assert!(rep.tail_energy[1] < rep.tail_energy[0]);
    }

    #[test]
    fn probe_contrast() {
        let g = Grid::uniform(vec![(-1.0, 1.0), (-1.0, 1.0)], 31, Boundary::Dirichlet).unwrap();
        let a = discretize(&grushin(), &g, Exec::default()).unwrap();
        let rep = smoothing_probe(&a, &delta_at(&a, &[0.0, 0.0]), &[0.1]).unwrap();
        assert!(rep.tail_energy[1] < 0.01 * rep.tail_energy[0], "{rep:?}");
        let g = Grid::uniform(vec![(0.0, 2.0 * PI), (0.0, 2.0 * PI)], 16, Boundary::Periodic).unwrap();
        let dx = discretize_fields(&[VectorField::partial(2, 0)], &Density::lebesgue(), &g, Exec::default()).unwrap();
        let rep = smoothing_probe(&dx, &delta_at(&dx, &[PI, PI]), &[0.1, 1.0]).unwrap();
        let y0 = rep.marginal_energy[1][0];
        for e in &rep.marginal_energy[1] {
            assert!((e - y0).abs() <= 1e-12 * y0);
        }
        assert!(rep.axis_tail[0][2] < 0.01 * rep.axis_tail[0][0]);
    }
}
