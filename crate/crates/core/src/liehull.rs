//! Iterated Lie brackets, the hull of a distribution and structure coefficients.

use nalgebra::DVector;
use serde::Serialize;

use crate::distribution::{evaluate_fields, membership_in, Distribution, Membership, MembershipMode, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg;
use crate::symexpr::{pole_order, Expr, Region};
use crate::vectorcalc::VectorField;

pub const MAX_DEPTH: usize = 6;

/// Field kept at some depth, with the membership verdict that failed to discard it.
#[derive(Clone, Debug, Serialize)]
pub struct HullField {
    pub field: Vec<String>,
    #[serde(skip)]
    pub vector: VectorField,
    pub pole_order: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct HullReport {
    pub depth: usize,
    /// `new_fields[d]` holds the fields adjoined at depth `d + 1`.
    pub new_fields: Vec<Vec<HullField>>,
    pub grid: Vec<Vec<f64>>,
    /// `rank_profile[d][i]`: rank at `grid[i]` of all fields through depth `d + 1`;
    /// `None` where a coefficient is singular.
    pub rank_profile: Vec<Vec<Option<usize>>>,
    pub bracket_generating: bool,
    pub membership_closed: bool,
    pub suspicious_growth: bool,
    pub max_pole_order: Vec<usize>,
}

impl HullReport {
    pub fn fields(&self) -> Vec<&VectorField> {
        self.new_fields.iter().flatten().map(|f| &f.vector).collect()
    }

    pub fn final_ranks(&self) -> &[Option<usize>] {
        self.rank_profile.last().map_or(&[], |v| v.as_slice())
    }
}

fn grid_for(region: &Region) -> Vec<Vec<f64>> {
    let n = region.dim();
    let per_axis = ((1000f64).powf(1.0 / n as f64).floor() as usize).clamp(3, 21);
    region.grid_points(per_axis)
}

fn ranks(fields: &[VectorField], grid: &[Vec<f64>], exec: Exec) -> Vec<Option<usize>> {
    exec.map(grid, |p| {
        let m = evaluate_fields(fields, p).ok()?;
        m.iter().all(|v| v.is_finite()).then(|| linalg::rank(&m))
    })
}

fn max_pole(x: &VectorField) -> usize {
    x.coeffs.iter().map(pole_order).max().unwrap_or(0)
}

/// Whether a verdict discards a candidate: only exact certificates count.
fn certified_member(m: &Result<Membership>) -> bool {
    matches!(m, Ok(m) if m.member && m.mode == MembershipMode::Symbolic)
}

fn describe(m: &Result<Membership>) -> String {
    match m {
        Ok(m) if m.member => format!("uncertified member ({})", m.certificate),
        Ok(m) => format!("not a member ({})", m.certificate),
        Err(e) => e.to_string(),
    }
}

/// Breadth-first closure under right-nested brackets `[X_i, Y]` up to `max_depth`.
pub fn hull_generate(d: &Distribution, max_depth: usize, exec: Exec) -> Result<HullReport> {
    if max_depth == 0 || max_depth > MAX_DEPTH {
        return Err(Error::InvalidInput(format!("hull depth must be in 1..={MAX_DEPTH}")));
    }
    let region = &d.chart.region;
    let grid = grid_for(region);
    let render = |x: &VectorField| x.render(&d.chart);
    let mut span: Vec<VectorField> = d.generators.clone();
    let first: Vec<HullField> = d
        .generators
        .iter()
        .map(|g| HullField { field: render(g), vector: g.clone(), pole_order: max_pole(g), reason: "generator".into() })
        .collect();
    let mut new_fields = vec![first];
    let mut rank_profile = vec![ranks(&span, &grid, exec)];
    let mut membership_closed = true;
    for _depth in 2..=max_depth {
        let prev: Vec<VectorField> = new_fields.last().unwrap().iter().map(|f| f.vector.clone()).collect();
        let mut added = vec![];
        let mut closed = true;
        for x in &d.generators {
            for y in &prev {
                let b = x.bracket(y)?;
                if b.is_zero() {
                    continue;
                }
                let m = membership_in(&b, &span, region, MembershipMode::Symbolic, DEFAULT_TOL);
                if certified_member(&m) {
                    continue;
                }
                closed = false;
                added.push(HullField { field: render(&b), pole_order: max_pole(&b), reason: describe(&m), vector: b.clone() });
                span.push(b);
            }
        }
        membership_closed = closed;
        let stop = added.is_empty();
        new_fields.push(added);
        rank_profile.push(ranks(&span, &grid, exec));
        if stop {
            break;
        }
    }
    let n = d.dim();
    let bracket_generating = rank_profile.last().unwrap().iter().flatten().all(|&r| r == n)
        && rank_profile.last().unwrap().iter().any(Option::is_some);
    let max_pole_order: Vec<usize> = new_fields.iter().map(|fs| fs.iter().map(|f| f.pole_order).max().unwrap_or(0)).collect();
    let adjoined: Vec<usize> = max_pole_order[1..]
        .iter()
        .zip(&new_fields[1..])
        .filter(|(_, fs)| !fs.is_empty())
        .map(|(&p, _)| p)
        .collect();
    let suspicious_growth = adjoined.len() >= 2 && adjoined.windows(2).all(|w| w[1] > w[0]);
    Ok(HullReport {
        depth: new_fields.len(),
        new_fields,
        grid,
        rank_profile,
        bracket_generating,
        membership_closed,
        suspicious_growth,
        max_pole_order,
    })
}

/// `[X_i, X_j] = Σ_k c^k_{ij} X_k`.
#[derive(Clone, Debug)]
pub struct StructureCoefficients {
    pub fields: Vec<VectorField>,
    /// `table[i][j][k] = c^k_{ij}` when every bracket was solved exactly.
    pub table: Option<Vec<Vec<Vec<Expr>>>>,
    pub mode: MembershipMode,
    pub choice: String,
}

impl StructureCoefficients {
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// Numeric table at `p`; the minimal-norm pointwise solution in sampled mode.
    pub fn at(&self, p: &[f64]) -> Result<Vec<Vec<Vec<f64>>>> {
        let k = self.len();
        if let Some(t) = &self.table {
            return t.iter().map(|r| r.iter().map(|c| c.iter().map(|e| e.evaluate(p)).collect()).collect()).collect();
        }
        let a = evaluate_fields(&self.fields, p)?;
        let pinv = linalg::pinv(&a);
        let mut out = vec![vec![vec![0.0; k]; k]; k];
        for i in 0..k {
            for j in i + 1..k {
                let b = DVector::from_vec(self.fields[i].bracket(&self.fields[j])?.evaluate(p)?);
                let c = &pinv * b;
                for m in 0..k {
                    out[i][j][m] = c[m];
                    out[j][i][m] = -c[m];
                }
            }
        }
        Ok(out)
    }

    /// Largest `|[X_i, X_j](p) − Σ c^k_{ij}(p) X_k(p)|` over sample points of `region`.
    pub fn residual(&self, region: &Region, count: usize, seed: u64) -> Result<f64> {
        let mut worst = 0.0f64;
        let brackets: Vec<Vec<VectorField>> = (0..self.len())
            .map(|i| (0..self.len()).map(|j| self.fields[i].bracket(&self.fields[j])).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        for p in region.sample_points(count, seed) {
            let Ok(c) = self.at(&p) else { continue };
            let Ok(a) = evaluate_fields(&self.fields, &p) else { continue };
            for i in 0..self.len() {
                for j in 0..self.len() {
                    let b = DVector::from_vec(brackets[i][j].evaluate(&p)?);
                    let r = &b - &a * DVector::from_column_slice(&c[i][j]);
                    worst = worst.max(r.amax());
                }
            }
        }
        Ok(worst)
    }
}

/// First generator bracket that is not a member, if any.
#[derive(Clone, Debug, Serialize)]
pub struct Involutivity {
    pub involutive: bool,
    pub witness: Option<Vec<String>>,
    pub pair: Option<(usize, usize)>,
}

pub fn is_involutive(d: &Distribution) -> Result<Involutivity> {
    for (i, j, b) in pair_brackets(&d.generators)? {
        let m = membership_in(&b, &d.generators, &d.chart.region, MembershipMode::Symbolic, DEFAULT_TOL)?;
        if !m.member {
            return Ok(Involutivity { involutive: false, witness: Some(b.render(&d.chart)), pair: Some((i, j)) });
        }
    }
    Ok(Involutivity { involutive: true, witness: None, pair: None })
}

fn pair_brackets(gens: &[VectorField]) -> Result<Vec<(usize, usize, VectorField)>> {
    let mut out = vec![];
    for i in 0..gens.len() {
        for j in i + 1..gens.len() {
            out.push((i, j, gens[i].bracket(&gens[j])?));
        }
    }
    Ok(out)
}

pub fn structure_coefficients(f: &Distribution) -> Result<StructureCoefficients> {
    let k = f.num_generators();
    let mut table = vec![vec![vec![Expr::zero(); k]; k]; k];
    let mut exact = true;
    for (i, j, b) in pair_brackets(&f.generators)? {
        if b.is_zero() {
            continue;
        }
        let m = membership_in(&b, &f.generators, &f.chart.region, MembershipMode::Symbolic, DEFAULT_TOL)?;
        if !m.member {
            return Err(Error::NotInvolutive { witness: b.render(&f.chart).join(", ") });
        }
        match m.coefficients {
            Some(c) if m.mode == MembershipMode::Symbolic => {
                for (mm, v) in c.into_iter().enumerate() {
                    table[j][i][mm] = -v.clone();
                    table[i][j][mm] = v;
                }
            }
            _ => exact = false,
        }
    }
    let (table, mode, choice) = if exact {
        (Some(table), MembershipMode::Symbolic, "exact elimination, first smooth pivot subset in lexicographic order".to_string())
    } else {
        (None, MembershipMode::Sampled, "pointwise minimal-norm least squares".to_string())
    };
    Ok(StructureCoefficients { fields: f.generators.clone(), table, mode, choice })
}
