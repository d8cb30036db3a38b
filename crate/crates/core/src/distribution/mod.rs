//! Distributions as finitely generated modules of vector fields: pointwise ranks,
//! module membership, fiber dimensions, minimal presentations and their transitions.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::symexpr::Chart;
use crate::vectorcalc::VectorField;

mod fiber;
mod membership;
mod presentation;

pub use fiber::{fiber_dims, FiberReport, DEFAULT_JET_ORDER};
pub(crate) use fiber::stable_kernel;
pub use membership::{membership_in, module_membership, Membership, MembershipMode, DEFAULT_TOL};
pub use presentation::{
    minimal_presentation, pullback_equivalence, pullback_metric_along_submersion, transition_matrix,
    EquivalenceWitness, LocalPresentation,
};

/// A chart with a nonempty list of generating vector fields.
#[derive(Clone, Debug)]
pub struct Distribution {
    pub chart: Chart,
    pub generators: Vec<VectorField>,
    pub label: String,
}

impl Distribution {
    pub fn new(chart: Chart, generators: Vec<VectorField>, label: impl Into<String>) -> Result<Self> {
        if generators.is_empty() {
            return Err(Error::InvalidInput("a distribution needs at least one generator".into()));
        }
        if let Some(g) = generators.iter().find(|g| g.dim() != chart.dim()) {
            return Err(Error::DimensionMismatch(format!("generator with {} coefficients on a {}-dimensional chart", g.dim(), chart.dim())));
        }
        Ok(Distribution { chart, generators, label: label.into() })
    }

    /// Generators given as coefficient strings.
    pub fn parse(chart: Chart, generators: &[&[&str]], label: &str) -> Result<Self> {
        let gens = generators.iter().map(|g| VectorField::parse(g, &chart)).collect::<Result<Vec<_>>>()?;
        Distribution::new(chart, gens, label)
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.len()
    }

    /// `n × k` matrix whose columns are the generators.
    pub fn anchor_matrix(&self) -> linalg::ExprMatrix {
        anchor_matrix(&self.generators, self.dim())
    }

    pub fn evaluate_at(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        evaluate_fields(&self.generators, p)
    }
}

pub(crate) fn anchor_matrix(fields: &[VectorField], n: usize) -> linalg::ExprMatrix {
    (0..n).map(|i| fields.iter().map(|f| f.coeffs[i].clone()).collect()).collect()
}

pub(crate) fn evaluate_fields(fields: &[VectorField], p: &[f64]) -> Result<DMatrix<f64>> {
    let n = p.len();
    let mut m = DMatrix::zeros(n, fields.len());
    for (j, f) in fields.iter().enumerate() {
        for i in 0..n {
            m[(i, j)] = f.coeffs[i].evaluate(p)?;
        }
    }
    Ok(m)
}

/// `dim D_p`: numeric rank of the evaluated generators.
pub fn evaluate_rank(d: &Distribution, p: &[f64]) -> Result<usize> {
    Ok(linalg::rank(&d.evaluate_at(p)?))
}

/// Serializable view of a matrix of expressions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RenderedMatrix(pub Vec<Vec<String>>);

pub fn render_matrix(m: &linalg::ExprMatrix, chart: &Chart) -> RenderedMatrix {
    RenderedMatrix(m.iter().map(|r| r.iter().map(|e| e.render(chart)).collect()).collect())
}

pub(crate) fn restrict_fields(fields: &[VectorField], region: &crate::symexpr::Region) -> Vec<VectorField> {
    fields.iter().map(|f| VectorField::new(f.coeffs.iter().map(|c| c.restrict(region)).collect())).collect()
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks() {
        let g = Distribution::parse(Chart::standard(2, None), &[&["1", "0"], &["0", "x"]], "grushin").unwrap();
        assert_eq!(evaluate_rank(&g, &[0.0, 1.0]).unwrap(), 1);
        assert_eq!(evaluate_rank(&g, &[1.0, 0.0]).unwrap(), 2);
        let gl = Distribution::parse(Chart::standard(2, None), &[&["x", "0"], &["0", "x"], &["y", "0"], &["0", "y"]], "gl2").unwrap();
        assert_eq!(evaluate_rank(&gl, &[0.0, 0.0]).unwrap(), 0);
    }
}
