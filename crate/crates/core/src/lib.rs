//! Symbolic-numeric toolkit for generalized smooth distributions on a coordinate chart.
//!
//! A distribution is a finite list of vector fields with exact symbolic coefficients.
//! From a local presentation and a positive density the crate builds the induced
//! cometric, the horizontal differential and its adjoint, the horizontal Laplacian,
//! symbols, Lie hulls, the foliated de Rham complex and grid discretizations.

pub mod distribution;
pub mod error;
pub mod exec;
pub mod forms;
pub mod isometry;
pub mod laplacian;
pub mod liehull;
pub mod linalg;
pub mod metric;
pub mod numerics;
pub mod quadrature;
pub mod symexpr;
pub mod vectorcalc;

pub use error::{Error, Result};
pub use exec::Exec;
pub use symexpr::{Chart, Expr, Region};
pub use vectorcalc::{Density, DiffOperator, OneForm, VectorField};
