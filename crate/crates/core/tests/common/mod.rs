#![allow(dead_code)]

use distlap_core::distribution::{Distribution, LocalPresentation};
use distlap_core::laplacian::{laplacian_any_form, HorizontalLaplacian};
use distlap_core::{Chart, Density, Expr, Region, VectorField};

pub struct Fixture {
    pub label: &'static str,
    pub presentation: LocalPresentation,
    pub bounds: Vec<(f64, f64)>,
}

impl Fixture {
    pub fn distribution(&self) -> Distribution {
        self.presentation.as_distribution(self.label).unwrap()
    }

    pub fn chart(&self) -> &Chart {
        &self.presentation.chart
    }

    pub fn laplacian(&self) -> HorizontalLaplacian {
        laplacian_any_form(&self.presentation, &Density::lebesgue()).unwrap()
    }

    pub fn expr(&self, s: &str) -> Expr {
        Expr::parse(s, self.chart()).unwrap()
    }
}

pub fn presentation(gens: &[&[&str]], region: Option<Region>) -> LocalPresentation {
    let ch = Chart::standard(gens[0].len(), region);
    let a = gens.iter().map(|g| VectorField::parse(g, &ch).unwrap()).collect();
    LocalPresentation::new(ch, a).unwrap()
}

fn fixture(label: &'static str, gens: &[&[&str]], bounds: Vec<(f64, f64)>) -> Fixture {
    Fixture { label, presentation: presentation(gens, None), bounds }
}

pub fn gl2() -> Fixture {
    fixture("gl2_vanishing_origin", &[&["x", "0"], &["0", "x"], &["y", "0"], &["0", "y"]], vec![(-1.0, 1.0); 2])
}

pub fn pathological() -> Fixture {
    fixture("pathological_flat", &[&["1", "0"], &["0", "flatplus(x)"]], vec![(-1.0, 1.0); 2])
}

pub fn heisenberg() -> Fixture {
    fixture("heisenberg", &[&["1", "0", "-1/2*y"], &["0", "1", "1/2*x"]], vec![(-1.0, 1.0); 3])
}

pub fn grushin() -> Fixture {
    fixture("grushin", &[&["1", "0"], &["0", "x"]], vec![(-1.0, 1.0); 2])
}

pub fn martinet() -> Fixture {
    fixture("martinet", &[&["1", "0", "0"], &["0", "1", "1/2*x^2"]], vec![(-1.0, 1.0); 3])
}

pub fn exs_distr_i() -> Fixture {
    fixture(
        "exs_distr_i",
        &[&["1", "0", "0", "0"], &["0", "1", "x", "1/2*x^2"], &["0", "0", "0", "z"]],
        vec![(-1.0, 1.0); 4],
    )
}

pub fn bump_line() -> Fixture {
    fixture("bump_line", &[&["flatplus(x + 1)*flatplus(1 - x)"]], vec![(-2.0, 2.0)])
}

pub fn all() -> Vec<Fixture> {
    vec![gl2(), pathological(), heisenberg(), grushin(), martinet(), exs_distr_i(), bump_line()]
}

/// Trial functions: polynomial times the smooth bump of the box, as polynomial factors.
pub fn trial_polys(n: usize) -> Vec<Expr> {
    let c = |i: usize| Expr::coord(i % n);
    vec![
        Expr::one(),
        c(0),
        &c(0) * &c(1),
        &(&c(1) * &c(1)) - &c(0),
        &Expr::int(2) + &(&c(0) * &(&c(0) * &c(1))),
        &c(n - 1) - &(&c(0) * &c(0)),
        &(&c(0) * &c(0)) + &(&c(1) * &c(1)),
        &Expr::int(1) - &(&c(0) * &c(n - 1)),
        &(&c(1) * &(&c(1) * &c(1))) + &c(0),
        &(&c(0) * &c(1)) * &c(n - 1),
    ]
}
