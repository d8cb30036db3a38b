use serde::Serialize;

use super::{Expr, Region};

/// Which test decided an equality query.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum EqualityWitness {
    /// Canonical forms coincide.
    Canonical,
    /// Canonical forms differ but the difference is below tolerance at every sample.
    Sampled { points: usize, max_defect: f64 },
    /// A sample point separates the two expressions.
    Differs { point: Vec<f64>, defect: f64 },
    /// Too few regular sample points were found.
    Undecided { points: usize },
}

impl EqualityWitness {
    pub fn holds(&self) -> bool {
        matches!(self, EqualityWitness::Canonical | EqualityWitness::Sampled { .. })
    }
}

pub(crate) const SAMPLE_SEED: u64 = 0x5eed_0f_d15c;
const SAMPLES: usize = 64;
const TOL: f64 = 1e-10;

/// Equality on the default sampling window of the smallest chart containing both sides.
pub fn equal(a: &Expr, b: &Expr) -> EqualityWitness {
    let n = a.max_coord().max(b.max_coord()).map_or(1, |i| i + 1);
    equal_on(a, b, &Region::unbounded(n))
}

/// Canonical comparison with a seeded sampling fallback on `region`.
pub fn equal_on(a: &Expr, b: &Expr, region: &Region) -> EqualityWitness {
    let d = a - b;
    if d.is_zero() {
        return EqualityWitness::Canonical;
    }
    let ca = a.compile();
    let cb = b.compile();
    let mut seed = SAMPLE_SEED;
    let mut good = 0;
    let mut worst: f64 = 0.0;
    for _round in 0..16 {
        for p in region.sample_points(SAMPLES, seed) {
            let (Ok(va), Ok(vb)) = (ca.eval(&p), cb.eval(&p)) else { continue };
            let scale = 1f64.max(va.abs()).max(vb.abs());
            let defect = (va - vb).abs() / scale;
            if defect > TOL {
                return EqualityWitness::Differs { point: p, defect };
            }
            worst = worst.max(defect);
            good += 1;
            if good == SAMPLES {
                return EqualityWitness::Sampled { points: good, max_defect: worst };
            }
        }
        seed = seed.wrapping_add(1);
    }
    EqualityWitness::Undecided { points: good }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::Chart;

    fn p(s: &str) -> Expr {
        Expr::parse(s, &Chart::new(&["x", "y"], None).unwrap()).unwrap()
    }

    #[test]
    fn criteria() {
        assert_eq!(equal(&p("x*y + y*x"), &p("2*x*y")), EqualityWitness::Canonical);
        assert!(matches!(equal(&p("x"), &p("y")), EqualityWitness::Differs { .. }));
        // (x^2 - y^2)/(x - y) vs x + y: the canceller handles it canonically.
        let q = p("x^2 - y^2").div(&p("x - y")).unwrap();
        assert!(equal(&q, &p("x + y")).holds());
        // An identity outside the canonical rules falls back to sampling:
        // cos(2x) = 1 - 2 sin(x)^2 = 2cos(x)^2 - 1.
        let w = equal(&p("cos(2*x)"), &p("2*cos(x)^2 - 1"));
        assert!(matches!(w, EqualityWitness::Sampled { .. }), "{w:?}");
    }
}
