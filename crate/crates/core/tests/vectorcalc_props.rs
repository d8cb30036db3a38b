mod common;

use distlap_core::quadrature::{BumpTrial, CompiledOperator, TensorRule, NODES};
use distlap_core::symexpr::equal;
use distlap_core::vectorcalc::{formal_adjoint, lie_bracket};
use distlap_core::{Chart, Density, Exec, Expr, VectorField};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn poly_expr() -> impl Strategy<Value = Expr> {
    // sums of up to three monomials c·x^a y^b z^c with small degrees
    prop::collection::vec((-3i64..4, 0u32..3, 0u32..3, 0u32..3), 0..4).prop_map(|terms| {
        Expr::sum(terms.into_iter().map(|(c, a, b, d)| monomial(c, [a, b, d])))
    })
}

fn monomial(c: i64, pows: [u32; 3]) -> Expr {
    let mut e = Expr::int(c);
    for (i, k) in pows.into_iter().enumerate() {
        for _ in 0..k {
            e = &e * &Expr::coord(i);
        }
    }
    e
}

fn poly_field() -> impl Strategy<Value = VectorField> {
    prop::collection::vec(poly_expr(), 3).prop_map(VectorField::new)
}

fn jacobi_defect(x: &VectorField, y: &VectorField, z: &VectorField) -> VectorField {
    let a = lie_bracket(x, &lie_bracket(y, z).unwrap()).unwrap();
    let b = lie_bracket(y, &lie_bracket(z, x).unwrap()).unwrap();
    let c = lie_bracket(z, &lie_bracket(x, y).unwrap()).unwrap();
    a.add(&b).add(&c)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn jacobi_identity(x in poly_field(), y in poly_field(), z in poly_field()) {
        prop_assert!(jacobi_defect(&x, &y, &z).is_zero());
    }

    #[test]
    fn leibniz_rule(x in poly_field(), u in poly_expr(), v in poly_expr()) {
        let lhs = x.apply(&(&u * &v));
        let rhs = &(&x.apply(&u) * &v) + &(&u * &x.apply(&v));
        prop_assert!(equal(&lhs, &rhs).holds());
    }
}

/// 50 seeded fields mixing polynomials with exp and flatplus factors.
fn field_corpus() -> Vec<VectorField> {
    let ch = Chart::standard(3, None);
    let atoms = ["1", "x", "y*z", "x^2 - z", "exp(y)", "flatplus(x)", "x*exp(-z)", "y^3 + 2*x*y"];
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    (0..50)
        .map(|_| {
            let coeffs = (0..3)
                .map(|_| {
                    let a = atoms[rng.random_range(0..atoms.len())];
                    let b = atoms[rng.random_range(0..atoms.len())];
                    let c: i64 = rng.random_range(-2..3);
                    Expr::parse(&format!("{c}*{a} + {b}"), &ch).unwrap()
                })
                .collect();
            VectorField::new(coeffs)
        })
        .collect()
}

#[test]
fn jacobi_on_fifty_field_corpus() {
    let fields = field_corpus();
    assert_eq!(fields.len(), 50);
    // consecutive triples cover every field
    for i in 0..fields.len() {
        let (x, y, z) = (&fields[i], &fields[(i + 1) % 50], &fields[(i + 7) % 50]);
        assert!(jacobi_defect(x, y, z).is_zero(), "triple starting at {i}");
    }
}

#[test]
fn adjoint_is_an_involution() {
    let ch = Chart::standard(2, None);
    let mu = Density::new(Expr::parse("exp(x - y/2)", &ch).unwrap(), &ch.region).unwrap();
    let fields = [
        VectorField::parse(&["x", "y^2"], &ch).unwrap(),
        VectorField::parse(&["flatplus(x)", "1"], &ch).unwrap(),
        VectorField::parse(&["y", "-x"], &ch).unwrap(),
    ];
    let tests: Vec<Expr> = (0..20)
        .map(|k| {
            let (a, b) = (k % 4, k / 4);
            Expr::parse(&format!("x^{a}*y^{b} + exp({a}*x - y)"), &ch).unwrap()
        })
        .collect();
    for x in &fields {
        let twice = formal_adjoint(x, &mu).unwrap().adjoint(&mu).unwrap();
        for u in &tests {
            assert!(equal(&twice.apply(u), &x.apply(u)).holds());
        }
    }
}

#[test]
fn quadrature_adjointness_for_example_fields() {
    for fx in common::all() {
        let n = fx.presentation.dim();
        let bounds = &fx.bounds;
        let sub: Vec<Expr> = (0..n.max(2)).map(|i| Expr::coord(i.min(n - 1))).collect();
        let polys = common::trial_polys(n.max(2));
        let u = BumpTrial::new(&polys[3].substitute(&sub).unwrap(), bounds, 1);
        let v = BumpTrial::new(&polys[4].substitute(&sub).unwrap(), bounds, 1);
        let ch = fx.chart().clone();
        let mus = [Density::lebesgue(), Density::new(Expr::parse("exp(x/3)", &ch).unwrap(), &ch.region).unwrap()];
        // 64 nodes per axis up to three dimensions; the 4-dimensional example uses 24
        let coeffs = fx.presentation.anchor.iter().flat_map(|x| x.coeffs.iter());
        let rule = TensorRule::adapted(bounds, coeffs, if n >= 4 { 24 } else { NODES });
        for mu in &mus {
            let m = mu.weight.compile();
            for x in &fx.presentation.anchor {
                let xo = CompiledOperator::new(&x.as_operator());
                let xs = CompiledOperator::new(&formal_adjoint(x, mu).unwrap());
                let a = rule.integrate(Exec::default(), |p| u.apply(&xo, p).unwrap() * v.value(p).unwrap() * m.eval(p).unwrap());
                let c = rule.integrate(Exec::default(), |p| u.value(p).unwrap() * v.apply(&xs, p).unwrap() * m.eval(p).unwrap());
                assert!((a - c).abs() < 1e-8, "{}: {a} vs {c}", fx.label);
            }
        }
    }
}
