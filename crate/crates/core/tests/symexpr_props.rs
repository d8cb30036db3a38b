use distlap_core::symexpr::{equal, equal_on, taylor_jet};
use distlap_core::{Chart, Expr, Region};
use proptest::prelude::*;

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (0usize..3).prop_map(Expr::coord),
        (-4i64..5, 1i64..4).prop_map(|(n, d)| Expr::rational(n, d)),
    ]
}

/// Smooth expressions in x, y, z built from the smooth primitives.
fn smooth_expr() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| &a + &b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| &a * &b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| &a - &b),
            (0usize..3, -2i64..3).prop_map(|(i, k)| Expr::exp(Expr::coord(i).scale(&distlap_core::symexpr::qf(k, 2)))),
            inner.clone().prop_map(|a| &Expr::sin(Expr::coord(0)) * &a),
            inner.prop_map(|a| &Expr::cos(Expr::coord(1)) * &a),
        ]
    })
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, 3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partials_commute(e in smooth_expr(), i in 0usize..3, j in 0usize..3) {
        prop_assert_eq!(e.differentiate(i).differentiate(j), e.differentiate(j).differentiate(i));
    }

    #[test]
    fn canonicalize_is_idempotent(e in smooth_expr()) {
        let c = e.canonicalize();
        prop_assert_eq!(c.canonicalize(), c.clone());
        let ch = Chart::standard(3, None);
        prop_assert_eq!(Expr::parse(&c.render(&ch), &ch).unwrap(), c);
    }

    #[test]
    fn equality_is_an_equivalence(a in smooth_expr(), b in smooth_expr()) {
        prop_assert!(equal(&a, &a).holds());
        prop_assert_eq!(equal(&a, &b).holds(), equal(&b, &a).holds());
        let c = &(&a + &b) - &b;
        prop_assert!(equal(&a, &c).holds());
        prop_assert_eq!(equal(&c, &b).holds(), equal(&a, &b).holds());
    }

    #[test]
    fn jets_match_finite_differences(e in smooth_expr(), p in point()) {
        let jet = taylor_jet(&e, &p, 3).unwrap();
        let f = |x: &[f64]| e.evaluate(x).unwrap();
        let scale = 1.0 + f(&p).abs();
        // first and second order by central differences
        let h = 1e-4;
        for i in 0..3 {
            let mut a = p.clone();
            let mut b = p.clone();
            a[i] += h;
            b[i] -= h;
            let mut alpha = [0u32; 3];
            alpha[i] = 1;
            let d1 = (f(&a) - f(&b)) / (2.0 * h);
            let t1 = jet.get(&alpha);
            prop_assert!((d1 - t1).abs() <= 1e-6 * (scale + t1.abs() + d1.abs()), "d/dx{} {} vs {}", i, d1, t1);
            let h2 = 1e-3;
            let mut a = p.clone();
            let mut b = p.clone();
            a[i] += h2;
            b[i] -= h2;
            alpha[i] = 2;
            let d2 = (f(&a) - 2.0 * f(&p) + f(&b)) / (h2 * h2) / 2.0;
            let t2 = jet.get(&alpha);
            prop_assert!((d2 - t2).abs() <= 1e-6 * (scale + t2.abs() + d2.abs()) + 1e-6 * scale, "2nd {} vs {}", d2, t2);
        }
        // mixed third order against the exact derivative
        let d3 = e.derivative(&[1, 1, 1]).evaluate(&p).unwrap();
        let t3 = jet.get(&[1, 1, 1]);
        prop_assert!((d3 - t3).abs() <= 1e-6 * (1.0 + d3.abs()));
    }
}

#[test]
fn flatplus_vanishes_with_all_derivatives() {
    let ch = Chart::standard(1, None);
    let mut e = Expr::parse("flatplus(x)", &ch).unwrap();
    for k in 0..6 {
        for x in [-1.0, -1e-3, 0.0] {
            assert_eq!(e.evaluate(&[x]).unwrap(), 0.0, "order {k} at {x}");
        }
        assert!(e.evaluate(&[1e-3]).unwrap().abs() < 1e-12, "order {k}");
        e = e.differentiate(0);
    }
}

#[test]
fn sampled_equality_covers_trig_identities() {
    let ch = Chart::standard(1, None);
    let a = Expr::parse("sin(2*x)", &ch).unwrap();
    let b = Expr::parse("2*sin(x)*cos(x)", &ch).unwrap();
    assert!(equal_on(&a, &b, &Region::unbounded(1)).holds());
}
