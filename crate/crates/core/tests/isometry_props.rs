mod common;

use distlap_core::isometry::{check_distribution_preserved, check_isometry, check_laplacian_commutation, pushforward, Diffeo};
use distlap_core::symexpr::q;
use distlap_core::{Chart, Exec, Expr, VectorField};
use proptest::prelude::*;

fn c2() -> Chart {
    Chart::standard(2, None)
}

fn poly_1d(coord: usize) -> impl Strategy<Value = Expr> {
    prop::collection::vec(-2i64..3, 1..4).prop_map(move |cs| {
        Expr::sum(cs.iter().enumerate().map(|(k, &c)| {
            let mut e = vec![0i64; 2];
            e[coord] = k as i64 + 1;
            Expr::coord_power(&e).scale(&q(c))
        }))
    })
}

/// `(x + p(y), y)` or `(x, y + p(x))` with their exact inverses.
fn shear() -> impl Strategy<Value = Diffeo> {
    (any::<bool>(), poly_1d(1), poly_1d(0)).prop_map(|(horizontal, py, px)| {
        let (x, y) = (Expr::coord(0), Expr::coord(1));
        let (fw, inv) = if horizontal { (vec![&x + &py, y.clone()], vec![&x - &py, y]) } else { (vec![x.clone(), &y + &px], vec![x, &y - &px]) };
        Diffeo::new(c2(), c2(), fw, inv).unwrap()
    })
}

fn field() -> impl Strategy<Value = VectorField> {
    let term = (-2i64..3, 0i64..3, 0i64..3).prop_map(|(c, a, b)| Expr::coord_power(&[a, b]).scale(&q(c)));
    prop::collection::vec(prop::collection::vec(term, 1..3).prop_map(Expr::sum), 2).prop_map(VectorField::new)
}

fn rotation() -> Diffeo {
    Diffeo::parse(c2(), c2(), &["3/5*x - 4/5*y", "4/5*x + 3/5*y"], &["3/5*x + 4/5*y", "-4/5*x + 3/5*y"]).unwrap()
}

fn heis_translation(a: i64, b: i64, c: i64) -> Diffeo {
    let ch = Chart::standard(3, None);
    let fw = [format!("x + {a}"), format!("y + {b}"), format!("z + {c} + 1/2*({a}*y - {b}*x)")];
    let inv = [format!("x - {a}"), format!("y - {b}"), format!("z - {c} - 1/2*({a}*y - {b}*x)")];
    let fw: Vec<&str> = fw.iter().map(String::as_str).collect();
    let inv: Vec<&str> = inv.iter().map(String::as_str).collect();
    Diffeo::parse(ch.clone(), ch, &fw, &inv).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pushforward_is_functorial(f in shear(), g in shear(), x in field()) {
        let fg = f.after(&g).unwrap();
        prop_assert_eq!(pushforward(&fg, &x).unwrap(), pushforward(&f, &pushforward(&g, &x).unwrap()).unwrap());
    }

    #[test]
    fn pushforward_is_natural(f in shear(), x in field(), y in field()) {
        let lhs = pushforward(&f, &x.bracket(&y).unwrap()).unwrap();
        let rhs = pushforward(&f, &x).unwrap().bracket(&pushforward(&f, &y).unwrap()).unwrap();
        prop_assert_eq!(lhs, rhs);
    }
}

#[test]
fn laplacian_commutes_with_the_isometry_examples() {
    let gl2 = common::gl2();
    let heis = common::heisenberg();
    let cases = [
        ("identity", Diffeo::identity(c2()), gl2.laplacian()),
        ("rotation", rotation(), gl2.laplacian()),
        ("heisenberg", heis_translation(1, 2, 3), heis.laplacian()),
        ("heisenberg", heis_translation(-2, 1, 0), heis.laplacian()),
    ];
    for (label, f, lap) in cases {
        let d = lap.presentation.as_distribution(label).unwrap();
        assert!(check_distribution_preserved(&f, &d, &d).unwrap().preserved, "{label}");
        let iso = check_isometry(&f, &lap.presentation, &lap.presentation).unwrap();
        assert!(iso.isometry && iso.canonical, "{label}");
        let r = check_laplacian_commutation(&f, &lap, &lap, Exec::default()).unwrap();
        assert_eq!(r.corpus_size, 12);
        assert!(r.canonical_zero, "{label}: {}", r.max_sampled_residual);
    }
}

#[test]
fn translation_does_not_preserve_gl2() {
    let d = common::gl2().distribution();
    let t = Diffeo::parse(c2(), c2(), &["x + 1", "y"], &["x - 1", "y"]).unwrap();
    let r = check_distribution_preserved(&t, &d, &d).unwrap();
    assert!(!r.preserved);
}
