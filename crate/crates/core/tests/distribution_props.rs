mod common;

use common::Fixture;
use distlap_core::distribution::{evaluate_rank, fiber_dims, minimal_presentation, transition_matrix, FiberReport, DEFAULT_JET_ORDER};
use distlap_core::linalg;
use distlap_core::{Error, Exec};

/// 41×41 grid in the plane spanned by `axes`, other coordinates zero; a 41-point line in 1D.
fn slice(fx: &Fixture, axes: (usize, usize)) -> (Vec<Vec<f64>>, usize, usize) {
    let n = fx.presentation.dim();
    let at = |i: usize, k: usize| {
        let (lo, hi) = fx.bounds[i];
        lo + (hi - lo) * k as f64 / 40.0
    };
    if n == 1 {
        return ((0..41).map(|k| vec![at(0, k)]).collect(), 41, 1);
    }
    let mut pts = vec![];
    for a in 0..41 {
        for b in 0..41 {
            let mut p = vec![0.0; n];
            p[axes.0] = at(axes.0, a);
            p[axes.1] = at(axes.1, b);
            pts.push(p);
        }
    }
    (pts, 41, 41)
}

fn slices() -> Vec<(Fixture, (usize, usize))> {
    vec![
        (common::gl2(), (0, 1)),
        (common::pathological(), (0, 1)),
        (common::heisenberg(), (0, 1)),
        (common::grushin(), (0, 1)),
        (common::martinet(), (0, 2)),
        (common::exs_distr_i(), (0, 2)),
        (common::bump_line(), (0, 0)),
    ]
}

fn reports(fx: &Fixture, pts: &[Vec<f64>]) -> Vec<Option<FiberReport>> {
    let d = fx.distribution();
    Exec::default()
        .map_range(pts.len(), |i| match fiber_dims(&d, &pts[i], DEFAULT_JET_ORDER) {
            Ok(r) => Some(r),
            Err(Error::JetUnstable { .. }) => None,
            Err(e) => panic!("{} at {:?}: {e}", fx.label, pts[i]),
        })
}

#[test]
fn fiber_reports_are_exact_and_semicontinuous() {
    for (fx, axes) in slices() {
        let (pts, na, nb) = slice(&fx, axes);
        let reps = reports(&fx, &pts);
        let n = fx.presentation.dim();
        let mut continuity = 0;
        let mut stable = 0;
        for r in reps.iter().flatten() {
            stable += 1;
            assert_eq!(r.dim_fiber, r.dim_dx + r.dim_kernel, "{} at {:?}", fx.label, r.point);
            assert!(r.dim_dx <= n.min(r.dim_fiber));
            if r.dim_kernel == 0 {
                continuity += 1;
            }
        }
        assert!(continuity as f64 >= 0.95 * pts.len() as f64, "{}: continuity set {continuity}/{}", fx.label, pts.len());
        // from a singular point, dim D_x never drops and dim 𝒟_x never rises among neighbours
        let idx = |a: usize, b: usize| a * nb + b;
        for a in 0..na {
            for b in 0..nb {
                let Some(r) = &reps[idx(a, b)] else { continue };
                if r.dim_kernel == 0 {
                    continue;
                }
                let nbrs = [(a.wrapping_sub(1), b), (a + 1, b), (a, b.wrapping_sub(1)), (a, b + 1)];
                for (c, d) in nbrs {
                    if c >= na || d >= nb {
                        continue;
                    }
                    let Some(s) = &reps[idx(c, d)] else { continue };
                    assert!(s.dim_dx >= r.dim_dx, "{}: rank drops from {:?} to {:?}", fx.label, r.point, s.point);
                    assert!(s.dim_fiber <= r.dim_fiber, "{}: fiber rises from {:?} to {:?}", fx.label, r.point, s.point);
                }
            }
        }
        assert!(stable as f64 >= 0.95 * pts.len() as f64, "{}: {stable} stable reports", fx.label);
    }
}

#[test]
fn transition_to_minimal_presentation_has_full_rank() {
    let cases: Vec<(Fixture, Vec<f64>)> = vec![
        (common::gl2(), vec![0.3, -0.2]),
        (common::gl2(), vec![0.0, 0.0]),
        (common::grushin(), vec![0.0, 0.5]),
        (common::grushin(), vec![0.4, 0.5]),
        (common::heisenberg(), vec![0.1, 0.2, 0.3]),
        (common::martinet(), vec![0.5, -0.5, 0.0]),
        (common::exs_distr_i(), vec![0.2, 0.1, 0.3, 0.0]),
    ];
    for (fx, p) in cases {
        let d = fx.distribution();
        let fiber = fiber_dims(&d, &p, DEFAULT_JET_ORDER).unwrap();
        let m = minimal_presentation(&d, &p).unwrap();
        assert_eq!(m.rank(), fiber.dim_fiber, "{} at {p:?}", fx.label);
        let src = fx.presentation.restricted(m.base_region()).unwrap();
        let t = transition_matrix(&src, &m).unwrap();
        for q in m.base_region().sample_points(16, 7) {
            let tq = linalg::eval_matrix(&t, &q).unwrap();
            let dq = fiber_dims(&d, &q, DEFAULT_JET_ORDER).unwrap();
            assert!(linalg::rank(&tq) >= dq.dim_fiber, "{} at {q:?}", fx.label);
            assert!(linalg::rank(&tq) >= evaluate_rank(&d, &q).unwrap());
        }
    }
}
