//! Checks against oracles that share no code with the library.

use num_rational::Rational64;
use proptest::prelude::*;

use stencilnet::constraints::{build_constraint_system, face_constraint_system};
use stencilnet::grid::{make_grid, GridField};
use stencilnet::schemes::{
    baseline_solve, max_order_face_coefficients, max_order_fdm_coefficients, ssprk3_step, STENCIL_OFFSETS,
};
use stencilnet::equations::PdeSpec;

type Q = Rational64;

fn q(n: i64) -> Q {
    Q::from_integer(n)
}

fn factorial(m: i64) -> i64 {
    (1..=m).product()
}

/// Gauss-Jordan elimination over the rationals.
fn solve_exact(mut a: Vec<Vec<Q>>, mut b: Vec<Q>) -> Vec<Q> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).find(|&r| a[r][col] != q(0)).expect("nonsingular");
        a.swap(col, pivot);
        b.swap(col, pivot);
        let p = a[col][col];
        for j in 0..n {
            a[col][j] /= p;
        }
        b[col] /= p;
        for r in 0..n {
            if r != col && a[r][col] != q(0) {
                let f = a[r][col];
                for j in 0..n {
                    let t = a[col][j];
                    a[r][j] -= f * t;
                }
                let t = b[col];
                b[r] -= f * t;
            }
        }
    }
    b
}

fn to_f64(x: Q) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

/// Taylor-moment system `sum_k c_k k^m / m! = delta_{m,d}`.
fn exact_fdm(d: usize, offsets: &[i64]) -> Vec<Q> {
    let w = offsets.len();
    let a = (0..w)
        .map(|m| offsets.iter().map(|&k| Q::new(k.pow(m as u32), factorial(m as i64))).collect())
        .collect();
    let b = (0..w).map(|m| if m == d { q(1) } else { q(0) }).collect();
    solve_exact(a, b)
}

/// Cell-average reconstruction at `x = 1/2` (cell 0 is `[-1/2, 1/2]`): the
/// averages of `x^m` over cell k must reproduce `(1/2)^m`.
fn exact_face(offsets: &[i64]) -> Vec<Q> {
    let w = offsets.len();
    let avg = |k: i64, m: u32| {
        // integral of x^m over [k - 1/2, k + 1/2]
        let hi = Q::new(2 * k + 1, 2);
        let lo = Q::new(2 * k - 1, 2);
        let p = |x: Q| (0..=m).fold(q(1), |acc, _| acc * x) / q(m as i64 + 1);
        p(hi) - p(lo)
    };
    let a = (0..w as u32).map(|m| offsets.iter().map(|&k| avg(k, m)).collect()).collect();
    let b = (0..w as u32).map(|m| (0..m).fold(q(1), |acc, _| acc * Q::new(1, 2))).collect();
    solve_exact(a, b)
}

#[test]
fn fdm_weights_match_exact_rational_solution() {
    for (d, offsets) in [
        (1, vec![-1, 0, 1]),
        (1, vec![-2, -1, 0, 1, 2]),
        (2, vec![-2, -1, 0, 1, 2]),
        (4, vec![-2, -1, 0, 1, 2]),
        (4, vec![-3, -2, -1, 0, 1, 2, 3]),
        (1, vec![0, 1, 2]),
    ] {
        let exact = exact_fdm(d, &offsets);
        let off: Vec<isize> = offsets.iter().map(|&k| k as isize).collect();
        let ours = max_order_fdm_coefficients(d, &off).unwrap();
        for (x, e) in ours.weights.iter().zip(&exact) {
            assert!((x - to_f64(*e)).abs() <= 1e-12, "d={d} {offsets:?}: {x} vs {e}");
        }
    }
    assert_eq!(exact_fdm(1, &[-2, -1, 0, 1, 2]), vec![Q::new(1, 12), Q::new(-2, 3), q(0), Q::new(2, 3), Q::new(-1, 12)]);
}

#[test]
fn face_weights_match_exact_rational_solution() {
    let exact = exact_face(&[-2, -1, 0, 1, 2]);
    assert_eq!(exact, [2, -13, 47, 27, -3].map(|n| Q::new(n, 60)).to_vec());
    let ours = max_order_face_coefficients(&STENCIL_OFFSETS).unwrap();
    for (x, e) in ours.weights.iter().zip(&exact) {
        assert!((x - to_f64(*e)).abs() <= 1e-14);
    }
}

#[test]
fn max_order_weights_satisfy_every_constraint_order() {
    let c_opt = max_order_face_coefficients(&STENCIL_OFFSETS).unwrap().weights;
    for n in 1..=5 {
        let oc = face_constraint_system(n, &STENCIL_OFFSETS).unwrap();
        assert!(oc.residual(&c_opt) <= 1e-14);
        // the projection leaves a feasible point in place
        for (a, b) in oc.project(&c_opt).iter().zip(&c_opt) {
            assert!((a - b).abs() <= 1e-14);
        }
    }
}

#[test]
fn ssprk3_is_the_cubic_taylor_polynomial_for_linear_problems() {
    for z in [-2.5, -1.0, -0.1, 0.3] {
        let rhs = |u: &[f64]| vec![z * u[0]];
        let u = ssprk3_step(&rhs, &[1.0], 1.0)[0];
        assert!((u - (1.0 + z + z * z / 2.0 + z * z * z / 6.0)).abs() <= 1e-15);
    }
}

/// `u(x, t)` for Burgers with `u0(x) = m + a sin(2 pi x)` before the shock,
/// from the implicit characteristic relation `u = u0(x - u t)`.
fn burgers_characteristic(x: f64, t: f64, m: f64, a: f64) -> f64 {
    let u0 = |y: f64| m + a * (2.0 * std::f64::consts::PI * y).sin();
    let du0 = |y: f64| 2.0 * std::f64::consts::PI * a * (2.0 * std::f64::consts::PI * y).cos();
    let mut u = u0(x);
    for _ in 0..100 {
        let g = u - u0(x - u * t);
        let dg = 1.0 + t * du0(x - u * t);
        let step = g / dg;
        u -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    u
}

fn gauss_average(f: impl Fn(f64) -> f64, x0: f64, x1: f64) -> f64 {
    // 5-point Gauss-Legendre
    const X: [f64; 5] = [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
    const W: [f64; 5] = [0.568_888_888_888_888_9, 0.478_628_670_499_366_5, 0.478_628_670_499_366_5, 0.236_926_885_056_189_1, 0.236_926_885_056_189_1];
    let (c, h) = ((x0 + x1) / 2.0, (x1 - x0) / 2.0);
    X.iter().zip(W).map(|(x, w)| w * f(c + h * x)).sum::<f64>() / 2.0
}

#[test]
fn burgers_baseline_follows_characteristics_before_the_shock() {
    let (m, a) = (0.4, 0.1);
    // shock forms at t = 1 / (2 pi a) ~ 1.59
    let t_end = 0.5;
    let mut errs = Vec::new();
    for n in [100, 200] {
        let g = make_grid(1.0, n).unwrap();
        let avg = |t: f64| GridField::from_fn(g, |i| gauss_average(|x| burgers_characteristic(x, t, m, a), g.node(i), g.node(i) + g.dx()));
        let dt = 0.2 * g.dx();
        let steps = (t_end / dt).round() as usize;
        let traj = baseline_solve(&PdeSpec::burgers(), &avg(0.0), t_end / steps as f64, steps).unwrap();
        let exact = avg(t_end);
        let err = traj.last().iter().zip(&exact.values).map(|(u, e)| (u - e).abs()).fold(0.0, f64::max);
        errs.push(err);
    }
    assert!(errs[0] < 1e-6, "{errs:?}");
    // high order: halving dx cuts the error by far more than 2^3
    assert!(errs[0] / errs[1] > 16.0, "{errs:?}");
}

proptest! {
    #[test]
    fn projection_is_an_idempotent_orthogonal_map(c in proptest::collection::vec(-10.0f64..10.0, 5), d in prop::sample::select(vec![1usize, 2, 4])) {
        let oc = build_constraint_system(d, 1, &STENCIL_OFFSETS).unwrap();
        let p = oc.project(&c);
        let pp = oc.project(&p);
        for (x, y) in p.iter().zip(&pp) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
        // the correction is orthogonal to the constraint's null space
        let corr: Vec<f64> = p.iter().zip(&c).map(|(a, b)| a - b).collect();
        let probe: Vec<f64> = c.iter().map(|x| x * 0.37 + 1.0).collect();
        let v = oc.project(&probe);
        let null_dir: Vec<f64> = v.iter().zip(&p).map(|(a, b)| a - b).collect();
        let dot: f64 = corr.iter().zip(&null_dir).map(|(a, b)| a * b).sum();
        prop_assert!(dot.abs() <= 1e-8 * (1.0 + corr.iter().map(|x| x.abs()).sum::<f64>() * null_dir.iter().map(|x| x.abs()).sum::<f64>()));
    }
}
