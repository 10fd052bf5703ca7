use fgam::basis::{difference_matrix, quadrature_weights, SplineBasis, TensorBasis, WorkingGrid};
use fgam::reparam::{build_penalties, ReparamBasis};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Textbook Cox-de Boor recursion with the right end of the domain closed.
fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64) -> f64 {
    if p == 0 {
        let last = knots[knots.len() - 1];
        let inside = knots[i] <= x && x < knots[i + 1];
        let at_end = x == last && knots[i + 1] == last && knots[i] < last;
        return if inside || at_end { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = knots[i + p] - knots[i];
    if d1 > 0.0 {
        v += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x);
    }
    let d2 = knots[i + p + 1] - knots[i + 1];
    if d2 > 0.0 {
        v += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x);
    }
    v
}

#[test]
fn basis_matches_cox_de_boor() {
    let b = SplineBasis::uniform(-2.0, 3.0, 10, 3).unwrap();
    let pts: Vec<f64> = (0..=97).map(|i| -2.0 + 5.0 * i as f64 / 97.0).collect();
    let m = b.eval(&pts).unwrap();
    for (r, &x) in pts.iter().enumerate() {
        for k in 0..b.num_basis() {
            let want = cox_de_boor(b.knots(), k, 3, x);
            assert!((m[(r, k)] - want).abs() < 1e-12, "x = {x}, k = {k}");
        }
    }
}

#[test]
fn derivatives_match_finite_differences() {
    let b = SplineBasis::uniform(0.0, 1.0, 10, 3).unwrap();
    let h = 1e-6;
    let pts: Vec<f64> = (1..40).map(|i| 0.013 + i as f64 / 41.0).collect();
    let d1 = b.deriv(&pts, 1).unwrap();
    let d2 = b.deriv(&pts, 2).unwrap();
    let up: Vec<f64> = pts.iter().map(|x| x + h).collect();
    let dn: Vec<f64> = pts.iter().map(|x| x - h).collect();
    let fd1 = (b.eval(&up).unwrap() - b.eval(&dn).unwrap()) / (2.0 * h);
    let fd2 = (b.deriv(&up, 1).unwrap() - b.deriv(&dn, 1).unwrap()) / (2.0 * h);
    assert!((d1 - fd1).amax() < 1e-6);
    assert!((d2 - fd2).amax() < 1e-4);
}

#[test]
fn difference_penalty_annihilates_low_order_polynomials() {
    for d in 1..=3 {
        let p = difference_matrix(10, d).unwrap();
        for deg in 0..d {
            let v = DVector::from_fn(10, |j, _| (j as f64).powi(deg as i32));
            assert!((&p.matrix * &v).amax() < 1e-9, "d = {d}, degree {deg}");
        }
        let v = DVector::from_fn(10, |j, _| (j as f64).powi(d as i32));
        assert!((&p.matrix * &v).amax() > 0.5);
    }
    assert!(difference_matrix(5, 5).is_err());
}

#[test]
fn trapezoid_is_exact_for_linear_functions() {
    let t = [0.0, 0.3, 0.35, 1.0, 2.5];
    let w = quadrature_weights(&t).unwrap();
    let integral: f64 = w.iter().zip(&t).map(|(w, x)| w * (3.0 * x - 1.0)).sum();
    assert!((integral - (1.5 * 2.5 * 2.5 - 2.5)).abs() < 1e-12);
    assert!(quadrature_weights(&[0.0, 0.0, 1.0]).is_err());
}

#[test]
fn tensor_design_row_is_integrated_kronecker_product() {
    let grid = WorkingGrid::uniform(0.0, 1.0, 50).unwrap();
    let bx = SplineBasis::uniform(-3.0, 3.0, 10, 3).unwrap();
    let bt = SplineBasis::uniform(0.0, 1.0, 10, 3).unwrap();
    let tb = TensorBasis::new(bx.clone(), bt.clone(), grid.clone()).unwrap();
    let x: Vec<f64> = grid.points().iter().map(|t| 2.0 * (6.0 * t).sin()).collect();
    let mut row = vec![0.0; tb.dim()];
    tb.design_row(&x, &mut row).unwrap();
    let ex = bx.eval(&x).unwrap();
    let et = bt.eval(grid.points()).unwrap();
    for j in 0..10 {
        for k in 0..10 {
            let f: Vec<f64> = (0..50).map(|g| ex[(g, j)] * et[(g, k)]).collect();
            assert!((row[j * 10 + k] - grid.integrate(&f)).abs() < 1e-13);
        }
    }
}

fn reparam() -> (ReparamBasis, fgam::reparam::PenaltyPair) {
    let dx = difference_matrix(10, 2).unwrap();
    let dt = difference_matrix(10, 2).unwrap();
    let r = ReparamBasis::from_penalties(&dx, &dt).unwrap();
    (r, build_penalties(&dx.gram, &dt.gram))
}

#[test]
fn psi_components_sum_to_identity() {
    let (r, _) = reparam();
    assert_eq!(r.null_dim(), 4);
    assert_eq!(r.pen_dim(), 96);
    let s = &r.psi_x + &r.psi_t;
    assert!(s.iter().all(|v| (v - 1.0).abs() <= 1e-12));
}

#[test]
fn nullspace_columns_are_unpenalized() {
    let (r, pen) = reparam();
    let p = pen.combined(3.0, 0.2);
    assert!((&p * &r.t0).amax() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_of_unity(x in -5.0f64..5.0, k in 4usize..15, deg in 1usize..4) {
        let b = SplineBasis::uniform(-5.0, 5.0, k.max(deg + 1), deg).unwrap();
        let row = b.eval(&[x]).unwrap();
        prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        prop_assert!(row.iter().all(|v| *v >= -1e-15));
    }

    #[test]
    fn congruence_identity(lx in 1e-3f64..1e3, lt in 1e-3f64..1e3) {
        let (r, pen) = reparam();
        // Tpᵀ P Tp = diag(λxΨx + λtΨt) and T0ᵀ P T0 = 0
        let p = pen.combined(lx, lt);
        let lhs = r.tp.transpose() * &p * &r.tp;
        let rhs = DMatrix::from_diagonal(&r.penalty_diag(lx, lt));
        let scale = rhs.amax().max(1.0);
        prop_assert!((lhs - rhs).amax() / scale <= 1e-10);
        prop_assert!(r.congruence_error(&pen, lx, lt) <= 1e-10);
    }

    #[test]
    fn theta_round_trip(seed in any::<u64>()) {
        let (r, _) = reparam();
        let mut s = seed | 1;
        let theta = DVector::from_fn(100, |_, _| {
            s ^= s << 13; s ^= s >> 7; s ^= s << 17;
            (s % 20001) as f64 / 10000.0 - 1.0
        });
        let (beta, delta) = r.coordinates(&theta).unwrap();
        let back = r.reconstruct_theta(&beta, &delta).unwrap();
        prop_assert!((back - &theta).amax() <= 1e-10);
    }
}
