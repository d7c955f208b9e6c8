//! GLM fits checked against independent dense computations.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use twophase::glm::{fit_glm, influence_functions, sandwich_covariance, DesignMatrix, Family};
use twophase::Error;

/// Plain Newton–Raphson with step halving on the weighted logistic
/// log-likelihood, stopping at gradient norm 1e-12.
fn newton_logistic(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> DVector<f64> {
    let p = x.ncols();
    let loglik = |b: &DVector<f64>| -> f64 {
        (0..x.nrows())
            .map(|i| {
                let eta = (x.row(i) * b)[0];
                w[i] * (y[i] * eta - (1.0 + eta.exp()).ln())
            })
            .sum()
    };
    let mut b = DVector::zeros(p);
    for _ in 0..200 {
        let mut g = DVector::zeros(p);
        let mut h = DMatrix::zeros(p, p);
        for i in 0..x.nrows() {
            let xi = x.row(i).transpose();
            let mu = 1.0 / (1.0 + (-(xi.dot(&b))).exp());
            g += &xi * (w[i] * (y[i] - mu));
            h += &xi * xi.transpose() * (w[i] * mu * (1.0 - mu));
        }
        if g.norm() < 1e-12 {
            break;
        }
        let step = h.lu().solve(&g).unwrap();
        let mut t = 1.0;
        let base = loglik(&b);
        while loglik(&(&b + &step * t)) < base && t > 1e-8 {
            t *= 0.5;
        }
        b += step * t;
    }
    b
}

fn design(rows: &[[f64; 2]]) -> DesignMatrix {
    let m = DMatrix::from_fn(rows.len(), 3, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
    DesignMatrix::new(m, vec!["(Intercept)".into(), "a".into(), "b".into()]).unwrap()
}

#[test]
fn logistic_matches_newton_oracle_on_eight_points() {
    let rows = [
        [0.3, 1.0],
        [-1.2, 0.0],
        [0.8, 1.0],
        [2.1, 0.0],
        [-0.4, 1.0],
        [1.5, 1.0],
        [-2.0, 0.0],
        [0.1, 0.0],
    ];
    let y = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0];
    let w = [1.0, 2.0, 0.5, 1.0, 1.5, 1.0, 1.0, 3.0];
    let d = design(&rows);
    let fit = fit_glm(Family::Logistic, &d, &y, &w).unwrap();
    let oracle = newton_logistic(d.matrix(), &y, &w);
    for j in 0..3 {
        assert!((fit.coefficients()[j] - oracle[j]).abs() < 1e-8, "{j}");
    }
}

#[test]
fn trivial_fits() {
    let x = [0.0, 1.0, 2.0, 3.0];
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    let d = DesignMatrix::from_columns(true, &[("x", &x)]).unwrap();
    let fit = fit_glm(Family::Linear, &d, &y, &[1.0; 4]).unwrap();
    assert!(fit.coefficients()[0].abs() < 1e-12 && (fit.coefficients()[1] - 2.0).abs() < 1e-12);
    assert!(fit.residuals(&y).iter().all(|r| r.abs() < 1e-12));
    let c = DesignMatrix::constant(4).unwrap();
    let fit = fit_glm(Family::Logistic, &c, &[0.0, 1.0, 1.0, 0.0], &[1.0; 4]).unwrap();
    assert!(fit.coefficients()[0].abs() < 1e-12);
}

#[test]
fn invalid_inputs_are_rejected() {
    let x = [0.0, 1.0, 2.0];
    let d = DesignMatrix::from_columns(true, &[("x", &x)]).unwrap();
    assert!(matches!(
        fit_glm(Family::Logistic, &d, &[0.0, 2.0, 1.0], &[1.0; 3]),
        Err(Error::InvalidInput(_))
    ));
    assert!(matches!(
        fit_glm(Family::Linear, &d, &[0.0, f64::NAN, 1.0], &[1.0; 3]),
        Err(Error::InvalidInput(_))
    ));
    assert!(fit_glm(Family::Linear, &d, &[0.0, 1.0, 1.0], &[1.0, -1.0, 1.0]).is_err());
    let sep = fit_glm(Family::Logistic, &d, &[0.0, 1.0, 1.0], &[1.0; 3]);
    assert!(matches!(sep, Err(Error::NonConvergence(_))));
}

#[test]
fn influence_matches_closed_form_ols() {
    let n = 15;
    let a: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 / 3.0 - 1.5).collect();
    let b: Vec<f64> = (0..n).map(|i| ((i * 53) % 7) as f64 - 3.0).collect();
    let y: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * a[i] - 0.25 * b[i] + ((i * 17) % 5) as f64 * 0.1).collect();
    let d = DesignMatrix::from_columns(true, &[("a", &a), ("b", &b)]).unwrap();
    let fit = fit_glm(Family::Linear, &d, &y, &vec![1.0; n]).unwrap();
    let x = d.matrix();
    let xtx_inv = (x.transpose() * x).try_inverse().unwrap();
    let resid = fit.residuals(&y);
    let infl = influence_functions(&fit).unwrap();
    for i in 0..n {
        let direct = &xtx_inv * x.row(i).transpose() * (resid[i] * n as f64);
        for j in 0..3 {
            assert!((infl[(i, j)] - direct[j]).abs() < 1e-9);
        }
    }
    let total = infl.row_sum();
    assert!(total.amax() < 1e-8 * n as f64);
}

#[test]
fn influence_approximates_leave_one_out_refits() {
    let n = 20;
    let x: Vec<f64> = (0..n).map(|i| (i as f64 - 9.5) / 4.0).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| 0.5 + x[i] + (((i * 7919) % 13) as f64 - 6.0) / 10.0)
        .collect();
    let d = DesignMatrix::from_columns(true, &[("x", &x)]).unwrap();
    let fit = fit_glm(Family::Linear, &d, &y, &vec![1.0; n]).unwrap();
    let infl = influence_functions(&fit).unwrap();
    for i in 0..n {
        let keep: Vec<usize> = (0..n).filter(|k| *k != i).collect();
        let di = d.select_rows(&keep).unwrap();
        let yi: Vec<f64> = keep.iter().map(|k| y[*k]).collect();
        let loo = fit_glm(Family::Linear, &di, &yi, &vec![1.0; n - 1]).unwrap();
        for j in 0..2 {
            let diff = loo.coefficients()[j] - fit.coefficients()[j];
            let approx = -infl[(i, j)] / n as f64;
            // the error is O(N⁻²)
            assert!((diff - approx).abs() < 5.0 / (n * n) as f64, "{i} {j} {diff} {approx}");
        }
    }
}

fn dataset() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (10usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-3.0..3.0f64, n),
            prop::collection::vec(0.0..1.0f64, n),
            prop::collection::vec(0.2..3.0f64, n),
        )
    })
}

proptest! {
    #[test]
    fn stationarity_and_influence_identities((x, u, w) in dataset()) {
        let y: Vec<f64> = x.iter().zip(&u).map(|(a, b)| if *b < 1.0 / (1.0 + (-a).exp()) { 1.0 } else { 0.0 }).collect();
        prop_assume!(y.iter().any(|v| *v == 1.0) && y.iter().any(|v| *v == 0.0));
        let d = DesignMatrix::from_columns(true, &[("x", &x)]).unwrap();
        let fit = match fit_glm(Family::Logistic, &d, &y, &w) {
            Ok(f) => f,
            Err(Error::NonConvergence(_)) => return Ok(()),
            Err(e) => panic!("{e}"),
        };
        let wsum: f64 = w.iter().sum();
        let score = fit.weighted_score_total();
        prop_assert!(score.iter().all(|s| s.abs() <= 1e-8 * wsum));
        let infl = influence_functions(&fit).unwrap();
        for j in 0..2 {
            let t: f64 = (0..x.len()).map(|i| w[i] * infl[(i, j)]).sum();
            let scale: f64 = (0..x.len()).map(|i| (w[i] * infl[(i, j)]).abs()).sum();
            prop_assert!(t.abs() <= 1e-8 * scale, "{t} {scale}");
        }
        let cov = sandwich_covariance(&fit).unwrap();
        prop_assert!((cov[(0, 1)] - cov[(1, 0)]).abs() < 1e-12 * cov.amax());
        prop_assert!(cov[(0, 0)] > 0.0 && cov[(1, 1)] > 0.0);
    }

    #[test]
    fn linear_fit_is_affine_equivariant((x, u, w) in dataset(), scale in 0.1..10.0f64, shift in -5.0..5.0f64) {
        let y: Vec<f64> = x.iter().zip(&u).map(|(a, b)| 1.0 + 2.0 * a + b).collect();
        let d = DesignMatrix::from_columns(true, &[("x", &x)]).unwrap();
        let fit = fit_glm(Family::Linear, &d, &y, &w).unwrap();
        let xt: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
        let dt = DesignMatrix::from_columns(true, &[("x", &xt)]).unwrap();
        let ft = fit_glm(Family::Linear, &dt, &y, &w).unwrap();
        let (a, b) = (fit.coefficients()[0], fit.coefficients()[1]);
        let (at, bt) = (ft.coefficients()[0], ft.coefficients()[1]);
        prop_assert!((bt * scale - b).abs() < 1e-8 * (1.0 + b.abs()));
        prop_assert!((at + bt * shift - a).abs() < 1e-7 * (1.0 + a.abs()));
        // scaling every weight leaves the estimate unchanged
        let w2: Vec<f64> = w.iter().map(|v| v * 7.5).collect();
        let f2 = fit_glm(Family::Linear, &d, &y, &w2).unwrap();
        prop_assert!((f2.coefficients()[1] - b).abs() < 1e-10 * (1.0 + b.abs()));
    }
}
