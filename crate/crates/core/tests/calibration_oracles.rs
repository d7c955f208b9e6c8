//! Raking and weighted fits checked against independent computations.

use nalgebra::DMatrix;
use proptest::prelude::*;
use twophase::calibration::{ht_solve, rake_weights, raking_estimator, AuxiliaryMatrix};
use twophase::glm::{fit_glm, DesignMatrix, Family};

/// Solves `Σ_s exp(λ h_i) h_i / π_i = Σ_U h_i` for positive `h` by bisection.
fn bisect_single(h: &[f64], sampled: &[bool], pi: &[f64]) -> f64 {
    let target: f64 = h.iter().sum();
    let f = |lam: f64| -> f64 {
        (0..h.len())
            .filter(|i| sampled[*i])
            .map(|i| (lam * h[i]).exp() * h[i] / pi[i])
            .sum::<f64>()
            - target
    };
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn single_positive_auxiliary_matches_bisection() {
    let h = [0.5, 1.3, 2.2, 0.7, 1.9, 0.4, 3.1, 1.1];
    let sampled = [true, false, true, true, false, true, false, true];
    let pi = [0.5, 0.4, 0.6, 0.5, 0.3, 0.7, 0.2, 0.5];
    let aux = AuxiliaryMatrix::without_constant(DMatrix::from_column_slice(8, 1, &h)).unwrap();
    assert!(!aux.includes_constant());
    let cal = rake_weights(&aux, &sampled, &pi).unwrap();
    let lam = bisect_single(&h, &sampled, &pi);
    assert!((cal.lambda[0] - lam).abs() < 1e-9, "{} {lam}", cal.lambda[0]);
    for (k, &i) in cal.sampled_index.iter().enumerate() {
        assert!((cal.g[k] - (lam * h[i]).exp()).abs() < 1e-9);
    }
}

#[test]
fn constant_only_raking_is_ratio_adjustment_on_every_subset() {
    // every nonempty subset of a 5-unit population
    let pi = [0.3, 0.5, 0.8, 0.6, 0.4];
    let aux = AuxiliaryMatrix::with_constant(DMatrix::zeros(5, 0)).unwrap();
    for mask in 1u32..32 {
        let sampled: Vec<bool> = (0..5).map(|i| mask & (1 << i) != 0).collect();
        let cal = rake_weights(&aux, &sampled, &pi).unwrap();
        let n_ht: f64 = (0..5).filter(|i| sampled[*i]).map(|i| 1.0 / pi[i]).sum();
        for g in &cal.g {
            // the solver stops once constraints hold to 1e-8 relative
            assert!((g - 5.0 / n_ht).abs() < 1e-7);
        }
    }
}

#[test]
fn horvitz_thompson_total_is_exactly_unbiased() {
    // Poisson sampling: enumerate all 2^5 samples with their probabilities
    let pi = [0.3, 0.5, 0.8, 0.6, 0.4];
    let y = [1.5, -0.2, 3.0, 0.7, 2.2];
    let mut expectation = 0.0;
    let mut total_prob = 0.0;
    for mask in 0u32..32 {
        let inside = |i: usize| mask & (1 << i) != 0;
        let prob: f64 = (0..5).map(|i| if inside(i) { pi[i] } else { 1.0 - pi[i] }).product();
        let est: f64 = (0..5).filter(|i| inside(*i)).map(|i| y[i] / pi[i]).sum();
        expectation += prob * est;
        total_prob += prob;
    }
    assert!((total_prob - 1.0).abs() < 1e-12);
    assert!((expectation - y.iter().sum::<f64>()).abs() < 1e-12);
}

#[test]
fn ht_solve_uses_inverse_probability_weights() {
    let x = [0.1, 0.5, 1.0, 1.7, 2.4, 3.0];
    let y = [0.3, 1.2, 1.9, 3.6, 4.5, 6.4];
    let pi = [0.2, 0.5, 1.0, 0.25, 0.8, 0.4];
    let d = DesignMatrix::from_columns(true, &[("x", &x)]).unwrap();
    let ht = ht_solve(Family::Linear, &d, &y, &pi).unwrap();
    // weighted least squares by hand
    let w: Vec<f64> = pi.iter().map(|p| 1.0 / p).collect();
    let sw: f64 = w.iter().sum();
    let mx: f64 = (0..6).map(|i| w[i] * x[i]).sum::<f64>() / sw;
    let my: f64 = (0..6).map(|i| w[i] * y[i]).sum::<f64>() / sw;
    let sxy: f64 = (0..6).map(|i| w[i] * (x[i] - mx) * (y[i] - my)).sum();
    let sxx: f64 = (0..6).map(|i| w[i] * (x[i] - mx).powi(2)).sum();
    let slope = sxy / sxx;
    assert!((ht.coefficients()[1] - slope).abs() < 1e-10);
    assert!((ht.coefficients()[0] - (my - slope * mx)).abs() < 1e-10);
    assert!(ht_solve(Family::Linear, &d, &y, &[0.0, 0.5, 1.0, 0.25, 0.8, 0.4]).is_err());
}

#[test]
fn raking_on_the_outcome_reproduces_its_total() {
    let n = 40;
    let x: Vec<f64> = (0..n).map(|i| ((i * 29) % 17) as f64 / 4.0 - 2.0).collect();
    let z: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + ((i * 13) % 5) as f64 / 10.0).collect();
    let y: Vec<f64> = x.iter().map(|v| 1.0 + 0.8 * v).collect();
    let sampled: Vec<bool> = (0..n).map(|i| i % 3 != 0).collect();
    let pi = vec![2.0 / 3.0; n];
    // calibrating on the exact regression variable makes the estimate exact
    let aux = AuxiliaryMatrix::with_constant(DMatrix::from_column_slice(n, 1, &x)).unwrap();
    let rows: Vec<usize> = (0..n).filter(|i| sampled[*i]).collect();
    let xs: Vec<f64> = rows.iter().map(|i| x[*i]).collect();
    let ys: Vec<f64> = rows.iter().map(|i| y[*i]).collect();
    let d = DesignMatrix::from_columns(true, &[("x", &xs)]).unwrap();
    let (fit, cal) = raking_estimator(Family::Linear, &d, &ys, &sampled, &pi, &aux).unwrap();
    assert!((fit.coefficients()[1] - 0.8).abs() < 1e-10);
    assert!(cal.max_scaled_residual(&aux.totals()) <= 1e-8);
    // the surrogate calibration still hits its own totals
    let aux_z = AuxiliaryMatrix::with_constant(DMatrix::from_column_slice(n, 1, &z)).unwrap();
    let cal_z = rake_weights(&aux_z, &sampled, &pi).unwrap();
    let w = cal_z.sample_weights(&pi);
    let total: f64 = rows.iter().zip(&w).map(|(i, w)| w * z[*i]).sum();
    assert!((total - z.iter().sum::<f64>()).abs() < 1e-8 * (1.0 + z.iter().map(|v| v.abs()).sum::<f64>()));
    let full = fit_glm(Family::Linear, &d, &ys, &w).unwrap();
    assert!((full.coefficients()[1] - 0.8).abs() < 1e-10);
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>, Vec<f64>)> {
    (30usize..120).prop_flat_map(|n| {
        (
            prop::collection::vec(-2.0..2.0f64, n),
            prop::collection::vec(-2.0..2.0f64, n),
            prop::collection::vec(prop::bool::weighted(0.5), n),
            prop::collection::vec(0.3..1.0f64, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn raking_meets_every_constraint((a, b, sampled, pi) in instance()) {
        let n = a.len();
        let m = sampled.iter().filter(|s| **s).count();
        prop_assume!(m >= 12);
        let mut h = DMatrix::zeros(n, 2);
        for i in 0..n {
            h[(i, 0)] = a[i];
            h[(i, 1)] = b[i];
        }
        let aux = AuxiliaryMatrix::with_constant(h).unwrap();
        let cal = match rake_weights(&aux, &sampled, &pi) {
            Ok(c) => c,
            // totals outside the convex hull of the sample have no solution
            Err(e) => { prop_assert!(e.is_numerical()); return Ok(()); }
        };
        prop_assert!(cal.converged);
        prop_assert!(cal.g.iter().all(|g| *g > 0.0));
        let totals = aux.totals();
        prop_assert!(cal.max_scaled_residual(&totals) <= 1e-8);
        // recompute the residual directly from the weights
        let w = cal.sample_weights(&pi);
        for j in 0..3 {
            let t: f64 = cal.sampled_index.iter().zip(&w).map(|(i, w)| w * aux.matrix()[(*i, j)]).sum();
            prop_assert!((t - totals[j]).abs() <= 1e-7 * (1.0 + totals[j].abs()));
        }
    }

    #[test]
    fn calibrated_weights_ignore_probability_scale((a, _b, sampled, pi) in instance(), c in 0.5..1.0f64) {
        // with a constant column, rescaling every π by c leaves the weights g/π unchanged
        let n = a.len();
        prop_assume!(sampled.iter().filter(|s| **s).count() >= 8);
        let aux = AuxiliaryMatrix::with_constant(DMatrix::from_column_slice(n, 1, &a)).unwrap();
        let pi2: Vec<f64> = pi.iter().map(|p| p * c).collect();
        let (Ok(c1), Ok(c2)) = (rake_weights(&aux, &sampled, &pi), rake_weights(&aux, &sampled, &pi2)) else {
            return Ok(());
        };
        let w1 = c1.sample_weights(&pi);
        let w2 = c2.sample_weights(&pi2);
        for (x, y) in w1.iter().zip(&w2) {
            prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
        }
    }
}
