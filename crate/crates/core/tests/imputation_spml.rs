//! Imputation engines, Rubin's rules and the semiparametric likelihood.

use proptest::prelude::*;
use rand::Rng;
use twophase::designs::{draw_sample, gen_cohort, Cohort, Scenario, TwoPhaseSample};
use twophase::glm::{fit_glm, DesignMatrix, Family};
use twophase::imputation::{impute, rubin_combine, wild_multiplier, Engine, ImputationScope};
use twophase::model::ImputationModel;
use twophase::rng::StreamId;
use twophase::spml::{spml_twophase, SpmlFit, SpmlOptions};

fn surrogate_data(seed: u64, n: usize, delta0: f64) -> (Cohort, TwoPhaseSample) {
    let mut s = Scenario::surrogate_additive(1.0, delta0);
    s.cohort_size = n;
    s.intermediate_rate = 0.2;
    let id = StreamId::root(seed);
    let cohort = gen_cohort(&s, &mut id.child("cohort", 0).rng()).unwrap();
    let sample = draw_sample(&s, &cohort, &mut id.child("sample", 0).rng()).unwrap();
    (cohort, sample)
}

#[test]
fn rubin_hand_example() {
    let est = vec![
        (vec![1.0, 10.0], vec![0.1, 1.0]),
        (vec![2.0, 10.0], vec![0.2, 1.0]),
        (vec![3.0, 10.0], vec![0.3, 1.0]),
    ];
    let mi = rubin_combine(&est).unwrap();
    assert_eq!(mi.m, 3);
    assert!((mi.theta_bar[0] - 2.0).abs() < 1e-15);
    assert!((mi.within[0] - 0.2).abs() < 1e-15);
    assert!((mi.between[0] - 1.0).abs() < 1e-15);
    assert!((mi.total[0] - (0.2 + 4.0 / 3.0)).abs() < 1e-14);
    assert_eq!(mi.between[1], 0.0);
    assert_eq!(mi.total[1], 1.0);
    assert!(rubin_combine(&[]).is_err());
    assert!(rubin_combine(&[(vec![1.0], vec![1.0]), (vec![1.0, 2.0], vec![1.0, 1.0])]).is_err());
}

proptest! {
    #[test]
    fn rubin_is_permutation_invariant(
        pairs in prop::collection::vec((-10.0..10.0f64, 0.0..5.0f64), 2..30),
        seed in any::<u64>(),
    ) {
        let est: Vec<(Vec<f64>, Vec<f64>)> = pairs.iter().map(|(t, v)| (vec![*t], vec![*v])).collect();
        let mut shuffled = est.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut StreamId::root(seed).rng());
        let a = rubin_combine(&est).unwrap();
        let b = rubin_combine(&shuffled).unwrap();
        prop_assert!((a.theta_bar[0] - b.theta_bar[0]).abs() < 1e-12);
        prop_assert!((a.total[0] - b.total[0]).abs() < 1e-10 * (1.0 + a.total[0]));
        // between variance is the sample variance of the estimates
        let m = est.len() as f64;
        let mean = pairs.iter().map(|p| p.0).sum::<f64>() / m;
        let var = pairs.iter().map(|p| (p.0 - mean).powi(2)).sum::<f64>() / (m - 1.0);
        prop_assert!((a.between[0] - var).abs() < 1e-9 * (1.0 + var));
    }
}

#[test]
fn wild_multiplier_has_unit_moments() {
    let mut rng = StreamId::root(11).rng();
    let n = 400_000;
    let draws: Vec<f64> = (0..n).map(|_| wild_multiplier(&mut rng)).collect();
    let s5 = 5f64.sqrt();
    assert!(draws
        .iter()
        .all(|v| (v - (1.0 + s5) / 2.0).abs() < 1e-15 || (v - (1.0 - s5) / 2.0).abs() < 1e-15));
    let m1 = draws.iter().sum::<f64>() / n as f64;
    let m2 = draws.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let m3 = draws.iter().map(|v| v * v * v).sum::<f64>() / n as f64;
    // standard errors are about 0.0016, 0.0016 and 0.004
    assert!(m1.abs() < 0.01, "{m1}");
    assert!((m2 - 1.0).abs() < 0.01, "{m2}");
    assert!((m3 - 1.0).abs() < 0.03, "{m3}");
}

fn check_scope(cohort: &Cohort, sample: &TwoPhaseSample, engine: Engine, model: Option<&ImputationModel>) {
    let draw = |scope| impute(engine, cohort, sample, model, scope, 0, &mut StreamId::root(1).rng()).unwrap();
    let keep = draw(ImputationScope::Unsampled);
    let all = draw(ImputationScope::All);
    assert_eq!(all, draw(ImputationScope::All), "{}", engine.name());
    let mut changed = 0;
    for i in 0..cohort.len() {
        assert!(keep.x_star[i].is_finite() && all.x_star[i].is_finite());
        if sample.r[i] {
            assert_eq!(keep.x_star[i], cohort.x[i]);
            if all.x_star[i] != cohort.x[i] {
                changed += 1;
            }
        }
    }
    assert!(changed > sample.s2_size() / 2, "{}", engine.name());
}

#[test]
fn scope_controls_which_units_are_imputed() {
    let (cohort, sample) = surrogate_data(3, 2000, 0.0);
    let model = ImputationModel::outcome_and_surrogate(&cohort).unwrap();
    check_scope(&cohort, &sample, Engine::WildBootstrap, Some(&model));
    check_scope(&cohort, &sample, Engine::Bayesian, Some(&model));
    assert!(impute(Engine::Bayesian, &cohort, &sample, None, ImputationScope::All, 0, &mut StreamId::root(1).rng()).is_err());

    let s = Scenario::case_control(1.0, 0.0);
    let id = StreamId::root(4);
    let cc = gen_cohort(&s, &mut id.child("cohort", 0).rng()).unwrap();
    let cs = draw_sample(&s, &cc, &mut id.child("sample", 0).rng()).unwrap();
    check_scope(&cc, &cs, Engine::ParametricNormal, None);
    check_scope(&cc, &cs, Engine::Empirical, None);
}

/// Pooled over draws, regressing imputed X on (1, Y, Z) over the unsampled
/// units recovers the phase-two regression.
#[test]
fn linear_engines_reproduce_the_imputation_regression() {
    let (cohort, sample) = surrogate_data(5, 5000, 0.0);
    let model = ImputationModel::outcome_and_surrogate(&cohort).unwrap();
    let rows = sample.sampled_indices();
    let target = model.fit(&rows, &cohort.x).unwrap();
    let unsampled = sample.unsampled_indices();
    let design = model.design.select_rows(&unsampled).unwrap();
    for engine in [Engine::WildBootstrap, Engine::Bayesian] {
        let mut mean = [0.0; 3];
        let draws = 40;
        for m in 0..draws {
            let d = impute(engine, &cohort, &sample, Some(&model), ImputationScope::Unsampled, m, &mut StreamId::root(9).child("m", m as u64).rng()).unwrap();
            let xs: Vec<f64> = unsampled.iter().map(|i| d.x_star[*i]).collect();
            let fit = fit_glm(Family::Linear, &design, &xs, &vec![1.0; xs.len()]).unwrap();
            for j in 0..3 {
                mean[j] += fit.coefficients()[j] / draws as f64;
            }
        }
        for j in 0..3 {
            let se = target.model_std_errors()[j];
            assert!((mean[j] - target.coefficients()[j]).abs() < 0.5 * se + 0.01, "{} {j}", engine.name());
        }
    }
}

/// Observed-data log-likelihood of a profile fit, computed directly.
fn loglik(y: &[f64], x: &[f64], r: &[bool], strata: &[u32], alpha: f64, beta: f64, s2: f64, fit: &SpmlFit, q: &[Vec<f64>]) -> f64 {
    let dens = |v: f64, mean: f64| (-(v - mean).powi(2) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2).sqrt();
    let mut total = 0.0;
    for i in 0..y.len() {
        let k = fit.support.iter().position(|s| s.stratum == strata[i]).unwrap();
        let sup = &fit.support[k];
        if r[i] {
            let j = sup.points.iter().position(|p| *p == x[i]).unwrap();
            total += dens(y[i], alpha + beta * x[i]).ln() + q[k][j].ln();
        } else {
            let mix: f64 = sup.points.iter().zip(&q[k]).map(|(p, w)| w * dens(y[i], alpha + beta * p)).sum();
            total += mix.ln();
        }
    }
    total
}

fn spml_instance(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<bool>, Vec<u32>) {
    let mut rng = StreamId::root(seed).child("spml", 0).rng();
    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut r = Vec::new();
    let mut s = Vec::new();
    for _ in 0..n {
        let xi: f64 = rng.sample(rand_distr::StandardNormal);
        let zi = xi + rng.sample::<f64, _>(rand_distr::StandardNormal);
        let stratum = u32::from(zi.abs() > 1.5);
        y.push(0.5 + xi + rng.sample::<f64, _>(rand_distr::StandardNormal));
        x.push(xi);
        r.push(stratum == 1 || rng.gen::<f64>() < 0.3);
        s.push(stratum);
    }
    (y, x, r, s)
}

#[test]
fn spml_is_a_local_maximum_of_an_independent_likelihood() {
    let (y, x, r, s) = spml_instance(21, 400);
    let fit = spml_twophase(&y, &x, &r, &s, &SpmlOptions::default()).unwrap();
    let q: Vec<Vec<f64>> = fit.support.iter().map(|s| s.q.clone()).collect();
    let (a, b, s2) = (fit.theta[0], fit.theta[1], fit.sigma2);
    let base = loglik(&y, &x, &r, &s, a, b, s2, &fit, &q);
    assert!((base - fit.loglik).abs() < 1e-8 * base.abs(), "{base} {}", fit.loglik);
    let mut rng = StreamId::root(22).rng();
    let tol = 1e-6 * (1.0 + base.abs());
    for _ in 0..200 {
        let eps = 10f64.powf(rng.gen_range(-4.0..-1.0));
        let mut qp = q.clone();
        for block in qp.iter_mut() {
            for v in block.iter_mut() {
                *v *= (eps * rng.gen_range(-1.0..1.0f64)).exp();
            }
            let t: f64 = block.iter().sum();
            block.iter_mut().for_each(|v| *v /= t);
        }
        let ap = a + eps * rng.gen_range(-1.0..1.0);
        let bp = b + eps * rng.gen_range(-1.0..1.0);
        let sp = s2 * (eps * rng.gen_range(-1.0..1.0f64)).exp();
        let l = loglik(&y, &x, &r, &s, ap, bp, sp, &fit, &qp);
        assert!(l <= base + tol, "perturbation of size {eps} raised the likelihood by {}", l - base);
    }
}

#[test]
fn em_is_monotone_with_and_without_acceleration() {
    let plain = SpmlOptions {
        accelerate: false,
        max_iter: 5000,
        ..SpmlOptions::default()
    };
    for seed in 0..100 {
        let (y, x, r, s) = spml_instance(1000 + seed, 150);
        for opts in [SpmlOptions::default(), plain] {
            let fit = spml_twophase(&y, &x, &r, &s, &opts).unwrap();
            for w in fit.loglik_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-10 * (1.0 + w[0].abs()), "seed {seed}");
            }
        }
    }
}

#[test]
fn spml_on_a_census_is_least_squares() {
    let (y, x, _, s) = spml_instance(5, 300);
    let r = vec![true; y.len()];
    let fit = spml_twophase(&y, &x, &r, &s, &SpmlOptions::default()).unwrap();
    let d = DesignMatrix::from_columns(true, &[("x", &x)]).unwrap();
    let ols = fit_glm(Family::Linear, &d, &y, &vec![1.0; y.len()]).unwrap();
    assert!((fit.theta[0] - ols.coefficients()[0]).abs() < 1e-8);
    assert!((fit.theta[1] - ols.coefficients()[1]).abs() < 1e-8);
    let rss: f64 = ols.residuals(&y).iter().map(|e| e * e).sum();
    assert!((fit.sigma2 - rss / y.len() as f64).abs() < 1e-8);
}

#[test]
fn spml_rejects_strata_without_phase_two_units() {
    let y = [0.1, 0.2, 0.3, 0.4];
    let x = [1.0, 2.0, 3.0, 4.0];
    let r = [true, true, false, false];
    let s = [0, 0, 1, 1];
    assert!(spml_twophase(&y, &x, &r, &s, &SpmlOptions::default()).is_err());
}
