//! Pseudo-true parameters of the working model under each simulation scenario.

use nalgebra::{DMatrix, Matrix2, Vector2};
use statrs::distribution::{ContinuousCDF, Gamma as GammaDist, Normal};

use crate::designs::{InteractionRegion, Scenario, ScenarioKind};
use crate::error::{Error, Result};
use crate::glm::expit;

/// Gauss–Hermite rule for `∫ f(t) e^{-t²} dt` by the Golub–Welsch method.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    let eig = j.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Nodes and weights for `E[f(X)]`, `X ~ N(0, 1)`.
pub fn standard_normal_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (t, w) = gauss_hermite(n);
    let s = std::f64::consts::PI.sqrt();
    (
        t.iter().map(|v| v * std::f64::consts::SQRT_2).collect(),
        w.iter().map(|v| v / s).collect(),
    )
}

/// Limit `(α*, β*)` of the full-cohort working-model fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoTrue {
    pub alpha: f64,
    pub beta: f64,
}

/// Composite Simpson rule for `E[f(X)]`, `X ~ N(0, 1)`, on `[-12, 12]` with
/// panels split at `knot` so a kink there costs no accuracy.
pub fn split_normal_rule(knot: f64, steps_per_side: usize) -> (Vec<f64>, Vec<f64>) {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    let knot = knot.clamp(-11.0, 11.0);
    let steps = steps_per_side + steps_per_side % 2;
    let mut x = Vec::new();
    let mut w = Vec::new();
    for (a, b) in [(-12.0, knot), (knot, 12.0)] {
        let h = (b - a) / steps as f64;
        for k in 0..=steps {
            let t = a + k as f64 * h;
            let c = if k == 0 || k == steps {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            use statrs::distribution::Continuous;
            x.push(t);
            w.push(c * h / 3.0 * n.pdf(t));
        }
    }
    (x, w)
}

/// Solves the expected logistic score equations under the spline model.
fn casecontrol_pseudo_true(s: &Scenario) -> Result<PseudoTrue> {
    // Gauss–Hermite converges slowly across the spline kink, so integrate
    // each side of the knot separately
    let (x, w) = split_normal_rule(s.knot, 4000);
    let p_true: Vec<f64> = x.iter().map(|v| expit(s.true_predictor(*v, 0.0))).collect();
    let mut theta = Vector2::new(s.alpha0, s.beta0);
    for _ in 0..100 {
        let mut g = Vector2::zeros();
        let mut h = Matrix2::zeros();
        for k in 0..x.len() {
            let mu = expit(theta[0] + theta[1] * x[k]);
            let r = p_true[k] - mu;
            let v = mu * (1.0 - mu);
            let xv = Vector2::new(1.0, x[k]);
            g += xv * (w[k] * r);
            h += xv * xv.transpose() * (w[k] * v);
        }
        let step = h
            .try_inverse()
            .ok_or_else(|| Error::NonConvergence("singular expected information".into()))?
            * g;
        theta += step;
        if step.amax() < 1e-13 * (1.0 + theta.amax()) {
            return Ok(PseudoTrue {
                alpha: theta[0],
                beta: theta[1],
            });
        }
    }
    Err(Error::NonConvergence("pseudo-true Newton iteration did not converge".into()))
}

/// `P(unit with covariate x falls in the interaction region)`.
fn region_probability(s: &Scenario, x: f64) -> Result<f64> {
    let inner = match s.kind {
        ScenarioKind::SurrogateAdditive => {
            let n = Normal::new(0.0, 1.0).expect("standard normal");
            n.cdf(s.knot - x) - n.cdf(-s.knot - x)
        }
        ScenarioKind::SurrogateMultiplicative => {
            if x == 0.0 {
                1.0
            } else {
                let g = GammaDist::new(4.0, 4.0).map_err(|e| Error::InvalidInput(e.to_string()))?;
                g.cdf(s.knot / x.abs())
            }
        }
        _ => return Err(Error::InvalidInput("not a surrogate scenario".into())),
    };
    Ok(match s.interaction_region {
        InteractionRegion::Intermediate => inner,
        InteractionRegion::Extreme => 1.0 - inner,
    })
}

/// `E[X² 1{region}]` by quadrature over `X`.
pub fn interaction_moment(s: &Scenario) -> Result<f64> {
    // the multiplicative integrand has a kink at x = 0; a fine composite rule
    // on a truncated range handles it better than Gauss–Hermite
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    let steps = 40_000usize;
    let (a, b) = (-10.0, 10.0);
    let h = (b - a) / steps as f64;
    let f = |x: f64| -> Result<f64> {
        use statrs::distribution::Continuous;
        Ok(x * x * n.pdf(x) * region_probability(s, x)?)
    };
    let mut acc = f(a)? + f(b)?;
    for k in 1..steps {
        let x = a + k as f64 * h;
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(x)?;
    }
    Ok(acc * h / 3.0)
}

/// Pseudo-true `(α*, β*)` for a simulation scenario.
pub fn pseudo_true_oracle(s: &Scenario) -> Result<PseudoTrue> {
    s.validate()?;
    match s.kind {
        ScenarioKind::CaseControl => casecontrol_pseudo_true(s),
        ScenarioKind::SurrogateAdditive | ScenarioKind::SurrogateMultiplicative => {
            if s.delta0 == 0.0 {
                return Ok(PseudoTrue {
                    alpha: s.alpha0,
                    beta: s.beta0,
                });
            }
            // X is symmetric and the region depends on |Z|, so E[X 1{region}] = 0
            // and only the slope moves
            Ok(PseudoTrue {
                alpha: s.alpha0,
                beta: s.beta0 + s.delta0 * interaction_moment(s)?,
            })
        }
        ScenarioKind::Nwts => Err(Error::InvalidInput(
            "NWTS targets are full-cohort estimates, not an oracle".into(),
        )),
    }
}
