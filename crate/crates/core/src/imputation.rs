//! Imputation engines for the unsampled phase-two covariate and Rubin's rules.
//!
//! Every engine returns a completed covariate vector for the whole cohort;
//! sampled units keep their observed value bit for bit.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::designs::{Cohort, TwoPhaseSample};
use crate::error::{Error, Result};
use crate::glm::Family;
use crate::model::{ImputationModel, OutcomeModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    /// `X | Y ~ N(μ + ηY, σ²)` with parameters estimated from phase two.
    ParametricNormal,
    /// Draws from the empirical distribution of sampled controls.
    Empirical,
    /// Wild bootstrap of the imputation regression residuals.
    WildBootstrap,
    /// Posterior draw of the linear imputation model under a flat prior.
    Bayesian,
    /// Nonparametric bootstrap of a logistic imputation model.
    BootstrapBinary,
}

impl Engine {
    pub fn name(&self) -> &'static str {
        match self {
            Engine::ParametricNormal => "parametric-normal",
            Engine::Empirical => "empirical",
            Engine::WildBootstrap => "wild-bootstrap",
            Engine::Bayesian => "bayesian",
            Engine::BootstrapBinary => "bootstrap-binary",
        }
    }
}

/// Which units receive imputed values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputationScope {
    /// Sampled units keep their observed covariate.
    Unsampled,
    /// Every cohort unit is resampled from the imputation model.
    All,
}

/// One completed covariate vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationDraw {
    pub x_star: Vec<f64>,
    pub engine: Engine,
    pub m: usize,
}

fn check(cohort: &Cohort, sample: &TwoPhaseSample) -> Result<()> {
    cohort.validate()?;
    if sample.r.len() != cohort.len() {
        return Err(Error::DimensionMismatch {
            expected: cohort.len(),
            got: sample.r.len(),
        });
    }
    Ok(())
}

/// Fills the entries selected by `scope` from `f(i, rng)`; other entries
/// keep the observed covariate.
fn complete<R, F>(cohort: &Cohort, sample: &TwoPhaseSample, scope: ImputationScope, rng: &mut R, mut f: F) -> Vec<f64>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &mut R) -> f64,
{
    (0..cohort.len())
        .map(|i| {
            if sample.r[i] && scope == ImputationScope::Unsampled {
                cohort.x[i]
            } else {
                f(i, rng)
            }
        })
        .collect()
}

/// Normal model `X | Y ~ N(μ + ηY, σ²)` fitted to phase two: control mean,
/// case-minus-control difference and pooled within-group variance.
pub fn impute_parametric_normal<R: Rng + ?Sized>(
    cohort: &Cohort,
    sample: &TwoPhaseSample,
    scope: ImputationScope,
    m: usize,
    rng: &mut R,
) -> Result<ImputationDraw> {
    check(cohort, sample)?;
    let mut groups: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for i in 0..cohort.len() {
        if sample.r[i] {
            groups[usize::from(cohort.y[i] == 1.0)].push(cohort.x[i]);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (n0, n1) = (groups[0].len(), groups[1].len());
    if n0 == 0 {
        return Err(Error::EmptySource("no sampled controls".into()));
    }
    let mu = mean(&groups[0]);
    let eta = if n1 > 0 { mean(&groups[1]) - mu } else { 0.0 };
    let ss: f64 = groups[0].iter().map(|x| (x - mu).powi(2)).sum::<f64>()
        + groups[1].iter().map(|x| (x - mu - eta).powi(2)).sum::<f64>();
    let groups_present = 1 + usize::from(n1 > 0);
    let df = (n0 + n1).saturating_sub(groups_present);
    let sigma2 = if df > 0 { ss / df as f64 } else { 0.0 };
    if !(sigma2 > 0.0) {
        return Err(Error::DegenerateVariance(
            "phase-two covariate has zero within-group variance".into(),
        ));
    }
    let sd = sigma2.sqrt();
    let x = complete(cohort, sample, scope, rng, |i, rng| {
        mu + eta * cohort.y[i] + sd * rng.sample::<f64, _>(StandardNormal)
    });
    Ok(ImputationDraw {
        x_star: x,
        engine: Engine::ParametricNormal,
        m,
    })
}

/// Draws each missing covariate uniformly from the sampled controls.
pub fn impute_empirical<R: Rng + ?Sized>(
    cohort: &Cohort,
    sample: &TwoPhaseSample,
    scope: ImputationScope,
    m: usize,
    rng: &mut R,
) -> Result<ImputationDraw> {
    check(cohort, sample)?;
    let source: Vec<f64> = (0..cohort.len())
        .filter(|i| sample.r[*i] && cohort.y[*i] == 0.0)
        .map(|i| cohort.x[i])
        .collect();
    if source.is_empty() {
        return Err(Error::EmptySource("no sampled controls".into()));
    }
    let x = complete(cohort, sample, scope, rng, |_, rng| source[rng.gen_range(0..source.len())]);
    Ok(ImputationDraw {
        x_star: x,
        engine: Engine::Empirical,
        m,
    })
}

/// Two-point multiplier with mean 0 and variance 1.
pub fn wild_multiplier<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let s5 = 5f64.sqrt();
    let p = (s5 - 1.0) / (2.0 * s5);
    if rng.gen::<f64>() < p {
        (1.0 + s5) / 2.0
    } else {
        (1.0 - s5) / 2.0
    }
}

fn require_linear(model: &ImputationModel) -> Result<()> {
    if model.family != Family::Linear {
        return Err(Error::InvalidInput(
            "engine needs a linear imputation regression".into(),
        ));
    }
    Ok(())
}

/// Wild bootstrap: perturb phase-two residuals, refit, and draw the
/// unsampled covariates from the refitted homoskedastic normal model.
pub fn impute_wild_bootstrap<R: Rng + ?Sized>(
    cohort: &Cohort,
    sample: &TwoPhaseSample,
    model: &ImputationModel,
    scope: ImputationScope,
    m: usize,
    rng: &mut R,
) -> Result<ImputationDraw> {
    check(cohort, sample)?;
    require_linear(model)?;
    let rows = sample.sampled_indices();
    let q = model.design.ncols();
    if rows.len() <= q {
        return Err(Error::DegenerateVariance(format!(
            "{} phase-two units leave no residual degrees of freedom",
            rows.len()
        )));
    }
    let fit = model.fit(&rows, &cohort.x)?;
    let mut perturbed = cohort.x.clone();
    for (k, &i) in rows.iter().enumerate() {
        let resid = cohort.x[i] - fit.fitted[k];
        perturbed[i] = fit.fitted[k] + wild_multiplier(rng) * resid;
    }
    let refit = model.fit(&rows, &perturbed)?;
    let rss: f64 = rows
        .iter()
        .enumerate()
        .map(|(k, &i)| (perturbed[i] - refit.fitted[k]).powi(2))
        .sum();
    let tau = (rss / (rows.len() - q) as f64).sqrt();
    let mean = model.predict(refit.coefficients());
    let x = complete(cohort, sample, scope, rng, |i, rng| {
        mean[i] + tau * rng.sample::<f64, _>(StandardNormal)
    });
    Ok(ImputationDraw {
        x_star: x,
        engine: Engine::WildBootstrap,
        m,
    })
}

/// Posterior draw under a flat prior: `τ² ~ InvGamma(a/2, b/2)` with
/// `a = n − q`, `b` the residual sum of squares, then coefficients
/// `~ N(ν̂, τ² (ΞᵀΞ)⁻¹)`.
pub fn impute_bayesian<R: Rng + ?Sized>(
    cohort: &Cohort,
    sample: &TwoPhaseSample,
    model: &ImputationModel,
    scope: ImputationScope,
    m: usize,
    rng: &mut R,
) -> Result<ImputationDraw> {
    check(cohort, sample)?;
    require_linear(model)?;
    let rows = sample.sampled_indices();
    let q = model.design.ncols();
    if rows.len() <= q {
        return Err(Error::InvalidInput(format!(
            "posterior needs more than {q} phase-two units, got {}",
            rows.len()
        )));
    }
    let fit = model.fit(&rows, &cohort.x)?;
    let b_n: f64 = rows
        .iter()
        .enumerate()
        .map(|(k, &i)| (cohort.x[i] - fit.fitted[k]).powi(2))
        .sum();
    let a_n = (rows.len() - q) as f64;
    if !(b_n > 0.0) {
        return Err(Error::DegenerateVariance(
            "imputation regression fits phase two exactly".into(),
        ));
    }
    let precision = Gamma::new(a_n / 2.0, 2.0 / b_n)
        .map_err(|e| Error::InvalidInput(e.to_string()))?
        .sample(rng);
    let tau2 = 1.0 / precision;
    // (ΞᵀΞ)⁻¹ = model_cov / dispersion for the unweighted linear fit
    let xtx_inv: DMatrix<f64> = &fit.model_cov / fit.dispersion;
    let chol = xtx_inv
        .cholesky()
        .ok_or_else(|| Error::SingularDesign("imputation design not of full rank".into()))?;
    let z = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
    let coef = &fit.theta_hat + chol.l() * z * tau2.sqrt();
    let mean = model.predict(coef.as_slice());
    let tau = tau2.sqrt();
    let x = complete(cohort, sample, scope, rng, |i, rng| {
        mean[i] + tau * rng.sample::<f64, _>(StandardNormal)
    });
    Ok(ImputationDraw {
        x_star: x,
        engine: Engine::Bayesian,
        m,
    })
}

const BOOTSTRAP_RETRIES: usize = 5;

/// Refits a logistic imputation model on a bootstrap resample of phase two
/// and draws the unsampled binary covariates from its predictions.
pub fn impute_bootstrap_binary<R: Rng + ?Sized>(
    cohort: &Cohort,
    sample: &TwoPhaseSample,
    model: &ImputationModel,
    scope: ImputationScope,
    m: usize,
    rng: &mut R,
) -> Result<ImputationDraw> {
    check(cohort, sample)?;
    if model.family != Family::Logistic {
        return Err(Error::InvalidInput(
            "binary bootstrap needs a logistic imputation model".into(),
        ));
    }
    let rows = sample.sampled_indices();
    if rows.is_empty() {
        return Err(Error::EmptySource("no phase-two units".into()));
    }
    let mut last = None;
    for _ in 0..BOOTSTRAP_RETRIES {
        let boot: Vec<usize> = (0..rows.len()).map(|_| rows[rng.gen_range(0..rows.len())]).collect();
        match model.fit(&boot, &cohort.x) {
            Ok(fit) => {
                let p = model.predict(fit.coefficients());
                let x = complete(cohort, sample, scope, rng, |i, rng| {
                    if rng.gen::<f64>() < p[i] {
                        1.0
                    } else {
                        0.0
                    }
                });
                return Ok(ImputationDraw {
                    x_star: x,
                    engine: Engine::BootstrapBinary,
                    m,
                });
            }
            Err(e @ (Error::NonConvergence(_) | Error::SingularDesign(_))) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(Error::NonConvergence(format!(
        "imputation model failed on {BOOTSTRAP_RETRIES} bootstrap resamples: {}",
        last.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// Draws one completed covariate vector with `engine`.
pub fn impute<R: Rng + ?Sized>(
    engine: Engine,
    cohort: &Cohort,
    sample: &TwoPhaseSample,
    model: Option<&ImputationModel>,
    scope: ImputationScope,
    m: usize,
    rng: &mut R,
) -> Result<ImputationDraw> {
    let need = || {
        model.ok_or_else(|| Error::InvalidInput(format!("engine {} needs an imputation model", engine.name())))
    };
    match engine {
        Engine::ParametricNormal => impute_parametric_normal(cohort, sample, scope, m, rng),
        Engine::Empirical => impute_empirical(cohort, sample, scope, m, rng),
        Engine::WildBootstrap => impute_wild_bootstrap(cohort, sample, need()?, scope, m, rng),
        Engine::Bayesian => impute_bayesian(cohort, sample, need()?, scope, m, rng),
        Engine::BootstrapBinary => impute_bootstrap_binary(cohort, sample, need()?, scope, m, rng),
    }
}

/// Rubin-combined estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct MiEstimate {
    pub theta_bar: Vec<f64>,
    /// Average within-imputation variance `W̄`.
    pub within: Vec<f64>,
    /// Between-imputation variance `B` (divisor `M − 1`; zero when `M = 1`).
    pub between: Vec<f64>,
    /// `W̄ + (1 + 1/M) B`.
    pub total: Vec<f64>,
    pub m: usize,
}

/// Combines per-imputation estimates and their variances.
pub fn rubin_combine(estimates: &[(Vec<f64>, Vec<f64>)]) -> Result<MiEstimate> {
    let m = estimates.len();
    if m == 0 {
        return Err(Error::InvalidInput("no imputations to combine".into()));
    }
    let p = estimates[0].0.len();
    for (t, v) in estimates {
        for len in [t.len(), v.len()] {
            if len != p {
                return Err(Error::DimensionMismatch { expected: p, got: len });
            }
        }
    }
    let mf = m as f64;
    let mut theta_bar = vec![0.0; p];
    let mut within = vec![0.0; p];
    for (t, v) in estimates {
        for j in 0..p {
            theta_bar[j] += t[j];
            within[j] += v[j];
        }
    }
    theta_bar.iter_mut().for_each(|v| *v /= mf);
    within.iter_mut().for_each(|v| *v /= mf);
    let mut between = vec![0.0; p];
    if m > 1 {
        for (t, _) in estimates {
            for j in 0..p {
                between[j] += (t[j] - theta_bar[j]).powi(2);
            }
        }
        between.iter_mut().for_each(|v| *v /= mf - 1.0);
    }
    let total = (0..p).map(|j| within[j] + (1.0 + 1.0 / mf) * between[j]).collect();
    Ok(MiEstimate {
        theta_bar,
        within,
        between,
        total,
        m,
    })
}

/// Averages the full-cohort influence functions of the outcome model over
/// the imputations; the result is the raking auxiliary without a constant.
pub fn mi_calibration_variable(
    draws: &[ImputationDraw],
    outcome: &OutcomeModel,
    cohort: &Cohort,
) -> Result<DMatrix<f64>> {
    if draws.is_empty() {
        return Err(Error::InvalidInput("no imputations".into()));
    }
    let mut acc: Option<DMatrix<f64>> = None;
    for d in draws {
        let fit = outcome.fit_full(cohort, &d.x_star)?;
        match acc.as_mut() {
            Some(a) => *a += &fit.influence,
            None => acc = Some(fit.influence),
        }
    }
    Ok(acc.expect("at least one draw") / draws.len() as f64)
}
