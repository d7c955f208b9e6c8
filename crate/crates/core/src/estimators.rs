//! Estimators of the working-model coefficients from a two-phase sample.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::calibration::{raking_estimator, AuxiliaryMatrix, CalibratedWeights};
use crate::designs::{Cohort, TwoPhaseSample};
use crate::error::{Error, Result};
use crate::glm::{Family, GlmFit};
use crate::imputation::{impute, mi_calibration_variable, rubin_combine, Engine, ImputationDraw, ImputationScope};
use crate::model::{ImputationModel, OutcomeModel};
use crate::rng::StreamId;
use crate::spml::{spml_twophase, SpmlOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    MleCasecontrol,
    SpmlTwophase,
    Ipw,
    RegressionCalibration,
    Mi,
    RakingSingle,
    Mir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    /// Short label used in reports, e.g. `"MIR-Boot"`.
    pub label: String,
    pub kind: EstimatorKind,
    pub engine: Option<Engine>,
    pub imputations: usize,
    /// Units that receive imputed covariates in MI and MIR.
    pub scope: ImputationScope,
    pub outcome: OutcomeModel,
}

impl EstimatorSpec {
    pub fn new(label: &str, kind: EstimatorKind, outcome: OutcomeModel) -> Self {
        EstimatorSpec {
            label: label.to_owned(),
            kind,
            engine: None,
            imputations: 1,
            scope: ImputationScope::Unsampled,
            outcome,
        }
    }

    pub fn with_engine(label: &str, kind: EstimatorKind, engine: Engine, m: usize, outcome: OutcomeModel) -> Self {
        EstimatorSpec {
            label: label.to_owned(),
            kind,
            engine: Some(engine),
            imputations: m,
            scope: if kind == EstimatorKind::Mir {
                ImputationScope::All
            } else {
                ImputationScope::Unsampled
            },
            outcome,
        }
    }

    pub fn with_scope(mut self, scope: ImputationScope) -> Self {
        self.scope = scope;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let needs_engine = matches!(self.kind, EstimatorKind::Mi | EstimatorKind::Mir);
        if needs_engine != self.engine.is_some() {
            return Err(Error::Config(format!(
                "estimator {}: an imputation engine is required exactly for MI and MIR",
                self.label
            )));
        }
        if needs_engine && self.imputations == 0 {
            return Err(Error::Config(format!("estimator {}: M must be at least 1", self.label)));
        }
        if self.kind == EstimatorKind::SpmlTwophase && self.outcome != OutcomeModel::Simple(Family::Linear) {
            return Err(Error::Config(
                "semiparametric MLE needs the Gaussian linear outcome model".into(),
            ));
        }
        Ok(())
    }
}

/// Convergence and calibration diagnostics of one estimate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EstimateDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    /// Largest scaled calibration residual for raking estimators.
    pub calibration_residual: Option<f64>,
    /// Between-imputation variance for MI.
    pub between_variance: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaEstimate {
    pub theta: Vec<f64>,
    /// Diagonal of the estimated covariance.
    pub variance: Vec<f64>,
    pub estimator: EstimatorSpec,
    pub diagnostics: EstimateDiagnostics,
}

fn diag(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).map(|j| m[(j, j)].max(0.0)).collect()
}

fn from_fit(spec: &EstimatorSpec, fit: &GlmFit, variance: &DMatrix<f64>) -> ThetaEstimate {
    ThetaEstimate {
        theta: fit.coefficients().to_vec(),
        variance: diag(variance),
        estimator: spec.clone(),
        diagnostics: EstimateDiagnostics {
            converged: fit.converged,
            iterations: fit.iterations,
            ..Default::default()
        },
    }
}

fn check_inputs(cohort: &Cohort, sample: &TwoPhaseSample) -> Result<()> {
    cohort.validate()?;
    for len in [sample.r.len(), sample.pi.len(), sample.stratum.len()] {
        if len != cohort.len() {
            return Err(Error::DimensionMismatch {
                expected: cohort.len(),
                got: len,
            });
        }
    }
    if sample.s2_size() == 0 {
        return Err(Error::InvalidInput("empty phase-two sample".into()));
    }
    Ok(())
}

/// Unweighted complete-case fit on the phase-two units.
pub fn estimate_mle_casecontrol(
    spec: &EstimatorSpec,
    cohort: &Cohort,
    sample: &TwoPhaseSample,
) -> Result<ThetaEstimate> {
    check_inputs(cohort, sample)?;
    let rows = sample.sampled_indices();
    let fit = spec.outcome.fit_rows(cohort, &cohort.x, &rows, &vec![1.0; rows.len()])?;
    Ok(from_fit(spec, &fit, &fit.model_cov))
}

/// Semiparametric maximum likelihood using the sampling strata.
pub fn estimate_spml_twophase(
    spec: &EstimatorSpec,
    cohort: &Cohort,
    sample: &TwoPhaseSample,
    options: &SpmlOptions,
) -> Result<ThetaEstimate> {
    check_inputs(cohort, sample)?;
    let fit = spml_twophase(&cohort.y, &cohort.x, &sample.r, &sample.stratum, options)?;
    Ok(ThetaEstimate {
        theta: fit.theta.to_vec(),
        variance: vec![fit.covariance[0][0], fit.covariance[1][1]],
        estimator: spec.clone(),
        diagnostics: EstimateDiagnostics {
            converged: true,
            iterations: fit.iterations,
            ..Default::default()
        },
    })
}

/// Horvitz–Thompson weighted fit with weights `1/π`.
pub fn estimate_ipw(spec: &EstimatorSpec, cohort: &Cohort, sample: &TwoPhaseSample) -> Result<ThetaEstimate> {
    check_inputs(cohort, sample)?;
    let rows = sample.sampled_indices();
    let w: Vec<f64> = rows
        .iter()
        .map(|i| {
            let p = sample.pi[*i];
            if p > 0.0 && p <= 1.0 {
                Ok(1.0 / p)
            } else {
                Err(Error::InvalidInput(format!("inclusion probability {p} outside (0, 1]")))
            }
        })
        .collect::<Result<_>>()?;
    let fit = spec.outcome.fit_rows(cohort, &cohort.x, &rows, &w)?;
    Ok(from_fit(spec, &fit, &fit.sandwich_cov))
}

/// Regression calibration: `Ê[X | Z]` for unsampled units, observed `X`
/// for sampled units, then an ordinary fit on the blended data.
pub fn estimate_rc(spec: &EstimatorSpec, cohort: &Cohort, sample: &TwoPhaseSample) -> Result<ThetaEstimate> {
    check_inputs(cohort, sample)?;
    let model = ImputationModel::surrogate_only(cohort)?;
    let rows = sample.sampled_indices();
    let fit = model.fit(&rows, &cohort.x)?;
    let xhat = model.predict(fit.coefficients());
    let blended: Vec<f64> = (0..cohort.len())
        .map(|i| if sample.r[i] { cohort.x[i] } else { xhat[i] })
        .collect();
    let out = spec.outcome.fit_full(cohort, &blended)?;
    Ok(from_fit(spec, &out, &out.model_cov))
}

fn draw_all(
    spec: &EstimatorSpec,
    cohort: &Cohort,
    sample: &TwoPhaseSample,
    model: Option<&ImputationModel>,
    stream: &StreamId,
) -> Result<Vec<ImputationDraw>> {
    let engine = spec
        .engine
        .ok_or_else(|| Error::Config(format!("estimator {} has no engine", spec.label)))?;
    (0..spec.imputations)
        .map(|m| {
            let mut rng = stream.child("imputation", m as u64).rng();
            impute(engine, cohort, sample, model, spec.scope, m, &mut rng)
        })
        .collect()
}

/// Multiple imputation: `M` completed-cohort fits combined by Rubin's rules.
pub fn estimate_mi(
    spec: &EstimatorSpec,
    cohort: &Cohort,
    sample: &TwoPhaseSample,
    model: Option<&ImputationModel>,
    stream: &StreamId,
) -> Result<ThetaEstimate> {
    check_inputs(cohort, sample)?;
    spec.validate()?;
    let engine = spec.engine.expect("validated");
    let mut fits = Vec::with_capacity(spec.imputations);
    for m in 0..spec.imputations {
        let mut rng = stream.child("imputation", m as u64).rng();
        let draw = impute(engine, cohort, sample, model, spec.scope, m, &mut rng)?;
        let fit = spec.outcome.fit_full(cohort, &draw.x_star)?;
        fits.push((fit.coefficients().to_vec(), diag(&fit.sandwich_cov)));
    }
    let combined = rubin_combine(&fits)?;
    Ok(ThetaEstimate {
        theta: combined.theta_bar,
        variance: combined.total,
        estimator: spec.clone(),
        diagnostics: EstimateDiagnostics {
            converged: true,
            iterations: spec.imputations,
            calibration_residual: None,
            between_variance: Some(combined.between),
        },
    })
}

/// Rakes on the auxiliary `h` (a constant column is prepended) and fits the
/// phase-two units with the calibrated weights.
pub fn raking_with_auxiliary(
    spec: &EstimatorSpec,
    cohort: &Cohort,
    sample: &TwoPhaseSample,
    h: DMatrix<f64>,
) -> Result<(ThetaEstimate, CalibratedWeights)> {
    let aux = AuxiliaryMatrix::with_constant(h)?;
    let rows = sample.sampled_indices();
    let design = spec.outcome.design_rows(cohort, &cohort.x, &rows)?;
    let y: Vec<f64> = rows.iter().map(|i| cohort.y[*i]).collect();
    let (fit, cal) = raking_estimator(spec.outcome.family(), &design, &y, &sample.r, &sample.pi, &aux)?;
    let mut est = from_fit(spec, &fit, &fit.sandwich_cov);
    est.diagnostics.calibration_residual = Some(cal.max_scaled_residual(&aux.totals()));
    est.diagnostics.converged &= cal.converged;
    Ok((est, cal))
}

/// Raking on the influence functions of the outcome model fitted to a
/// cohort fully imputed from a single imputation regression.
pub fn estimate_raking_single(
    spec: &EstimatorSpec,
    cohort: &Cohort,
    sample: &TwoPhaseSample,
    model: &ImputationModel,
) -> Result<ThetaEstimate> {
    check_inputs(cohort, sample)?;
    let rows = sample.sampled_indices();
    let imp = model.fit(&rows, &cohort.x)?;
    let xhat = model.predict(imp.coefficients());
    let proxy = spec.outcome.fit_full(cohort, &xhat)?;
    raking_with_auxiliary(spec, cohort, sample, proxy.influence).map(|(e, _)| e)
}

/// Raking on influence functions averaged over `M` imputations.
pub fn estimate_mir(
    spec: &EstimatorSpec,
    cohort: &Cohort,
    sample: &TwoPhaseSample,
    model: Option<&ImputationModel>,
    stream: &StreamId,
) -> Result<ThetaEstimate> {
    check_inputs(cohort, sample)?;
    spec.validate()?;
    let draws = draw_all(spec, cohort, sample, model, stream)?;
    let h = mi_calibration_variable(&draws, &spec.outcome, cohort)?;
    raking_with_auxiliary(spec, cohort, sample, h).map(|(e, _)| e)
}

/// Runs any estimator. `model` is the imputation regression used by the
/// raking, wild bootstrap, Bayesian and binary bootstrap procedures.
pub fn estimate(
    spec: &EstimatorSpec,
    cohort: &Cohort,
    sample: &TwoPhaseSample,
    model: Option<&ImputationModel>,
    stream: &StreamId,
) -> Result<ThetaEstimate> {
    spec.validate()?;
    match spec.kind {
        EstimatorKind::MleCasecontrol => estimate_mle_casecontrol(spec, cohort, sample),
        EstimatorKind::SpmlTwophase => estimate_spml_twophase(spec, cohort, sample, &SpmlOptions::default()),
        EstimatorKind::Ipw => estimate_ipw(spec, cohort, sample),
        EstimatorKind::RegressionCalibration => estimate_rc(spec, cohort, sample),
        EstimatorKind::Mi => estimate_mi(spec, cohort, sample, model, stream),
        EstimatorKind::RakingSingle => {
            let model = model.ok_or_else(|| Error::InvalidInput("raking needs an imputation regression".into()))?;
            estimate_raking_single(spec, cohort, sample, model)
        }
        EstimatorKind::Mir => estimate_mir(spec, cohort, sample, model, stream),
    }
}
