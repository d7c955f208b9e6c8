//! Working outcome models and imputation regressions built from a cohort.

use serde::{Deserialize, Serialize};

use crate::designs::{Cohort, ScenarioKind};
use crate::error::{Error, Result};
use crate::glm::{expit, fit_glm, DesignMatrix, Family, GlmFit};

/// Working regression model for `Y` given the phase-two covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeModel {
    /// `g(E[Y]) = α + βX`.
    Simple(Family),
    /// Logistic model in histology, stage III/IV, age, diameter and histology × stage.
    Nwts,
}

const NWTS_NAMES: [&str; 5] = ["histology", "stage", "age", "diameter", "histology:stage"];

impl OutcomeModel {
    pub fn for_scenario(kind: ScenarioKind) -> Self {
        match kind {
            ScenarioKind::CaseControl => OutcomeModel::Simple(Family::Logistic),
            ScenarioKind::SurrogateAdditive | ScenarioKind::SurrogateMultiplicative => {
                OutcomeModel::Simple(Family::Linear)
            }
            ScenarioKind::Nwts => OutcomeModel::Nwts,
        }
    }

    pub fn family(&self) -> Family {
        match self {
            OutcomeModel::Simple(f) => *f,
            OutcomeModel::Nwts => Family::Logistic,
        }
    }

    /// Coefficient names, intercept first.
    pub fn coefficient_names(&self) -> Vec<String> {
        let mut names = vec!["(Intercept)".to_string()];
        match self {
            OutcomeModel::Simple(_) => names.push("x".into()),
            OutcomeModel::Nwts => names.extend(NWTS_NAMES.iter().map(|s| s.to_string())),
        }
        names
    }

    pub fn ncoef(&self) -> usize {
        self.coefficient_names().len()
    }

    /// Design for the cohort rows `rows` with covariate values `x` (indexed by cohort row).
    pub fn design_rows(&self, cohort: &Cohort, x: &[f64], rows: &[usize]) -> Result<DesignMatrix> {
        if x.len() != cohort.len() {
            return Err(Error::DimensionMismatch {
                expected: cohort.len(),
                got: x.len(),
            });
        }
        let xs: Vec<f64> = rows.iter().map(|i| x[*i]).collect();
        match self {
            OutcomeModel::Simple(_) => DesignMatrix::from_columns(true, &[("x", &xs)]),
            OutcomeModel::Nwts => {
                let extra = cohort
                    .nwts
                    .as_ref()
                    .ok_or_else(|| Error::InvalidInput("cohort has no NWTS columns".into()))?;
                let stage: Vec<f64> = rows
                    .iter()
                    .map(|i| if extra.stage[*i] >= 3 { 1.0 } else { 0.0 })
                    .collect();
                let age: Vec<f64> = rows.iter().map(|i| extra.age[*i]).collect();
                let diam: Vec<f64> = rows.iter().map(|i| extra.diameter[*i]).collect();
                let hs: Vec<f64> = xs.iter().zip(&stage).map(|(a, b)| a * b).collect();
                DesignMatrix::from_columns(
                    true,
                    &[
                        (NWTS_NAMES[0], &xs),
                        (NWTS_NAMES[1], &stage),
                        (NWTS_NAMES[2], &age),
                        (NWTS_NAMES[3], &diam),
                        (NWTS_NAMES[4], &hs),
                    ],
                )
            }
        }
    }

    pub fn design(&self, cohort: &Cohort, x: &[f64]) -> Result<DesignMatrix> {
        let rows: Vec<usize> = (0..cohort.len()).collect();
        self.design_rows(cohort, x, &rows)
    }

    /// Unweighted fit to the full cohort with covariate values `x`.
    pub fn fit_full(&self, cohort: &Cohort, x: &[f64]) -> Result<GlmFit> {
        let design = self.design(cohort, x)?;
        fit_glm(self.family(), &design, &cohort.y, &vec![1.0; cohort.len()])
    }

    /// Fit over `rows` with the given fitting weights.
    pub fn fit_rows(&self, cohort: &Cohort, x: &[f64], rows: &[usize], weights: &[f64]) -> Result<GlmFit> {
        let design = self.design_rows(cohort, x, rows)?;
        let y: Vec<f64> = rows.iter().map(|i| cohort.y[*i]).collect();
        fit_glm(self.family(), &design, &y, weights)
    }
}

/// Regression of the phase-two covariate on first-phase variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationModel {
    pub family: Family,
    /// One row per cohort unit.
    pub design: DesignMatrix,
}

impl ImputationModel {
    /// Linear regression of `X` on `(1, Y, Z)`.
    pub fn outcome_and_surrogate(cohort: &Cohort) -> Result<Self> {
        Ok(ImputationModel {
            family: Family::Linear,
            design: DesignMatrix::from_columns(true, &[("y", &cohort.y), ("z", &cohort.z)])?,
        })
    }

    /// Linear regression of `X` on `(1, Z)`, the calibration model.
    pub fn surrogate_only(cohort: &Cohort) -> Result<Self> {
        Ok(ImputationModel {
            family: Family::Linear,
            design: DesignMatrix::from_columns(true, &[("z", &cohort.z)])?,
        })
    }

    /// Logistic model for central histology: full factorial of relapse,
    /// stage III/IV and local histology, plus age and diameter.
    pub fn nwts(cohort: &Cohort) -> Result<Self> {
        let extra = cohort
            .nwts
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("cohort has no NWTS columns".into()))?;
        let rel = &cohort.y;
        let loc = &cohort.z;
        let stg = extra.advanced_stage();
        let prod = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(u, v)| u * v).collect() };
        let rs = prod(rel, &stg);
        let rl = prod(rel, loc);
        let sl = prod(&stg, loc);
        let rsl = prod(&rs, loc);
        Ok(ImputationModel {
            family: Family::Logistic,
            design: DesignMatrix::from_columns(
                true,
                &[
                    ("relapse", rel),
                    ("stage", &stg),
                    ("local", loc),
                    ("relapse:stage", &rs),
                    ("relapse:local", &rl),
                    ("stage:local", &sl),
                    ("relapse:stage:local", &rsl),
                    ("age", &extra.age),
                    ("diameter", &extra.diameter),
                ],
            )?,
        })
    }

    /// Default imputation regression for a scenario.
    pub fn for_scenario(kind: ScenarioKind, cohort: &Cohort) -> Result<Self> {
        match kind {
            ScenarioKind::Nwts => Self::nwts(cohort),
            _ => Self::outcome_and_surrogate(cohort),
        }
    }

    /// Fits the model on cohort rows `rows` with observed covariate `x`.
    pub fn fit(&self, rows: &[usize], x: &[f64]) -> Result<GlmFit> {
        let design = self.design.select_rows(rows)?;
        let xs: Vec<f64> = rows.iter().map(|i| x[*i]).collect();
        fit_glm(self.family, &design, &xs, &vec![1.0; rows.len()])
    }

    /// Conditional mean of `X` for every cohort unit under coefficients `coef`.
    pub fn predict(&self, coef: &[f64]) -> Vec<f64> {
        let eta = self.design.linear_predictor(coef);
        match self.family {
            Family::Linear => eta,
            Family::Logistic => eta.into_iter().map(expit).collect(),
        }
    }
}
