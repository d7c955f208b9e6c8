//! Generalized raking of sampling weights.
//!
//! Weight adjustments use the raking distance `d(a, b) = a log(a/b) - a + b`,
//! so `g_i = exp(H_iᵀλ)` and the multipliers `λ` solve the calibration
//! constraints `Σ_{sampled} g_i H_i / π_i = Σ_{cohort} H_i` by damped Newton
//! iteration.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::glm::{fit_glm, DesignMatrix, Family, GlmFit};

const MAX_NEWTON: usize = 50;
const CONSTRAINT_TOL: f64 = 1e-8;
const RIDGE: f64 = 1e-10;
const MAX_HALVINGS: usize = 50;

/// Auxiliary values `H_i`, defined on every cohort unit.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryMatrix {
    h: DMatrix<f64>,
    includes_constant: bool,
}

impl AuxiliaryMatrix {
    /// Prepends the all-ones column, so calibrated weights sum to `N`.
    pub fn with_constant(h: DMatrix<f64>) -> Result<Self> {
        let n = h.nrows();
        let mut full = DMatrix::from_element(n, h.ncols() + 1, 1.0);
        full.columns_mut(1, h.ncols()).copy_from(&h);
        Self::build(full, true)
    }

    /// Uses `h` as given.
    pub fn without_constant(h: DMatrix<f64>) -> Result<Self> {
        let has_const = h.ncols() > 0 && h.column(0).iter().all(|v| *v == 1.0);
        Self::build(h, has_const)
    }

    fn build(h: DMatrix<f64>, includes_constant: bool) -> Result<Self> {
        if h.ncols() == 0 {
            return Err(Error::InvalidInput("auxiliary matrix has no columns".into()));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("auxiliary matrix has non-finite entries".into()));
        }
        Ok(AuxiliaryMatrix {
            h,
            includes_constant,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn includes_constant(&self) -> bool {
        self.includes_constant
    }

    pub fn nrows(&self) -> usize {
        self.h.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.h.ncols()
    }

    /// Cohort totals `Σ_i H_i`.
    pub fn totals(&self) -> DVector<f64> {
        DVector::from_iterator(self.ncols(), self.h.column_iter().map(|c| c.sum()))
    }
}

/// Result of a raking solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedWeights {
    /// Cohort indices of the sampled units, in the order of `g`.
    pub sampled_index: Vec<usize>,
    pub g: Vec<f64>,
    pub lambda: DVector<f64>,
    pub constraint_residual: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl CalibratedWeights {
    /// Calibrated weights `g_i / π_i` for the sampled units.
    pub fn sample_weights(&self, pi: &[f64]) -> Vec<f64> {
        self.sampled_index
            .iter()
            .zip(&self.g)
            .map(|(i, g)| g / pi[*i])
            .collect()
    }

    /// Largest scaled constraint violation.
    pub fn max_scaled_residual(&self, totals: &DVector<f64>) -> f64 {
        self.constraint_residual
            .iter()
            .zip(totals.iter())
            .map(|(r, t)| r.abs() / (1.0 + t.abs()))
            .fold(0.0, f64::max)
    }
}

fn check_design_inputs(n: usize, sampled: &[bool], pi: &[f64]) -> Result<Vec<usize>> {
    if sampled.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: sampled.len(),
        });
    }
    if pi.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: pi.len(),
        });
    }
    let idx: Vec<usize> = (0..n).filter(|i| sampled[*i]).collect();
    for &i in &idx {
        if !(pi[i] > 0.0 && pi[i] <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "inclusion probability {} of unit {i} outside (0, 1]",
                pi[i]
            )));
        }
    }
    if idx.is_empty() {
        return Err(Error::InvalidInput("no sampled units".into()));
    }
    Ok(idx)
}

/// Solves for raking adjustments `g_i = exp(H_iᵀλ)` on the sampled units.
pub fn rake_weights(aux: &AuxiliaryMatrix, sampled: &[bool], pi: &[f64]) -> Result<CalibratedWeights> {
    let n = aux.nrows();
    let q = aux.ncols();
    let idx = check_design_inputs(n, sampled, pi)?;
    let h = aux.matrix();
    let totals = aux.totals();
    let scale: Vec<f64> = totals.iter().map(|t| 1.0 + t.abs()).collect();
    let d: Vec<f64> = idx.iter().map(|i| 1.0 / pi[*i]).collect();

    let evaluate = |lambda: &DVector<f64>| -> (Vec<f64>, DVector<f64>) {
        let mut g = Vec::with_capacity(idx.len());
        let mut resid = -totals.clone();
        for (k, &i) in idx.iter().enumerate() {
            let mut eta = 0.0;
            for j in 0..q {
                eta += h[(i, j)] * lambda[j];
            }
            let gi = eta.exp();
            g.push(gi);
            let dg = d[k] * gi;
            for j in 0..q {
                resid[j] += dg * h[(i, j)];
            }
        }
        (g, resid)
    };
    let scaled_norm = |r: &DVector<f64>| -> f64 {
        r.iter()
            .zip(&scale)
            .map(|(a, s)| (a / s) * (a / s))
            .sum::<f64>()
            .sqrt()
    };
    let within_tol = |r: &DVector<f64>| r.iter().zip(&scale).all(|(a, s)| a.abs() <= CONSTRAINT_TOL * s);

    let mut lambda = DVector::zeros(q);
    let (mut g, mut resid) = evaluate(&lambda);
    let mut norm = scaled_norm(&resid);
    for iter in 0..=MAX_NEWTON {
        if within_tol(&resid) {
            return Ok(CalibratedWeights {
                sampled_index: idx,
                g,
                lambda,
                constraint_residual: resid,
                iterations: iter,
                converged: true,
            });
        }
        if iter == MAX_NEWTON {
            break;
        }
        let mut jac = DMatrix::zeros(q, q);
        for (k, &i) in idx.iter().enumerate() {
            let dg = d[k] * g[k];
            for a in 0..q {
                let ha = h[(i, a)] * dg;
                for b in 0..=a {
                    jac[(a, b)] += ha * h[(i, b)];
                }
            }
        }
        for a in 0..q {
            for b in 0..a {
                jac[(b, a)] = jac[(a, b)];
            }
        }
        let step = match jac.clone().cholesky() {
            Some(c) => c.solve(&resid),
            None => {
                let ridge = RIDGE * jac.trace().abs().max(f64::MIN_POSITIVE);
                let mut reg = jac;
                for a in 0..q {
                    reg[(a, a)] += ridge;
                }
                reg.cholesky()
                    .ok_or_else(|| {
                        Error::CollinearAuxiliaries(
                            "Newton system singular after ridge regularization".into(),
                        )
                    })?
                    .solve(&resid)
            }
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..MAX_HALVINGS {
            let cand = &lambda - &step * t;
            let (cg, cr) = evaluate(&cand);
            let cn = scaled_norm(&cr);
            if cn.is_finite() && cn < norm {
                lambda = cand;
                g = cg;
                resid = cr;
                norm = cn;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            return Err(Error::CalibrationNonConvergence(format!(
                "step halving stalled at scaled residual {norm:.3e}; constraints may be infeasible"
            )));
        }
    }
    Err(Error::CalibrationNonConvergence(format!(
        "{MAX_NEWTON} Newton iterations left scaled residual {norm:.3e}"
    )))
}

/// Horvitz–Thompson-weighted fit over the sampled units (weights `1/π_i`).
pub fn ht_solve(
    family: Family,
    design: &DesignMatrix,
    response: &[f64],
    pi: &[f64],
) -> Result<GlmFit> {
    if pi.len() != design.nrows() {
        return Err(Error::DimensionMismatch {
            expected: design.nrows(),
            got: pi.len(),
        });
    }
    if pi.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
        return Err(Error::InvalidInput("inclusion probabilities must lie in (0, 1]".into()));
    }
    let w: Vec<f64> = pi.iter().map(|p| 1.0 / p).collect();
    fit_glm(family, design, response, &w)
}

/// Raking estimator: calibrate on `aux`, then fit the phase-two units with
/// weights `g_i / π_i`. `design` and `response` hold the sampled units in
/// cohort order.
pub fn raking_estimator(
    family: Family,
    design: &DesignMatrix,
    response: &[f64],
    sampled: &[bool],
    pi: &[f64],
    aux: &AuxiliaryMatrix,
) -> Result<(GlmFit, CalibratedWeights)> {
    let cal = rake_weights(aux, sampled, pi)?;
    if design.nrows() != cal.sampled_index.len() {
        return Err(Error::DimensionMismatch {
            expected: cal.sampled_index.len(),
            got: design.nrows(),
        });
    }
    let w = cal.sample_weights(pi);
    let fit = fit_glm(family, design, response, &w)?;
    Ok((fit, cal))
}
