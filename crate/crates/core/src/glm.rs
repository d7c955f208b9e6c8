//! Linear and logistic regression by estimating equations.
//!
//! Every fit exposes the per-unit score contributions `U_i(θ̂)`, the bread
//! `A = -(Σw)⁻¹ Σ w_i ∂U_i/∂θ` evaluated from observed second derivatives,
//! and the influence functions `Δ_i = A⁻¹ U_i`. These feed the raking
//! auxiliaries downstream, so a rank-deficient design is always an error.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const LOGISTIC_MAX_ITER: usize = 100;
const GRADIENT_TOL: f64 = 1e-10;
const MAX_HALVINGS: usize = 40;
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    Logistic,
}

/// `N × p` regressor matrix with column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: DMatrix<f64>,
    column_names: Vec<String>,
}

impl DesignMatrix {
    pub fn new(rows: DMatrix<f64>, column_names: Vec<String>) -> Result<Self> {
        if rows.ncols() == 0 {
            return Err(Error::InvalidInput("design needs at least one column".into()));
        }
        if column_names.len() != rows.ncols() {
            return Err(Error::DimensionMismatch {
                expected: rows.ncols(),
                got: column_names.len(),
            });
        }
        if rows.nrows() < rows.ncols() {
            return Err(Error::InvalidInput(format!(
                "design has {} rows but {} columns",
                rows.nrows(),
                rows.ncols()
            )));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("design contains non-finite entries".into()));
        }
        Ok(DesignMatrix { rows, column_names })
    }

    /// Builds a design from named columns, optionally prepending a constant.
    pub fn from_columns(intercept: bool, columns: &[(&str, &[f64])]) -> Result<Self> {
        let n = columns
            .first()
            .map(|(_, c)| c.len())
            .ok_or_else(|| Error::InvalidInput("no columns supplied".into()))?;
        let mut names = Vec::with_capacity(columns.len() + 1);
        let mut data = Vec::with_capacity(n * (columns.len() + 1));
        if intercept {
            names.push("(Intercept)".to_owned());
            data.extend(std::iter::repeat(1.0).take(n));
        }
        for (name, col) in columns {
            if col.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: col.len(),
                });
            }
            names.push((*name).to_owned());
            data.extend_from_slice(col);
        }
        let p = names.len();
        Self::new(DMatrix::from_vec(n, p, data), names)
    }

    /// Intercept-only design with `n` rows.
    pub fn constant(n: usize) -> Result<Self> {
        Self::new(DMatrix::from_element(n, 1, 1.0), vec!["(Intercept)".into()])
    }

    pub fn nrows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.rows.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.nrows();
        &self.rows.as_slice()[j * n..(j + 1) * n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[(i, j)]
    }

    /// Sub-design restricted to the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let p = self.ncols();
        let m = DMatrix::from_fn(idx.len(), p, |r, c| self.rows[(idx[r], c)]);
        Self::new(m, self.column_names.clone())
    }

    /// Linear predictor `Xθ`.
    pub fn linear_predictor(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.nrows();
        let mut eta = vec![0.0; n];
        for (j, t) in theta.iter().enumerate() {
            for (e, x) in eta.iter_mut().zip(self.column(j)) {
                *e += t * x;
            }
        }
        eta
    }
}

/// A fitted estimating-equation model.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub family: Family,
    pub theta_hat: DVector<f64>,
    /// Rows are `U_i(θ̂) = x_i (y_i - μ_i)`.
    pub score_contribs: DMatrix<f64>,
    pub bread: DMatrix<f64>,
    /// Rows are `Δ_i = A⁻¹ U_i`.
    pub influence: DMatrix<f64>,
    pub weights: Vec<f64>,
    pub fitted: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub sandwich_cov: DMatrix<f64>,
    /// Model-based covariance `φ (Σ w v x xᵀ)⁻¹` with dispersion `φ`.
    pub model_cov: DMatrix<f64>,
    /// Residual variance for the linear model, 1 for the logistic model.
    pub dispersion: f64,
}

impl GlmFit {
    pub fn coefficients(&self) -> &[f64] {
        self.theta_hat.as_slice()
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn p(&self) -> usize {
        self.theta_hat.len()
    }

    /// Weighted estimating-function total `Σ w_i U_i(θ̂)`.
    pub fn weighted_score_total(&self) -> Vec<f64> {
        (0..self.p())
            .map(|j| {
                self.score_contribs
                    .column(j)
                    .iter()
                    .zip(&self.weights)
                    .map(|(u, w)| u * w)
                    .sum()
            })
            .collect()
    }

    pub fn residuals(&self, response: &[f64]) -> Vec<f64> {
        response
            .iter()
            .zip(&self.fitted)
            .map(|(y, m)| y - m)
            .collect()
    }

    pub fn sandwich_std_errors(&self) -> Vec<f64> {
        (0..self.p())
            .map(|j| self.sandwich_cov[(j, j)].max(0.0).sqrt())
            .collect()
    }

    pub fn model_std_errors(&self) -> Vec<f64> {
        (0..self.p())
            .map(|j| self.model_cov[(j, j)].max(0.0).sqrt())
            .collect()
    }
}

pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn validate(
    family: Family,
    design: &DesignMatrix,
    response: &[f64],
    weights: &[f64],
) -> Result<()> {
    let n = design.nrows();
    if response.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: response.len(),
        });
    }
    if weights.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: weights.len(),
        });
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidInput(
            "weights must be finite and nonnegative".into(),
        ));
    }
    let positive = weights.iter().filter(|w| **w > 0.0).count();
    if positive < design.ncols() {
        return Err(Error::InvalidInput(format!(
            "{positive} units with positive weight for {} coefficients",
            design.ncols()
        )));
    }
    match family {
        Family::Linear => {
            if response.iter().any(|y| !y.is_finite()) {
                return Err(Error::InvalidInput("non-finite response".into()));
            }
        }
        Family::Logistic => {
            if response.iter().any(|y| *y != 0.0 && *y != 1.0) {
                return Err(Error::InvalidInput(
                    "logistic response must be 0 or 1".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Fits `family` to `(design, response)` with nonnegative fitting weights.
pub fn fit_glm(
    family: Family,
    design: &DesignMatrix,
    response: &[f64],
    weights: &[f64],
) -> Result<GlmFit> {
    validate(family, design, response, weights)?;
    let (theta, iterations) = match family {
        Family::Linear => (solve_weighted_ls(design, response, weights)?, 1),
        Family::Logistic => newton_logistic(design, response, weights)?,
    };
    assemble_fit(family, design, response, weights, theta, iterations)
}

fn solve_weighted_ls(design: &DesignMatrix, y: &[f64], w: &[f64]) -> Result<DVector<f64>> {
    let n = design.nrows();
    let p = design.ncols();
    let mut xw = design.matrix().clone();
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    for j in 0..p {
        for i in 0..n {
            xw[(i, j)] *= sw[i];
        }
    }
    let yw = DVector::from_iterator(n, y.iter().zip(&sw).map(|(a, b)| a * b));
    let svd = xw.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= RANK_TOL * smax {
        return Err(Error::SingularDesign(format!(
            "weighted design is rank deficient (singular values {smin:.3e} / {smax:.3e})"
        )));
    }
    svd.solve(&yw, 0.0)
        .map_err(|e| Error::SingularDesign(e.to_string()))
}

fn logistic_loglik(eta: &[f64], y: &[f64], w: &[f64]) -> f64 {
    eta.iter()
        .zip(y)
        .zip(w)
        .map(|((e, yi), wi)| if *wi > 0.0 { wi * (yi * e - softplus(*e)) } else { 0.0 })
        .sum()
}

const SATURATION_ETA: f64 = 36.0;

fn newton_logistic(design: &DesignMatrix, y: &[f64], w: &[f64]) -> Result<(DVector<f64>, usize)> {
    let n = design.nrows();
    let p = design.ncols();
    let wsum: f64 = w.iter().sum();
    let ybar = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / wsum;
    let mut theta = DVector::zeros(p);
    // start from the marginal logit when the first column is the constant
    if design.column(0).iter().all(|v| *v == 1.0) {
        let yb = ybar.clamp(1e-6, 1.0 - 1e-6);
        theta[0] = (yb / (1.0 - yb)).ln();
    }
    let tol = GRADIENT_TOL * (1.0 + wsum);
    let mut eta = design.linear_predictor(theta.as_slice());
    let mut ll = logistic_loglik(&eta, y, w);
    for iter in 0..=LOGISTIC_MAX_ITER {
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        for i in 0..n {
            if w[i] == 0.0 {
                continue;
            }
            let mu = expit(eta[i]);
            let r = w[i] * (y[i] - mu);
            let v = w[i] * mu * (1.0 - mu);
            for a in 0..p {
                let xa = design.get(i, a);
                grad[a] += xa * r;
                for b in 0..=a {
                    hess[(a, b)] += v * xa * design.get(i, b);
                }
            }
        }
        if grad.amax() <= tol {
            // a vanishing gradient with saturated fits means the data are separated
            let saturated = eta
                .iter()
                .zip(w)
                .any(|(e, wi)| *wi > 0.0 && e.abs() > SATURATION_ETA);
            if saturated {
                return Err(Error::NonConvergence(
                    "fitted probabilities numerically 0 or 1; data appear separated".into(),
                ));
            }
            return Ok((theta, iter));
        }
        if iter == LOGISTIC_MAX_ITER {
            break;
        }
        for a in 0..p {
            for b in 0..a {
                hess[(b, a)] = hess[(a, b)];
            }
        }
        let chol = hess.cholesky().ok_or_else(|| {
            Error::SingularDesign("logistic information matrix not positive definite".into())
        })?;
        let step = chol.solve(&grad);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let cand = &theta + &step * scale;
            let cand_eta = design.linear_predictor(cand.as_slice());
            let cand_ll = logistic_loglik(&cand_eta, y, w);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs() {
                theta = cand;
                eta = cand_eta;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence(
                "logistic step halving failed to increase the likelihood".into(),
            ));
        }
    }
    Err(Error::NonConvergence(format!(
        "logistic regression did not converge in {LOGISTIC_MAX_ITER} iterations"
    )))
}

fn assemble_fit(
    family: Family,
    design: &DesignMatrix,
    y: &[f64],
    w: &[f64],
    theta: DVector<f64>,
    iterations: usize,
) -> Result<GlmFit> {
    let n = design.nrows();
    let p = design.ncols();
    let eta = design.linear_predictor(theta.as_slice());
    let fitted: Vec<f64> = match family {
        Family::Linear => eta,
        Family::Logistic => eta.iter().map(|e| expit(*e)).collect(),
    };
    let wsum: f64 = w.iter().sum();
    let mut scores = DMatrix::zeros(n, p);
    let mut info = DMatrix::zeros(p, p);
    for i in 0..n {
        let r = y[i] - fitted[i];
        let v = match family {
            Family::Linear => 1.0,
            Family::Logistic => fitted[i] * (1.0 - fitted[i]),
        };
        for a in 0..p {
            let xa = design.get(i, a);
            scores[(i, a)] = xa * r;
            if w[i] > 0.0 {
                for b in 0..=a {
                    info[(a, b)] += w[i] * v * xa * design.get(i, b);
                }
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            info[(b, a)] = info[(a, b)];
        }
    }
    let bread = &info / wsum;
    let bread_inv = bread
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularDesign("bread matrix not positive definite".into()))?
        .inverse();
    let influence = &scores * &bread_inv;
    let mut meat = DMatrix::zeros(p, p);
    for i in 0..n {
        if w[i] == 0.0 {
            continue;
        }
        let w2 = w[i] * w[i];
        for a in 0..p {
            let da = influence[(i, a)];
            for b in 0..=a {
                meat[(a, b)] += w2 * da * influence[(i, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            meat[(b, a)] = meat[(a, b)];
        }
    }
    let sandwich_cov = meat / (wsum * wsum);
    let dispersion = match family {
        Family::Linear => {
            let rss: f64 = (0..n).map(|i| w[i] * (y[i] - fitted[i]).powi(2)).sum();
            let df = wsum - p as f64;
            if df > 0.0 {
                rss / df
            } else {
                rss / wsum
            }
        }
        Family::Logistic => 1.0,
    };
    let model_cov = &bread_inv * (dispersion / wsum);
    Ok(GlmFit {
        dispersion,
        family,
        theta_hat: theta,
        score_contribs: scores,
        bread,
        influence,
        weights: w.to_vec(),
        fitted,
        converged: true,
        iterations,
        sandwich_cov,
        model_cov,
    })
}

/// Influence functions `Δ_i = A⁻¹ U_i(θ̂)` of a converged fit.
pub fn influence_functions(fit: &GlmFit) -> Result<DMatrix<f64>> {
    if !fit.converged {
        return Err(Error::InvalidInput("fit did not converge".into()));
    }
    let inv = fit
        .bread
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularDesign("bread matrix not positive definite".into()))?
        .inverse();
    Ok(&fit.score_contribs * inv)
}

/// Robust covariance `(Σw)⁻² Σ w_i² Δ_i Δ_iᵀ`.
pub fn sandwich_covariance(fit: &GlmFit) -> Result<DMatrix<f64>> {
    let infl = influence_functions(fit)?;
    let p = fit.p();
    let wsum: f64 = fit.weights.iter().sum();
    let mut cov = DMatrix::zeros(p, p);
    for (i, w) in fit.weights.iter().enumerate() {
        let row = infl.row(i);
        cov += row.transpose() * row * (w * w);
    }
    Ok(cov / (wsum * wsum))
}
