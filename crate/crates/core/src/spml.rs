//! Semiparametric maximum likelihood for a Gaussian linear model under
//! stratified two-phase sampling.
//!
//! The within-stratum distribution of `X` is profiled over the phase-two
//! values observed in that stratum. EM alternates posterior weights for the
//! incomplete units with a weighted least-squares update; SQUAREM
//! extrapolation with a likelihood safeguard is used to speed it up.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpmlOptions {
    /// Stop when the log-likelihood gain is below `tol · (1 + |ℓ|)`.
    pub tol: f64,
    /// Cap on likelihood evaluations (EM maps).
    pub max_iter: usize,
    pub accelerate: bool,
}

impl Default for SpmlOptions {
    fn default() -> Self {
        SpmlOptions {
            tol: 1e-8,
            max_iter: 500,
            accelerate: true,
        }
    }
}

/// Profiled covariate distribution in one stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumSupport {
    pub stratum: u32,
    pub points: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpmlFit {
    /// `(α, β)`.
    pub theta: [f64; 2],
    pub sigma2: f64,
    pub support: Vec<StratumSupport>,
    pub loglik: f64,
    /// Log-likelihood at each accepted iterate.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    /// Complete-data covariance of `(α, β)` at the fixed point.
    pub covariance: [[f64; 2]; 2],
}

struct Stratum {
    points: Vec<f64>,
    /// Complete-unit count at each support point.
    counts: Vec<f64>,
    /// Complete units as (y, support index).
    complete: Vec<(f64, usize)>,
    incomplete: Vec<f64>,
    total: f64,
}

#[derive(Clone, Debug)]
struct Params {
    alpha: f64,
    beta: f64,
    log_sigma2: f64,
    q: Vec<Vec<f64>>,
}

impl Params {
    fn flatten(&self) -> Vec<f64> {
        let mut v = vec![self.alpha, self.beta, self.log_sigma2];
        for q in &self.q {
            v.extend_from_slice(q);
        }
        v
    }

    fn unflatten(&self, v: &[f64]) -> Option<Params> {
        let mut q = Vec::with_capacity(self.q.len());
        let mut k = 3;
        for s in &self.q {
            let block = v[k..k + s.len()].to_vec();
            if block.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
                return None;
            }
            let total: f64 = block.iter().sum();
            q.push(block.iter().map(|p| p / total).collect());
            k += s.len();
        }
        if !v[..3].iter().all(|p| p.is_finite()) {
            return None;
        }
        Some(Params {
            alpha: v[0],
            beta: v[1],
            log_sigma2: v[2],
            q,
        })
    }
}

struct Problem {
    strata: Vec<Stratum>,
    ids: Vec<u32>,
    n: f64,
    // complete-unit sufficient statistics
    c_s1: f64,
    c_s2: f64,
    c_sy: f64,
    c_sxy: f64,
    syy: f64,
    s_inc_y: f64,
}

struct Estep {
    loglik: f64,
    next: Params,
    /// Σ w x and Σ w x² over complete and imputed pseudo-units.
    s1: f64,
    s2: f64,
}

impl Problem {
    fn build(y: &[f64], x: &[f64], r: &[bool], strata: &[u32]) -> Result<Problem> {
        let n = y.len();
        for len in [x.len(), r.len(), strata.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, got: len });
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite outcome".into()));
        }
        let mut groups: BTreeMap<u32, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for i in 0..n {
            let g = groups.entry(strata[i]).or_default();
            if r[i] {
                if !x[i].is_finite() {
                    return Err(Error::InvalidInput(format!("unit {i} is sampled but X is not finite")));
                }
                g.0.push(i);
            } else {
                g.1.push(i);
            }
        }
        let mut out = Vec::new();
        let mut ids = Vec::new();
        let (mut c_s1, mut c_s2, mut c_sy, mut c_sxy, mut syy, mut s_inc_y) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for (id, (comp, inc)) in groups {
            if comp.is_empty() {
                if inc.is_empty() {
                    continue;
                }
                return Err(Error::EmptySupport(id));
            }
            let mut points: Vec<f64> = comp.iter().map(|i| x[*i]).collect();
            points.sort_by(|a, b| a.total_cmp(b));
            points.dedup();
            let mut counts = vec![0.0; points.len()];
            let mut complete = Vec::with_capacity(comp.len());
            for &i in &comp {
                let j = points
                    .binary_search_by(|p| p.total_cmp(&x[i]))
                    .expect("support contains every observed value");
                counts[j] += 1.0;
                complete.push((y[i], j));
                c_s1 += x[i];
                c_s2 += x[i] * x[i];
                c_sy += y[i];
                c_sxy += x[i] * y[i];
                syy += y[i] * y[i];
            }
            let incomplete: Vec<f64> = inc.iter().map(|i| y[*i]).collect();
            for v in &incomplete {
                syy += v * v;
                s_inc_y += v;
            }
            ids.push(id);
            out.push(Stratum {
                total: (comp.len() + inc.len()) as f64,
                points,
                counts,
                complete,
                incomplete,
            });
        }
        Ok(Problem {
            strata: out,
            ids,
            n: n as f64,
            c_s1,
            c_s2,
            c_sy,
            c_sxy,
            syy,
            s_inc_y,
        })
    }

    fn initial(&self) -> Result<Params> {
        let mut m = 0.0;
        for s in &self.strata {
            m += s.complete.len() as f64;
        }
        let xbar = self.c_s1 / m;
        let ybar = self.c_sy / m;
        let sxx = self.c_s2 - m * xbar * xbar;
        let beta = if sxx > 0.0 { (self.c_sxy - m * xbar * ybar) / sxx } else { 0.0 };
        let alpha = ybar - beta * xbar;
        let mut rss = 0.0;
        for s in &self.strata {
            for &(y, j) in &s.complete {
                rss += (y - alpha - beta * s.points[j]).powi(2);
            }
        }
        let sigma2 = rss / m;
        if !(sigma2 > 0.0) {
            return Err(Error::DegenerateVariance("phase-two residuals are all zero".into()));
        }
        Ok(Params {
            alpha,
            beta,
            log_sigma2: sigma2.ln(),
            q: self
                .strata
                .iter()
                .map(|s| {
                    let c = s.complete.len() as f64;
                    s.counts.iter().map(|k| k / c).collect()
                })
                .collect(),
        })
    }

    /// One EM map: log-likelihood at `p` and the updated parameters.
    fn em(&self, p: &Params) -> Result<Estep> {
        let sigma2 = p.log_sigma2.exp();
        let inv2s = 0.5 / sigma2;
        let log_norm = -0.5 * (2.0 * PI * sigma2).ln();
        let mut loglik = 0.0;
        let (mut s1, mut s2, mut sxy) = (self.c_s1, self.c_s2, self.c_sxy);
        let mut q_next = Vec::with_capacity(self.strata.len());
        let mut buf = Vec::new();
        for (s, q) in self.strata.iter().zip(&p.q) {
            let means: Vec<f64> = s.points.iter().map(|x| p.alpha + p.beta * x).collect();
            for &(y, j) in &s.complete {
                loglik += log_norm - (y - means[j]).powi(2) * inv2s + q[j].ln();
            }
            let mut mass = s.counts.clone();
            let log_q: Vec<f64> = q.iter().map(|v| v.ln()).collect();
            for &y in &s.incomplete {
                buf.clear();
                let mut total = 0.0;
                for (mj, qj) in means.iter().zip(q) {
                    let e = qj * (-(y - mj).powi(2) * inv2s).exp();
                    buf.push(e);
                    total += e;
                }
                let log_total = if total > 1e-280 {
                    total.ln()
                } else {
                    // recompute in log space when the densities underflow
                    let t: Vec<f64> = means
                        .iter()
                        .zip(&log_q)
                        .map(|(mj, lq)| lq - (y - mj).powi(2) * inv2s)
                        .collect();
                    let mx = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = t.iter().map(|v| (v - mx).exp()).sum();
                    for (b, v) in buf.iter_mut().zip(&t) {
                        *b = (v - mx).exp();
                    }
                    total = z;
                    mx + z.ln()
                };
                loglik += log_norm + log_total;
                let mut ex = 0.0;
                for ((b, x), m) in buf.iter().zip(&s.points).zip(mass.iter_mut()) {
                    let w = b / total;
                    *m += w;
                    ex += w * x;
                    s1 += w * x;
                    s2 += w * x * x;
                }
                sxy += ex * y;
            }
            q_next.push(mass.iter().map(|m| m / s.total).collect::<Vec<f64>>());
        }
        let s0 = self.n;
        let sy = self.c_sy + self.s_inc_y;
        let det = s0 * s2 - s1 * s1;
        if !(det > 0.0) {
            return Err(Error::SingularDesign("expected design information is singular".into()));
        }
        let alpha = (s2 * sy - s1 * sxy) / det;
        let beta = (s0 * sxy - s1 * sy) / det;
        let rss = self.syy - 2.0 * alpha * sy - 2.0 * beta * sxy
            + alpha * alpha * s0
            + 2.0 * alpha * beta * s1
            + beta * beta * s2;
        let sigma2_next = rss / self.n;
        if !(sigma2_next > 0.0) || !loglik.is_finite() {
            return Err(Error::DegenerateVariance("residual variance collapsed".into()));
        }
        Ok(Estep {
            loglik,
            next: Params {
                alpha,
                beta,
                log_sigma2: sigma2_next.ln(),
                q: q_next,
            },
            s1,
            s2,
        })
    }
}

fn decreased(new: f64, old: f64) -> bool {
    new < old - 1e-10 * (1.0 + old.abs())
}

/// Fits `Y = α + βX + e` by semiparametric maximum likelihood. Units with
/// `r[i] = false` have `X` missing by design; `x[i]` is ignored for them.
pub fn spml_twophase(
    y: &[f64],
    x: &[f64],
    r: &[bool],
    strata: &[u32],
    options: &SpmlOptions,
) -> Result<SpmlFit> {
    let prob = Problem::build(y, x, r, strata)?;
    let mut p0 = prob.initial()?;
    let mut e0 = prob.em(&p0)?;
    let mut evals = 1;
    let mut trace = vec![e0.loglik];
    loop {
        if evals >= options.max_iter {
            return Err(Error::NonConvergence(format!(
                "EM did not converge in {} iterations",
                options.max_iter
            )));
        }
        let p1 = e0.next.clone();
        let e1 = prob.em(&p1)?;
        evals += 1;
        if decreased(e1.loglik, e0.loglik) {
            return Err(Error::NonConvergence(format!(
                "EM log-likelihood decreased from {} to {}",
                e0.loglik, e1.loglik
            )));
        }
        let (p_new, e_new) = if options.accelerate {
            let f0 = p0.flatten();
            let f1 = p1.flatten();
            let f2 = e1.next.flatten();
            let rv: Vec<f64> = f1.iter().zip(&f0).map(|(a, b)| a - b).collect();
            let vv: Vec<f64> = (0..f0.len()).map(|k| f2[k] - 2.0 * f1[k] + f0[k]).collect();
            let rn = rv.iter().map(|v| v * v).sum::<f64>().sqrt();
            let vn = vv.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut accepted = None;
            if vn > 0.0 && rn > 0.0 {
                let step = (-rn / vn).min(-1.0);
                let cand: Vec<f64> = (0..f0.len())
                    .map(|k| f0[k] - 2.0 * step * rv[k] + step * step * vv[k])
                    .collect();
                if step < -1.0 {
                    if let Some(pc) = p0.unflatten(&cand) {
                        if let Ok(ec) = prob.em(&pc) {
                            evals += 1;
                            if ec.loglik >= e1.loglik {
                                accepted = Some((pc, ec));
                            }
                        }
                    }
                }
            }
            match accepted {
                Some(a) => a,
                None => {
                    let p2 = e1.next.clone();
                    let e2 = prob.em(&p2)?;
                    evals += 1;
                    (p2, e2)
                }
            }
        } else {
            (p1, e1)
        };
        if decreased(e_new.loglik, e0.loglik) {
            return Err(Error::NonConvergence(format!(
                "EM log-likelihood decreased from {} to {}",
                e0.loglik, e_new.loglik
            )));
        }
        let gain = e_new.loglik - e0.loglik;
        trace.push(e_new.loglik);
        p0 = p_new;
        e0 = e_new;
        if gain < options.tol * (1.0 + e0.loglik.abs()) {
            break;
        }
    }
    let sigma2 = p0.log_sigma2.exp();
    let (s0, s1, s2) = (prob.n, e0.s1, e0.s2);
    let det = s0 * s2 - s1 * s1;
    let covariance = [
        [sigma2 * s2 / det, -sigma2 * s1 / det],
        [-sigma2 * s1 / det, sigma2 * s0 / det],
    ];
    let support = prob
        .strata
        .iter()
        .zip(&prob.ids)
        .zip(&p0.q)
        .map(|((s, id), q)| StratumSupport {
            stratum: *id,
            points: s.points.clone(),
            q: q.clone(),
        })
        .collect();
    Ok(SpmlFit {
        theta: [p0.alpha, p0.beta],
        sigma2,
        support,
        loglik: e0.loglik,
        loglik_trace: trace,
        iterations: evals,
        covariance,
    })
}
