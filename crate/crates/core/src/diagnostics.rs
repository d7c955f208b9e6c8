//! Misspecification diagnostics: the most powerful test of the working model
//! against the generating model, a kernel-smoothing lack-of-fit test, and the
//! correlation between the MLE-minus-raking difference and the log-likelihood ratio.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::designs::{Cohort, Scenario, ScenarioKind};
use crate::error::{Error, Result};
use crate::glm::{expit, softplus, Family};
use crate::imputation::wild_multiplier;
use crate::oracle::PseudoTrue;
use crate::rng::StreamId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    MostPowerful,
    KernelLinearity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    pub level: f64,
    pub method: TestMethod,
    pub bootstrap_reps: usize,
}

// ---------------------------------------------------------------------------
// Most powerful test

fn unit_log_ratio(s: &Scenario, star: &PseudoTrue, y: f64, x: f64, z: f64) -> f64 {
    let eta0 = s.true_predictor(x, z);
    let eta1 = star.alpha + star.beta * x;
    match s.kind {
        ScenarioKind::CaseControl => y * (eta0 - eta1) - softplus(eta0) + softplus(eta1),
        _ => 0.5 * ((y - eta1).powi(2) - (y - eta0).powi(2)),
    }
}

/// `Σ log p(Yᵢ | Xᵢ, Zᵢ; θ₀) − log q(Yᵢ | Xᵢ; θ*)` over the full cohort.
/// Both models have unit residual variance in the Gaussian scenarios.
pub fn mp_statistic(s: &Scenario, star: &PseudoTrue, cohort: &Cohort) -> f64 {
    (0..cohort.len())
        .map(|i| unit_log_ratio(s, star, cohort.y[i], cohort.x[i], cohort.z[i]))
        .sum()
}

/// Null distribution summary of the statistic under the working model.
#[derive(Debug, Clone, PartialEq)]
pub struct MpCalibration {
    pub critical: f64,
    /// Probability of rejecting when the statistic equals `critical`.
    pub tie_probability: f64,
    pub null_reps: usize,
    pub level: f64,
}

fn null_statistic<R: Rng + ?Sized>(s: &Scenario, star: &PseudoTrue, rng: &mut R) -> f64 {
    let gamma = Gamma::new(4.0, 0.25).expect("valid gamma");
    let mut total = 0.0;
    for _ in 0..s.cohort_size {
        let x: f64 = rng.sample(StandardNormal);
        let z = match s.kind {
            ScenarioKind::SurrogateAdditive => x + rng.sample::<f64, _>(StandardNormal),
            ScenarioKind::SurrogateMultiplicative => gamma.sample(rng) * x,
            _ => 0.0,
        };
        let eta1 = star.alpha + star.beta * x;
        let y = match s.kind {
            ScenarioKind::CaseControl => {
                if rng.gen::<f64>() < expit(eta1) {
                    1.0
                } else {
                    0.0
                }
            }
            _ => eta1 + rng.sample::<f64, _>(StandardNormal),
        };
        total += unit_log_ratio(s, star, y, x, z);
    }
    total
}

/// Simulates the statistic under the working model to find the level-`level`
/// critical value of the randomized Neyman–Pearson test.
pub fn mp_calibrate(s: &Scenario, star: &PseudoTrue, reps: usize, level: f64, stream: &StreamId) -> Result<MpCalibration> {
    if reps < 20 {
        return Err(Error::InvalidInput("at least 20 null replicates are needed".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("level {level} outside (0, 1)")));
    }
    let mut null: Vec<f64> = (0..reps)
        .map(|k| null_statistic(s, star, &mut stream.child("mp-null", k as u64).rng()))
        .collect();
    null.sort_by(|a, b| a.total_cmp(b));
    let idx = (((1.0 - level) * reps as f64).ceil() as usize).clamp(1, reps) - 1;
    let critical = null[idx];
    let above = null.iter().filter(|v| **v > critical).count() as f64 / reps as f64;
    let at = null.iter().filter(|v| **v == critical).count() as f64 / reps as f64;
    let tie_probability = ((level - above) / at).clamp(0.0, 1.0);
    Ok(MpCalibration {
        critical,
        tie_probability,
        null_reps: reps,
        level,
    })
}

/// Randomized most powerful test of the working model `θ*` against `θ₀`.
pub fn mp_test<R: Rng + ?Sized>(
    s: &Scenario,
    star: &PseudoTrue,
    cohort: &Cohort,
    calibration: &MpCalibration,
    rng: &mut R,
) -> TestResult {
    let stat = mp_statistic(s, star, cohort);
    let reject = if stat > calibration.critical {
        true
    } else if stat == calibration.critical {
        rng.gen::<f64>() < calibration.tie_probability
    } else {
        false
    };
    TestResult {
        statistic: stat,
        p_value: if reject { calibration.level } else { 1.0 },
        reject,
        level: calibration.level,
        method: TestMethod::MostPowerful,
        bootstrap_reps: calibration.null_reps,
    }
}

// ---------------------------------------------------------------------------
// Kernel regression

#[derive(Debug, Clone, PartialEq)]
pub struct KernelFit {
    pub bandwidth: f64,
    /// `m̂(xᵢ)`.
    pub fitted: Vec<f64>,
    /// Leave-one-out criterion `Σ (yᵢ − m̂₋ᵢ(xᵢ))²` at this bandwidth.
    pub cv_score: f64,
    /// Points where every kernel weight underflowed and the nearest
    /// neighbour's response was used instead.
    pub degenerate: Vec<usize>,
}

fn check_xy(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < min {
        return Err(Error::InvalidInput(format!("need at least {min} points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite data".into()));
    }
    Ok(())
}

/// Index of the nearest `x[j]` to `x[i]` with `j ≠ i` when `exclude_self`.
fn nearest(x: &[f64], i: usize, exclude_self: bool) -> usize {
    let mut best = i;
    let mut dist = f64::INFINITY;
    for (j, v) in x.iter().enumerate() {
        if exclude_self && j == i {
            continue;
        }
        let d = (v - x[i]).abs();
        if d < dist {
            dist = d;
            best = j;
        }
    }
    best
}

/// Nadaraya–Watson estimator with a Gaussian kernel, evaluated at the data.
pub fn kernel_regression(x: &[f64], y: &[f64], bandwidth: f64) -> Result<KernelFit> {
    check_xy(x, y, 2)?;
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidInput(format!("bandwidth {bandwidth} must be positive")));
    }
    let n = x.len();
    let c = -0.5 / (bandwidth * bandwidth);
    let mut fitted = vec![0.0; n];
    let mut cv = 0.0;
    let mut degenerate = Vec::new();
    for i in 0..n {
        let (mut sw, mut swy) = (0.0, 0.0);
        for j in 0..n {
            let k = ((x[i] - x[j]).powi(2) * c).exp();
            sw += k;
            swy += k * y[j];
        }
        fitted[i] = swy / sw;
        let loo_w = sw - 1.0;
        let loo = if loo_w > 1e-12 * sw {
            (swy - y[i]) / loo_w
        } else {
            y[nearest(x, i, true)]
        };
        cv += (y[i] - loo).powi(2);
        if !fitted[i].is_finite() {
            degenerate.push(i);
            fitted[i] = y[nearest(x, i, false)];
        }
    }
    Ok(KernelFit {
        bandwidth,
        fitted,
        cv_score: cv,
        degenerate,
    })
}

/// Silverman's rule-of-thumb bandwidth `0.9 min(sd, IQR/1.34) n^{-1/5}`.
pub fn reference_bandwidth(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| {
        let pos = p * (n - 1.0);
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if spread > 0.0 {
        0.9 * spread * n.powf(-0.2)
    } else {
        1.0
    }
}

/// Logarithmic bandwidth grid relative to the reference bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthGrid {
    pub points: usize,
    pub lower: f64,
    pub upper: f64,
}

impl Default for BandwidthGrid {
    fn default() -> Self {
        BandwidthGrid {
            points: 40,
            lower: 0.05,
            upper: 5.0,
        }
    }
}

impl BandwidthGrid {
    pub fn values(&self, reference: f64) -> Vec<f64> {
        let (a, b) = (self.lower.ln(), self.upper.ln());
        (0..self.points)
            .map(|k| reference * (a + (b - a) * k as f64 / (self.points - 1).max(1) as f64).exp())
            .collect()
    }
}

/// Sample sizes above this use the binned FFT smoother.
pub const EXACT_KERNEL_LIMIT: usize = 1000;
const BINS: usize = 2048;

/// Linear-binning approximation of the Gaussian Nadaraya–Watson sums.
/// The covariate is fixed, so bin weights and smoothed counts are reused
/// across responses.
pub struct BinnedSmoother {
    /// Nearest other data point, for leave-one-out fallbacks.
    neighbour: Vec<usize>,
    left: Vec<usize>,
    frac: Vec<f64>,
    delta: f64,
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    count_spectrum: Vec<Complex<f64>>,
    /// Kernel spectrum and smoothed counts at the data, by bandwidth.
    kernel_cache: HashMap<u64, (Vec<Complex<f64>>, Vec<f64>)>,
}

impl BinnedSmoother {
    pub fn new(x: &[f64]) -> Self {
        let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let range = (hi - lo).max(f64::MIN_POSITIVE);
        let delta = range / (BINS - 1) as f64;
        let mut left = Vec::with_capacity(x.len());
        let mut frac = Vec::with_capacity(x.len());
        for v in x {
            let pos = ((v - lo) / delta).clamp(0.0, (BINS - 1) as f64);
            let l = (pos.floor() as usize).min(BINS - 2);
            left.push(l);
            frac.push(pos - l as f64);
        }
        let len = (2 * BINS).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(len);
        let inv = planner.plan_fft_inverse(len);
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|a, b| x[*a].total_cmp(&x[*b]));
        let mut neighbour = vec![0; x.len()];
        for (k, i) in order.iter().enumerate() {
            let before = k.checked_sub(1).map(|j| order[j]);
            let after = order.get(k + 1).copied();
            neighbour[*i] = match (before, after) {
                (Some(a), Some(b)) => {
                    if x[*i] - x[a] <= x[b] - x[*i] {
                        a
                    } else {
                        b
                    }
                }
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => *i,
            };
        }
        let mut s = BinnedSmoother {
            neighbour,
            left,
            frac,
            delta,
            len,
            fwd,
            inv,
            count_spectrum: Vec::new(),
            kernel_cache: HashMap::new(),
        };
        let ones = vec![1.0; x.len()];
        s.count_spectrum = s.spectrum(&ones);
        s
    }

    fn spectrum(&self, values: &[f64]) -> Vec<Complex<f64>> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.len];
        for ((l, f), v) in self.left.iter().zip(&self.frac).zip(values) {
            buf[*l].re += (1.0 - f) * v;
            buf[*l + 1].re += f * v;
        }
        self.fwd.process(&mut buf);
        buf
    }

    /// Caches the kernel spectrum and smoothed counts for bandwidth `h`.
    fn ensure_kernel(&mut self, h: f64) -> u64 {
        let key = h.to_bits();
        if !self.kernel_cache.contains_key(&key) {
            if self.kernel_cache.len() >= 256 {
                self.kernel_cache.clear();
            }
            let mut buf = vec![Complex::new(0.0, 0.0); self.len];
            let c = -0.5 * (self.delta / h).powi(2);
            for d in 0..BINS {
                let v = ((d * d) as f64 * c).exp();
                buf[d].re = v;
                if d > 0 {
                    buf[self.len - d].re = v;
                }
            }
            self.fwd.process(&mut buf);
            let counts = self.smooth_at_points(&self.count_spectrum, &buf);
            self.kernel_cache.insert(key, (buf, counts));
        }
        key
    }

    /// Smoothed sums interpolated back to the data points.
    fn smooth_at_points(&self, spec: &[Complex<f64>], kernel: &[Complex<f64>]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = spec.iter().zip(kernel).map(|(a, b)| a * b).collect();
        self.inv.process(&mut buf);
        let scale = 1.0 / self.len as f64;
        self.left
            .iter()
            .zip(&self.frac)
            .map(|(l, f)| ((1.0 - f) * buf[*l].re + f * buf[*l + 1].re) * scale)
            .collect()
    }

    /// `(fitted, cv_score)` for response spectrum `y_spec` at bandwidth `h`.
    /// Leave-one-out sums remove each point's own binned contribution.
    fn evaluate(&mut self, y: &[f64], y_spec: &[Complex<f64>], h: f64) -> (Vec<f64>, f64) {
        let key = self.ensure_kernel(h);
        let (k, counts) = &self.kernel_cache[&key];
        let sums = self.smooth_at_points(y_spec, k);
        let k1 = (-0.5 * (self.delta / h).powi(2)).exp();
        let mut fitted = Vec::with_capacity(y.len());
        let mut cv = 0.0;
        for i in 0..y.len() {
            let f = self.frac[i];
            let own = (1.0 - f) * (1.0 - f) + f * f + 2.0 * f * (1.0 - f) * k1;
            let c = counts[i];
            fitted.push(if c > 1e-300 { sums[i] / c } else { y[i] });
            let loo_w = c - own;
            let loo = if loo_w > 1e-8 * c.max(1.0) {
                (sums[i] - own * y[i]) / loo_w
            } else {
                y[self.neighbour[i]]
            };
            cv += (y[i] - loo).powi(2);
        }
        (fitted, cv)
    }
}

enum Evaluator<'a> {
    Exact { x: &'a [f64], y: &'a [f64] },
    Binned { smoother: &'a mut BinnedSmoother, y: &'a [f64], spec: Vec<Complex<f64>> },
}

impl Evaluator<'_> {
    fn cv(&mut self, h: f64) -> f64 {
        match self {
            Evaluator::Exact { x, y } => kernel_regression(x, y, h).map(|f| f.cv_score).unwrap_or(f64::INFINITY),
            Evaluator::Binned { smoother, y, spec } => smoother.evaluate(y, spec, h).1,
        }
    }

    fn fit(&mut self, h: f64) -> Result<KernelFit> {
        match self {
            Evaluator::Exact { x, y } => kernel_regression(x, y, h),
            Evaluator::Binned { smoother, y, spec } => {
                let (fitted, cv) = smoother.evaluate(y, spec, h);
                Ok(KernelFit {
                    bandwidth: h,
                    fitted,
                    cv_score: cv,
                    degenerate: Vec::new(),
                })
            }
        }
    }
}

/// Golden-section iterations after the grid search; the bracket shrinks to
/// under 1% of one log-grid step.
const GOLDEN_STEPS: usize = 10;

fn select(eval: &mut Evaluator<'_>, reference: f64, grid: &BandwidthGrid) -> f64 {
    let hs = grid.values(reference);
    let scores: Vec<f64> = hs.iter().map(|h| eval.cv(*h)).collect();
    let finite: Vec<f64> = scores.iter().cloned().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return reference;
    }
    let min = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max - min <= 1e-12 * (1.0 + min.abs()) {
        return reference;
    }
    let k = scores
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .expect("finite score exists");
    let (mut a, mut b) = (
        hs[k.saturating_sub(1)].ln(),
        hs[(k + 1).min(hs.len() - 1)].ln(),
    );
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = eval.cv(c.exp());
    let mut fd = eval.cv(d.exp());
    for _ in 0..GOLDEN_STEPS {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = eval.cv(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = eval.cv(d.exp());
        }
    }
    let (h_best, f_best) = if fc < fd { (c.exp(), fc) } else { (d.exp(), fd) };
    if f_best <= scores[k] {
        h_best
    } else {
        hs[k]
    }
}

/// Leave-one-out cross-validated bandwidth.
pub fn loo_bandwidth(x: &[f64], y: &[f64], grid: &BandwidthGrid) -> Result<f64> {
    check_xy(x, y, 3)?;
    let reference = reference_bandwidth(x);
    if x.len() <= EXACT_KERNEL_LIMIT {
        Ok(select(&mut Evaluator::Exact { x, y }, reference, grid))
    } else {
        let mut smoother = BinnedSmoother::new(x);
        let spec = smoother.spectrum(y);
        Ok(select(
            &mut Evaluator::Binned {
                smoother: &mut smoother,
                y,
                spec,
            },
            reference,
            grid,
        ))
    }
}

// ---------------------------------------------------------------------------
// Lack-of-fit test

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GofOptions {
    /// Linear: wild-bootstrap null; logistic: Bernoulli draws from the fit.
    pub family: Family,
    pub bootstrap_reps: usize,
    pub level: f64,
    pub grid: BandwidthGrid,
}

impl GofOptions {
    pub fn new(family: Family, bootstrap_reps: usize) -> Self {
        GofOptions {
            family,
            bootstrap_reps,
            level: 0.05,
            grid: BandwidthGrid::default(),
        }
    }
}

/// Fitted means of the simple linear or logistic regression of `y` on `x`.
fn simple_fit(family: Family, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::SingularDesign("constant covariate".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if family == Family::Linear {
        let b = sxy / sxx;
        return Ok(x.iter().map(|v| my + b * (v - mx)).collect());
    }
    if !(my > 0.0 && my < 1.0) {
        return Err(Error::NonConvergence("all responses equal".into()));
    }
    // Newton on the centred covariate
    let (mut a, mut b) = ((my / (1.0 - my)).ln(), 0.0);
    let loglik = |a: f64, b: f64| -> f64 {
        x.iter()
            .zip(y)
            .map(|(v, t)| {
                let eta = a + b * (v - mx);
                t * eta - softplus(eta)
            })
            .sum()
    };
    let mut ll = loglik(a, b);
    for _ in 0..100 {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (v, t) in x.iter().zip(y) {
            let c = v - mx;
            let p = expit(a + b * c);
            let w = p * (1.0 - p);
            g0 += t - p;
            g1 += (t - p) * c;
            h00 += w;
            h01 += w * c;
            h11 += w * c * c;
        }
        let det = h00 * h11 - h01 * h01;
        if !(det > 0.0) {
            return Err(Error::NonConvergence("singular logistic information".into()));
        }
        let (da, db) = ((h11 * g0 - h01 * g1) / det, (h00 * g1 - h01 * g0) / det);
        let mut step = 1.0;
        loop {
            let cand = loglik(a + step * da, b + step * db);
            if cand >= ll - 1e-12 * ll.abs() || step < 1e-10 {
                a += step * da;
                b += step * db;
                ll = cand;
                break;
            }
            step *= 0.5;
        }
        if (step * da).abs().max((step * db).abs()) < 1e-10 * (1.0 + a.abs().max(b.abs())) {
            if b.abs() * x.iter().map(|v| (v - mx).abs()).fold(0.0, f64::max) + a.abs() > 36.0 {
                return Err(Error::NonConvergence("fitted probabilities numerically 0 or 1".into()));
            }
            return Ok(x.iter().map(|v| expit(a + b * (v - mx))).collect());
        }
    }
    Err(Error::NonConvergence("logistic fit did not converge".into()))
}

struct GofWorkspace<'a> {
    x: &'a [f64],
    smoother: Option<BinnedSmoother>,
    reference: f64,
    family: Family,
    grid: BandwidthGrid,
}

impl GofWorkspace<'_> {
    /// `(ℓ, parametric fitted values)` for response `y`.
    fn statistic(&mut self, y: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let n = y.len() as f64;
        let fitted = simple_fit(self.family, self.x, y)?;
        let mse_param = y.iter().zip(&fitted).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
        let kfit = match self.smoother.as_mut() {
            None => {
                let mut ev = Evaluator::Exact { x: self.x, y };
                let h = select(&mut ev, self.reference, &self.grid);
                ev.fit(h)?
            }
            Some(sm) => {
                let spec = sm.spectrum(y);
                let mut ev = Evaluator::Binned { smoother: sm, y, spec };
                let h = select(&mut ev, self.reference, &self.grid);
                ev.fit(h)?
            }
        };
        let mse_kernel = y.iter().zip(&kfit.fitted).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
        let resid = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        Ok((mse_param - mse_kernel, fitted, resid))
    }
}

/// Bootstrap test of a linear (or linear-logistic) mean in `x` against a
/// kernel-smoothed alternative. The statistic is the parametric MSE minus
/// the kernel MSE; the p-value is `(1 + #{ℓ* > ℓ}) / (B + 1)`.
pub fn gof_linearity_test(x: &[f64], y: &[f64], options: &GofOptions, stream: &StreamId) -> Result<TestResult> {
    check_xy(x, y, 10)?;
    if options.bootstrap_reps < 50 {
        return Err(Error::InvalidInput(format!(
            "at least 50 bootstrap replicates are needed, got {}",
            options.bootstrap_reps
        )));
    }
    let mut ws = GofWorkspace {
        x,
        smoother: (x.len() > EXACT_KERNEL_LIMIT).then(|| BinnedSmoother::new(x)),
        reference: reference_bandwidth(x),
        family: options.family,
        grid: options.grid,
    };
    let (stat, fitted, resid) = ws.statistic(y)?;
    let mut exceed = 0usize;
    let mut ystar = vec![0.0; y.len()];
    for b in 0..options.bootstrap_reps {
        let mut rng = stream.child("gof-bootstrap", b as u64).rng();
        for i in 0..y.len() {
            ystar[i] = match options.family {
                Family::Linear => fitted[i] + wild_multiplier(&mut rng) * resid[i],
                Family::Logistic => {
                    if rng.gen::<f64>() < fitted[i] {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
        }
        match ws.statistic(&ystar) {
            Ok((s, _, _)) => {
                if s > stat {
                    exceed += 1;
                }
            }
            // a degenerate resample cannot contradict the null
            Err(e) if e.is_numerical() => {}
            Err(e) => return Err(e),
        }
    }
    let p_value = (1 + exceed) as f64 / (options.bootstrap_reps + 1) as f64;
    Ok(TestResult {
        statistic: stat,
        p_value,
        reject: p_value <= options.level,
        level: options.level,
        method: TestMethod::KernelLinearity,
        bootstrap_reps: options.bootstrap_reps,
    })
}

// ---------------------------------------------------------------------------
// Correlation diagnostic

/// `|corr|` between paired series, e.g. `β̂_MLE − β̂_raking` against
/// `log Qₙ − log Pₙ` across Monte Carlo replicates.
pub fn mle_raking_lr_correlation(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "need at least 3 replicates, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for (a, b) in pairs {
        saa += (a - ma).powi(2);
        sbb += (b - mb).powi(2);
        sab += (a - ma) * (b - mb);
    }
    if !(saa > 0.0) || !(sbb > 0.0) {
        return Err(Error::DegenerateVariance("a correlation series is constant".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).abs().min(1.0))
}
