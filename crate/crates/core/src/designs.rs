//! Synthetic cohorts, two-phase sampling schemes and NWTS ingestion.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::glm::expit;

/// Standard grids of `(β₀, δ₀)` pairs, calibrated so the pseudo-true slope is 1.
pub const CASE_CONTROL_GRID: [(f64, f64); 5] =
    [(1.0, 0.0), (0.844, 0.7), (0.692, 1.4), (0.541, 2.1), (0.381, 2.8)];
pub const ADDITIVE_GRID: [(f64, f64); 6] = [
    (1.0, 0.0),
    (0.951, 0.068),
    (0.904, 0.131),
    (0.861, 0.191),
    (0.820, 0.247),
    (0.781, 0.3),
];
pub const MULTIPLICATIVE_GRID: [(f64, f64); 6] = [
    (1.0, 0.0),
    (1.045, -0.068),
    (1.087, -0.131),
    (1.127, -0.191),
    (1.165, -0.247),
    (1.2, -0.3),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    CaseControl,
    SurrogateAdditive,
    SurrogateMultiplicative,
    Nwts,
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::CaseControl => "case-control",
            ScenarioKind::SurrogateAdditive => "surrogate-additive",
            ScenarioKind::SurrogateMultiplicative => "surrogate-multiplicative",
            ScenarioKind::Nwts => "nwts",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "case-control" => Ok(ScenarioKind::CaseControl),
            "surrogate-additive" => Ok(ScenarioKind::SurrogateAdditive),
            "surrogate-multiplicative" => Ok(ScenarioKind::SurrogateMultiplicative),
            "nwts" => Ok(ScenarioKind::Nwts),
            other => Err(Error::Config(format!("unknown scenario '{other}'"))),
        }
    }

    pub fn is_surrogate(&self) -> bool {
        matches!(
            self,
            ScenarioKind::SurrogateAdditive | ScenarioKind::SurrogateMultiplicative
        )
    }

    /// Default `(β₀, δ₀)` grid for the scenario.
    pub fn grid(&self) -> Vec<(f64, f64)> {
        match self {
            ScenarioKind::CaseControl => CASE_CONTROL_GRID.to_vec(),
            ScenarioKind::SurrogateAdditive => ADDITIVE_GRID.to_vec(),
            ScenarioKind::SurrogateMultiplicative => MULTIPLICATIVE_GRID.to_vec(),
            ScenarioKind::Nwts => vec![(f64::NAN, f64::NAN)],
        }
    }
}

/// Which `|Z|` stratum carries the `δ₀ X` interaction in the surrogate model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InteractionRegion {
    /// `|Z| ≤ ζ₀`; the tabulated grids give a pseudo-true slope of 1 here.
    Intermediate,
    /// `|Z| > ζ₀`.
    Extreme,
}

/// How the intermediate stratum is subsampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntermediateSampling {
    /// Independent Bernoulli draws (Poisson sampling).
    Bernoulli,
    /// Simple random sample of `round(rate · size)` units.
    FixedSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub alpha0: f64,
    pub beta0: f64,
    pub delta0: f64,
    /// Spline knot ξ (case-control) or stratum cut-off ζ₀ (surrogate).
    pub knot: f64,
    pub cohort_size: usize,
    pub intermediate_rate: f64,
    pub intermediate_sampling: IntermediateSampling,
    pub interaction_region: InteractionRegion,
    pub target_beta: f64,
}

impl Scenario {
    pub fn case_control(beta0: f64, delta0: f64) -> Self {
        Scenario {
            kind: ScenarioKind::CaseControl,
            alpha0: -5.0,
            beta0,
            delta0,
            knot: 1.8,
            cohort_size: 10_000,
            intermediate_rate: 1.0,
            intermediate_sampling: IntermediateSampling::Bernoulli,
            interaction_region: InteractionRegion::Extreme,
            target_beta: 1.0,
        }
    }

    pub fn surrogate_additive(beta0: f64, delta0: f64) -> Self {
        Scenario {
            kind: ScenarioKind::SurrogateAdditive,
            alpha0: 0.0,
            beta0,
            delta0,
            knot: additive_cutoff(),
            cohort_size: 5_000,
            intermediate_rate: 0.05,
            intermediate_sampling: IntermediateSampling::Bernoulli,
            interaction_region: InteractionRegion::Intermediate,
            target_beta: 1.0,
        }
    }

    pub fn surrogate_multiplicative(beta0: f64, delta0: f64) -> Self {
        Scenario {
            kind: ScenarioKind::SurrogateMultiplicative,
            knot: multiplicative_cutoff(),
            ..Self::surrogate_additive(beta0, delta0)
        }
    }

    pub fn nwts() -> Self {
        Scenario {
            kind: ScenarioKind::Nwts,
            alpha0: f64::NAN,
            beta0: f64::NAN,
            delta0: f64::NAN,
            knot: f64::NAN,
            cohort_size: 3915,
            intermediate_rate: 1.0,
            intermediate_sampling: IntermediateSampling::FixedSize,
            interaction_region: InteractionRegion::Extreme,
            target_beta: f64::NAN,
        }
    }

    pub fn for_kind(kind: ScenarioKind, beta0: f64, delta0: f64) -> Self {
        match kind {
            ScenarioKind::CaseControl => Self::case_control(beta0, delta0),
            ScenarioKind::SurrogateAdditive => Self::surrogate_additive(beta0, delta0),
            ScenarioKind::SurrogateMultiplicative => Self::surrogate_multiplicative(beta0, delta0),
            ScenarioKind::Nwts => Self::nwts(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cohort_size == 0 {
            return Err(Error::Config("cohort size must be positive".into()));
        }
        if !(self.intermediate_rate > 0.0 && self.intermediate_rate <= 1.0) {
            return Err(Error::Config("sampling rate must lie in (0, 1]".into()));
        }
        if self.kind != ScenarioKind::Nwts
            && ![self.alpha0, self.beta0, self.delta0, self.knot]
                .iter()
                .all(|v| v.is_finite())
        {
            return Err(Error::Config("scenario parameters must be finite".into()));
        }
        Ok(())
    }

    /// Mean of `Y` (linear predictor for case-control) under the generating model.
    pub fn true_predictor(&self, x: f64, z: f64) -> f64 {
        match self.kind {
            ScenarioKind::CaseControl => {
                self.alpha0 + self.beta0 * x + self.delta0 * (x - self.knot).max(0.0)
            }
            _ => {
                let on = match self.interaction_region {
                    InteractionRegion::Intermediate => z.abs() <= self.knot,
                    InteractionRegion::Extreme => z.abs() > self.knot,
                };
                self.alpha0 + self.beta0 * x + if on { self.delta0 * x } else { 0.0 }
            }
        }
    }
}

/// `F_Z⁻¹(0.95)` for `Z = X + ε`: `√2 Φ⁻¹(0.95)`.
pub fn additive_cutoff() -> f64 {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    std::f64::consts::SQRT_2 * n.inverse_cdf(0.95)
}

/// `F_Z⁻¹(0.95)` for `Z = ηX`, `η ~ Gamma(4, rate 4)`, by quadrature over `η`.
pub fn multiplicative_cutoff() -> f64 {
    static CUT: OnceLock<f64> = OnceLock::new();
    *CUT.get_or_init(|| {
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        // Gamma(4, rate 4) density: 4^4 η^3 e^{-4η} / 3!
        let dens = |e: f64| 256.0 / 6.0 * e.powi(3) * (-4.0 * e).exp();
        let cdf = |z: f64| -> f64 {
            let (a, b, m) = (0.0_f64, 12.0_f64, 24_000usize);
            let h = (b - a) / m as f64;
            let f = |e: f64| {
                if e <= 0.0 {
                    0.0
                } else {
                    dens(e) * normal.cdf(z / e)
                }
            };
            let mut s = f(a) + f(b);
            for k in 1..m {
                let e = a + k as f64 * h;
                s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(e);
            }
            // the η = 0 end contributes Φ(+∞)·dens(0) = 0
            s * h / 3.0
        };
        let (mut lo, mut hi) = (0.5, 5.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < 0.95 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    })
}

/// Extra first-phase columns of the NWTS cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct NwtsColumns {
    /// Raw stage, 1–4.
    pub stage: Vec<u8>,
    pub age: Vec<f64>,
    pub diameter: Vec<f64>,
}

impl NwtsColumns {
    /// Stage III/IV indicator.
    pub fn advanced_stage(&self) -> Vec<f64> {
        self.stage.iter().map(|s| if *s >= 3 { 1.0 } else { 0.0 }).collect()
    }
}

/// First-phase data plus the ground-truth phase-two covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub y: Vec<f64>,
    /// Ground truth; only the sampled entries are visible to estimators.
    pub x: Vec<f64>,
    /// Surrogate `Z` or auxiliary `A` (local histology for NWTS).
    pub z: Vec<f64>,
    pub stratum: Vec<u32>,
    pub nwts: Option<NwtsColumns>,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        for (name, len) in [("x", self.x.len()), ("z", self.z.len()), ("stratum", self.stratum.len())] {
            if len != n {
                return Err(Error::InvalidInput(format!(
                    "cohort column {name} has length {len}, expected {n}"
                )));
            }
        }
        Ok(())
    }

    pub fn cases(&self) -> usize {
        self.y.iter().filter(|v| **v == 1.0).count()
    }
}

/// Phase-two indicators with known inclusion probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseSample {
    pub r: Vec<bool>,
    pub pi: Vec<f64>,
    pub stratum: Vec<u32>,
}

impl TwoPhaseSample {
    pub fn census(n: usize) -> Self {
        TwoPhaseSample {
            r: vec![true; n],
            pi: vec![1.0; n],
            stratum: vec![0; n],
        }
    }

    pub fn s2_size(&self) -> usize {
        self.r.iter().filter(|r| **r).count()
    }

    pub fn sampled_indices(&self) -> Vec<usize> {
        (0..self.r.len()).filter(|i| self.r[*i]).collect()
    }

    pub fn unsampled_indices(&self) -> Vec<usize> {
        (0..self.r.len()).filter(|i| !self.r[*i]).collect()
    }

    pub fn is_census(&self) -> bool {
        self.r.iter().all(|r| *r)
    }
}

/// Case-control cohort: `X ~ N(0,1)`, logistic outcome with a linear spline at ξ.
pub fn gen_casecontrol_cohort<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<Cohort> {
    if scenario.kind != ScenarioKind::CaseControl {
        return Err(Error::InvalidInput("scenario is not case-control".into()));
    }
    scenario.validate()?;
    let n = scenario.cohort_size;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi: f64 = rng.sample(StandardNormal);
        let p = expit(scenario.true_predictor(xi, 0.0));
        let u: f64 = rng.gen();
        x.push(xi);
        y.push(if u < p { 1.0 } else { 0.0 });
    }
    let stratum = y.iter().map(|v| *v as u32).collect();
    Ok(Cohort {
        z: vec![0.0; n],
        y,
        x,
        stratum,
        nwts: None,
    })
}

/// Surrogate cohort: additive `Z = X + ε` or multiplicative `Z = ηX`.
pub fn gen_surrogate_cohort<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<Cohort> {
    if !scenario.kind.is_surrogate() {
        return Err(Error::InvalidInput("scenario is not a surrogate design".into()));
    }
    scenario.validate()?;
    let n = scenario.cohort_size;
    let gamma = Gamma::new(4.0, 0.25).expect("valid gamma");
    let mut x = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut stratum = Vec::with_capacity(n);
    for _ in 0..n {
        let xi: f64 = rng.sample(StandardNormal);
        let zi = match scenario.kind {
            ScenarioKind::SurrogateAdditive => xi + rng.sample::<f64, _>(StandardNormal),
            _ => gamma.sample(rng) * xi,
        };
        let e: f64 = rng.sample(StandardNormal);
        y.push(scenario.true_predictor(xi, zi) + e);
        x.push(xi);
        z.push(zi);
        stratum.push(u32::from(zi.abs() > scenario.knot));
    }
    Ok(Cohort {
        y,
        x,
        z,
        stratum,
        nwts: None,
    })
}

/// Generates the cohort for any simulation scenario.
pub fn gen_cohort<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<Cohort> {
    match scenario.kind {
        ScenarioKind::CaseControl => gen_casecontrol_cohort(scenario, rng),
        ScenarioKind::SurrogateAdditive | ScenarioKind::SurrogateMultiplicative => {
            gen_surrogate_cohort(scenario, rng)
        }
        ScenarioKind::Nwts => Err(Error::InvalidInput(
            "the NWTS cohort is loaded from file, not generated".into(),
        )),
    }
}

/// All cases plus an equal-size simple random sample of controls.
pub fn sample_balanced_casecontrol<R: Rng + ?Sized>(cohort: &Cohort, rng: &mut R) -> Result<TwoPhaseSample> {
    let n = cohort.len();
    let controls: Vec<usize> = (0..n).filter(|i| cohort.y[*i] == 0.0).collect();
    let n_cases = n - controls.len();
    if n_cases == 0 {
        return Err(Error::InvalidInput("cohort has no cases".into()));
    }
    if controls.len() < n_cases {
        return Err(Error::InsufficientControls {
            needed: n_cases,
            available: controls.len(),
        });
    }
    let mut r: Vec<bool> = cohort.y.iter().map(|v| *v == 1.0).collect();
    let pi_control = n_cases as f64 / controls.len() as f64;
    let mut pi = vec![1.0; n];
    for &i in &controls {
        pi[i] = pi_control;
    }
    for k in index::sample(rng, controls.len(), n_cases) {
        r[controls[k]] = true;
    }
    let stratum = cohort.y.iter().map(|v| *v as u32).collect();
    Ok(TwoPhaseSample { r, pi, stratum })
}

/// Takes every unit with `|Z| > ζ₀`; subsamples the intermediate stratum at `rate`.
pub fn sample_stratified_z<R: Rng + ?Sized>(
    cohort: &Cohort,
    rate: f64,
    mode: IntermediateSampling,
    rng: &mut R,
) -> Result<TwoPhaseSample> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidInput(format!("sampling rate {rate} outside (0, 1]")));
    }
    let n = cohort.len();
    let mut r = vec![false; n];
    let mut pi = vec![1.0; n];
    let intermediate: Vec<usize> = (0..n).filter(|i| cohort.stratum[*i] == 0).collect();
    for i in 0..n {
        if cohort.stratum[i] != 0 {
            r[i] = true;
        }
    }
    match mode {
        IntermediateSampling::Bernoulli => {
            for &i in &intermediate {
                pi[i] = rate;
                let u: f64 = rng.gen();
                r[i] = rate >= 1.0 || u < rate;
            }
        }
        IntermediateSampling::FixedSize => {
            let m = ((rate * intermediate.len() as f64).round() as usize).max(1).min(intermediate.len());
            let p = if intermediate.is_empty() {
                1.0
            } else {
                m as f64 / intermediate.len() as f64
            };
            for &i in &intermediate {
                pi[i] = p;
            }
            if !intermediate.is_empty() {
                for k in index::sample(rng, intermediate.len(), m) {
                    r[intermediate[k]] = true;
                }
            }
        }
    }
    Ok(TwoPhaseSample {
        r,
        pi,
        stratum: cohort.stratum.clone(),
    })
}

/// Draws the phase-two sample appropriate to the scenario.
pub fn draw_sample<R: Rng + ?Sized>(scenario: &Scenario, cohort: &Cohort, rng: &mut R) -> Result<TwoPhaseSample> {
    match scenario.kind {
        ScenarioKind::CaseControl => sample_balanced_casecontrol(cohort, rng),
        ScenarioKind::SurrogateAdditive | ScenarioKind::SurrogateMultiplicative => sample_stratified_z(
            cohort,
            scenario.intermediate_rate,
            scenario.intermediate_sampling,
            rng,
        ),
        ScenarioKind::Nwts => sample_nwts_design(cohort, rng),
    }
}

/// Column names of the NWTS file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NwtsColumnMap {
    pub relapse: String,
    pub instit: String,
    pub histol: String,
    pub stage: String,
    pub age: String,
    pub diameter: String,
}

impl Default for NwtsColumnMap {
    fn default() -> Self {
        NwtsColumnMap {
            relapse: "relaps".into(),
            instit: "instit".into(),
            histol: "histol".into(),
            stage: "stage".into(),
            age: "age".into(),
            diameter: "tumdiam".into(),
        }
    }
}

fn parse_histology(raw: &str, line: usize, column: &str) -> Result<f64> {
    // accepts 0/1 coding or the 1 = favorable / 2 = unfavorable coding
    match raw.trim() {
        "0" => Ok(0.0),
        "1" => Ok(f64::NAN), // resolved once the column's coding is known
        "2" => Ok(1.0),
        other => Err(Error::ParseError {
            line,
            message: format!("column {column}: histology code '{other}' not in {{0,1,2}}"),
        }),
    }
}

fn resolve_histology(codes: &mut [f64], raw_has_two: bool) {
    // a column containing 2 uses 1/2 coding, so a raw 1 means favorable
    for c in codes.iter_mut() {
        if c.is_nan() {
            *c = if raw_has_two { 0.0 } else { 1.0 };
        }
    }
}

fn parse_f64(raw: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::ParseError {
        line,
        message: format!("column {column}: '{raw}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::ParseError {
            line,
            message: format!("column {column}: non-finite value"),
        });
    }
    Ok(v)
}

/// Reads an NWTS cohort from delimited text with a header row.
pub fn read_nwts<Rd: Read>(reader: Rd, columns: &NwtsColumnMap) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::SchemaError(e.to_string()))?
        .clone();
    let lookup: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim_matches('"'), i)).collect();
    let col = |name: &str| -> Result<usize> {
        lookup
            .get(name)
            .copied()
            .ok_or_else(|| Error::SchemaError(format!("missing column '{name}'")))
    };
    let (ci_rel, ci_inst, ci_hist, ci_stage, ci_age, ci_diam) = (
        col(&columns.relapse)?,
        col(&columns.instit)?,
        col(&columns.histol)?,
        col(&columns.stage)?,
        col(&columns.age)?,
        col(&columns.diameter)?,
    );
    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut z = Vec::new();
    let mut stage = Vec::new();
    let mut age = Vec::new();
    let mut diameter = Vec::new();
    let (mut inst_two, mut hist_two) = (false, false);
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::ParseError {
            line,
            message: e.to_string(),
        })?;
        let field = |i: usize, name: &str| -> Result<&str> {
            rec.get(i).ok_or_else(|| Error::ParseError {
                line,
                message: format!("missing field for column {name}"),
            })
        };
        let rel = parse_f64(field(ci_rel, &columns.relapse)?, line, &columns.relapse)?;
        if rel != 0.0 && rel != 1.0 {
            return Err(Error::ParseError {
                line,
                message: format!("relapse indicator {rel} not 0/1"),
            });
        }
        let inst_raw = field(ci_inst, &columns.instit)?;
        let hist_raw = field(ci_hist, &columns.histol)?;
        inst_two |= inst_raw.trim() == "2";
        hist_two |= hist_raw.trim() == "2";
        let st = parse_f64(field(ci_stage, &columns.stage)?, line, &columns.stage)?;
        if !(1.0..=4.0).contains(&st) || st.fract() != 0.0 {
            return Err(Error::ParseError {
                line,
                message: format!("stage {st} not in 1..4"),
            });
        }
        y.push(rel);
        z.push(parse_histology(inst_raw, line, &columns.instit)?);
        x.push(parse_histology(hist_raw, line, &columns.histol)?);
        stage.push(st as u8);
        age.push(parse_f64(field(ci_age, &columns.age)?, line, &columns.age)?);
        diameter.push(parse_f64(field(ci_diam, &columns.diameter)?, line, &columns.diameter)?);
    }
    resolve_histology(&mut z, inst_two);
    resolve_histology(&mut x, hist_two);
    let n = y.len();
    if n == 0 {
        return Err(Error::SchemaError("file has no data rows".into()));
    }
    Ok(Cohort {
        y,
        x,
        z,
        stratum: vec![0; n],
        nwts: Some(NwtsColumns {
            stage,
            age,
            diameter,
        }),
    })
}

pub fn load_nwts(path: &Path, columns: &NwtsColumnMap) -> Result<Cohort> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_nwts(std::io::BufReader::new(file), columns)
}

/// Writes an NWTS cohort in the 0/1 histology coding.
pub fn write_nwts<W: Write>(cohort: &Cohort, columns: &NwtsColumnMap, writer: W) -> Result<()> {
    let extra = cohort
        .nwts
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("cohort has no NWTS columns".into()))?;
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record([
        &columns.relapse,
        &columns.instit,
        &columns.histol,
        &columns.stage,
        &columns.age,
        &columns.diameter,
    ])
    .map_err(io)?;
    for i in 0..cohort.len() {
        w.write_record([
            format!("{}", cohort.y[i]),
            format!("{}", cohort.z[i]),
            format!("{}", cohort.x[i]),
            format!("{}", extra.stage[i]),
            format!("{}", extra.age[i]),
            format!("{}", extra.diameter[i]),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// NWTS design: relapsed or locally unfavorable units with certainty, then
/// per raw stage a simple random sample of the remaining units matching that
/// stage's relapse count.
pub fn sample_nwts_design<R: Rng + ?Sized>(cohort: &Cohort, rng: &mut R) -> Result<TwoPhaseSample> {
    let extra = cohort
        .nwts
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("cohort has no stage column".into()))?;
    let n = cohort.len();
    let mut r = vec![false; n];
    let mut pi = vec![1.0; n];
    let mut stratum = vec![0u32; n];
    for i in 0..n {
        if cohort.y[i] == 1.0 || cohort.z[i] == 1.0 {
            r[i] = true;
        }
    }
    for level in 1..=4u8 {
        let cases = (0..n)
            .filter(|i| extra.stage[*i] == level && cohort.y[*i] == 1.0)
            .count();
        let pool: Vec<usize> = (0..n)
            .filter(|i| extra.stage[*i] == level && cohort.y[*i] == 0.0 && cohort.z[*i] == 0.0)
            .collect();
        for &i in &pool {
            stratum[i] = u32::from(level);
        }
        if pool.is_empty() {
            continue;
        }
        if pool.len() <= cases {
            if pool.len() < cases {
                log::warn!(
                    "stage {level}: {} controls available for {cases} cases; taking all",
                    pool.len()
                );
            }
            for &i in &pool {
                r[i] = true;
            }
            continue;
        }
        let p = cases as f64 / pool.len() as f64;
        for &i in &pool {
            pi[i] = p;
        }
        for k in index::sample(rng, pool.len(), cases) {
            r[pool[k]] = true;
        }
    }
    Ok(TwoPhaseSample { r, pi, stratum })
}
