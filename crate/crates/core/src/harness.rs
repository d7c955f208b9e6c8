//! Monte Carlo experiments over scenario grids, summary metrics and reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designs::{
    draw_sample, gen_cohort, load_nwts, sample_nwts_design, Cohort, InteractionRegion, IntermediateSampling,
    NwtsColumnMap, Scenario, ScenarioKind,
};
use crate::diagnostics::{gof_linearity_test, mle_raking_lr_correlation, mp_calibrate, mp_statistic, mp_test, GofOptions};
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorKind, EstimatorSpec};
use crate::imputation::{Engine, ImputationScope};
use crate::model::{ImputationModel, OutcomeModel};
use crate::oracle::{pseudo_true_oracle, PseudoTrue};
use crate::rng::StreamId;

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    /// `(β₀, δ₀)` points; empty means the scenario's standard grid.
    #[serde(default)]
    pub grid: Vec<[f64; 2]>,
    #[serde(default)]
    pub interaction_region: Option<InteractionRegion>,
    #[serde(default)]
    pub intermediate_sampling: Option<IntermediateSampling>,
    #[serde(default)]
    pub cohort_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub label: String,
    pub kind: EstimatorKind,
    #[serde(default)]
    pub engine: Option<Engine>,
    #[serde(default)]
    pub scope: Option<ImputationScope>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub mp: bool,
    pub gof: bool,
    pub correlation: bool,
    pub mp_null_reps: usize,
    pub level: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            mp: false,
            gof: false,
            correlation: false,
            mp_null_reps: 10_000,
            level: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub columns: NwtsColumnMap,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

fn default_imputations() -> usize {
    100
}

fn default_bootstrap() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    /// Monte Carlo replicates `K`.
    pub reps: usize,
    #[serde(default = "default_imputations")]
    pub imputations: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub threads: usize,
    /// Empty means the standard estimator set for the scenario.
    #[serde(default)]
    pub estimators: Vec<EstimatorConfig>,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn new(kind: ScenarioKind, reps: usize, imputations: usize, seed: u64) -> Self {
        ExperimentConfig {
            scenario: ScenarioConfig {
                kind,
                grid: Vec::new(),
                interaction_region: None,
                intermediate_sampling: None,
                cohort_size: None,
            },
            reps,
            imputations,
            bootstrap: default_bootstrap(),
            seed,
            threads: 0,
            estimators: Vec::new(),
            diagnostics: DiagnosticsConfig::default(),
            data: DataConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(Error::Config(format!("need at least 2 replicates, got {}", self.reps)));
        }
        if self.imputations == 0 {
            return Err(Error::Config("need at least 1 imputation".into()));
        }
        if self.diagnostics.gof && self.bootstrap < 50 {
            return Err(Error::Config("the lack-of-fit test needs at least 50 bootstrap replicates".into()));
        }
        let d = &self.diagnostics;
        if self.scenario.kind == ScenarioKind::Nwts && (d.mp || d.gof || d.correlation) {
            return Err(Error::Config("diagnostics are only defined for the simulation scenarios".into()));
        }
        for s in self.estimator_specs() {
            s.validate()?;
        }
        let mut labels: Vec<String> = self.estimator_specs().into_iter().map(|s| s.label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("estimator labels must be unique".into()));
        }
        for p in self.points() {
            self.scenario_at(p).validate()?;
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        if self.scenario.kind == ScenarioKind::Nwts {
            return vec![(0.0, 0.0)];
        }
        if self.scenario.grid.is_empty() {
            self.scenario.kind.grid()
        } else {
            self.scenario.grid.iter().map(|p| (p[0], p[1])).collect()
        }
    }

    pub fn scenario_at(&self, point: (f64, f64)) -> Scenario {
        let mut s = Scenario::for_kind(self.scenario.kind, point.0, point.1);
        if let Some(r) = self.scenario.interaction_region {
            s.interaction_region = r;
        }
        if let Some(m) = self.scenario.intermediate_sampling {
            s.intermediate_sampling = m;
        }
        if let Some(n) = self.scenario.cohort_size {
            s.cohort_size = n;
        }
        s
    }

    pub fn estimator_specs(&self) -> Vec<EstimatorSpec> {
        let outcome = OutcomeModel::for_scenario(self.scenario.kind);
        if self.estimators.is_empty() {
            return default_estimators(self.scenario.kind, self.imputations);
        }
        self.estimators
            .iter()
            .map(|e| {
                let mut spec = match e.engine {
                    Some(engine) => EstimatorSpec::with_engine(&e.label, e.kind, engine, self.imputations, outcome),
                    None => EstimatorSpec::new(&e.label, e.kind, outcome),
                };
                if let Some(scope) = e.scope {
                    spec.scope = scope;
                }
                spec
            })
            .collect()
    }
}

/// The standard estimator set for each scenario.
pub fn default_estimators(kind: ScenarioKind, m: usize) -> Vec<EstimatorSpec> {
    use EstimatorKind as K;
    let om = OutcomeModel::for_scenario(kind);
    match kind {
        ScenarioKind::CaseControl => vec![
            EstimatorSpec::new("MLE", K::MleCasecontrol, om),
            EstimatorSpec::new("IPW", K::Ipw, om),
            EstimatorSpec::with_engine("MI-P", K::Mi, Engine::ParametricNormal, m, om),
            EstimatorSpec::with_engine("MI-B", K::Mi, Engine::Empirical, m, om),
        ],
        ScenarioKind::SurrogateAdditive | ScenarioKind::SurrogateMultiplicative => vec![
            EstimatorSpec::new("MLE", K::SpmlTwophase, om),
            EstimatorSpec::new("Raking", K::RakingSingle, om),
            EstimatorSpec::new("RC", K::RegressionCalibration, om),
            EstimatorSpec::with_engine("MI-Boot", K::Mi, Engine::WildBootstrap, m, om),
            EstimatorSpec::with_engine("MI-Bayes", K::Mi, Engine::Bayesian, m, om),
            EstimatorSpec::with_engine("MIR-Boot", K::Mir, Engine::WildBootstrap, m, om),
            EstimatorSpec::with_engine("MIR-Bayes", K::Mir, Engine::Bayesian, m, om),
        ],
        ScenarioKind::Nwts => vec![
            EstimatorSpec::new("MLE", K::MleCasecontrol, om),
            EstimatorSpec::new("Raking", K::RakingSingle, om),
            EstimatorSpec::with_engine("MI", K::Mi, Engine::BootstrapBinary, m, om),
            EstimatorSpec::with_engine("MIR", K::Mir, Engine::BootstrapBinary, m, om),
        ],
    }
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub rmse: f64,
    pub bias: f64,
    /// Monte Carlo standard deviation with divisor `K`.
    pub sd: f64,
}

impl Metrics {
    pub fn mse(&self) -> f64 {
        self.rmse * self.rmse
    }
}

/// Root mean squared error, bias and standard deviation of `K` estimates.
pub fn compute_metrics(estimates: &[f64], target: f64) -> Result<Metrics> {
    if estimates.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 estimates, got {}",
            estimates.len()
        )));
    }
    let k = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / k;
    let var = estimates.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / k;
    let mse = estimates.iter().map(|b| (b - target).powi(2)).sum::<f64>() / k;
    Ok(Metrics {
        rmse: mse.sqrt(),
        bias: mean - target,
        sd: var.sqrt(),
    })
}

// ---------------------------------------------------------------------------
// Report

/// One long-format report row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub scenario: String,
    pub beta0: f64,
    pub delta0: f64,
    pub estimator: String,
    pub metric: String,
    pub value: f64,
    /// Successful replicates behind the value.
    pub replicates: usize,
    pub failures: usize,
}

/// Estimator name used for the diagnostic rows.
pub const DIAGNOSTIC_ROW: &str = "diagnostics";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MonteCarloReport {
    pub entries: Vec<ReportEntry>,
}

impl MonteCarloReport {
    pub fn get(&self, point: (f64, f64), estimator: &str, metric: &str) -> Option<&ReportEntry> {
        self.entries
            .iter()
            .find(|e| e.beta0 == point.0 && e.delta0 == point.1 && e.estimator == estimator && e.metric == metric)
    }

    pub fn value(&self, point: (f64, f64), estimator: &str, metric: &str) -> Option<f64> {
        self.get(point, estimator, metric).map(|e| e.value)
    }

    /// Distinct `(scenario, β₀, δ₀)` in order of first appearance.
    pub fn points(&self) -> Vec<(String, f64, f64)> {
        let mut out: Vec<(String, f64, f64)> = Vec::new();
        for e in &self.entries {
            if !out.iter().any(|p| p.0 == e.scenario && p.1 == e.beta0 && p.2 == e.delta0) {
                out.push((e.scenario.clone(), e.beta0, e.delta0));
            }
        }
        out
    }

    /// Distinct estimator names in order of first appearance, diagnostics excluded.
    pub fn estimators(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if e.estimator != DIAGNOSTIC_ROW && !out.contains(&e.estimator) {
                out.push(e.estimator.clone());
            }
        }
        out
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for e in &self.entries {
            w.serialize(e).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut entries = Vec::new();
        for (k, row) in r.deserialize().enumerate() {
            entries.push(row.map_err(|e| Error::ParseError {
                line: k + 2,
                message: e.to_string(),
            })?);
        }
        Ok(MonteCarloReport { entries })
    }

    /// Markdown tables with one block of √MSE, Bias and √Var rows per point.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let estimators = self.estimators();
        for (scenario, b0, d0) in self.points() {
            let at = |est: &str, metric: &str| {
                self.entries
                    .iter()
                    .find(|e| e.scenario == scenario && e.beta0 == b0 && e.delta0 == d0 && e.estimator == est && e.metric == metric)
            };
            let nwts = scenario == ScenarioKind::Nwts.name();
            if nwts {
                let _ = writeln!(out, "### {scenario}\n");
                let coefs: Vec<String> = self
                    .entries
                    .iter()
                    .filter_map(|e| e.metric.strip_prefix("rmse[").map(|m| m.trim_end_matches(']').to_string()))
                    .fold(Vec::new(), |mut v, c| {
                        if !v.contains(&c) {
                            v.push(c);
                        }
                        v
                    });
                let _ = writeln!(out, "| Method | Criterion | {} | Sum of squares |", coefs.join(" | "));
                let _ = writeln!(out, "|---|---|{}---|", "---|".repeat(coefs.len()));
                for est in &estimators {
                    for (label, metric, sum) in [
                        ("√MSE", "rmse", "sum_mse"),
                        ("Bias", "bias", "sum_bias_sq"),
                        ("√Var", "sd", "sum_var"),
                    ] {
                        let cells: Vec<String> = coefs
                            .iter()
                            .map(|c| fmt_cell(at(est, &format!("{metric}[{c}]")).map(|e| e.value)))
                            .collect();
                        let _ = writeln!(
                            out,
                            "| {est} | {label} | {} | {} |",
                            cells.join(" | "),
                            fmt_cell(at(est, sum).map(|e| e.value))
                        );
                    }
                }
                out.push('\n');
                continue;
            }
            let _ = writeln!(out, "### {scenario} (β₀, δ₀) = ({b0}, {d0})\n");
            let _ = writeln!(out, "| Criterion | {} |", estimators.join(" | "));
            let _ = writeln!(out, "|---|{}", "---|".repeat(estimators.len()));
            for (label, metric) in [("√MSE", "rmse"), ("Bias", "bias"), ("√Var", "sd")] {
                let cells: Vec<String> = estimators
                    .iter()
                    .map(|est| fmt_cell(at(est, metric).map(|e| e.value)))
                    .collect();
                let _ = writeln!(out, "| {label} | {} |", cells.join(" | "));
            }
            let failures: Vec<String> = estimators
                .iter()
                .filter_map(|est| at(est, "rmse").filter(|e| e.failures > 0).map(|e| format!("{est} {}", e.failures)))
                .collect();
            let diags: Vec<String> = ["mp_power", "gof_power", "abs_corr"]
                .iter()
                .filter_map(|m| at(DIAGNOSTIC_ROW, m).map(|e| format!("{m} {}", fmt_cell(Some(e.value)))))
                .collect();
            out.push('\n');
            if !diags.is_empty() {
                let _ = writeln!(out, "Diagnostics: {}\n", diags.join(", "));
            }
            if !failures.is_empty() {
                let _ = writeln!(out, "Failed replicates: {}\n", failures.join(", "));
            }
        }
        out
    }

    /// `MSE(estimator) / MSE(reference)` rows for relative-efficiency plots.
    pub fn relative_efficiency(&self) -> Vec<RelativeEfficiency> {
        let mut out = Vec::new();
        for (scenario, b0, d0) in self.points() {
            let reference = ScenarioKind::parse(&scenario)
                .map(reference_estimator)
                .unwrap_or("Raking");
            let mse = |est: &str| {
                self.entries
                    .iter()
                    .find(|e| e.scenario == scenario && e.beta0 == b0 && e.delta0 == d0 && e.estimator == est && (e.metric == "rmse" || e.metric == "sum_mse"))
                    .map(|e| if e.metric == "rmse" { e.value * e.value } else { e.value })
            };
            let Some(denominator) = mse(reference) else { continue };
            for est in self.estimators() {
                if let Some(num) = mse(&est) {
                    out.push(RelativeEfficiency {
                        scenario: scenario.clone(),
                        beta0: b0,
                        delta0: d0,
                        estimator: est,
                        reference: reference.to_string(),
                        mse_ratio: num / denominator,
                    });
                }
            }
        }
        out
    }
}

/// Denominator of the relative-efficiency ratios.
pub fn reference_estimator(kind: ScenarioKind) -> &'static str {
    match kind {
        ScenarioKind::CaseControl => "IPW",
        _ => "Raking",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeEfficiency {
    pub scenario: String,
    pub beta0: f64,
    pub delta0: f64,
    pub estimator: String,
    pub reference: String,
    pub mse_ratio: f64,
}

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() => format!("{v:.3}"),
        Some(_) => "NA".into(),
        None => "-".into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

/// Writes `report.csv`, `report.md` and `relative_efficiency.csv` into `dir`.
pub fn emit_report(report: &MonteCarloReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("report.csv");
    report.write_csv(fs::File::create(&csv_path)?)?;
    let md_path = dir.join("report.md");
    fs::write(&md_path, report.to_markdown())?;
    let re_path = dir.join("relative_efficiency.csv");
    let mut w = csv::Writer::from_path(&re_path).map_err(|e| Error::Io(e.to_string()))?;
    for row in report.relative_efficiency() {
        w.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(vec![csv_path, md_path, re_path])
}

/// Renders a report in the requested format.
pub fn render_report(report: &MonteCarloReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Markdown => Ok(report.to_markdown()),
        ReportFormat::Csv => {
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
        }
    }
}

// ---------------------------------------------------------------------------
// Monte Carlo driver

/// Everything recorded for one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    /// Coefficient vector per estimator, `None` on failure.
    pub estimates: Vec<Option<Vec<f64>>>,
    pub mp_reject: Option<bool>,
    /// `None` when the test was skipped or failed.
    pub gof_reject: Option<bool>,
    pub gof_failed: bool,
    /// `log Qₙ − log Pₙ` on the full cohort.
    pub log_ratio: Option<f64>,
}

/// Raw replicate results for one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub point: (f64, f64),
    pub scenario: Scenario,
    pub pseudo_true: Option<PseudoTrue>,
    /// Target coefficient vector (full length, intercept first).
    pub target: Vec<f64>,
    pub records: Vec<ReplicateRecord>,
}

fn run_replicate(
    config: &ExperimentConfig,
    scenario: &Scenario,
    specs: &[EstimatorSpec],
    fixed_cohort: Option<&Cohort>,
    star: Option<&PseudoTrue>,
    calibration: Option<&crate::diagnostics::MpCalibration>,
    stream: &StreamId,
) -> Result<ReplicateRecord> {
    let generated;
    let cohort = match fixed_cohort {
        Some(c) => c,
        None => {
            generated = gen_cohort(scenario, &mut stream.child("cohort", 0).rng())?;
            &generated
        }
    };
    let sample = if scenario.kind == ScenarioKind::Nwts {
        sample_nwts_design(cohort, &mut stream.child("sample", 0).rng())?
    } else {
        draw_sample(scenario, cohort, &mut stream.child("sample", 0).rng())?
    };
    let model = ImputationModel::for_scenario(scenario.kind, cohort);
    let mut estimates = Vec::with_capacity(specs.len());
    for (j, spec) in specs.iter().enumerate() {
        let r = match &model {
            Ok(m) => estimate(spec, cohort, &sample, Some(m), &stream.child("estimator", j as u64)),
            Err(e) => Err(e.clone()),
        };
        match r {
            Ok(est) => estimates.push(Some(est.theta)),
            Err(e) if e.is_numerical() || matches!(e, Error::InvalidInput(_)) => {
                log::debug!("replicate {:?} estimator {}: {e}", stream.path(), spec.label);
                estimates.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let d = &config.diagnostics;
    let mp_reject = match (d.mp, star, calibration) {
        (true, Some(star), Some(cal)) => Some(
            mp_test(scenario, star, cohort, cal, &mut stream.child("mp", 0).rng()).reject,
        ),
        _ => None,
    };
    let log_ratio = match (d.correlation, star) {
        (true, Some(star)) => Some(-mp_statistic(scenario, star, cohort)),
        _ => None,
    };
    let (gof_reject, gof_failed) = if d.gof {
        let mut opts = GofOptions::new(OutcomeModel::for_scenario(scenario.kind).family(), config.bootstrap);
        opts.level = d.level;
        match gof_linearity_test(&cohort.x, &cohort.y, &opts, &stream.child("gof", 0)) {
            Ok(t) => (Some(t.reject), false),
            Err(e) if e.is_numerical() => (None, true),
            Err(e) => return Err(e),
        }
    } else {
        (None, false)
    };
    Ok(ReplicateRecord {
        estimates,
        mp_reject,
        gof_reject,
        gof_failed,
        log_ratio,
    })
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))
}

/// Runs every replicate at every grid point. `cohort` supplies the fixed
/// NWTS cohort; simulation scenarios generate their own.
pub fn run_points(config: &ExperimentConfig, cohort: Option<&Cohort>) -> Result<Vec<PointResult>> {
    config.validate()?;
    let kind = config.scenario.kind;
    if kind == ScenarioKind::Nwts && cohort.is_none() {
        return Err(Error::Config("the NWTS scenario needs a cohort".into()));
    }
    let specs = config.estimator_specs();
    let pool = thread_pool(config.threads)?;
    let root = StreamId::root(config.seed);
    let mut out = Vec::new();
    for (pi, point) in config.points().into_iter().enumerate() {
        let scenario = config.scenario_at(point);
        let (star, target) = if kind == ScenarioKind::Nwts {
            let cohort = cohort.expect("checked above");
            let fit = OutcomeModel::Nwts.fit_full(cohort, &cohort.x)?;
            (None, fit.coefficients().to_vec())
        } else {
            let star = pseudo_true_oracle(&scenario)?;
            (Some(star), vec![star.alpha, scenario.target_beta])
        };
        let calibration = match (config.diagnostics.mp, star.as_ref()) {
            (true, Some(s)) => Some(pool.install(|| {
                mp_calibrate(
                    &scenario,
                    s,
                    config.diagnostics.mp_null_reps,
                    config.diagnostics.level,
                    &root.child("mp-calibration", pi as u64),
                )
            })?),
            _ => None,
        };
        log::info!("{} ({}, {}): {} replicates", kind.name(), point.0, point.1, config.reps);
        let records: Vec<Result<ReplicateRecord>> = pool.install(|| {
            (0..config.reps as u64)
                .into_par_iter()
                .map(|k| {
                    let stream = root.child("point", pi as u64).child("replicate", k);
                    run_replicate(config, &scenario, &specs, cohort, star.as_ref(), calibration.as_ref(), &stream)
                })
                .collect()
        });
        out.push(PointResult {
            point,
            scenario,
            pseudo_true: star,
            target,
            records: records.into_iter().collect::<Result<Vec<_>>>()?,
        });
    }
    Ok(out)
}

/// Aggregates replicate results into report rows.
pub fn summarize(config: &ExperimentConfig, results: &[PointResult]) -> MonteCarloReport {
    let specs = config.estimator_specs();
    let kind = config.scenario.kind;
    let names = OutcomeModel::for_scenario(kind).coefficient_names();
    let mut entries = Vec::new();
    for res in results {
        let row = |estimator: &str, metric: String, value: f64, replicates: usize, failures: usize| ReportEntry {
            scenario: kind.name().to_string(),
            beta0: res.point.0,
            delta0: res.point.1,
            estimator: estimator.to_string(),
            metric,
            value,
            replicates,
            failures,
        };
        for (j, spec) in specs.iter().enumerate() {
            let ok: Vec<&Vec<f64>> = res.records.iter().filter_map(|r| r.estimates[j].as_ref()).collect();
            let fails = res.records.len() - ok.len();
            let coefs: Vec<usize> = if kind == ScenarioKind::Nwts {
                (1..names.len()).collect()
            } else {
                vec![1]
            };
            let mut sums = [0.0; 3];
            for c in &coefs {
                let series: Vec<f64> = ok.iter().map(|t| t[*c]).collect();
                let m = compute_metrics(&series, res.target[*c]).unwrap_or(Metrics {
                    rmse: f64::NAN,
                    bias: f64::NAN,
                    sd: f64::NAN,
                });
                sums[0] += m.mse();
                sums[1] += m.bias * m.bias;
                sums[2] += m.sd * m.sd;
                let suffix = if kind == ScenarioKind::Nwts {
                    format!("[{}]", names[*c])
                } else {
                    String::new()
                };
                for (metric, v) in [("rmse", m.rmse), ("bias", m.bias), ("sd", m.sd)] {
                    entries.push(row(&spec.label, format!("{metric}{suffix}"), v, ok.len(), fails));
                }
            }
            if kind == ScenarioKind::Nwts {
                for (metric, v) in [("sum_mse", sums[0]), ("sum_bias_sq", sums[1]), ("sum_var", sums[2])] {
                    entries.push(row(&spec.label, metric.into(), v, ok.len(), fails));
                }
            }
        }
        let rate = |flags: Vec<bool>, failures: usize| {
            let n = flags.len();
            let v = if n == 0 {
                f64::NAN
            } else {
                flags.iter().filter(|f| **f).count() as f64 / n as f64
            };
            (v, n, failures)
        };
        if config.diagnostics.mp {
            let (v, n, f) = rate(res.records.iter().filter_map(|r| r.mp_reject).collect(), 0);
            entries.push(row(DIAGNOSTIC_ROW, "mp_power".into(), v, n, f));
        }
        if config.diagnostics.gof {
            let fails = res.records.iter().filter(|r| r.gof_failed).count();
            let (v, n, f) = rate(res.records.iter().filter_map(|r| r.gof_reject).collect(), fails);
            entries.push(row(DIAGNOSTIC_ROW, "gof_power".into(), v, n, f));
        }
        if config.diagnostics.correlation {
            let mle = specs.iter().position(|s| matches!(s.kind, EstimatorKind::SpmlTwophase | EstimatorKind::MleCasecontrol));
            let rak = specs.iter().position(|s| s.kind == EstimatorKind::RakingSingle);
            if let (Some(a), Some(b)) = (mle, rak) {
                let pairs: Vec<(f64, f64)> = res
                    .records
                    .iter()
                    .filter_map(|r| match (&r.estimates[a], &r.estimates[b], r.log_ratio) {
                        (Some(ta), Some(tb), Some(lr)) => Some((ta[1] - tb[1], lr)),
                        _ => None,
                    })
                    .collect();
                let n = pairs.len();
                let v = mle_raking_lr_correlation(&pairs).unwrap_or(f64::NAN);
                entries.push(row(DIAGNOSTIC_ROW, "abs_corr".into(), v, n, res.records.len() - n));
            }
        }
    }
    MonteCarloReport { entries }
}

/// Runs the configured experiment, loading the NWTS cohort from
/// `config.data.path` when needed.
pub fn run_monte_carlo(config: &ExperimentConfig) -> Result<MonteCarloReport> {
    let cohort = if config.scenario.kind == ScenarioKind::Nwts {
        let path = config
            .data
            .path
            .as_ref()
            .ok_or_else(|| Error::Config("the NWTS scenario needs data.path".into()))?;
        Some(load_nwts(path, &config.data.columns)?)
    } else {
        None
    };
    let results = run_points(config, cohort.as_ref())?;
    Ok(summarize(config, &results))
}
