use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use twophase::designs::{load_nwts, NwtsColumnMap, Scenario, ScenarioKind};
use twophase::harness::{
    emit_report, render_report, run_monte_carlo, run_points, summarize, ExperimentConfig, MonteCarloReport,
    ReportFormat,
};
use twophase::oracle::pseudo_true_oracle;
use twophase::Error;

#[derive(Parser)]
#[command(name = "twophase", version, about = "Two-phase sampling estimators and Monte Carlo experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimScenario {
    CaseControl,
    SurrogateAdditive,
    SurrogateMultiplicative,
}

impl From<SimScenario> for ScenarioKind {
    fn from(s: SimScenario) -> Self {
        match s {
            SimScenario::CaseControl => ScenarioKind::CaseControl,
            SimScenario::SurrogateAdditive => ScenarioKind::SurrogateAdditive,
            SimScenario::SurrogateMultiplicative => ScenarioKind::SurrogateMultiplicative,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Md,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation grid and write report files.
    Simulate {
        /// TOML experiment file; command-line flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        scenario: Option<SimScenario>,
        /// Zero-based row of the scenario's standard grid; all rows when omitted.
        #[arg(long)]
        grid_row: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        imputations: Option<usize>,
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        /// Enable the most powerful test, the lack-of-fit test and the correlation diagnostic.
        #[arg(long)]
        diagnostics: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Resample two-phase designs from the NWTS cohort.
    Nwts {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        #[arg(long, default_value_t = 100)]
        imputations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the pseudo-true working-model parameters.
    Oracle {
        #[arg(long, value_enum)]
        scenario: SimScenario,
        /// Single `(β₀, δ₀)` point; the whole grid when omitted.
        #[arg(long, requires = "delta0")]
        beta0: Option<f64>,
        #[arg(long, requires = "beta0")]
        delta0: Option<f64>,
    },
    /// Render a report written by `simulate` or `nwts`.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "md")]
        format: Format,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io(_) | Error::SchemaError(_) | Error::ParseError { .. } | Error::InvalidInput(_) => 3,
        e if e.is_numerical() => 4,
        _ => 3,
    }
}

fn finish(report: &MonteCarloReport, out: &std::path::Path) -> twophase::Result<()> {
    for path in emit_report(report, out)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> twophase::Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            scenario,
            grid_row,
            reps,
            imputations,
            bootstrap,
            seed,
            threads,
            diagnostics,
            out,
        } => {
            let mut cfg = match (&config, scenario) {
                (Some(path), _) => ExperimentConfig::load(path)?,
                (None, Some(s)) => ExperimentConfig::new(s.into(), 1000, 100, 0),
                (None, None) => return Err(Error::Config("give --config or --scenario".into())),
            };
            if let Some(s) = scenario {
                cfg.scenario.kind = s.into();
            }
            if let Some(row) = grid_row {
                let grid = cfg.points();
                let p = grid
                    .get(row)
                    .ok_or_else(|| Error::Config(format!("grid row {row} out of range 0..{}", grid.len())))?;
                cfg.scenario.grid = vec![[p.0, p.1]];
            }
            if let Some(k) = reps {
                cfg.reps = k;
            }
            if let Some(m) = imputations {
                cfg.imputations = m;
            }
            if let Some(b) = bootstrap {
                cfg.bootstrap = b;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            if diagnostics {
                cfg.diagnostics.mp = true;
                cfg.diagnostics.gof = true;
                cfg.diagnostics.correlation = cfg.scenario.kind.is_surrogate();
            }
            if let Some(o) = out {
                cfg.output.dir = Some(o);
            }
            if cfg.scenario.kind == ScenarioKind::Nwts {
                return Err(Error::Config("use the nwts subcommand for the NWTS cohort".into()));
            }
            cfg.validate()?;
            let out = cfg
                .output
                .dir
                .clone()
                .ok_or_else(|| Error::Config("no output directory (--out or output.dir)".into()))?;
            let report = run_monte_carlo(&cfg)?;
            finish(&report, &out)
        }
        Command::Nwts {
            data,
            reps,
            imputations,
            seed,
            threads,
            out,
        } => {
            let mut cfg = ExperimentConfig::new(ScenarioKind::Nwts, reps, imputations, seed);
            cfg.threads = threads;
            let cohort = load_nwts(&data, &NwtsColumnMap::default())?;
            let results = run_points(&cfg, Some(&cohort))?;
            finish(&summarize(&cfg, &results), &out)
        }
        Command::Oracle { scenario, beta0, delta0 } => {
            let kind: ScenarioKind = scenario.into();
            let points = match (beta0, delta0) {
                (Some(b), Some(d)) => vec![(b, d)],
                _ => kind.grid(),
            };
            println!("scenario,beta0,delta0,alpha_star,beta_star");
            for (b, d) in points {
                let p = pseudo_true_oracle(&Scenario::for_kind(kind, b, d))?;
                println!("{},{b},{d},{:.6},{:.6}", kind.name(), p.alpha, p.beta);
            }
            Ok(())
        }
        Command::Report { input, format } => {
            let path = if input.is_dir() { input.join("report.csv") } else { input };
            let file = std::fs::File::open(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            let report = MonteCarloReport::read_csv(file)?;
            let format = match format {
                Format::Csv => ReportFormat::Csv,
                Format::Md => ReportFormat::Markdown,
            };
            print!("{}", render_report(&report, format)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
