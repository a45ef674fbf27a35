//! Command-line front end: scenario loading, runs, verification reports,
//! dispatch queries and parameter sweeps.

pub mod output;
pub mod scenario;
pub mod sweep;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use dssosm_core::analysis::{convergence_metrics, Thresholds, VerificationReport};
use dssosm_core::dispatch::optimal_dispatch;
use dssosm_core::simulator::{run_scenario, SimulationError, Trajectory};
use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

pub use output::RunManifest;
pub use scenario::{load_scenario, LoadError, LoadedScenario, ScenarioFile};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "DSSOSM_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "dssosm",
    version,
    about = "Load-frequency control simulator with distributed second-order sliding modes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write the trajectory, plot data and manifest.
    Simulate {
        scenario: PathBuf,
        #[arg(short, long, env = OUTPUT_DIR_ENV, default_value = "dssosm-out")]
        output: PathBuf,
    },
    /// Run a scenario, evaluate every criterion and write a report.
    Verify {
        scenario: PathBuf,
        /// TOML file with threshold overrides.
        #[arg(long)]
        tolerances: Option<PathBuf>,
        #[arg(short, long, env = OUTPUT_DIR_ENV, default_value = "dssosm-out")]
        output: PathBuf,
    },
    /// Print the closed-form optimal dispatch.
    Dispatch {
        scenario: PathBuf,
        /// Demand per area (comma separated); defaults to the scenario's
        /// demand after all events.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        demand: Option<Vec<f64>>,
    },
    /// Run a parameter grid in parallel.
    Sweep {
        scenario: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(short = 'j', long, default_value_t = 1)]
        jobs: usize,
        #[arg(short, long, env = OUTPUT_DIR_ENV, default_value = "dssosm-out")]
        output: PathBuf,
    },
}

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    CriteriaFailed = 1,
    Config = 2,
    Numeric = 3,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("numerical abort: {0}")]
    Numeric(SimulationError),
}

impl CliError {
    pub fn exit(&self) -> Exit {
        match self {
            Self::Numeric(_) => Exit::Numeric,
            _ => Exit::Config,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Runs one command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<Exit, CliError> {
    match cli.command {
        Command::Simulate { scenario, output } => {
            let loaded = load_scenario(&scenario)?;
            warn(&loaded, out);
            let traj = simulate(&loaded)?;
            let manifest = write_run(&scenario, &output, &loaded, &traj, None)?;
            say(
                out,
                &format!(
                    "wrote {} artifacts to {}",
                    manifest.artifacts.len(),
                    output.display()
                ),
            );
            Ok(Exit::Ok)
        }
        Command::Verify {
            scenario,
            tolerances,
            output,
        } => {
            let loaded = load_scenario(&scenario)?;
            warn(&loaded, out);
            let th = match tolerances {
                Some(p) => read_thresholds(&p)?,
                None => loaded.thresholds.clone(),
            };
            let traj = simulate(&loaded)?;
            let report = verify(&loaded, &traj, &th)?;
            write_run(&scenario, &output, &loaded, &traj, Some(&report))?;
            say(out, report.to_text().trim_end());
            if let Some(g) = &loaded.gains {
                say(
                    out,
                    &format!(
                        "gain check: Phi {:.4?}, required W_max {:.4?}",
                        g.phi.as_slice(),
                        g.report.w_required.as_slice()
                    ),
                );
            }
            Ok(if report.passed() {
                Exit::Ok
            } else {
                Exit::CriteriaFailed
            })
        }
        Command::Dispatch { scenario, demand } => {
            let loaded = scenario::load_scenario_with(&scenario, false)?;
            let s = &loaded.scenario;
            let n = s.network.n();
            let p_d = match demand {
                Some(d) if d.len() == n => DVector::from_vec(d),
                Some(d) => {
                    return Err(CliError::Config(format!(
                        "--demand has {} values, scenario has {n} areas",
                        d.len()
                    )))
                }
                None => s.final_demand(),
            };
            let cost = s.controller.cost();
            let opt = optimal_dispatch(&p_d, cost);
            say(out, "area,demand,P_t_opt,marginal_cost");
            let mc = cost.marginal(&opt.p_t_opt);
            for i in 0..n {
                say(
                    out,
                    &format!(
                        "{},{:.16e},{:.16e},{:.16e}",
                        i + 1,
                        p_d[i],
                        opt.p_t_opt[i],
                        mc[i]
                    ),
                );
            }
            say(out, &format!("lambda_opt,{:.16e}", opt.lambda_opt));
            say(out, &format!("total,{:.16e}", opt.p_t_opt.sum()));
            Ok(Exit::Ok)
        }
        Command::Sweep {
            scenario,
            grid,
            jobs,
            output,
        } => sweep::run_sweep(&scenario, &grid, jobs, &output, out),
    }
}

fn say(out: &mut dyn Write, line: &str) {
    // output is informational; a closed stdout must not turn into a failure
    let _ = writeln!(out, "{line}");
}

fn warn(loaded: &LoadedScenario, out: &mut dyn Write) {
    for w in &loaded.warnings {
        say(out, &format!("warning: {w}"));
    }
}

pub fn read_thresholds(path: &Path) -> Result<Thresholds, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message().trim())))
}

pub fn simulate(loaded: &LoadedScenario) -> Result<Trajectory, CliError> {
    run_scenario(&loaded.scenario).map_err(|e| match e {
        SimulationError::NonFinite { .. } => CliError::Numeric(e),
        other => CliError::Config(format!("[{}] {other}", other.rule_id())),
    })
}

pub fn verify(
    loaded: &LoadedScenario,
    traj: &Trajectory,
    th: &Thresholds,
) -> Result<VerificationReport, CliError> {
    convergence_metrics(traj, &loaded.scenario, th).map_err(|e| CliError::Config(e.to_string()))
}

#[derive(Serialize)]
struct ReportFile<'a> {
    config_hash: &'a str,
    warnings: &'a [String],
    report: &'a VerificationReport,
    gains: Option<&'a dssosm_core::controller::GainBounds>,
}

/// Writes trajectory, plot data, optional report and the manifest.
pub fn write_run(
    scenario: &Path,
    dir: &Path,
    loaded: &LoadedScenario,
    traj: &Trajectory,
    report: Option<&VerificationReport>,
) -> Result<RunManifest, CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = RunManifest::new(scenario, dir, &loaded.config_hash);
    output::emit(dir, "trajectory.csv", &mut manifest, |w| {
        output::write_trajectory_csv(traj, w)
    })
    .map_err(io_err(dir))?;
    output::emit(dir, "plot_data.csv", &mut manifest, |w| {
        output::write_plot_data(traj, loaded.plot_stride(), w)
    })
    .map_err(io_err(dir))?;
    if let Some(report) = report {
        output::emit(dir, "report.txt", &mut manifest, |w| {
            w.write_all(report.to_text().as_bytes())
        })
        .map_err(io_err(dir))?;
        let file = ReportFile {
            config_hash: &loaded.config_hash,
            warnings: &loaded.warnings,
            report,
            gains: loaded.gains.as_ref(),
        };
        output::emit(dir, "report.json", &mut manifest, |w| {
            serde_json::to_writer_pretty(&mut *w, &file).map_err(std::io::Error::other)?;
            writeln!(w)
        })
        .map_err(io_err(dir))?;
    }
    manifest.write(dir).map_err(io_err(dir))?;
    Ok(manifest)
}
