//! Scenario file schema (TOML), loading and validation.
//!
//! Areas are numbered from 1 in files and from 0 everywhere else.

use std::ops::Range;
use std::path::Path;

use dssosm_core::analysis::Thresholds;
use dssosm_core::controller::{
    gain_bounds, ControllerConfig, ControllerParams, ControllerVariant, GainBounds,
    OperatingEnvelope, DEFAULT_PEAK_EPSILON,
};
use dssosm_core::dispatch::CostModel;
use dssosm_core::network::{AreaParams, Line, Network, NetworkTopology, SelfSusceptancePolicy};
use dssosm_core::simulator::{InitialCondition, LoadEvent, Scenario};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: [{rule}] {location}: {message}")]
    Invalid {
        path: String,
        rule: String,
        location: String,
        message: String,
    },
}

impl LoadError {
    pub fn rule_id(&self) -> Option<&str> {
        match self {
            Self::Invalid { rule, .. } => Some(rule),
            _ => None,
        }
    }
}

/// A scalar applied to every area, or one value per area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerArea {
    Uniform(f64),
    Each(Vec<f64>),
}

impl PerArea {
    fn expand(&self, n: usize, key: &str) -> Result<DVector<f64>, Invalid> {
        match self {
            Self::Uniform(x) => Ok(DVector::from_element(n, *x)),
            Self::Each(v) if v.len() == n => Ok(DVector::from_column_slice(v)),
            Self::Each(v) => Err(Invalid::new(
                "dimension",
                key,
                format!("expected {n} values, got {}", v.len()),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub simulation: SimulationSection,
    pub network: NetworkSection,
    pub cost: CostSection,
    pub controller: ControllerSection,
    #[serde(default)]
    pub demand: DemandSection,
    #[serde(default)]
    pub validation: ValidationSection,
    /// Verification tolerances; overridden by `verify --tolerances`.
    #[serde(default)]
    pub thresholds: Thresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub t_end: f64,
    pub dt: f64,
    #[serde(default = "one")]
    pub record_stride: usize,
    /// Every plot_stride-th recorded sample goes to the plot data.
    #[serde(default = "one")]
    pub plot_stride: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default)]
    pub self_susceptance: SelfSusceptancePolicy,
    pub areas: Vec<AreaEntry>,
    pub lines: Vec<LineEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub t_p: f64,
    pub t_t: f64,
    pub t_g: f64,
    pub t_v: f64,
    pub k_p: f64,
    pub r: f64,
    pub x_d: f64,
    pub x_d_prime: f64,
    #[serde(default = "unit")]
    pub e_f: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_self: Option<f64>,
    pub demand_bound: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineEntry {
    pub from: usize,
    pub to: usize,
    pub susceptance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    /// Multiplier applied to q, r and c0.
    #[serde(default = "unit")]
    pub scale: f64,
    pub q: PerArea,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<PerArea>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<PerArea>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    #[serde(default)]
    pub variant: ControllerVariant,
    pub m1: PerArea,
    pub m2: PerArea,
    pub m3: PerArea,
    pub w_max: PerArea,
    pub alpha_star: PerArea,
    pub t_theta: PerArea,
    /// Undirected edges between areas (1-based).
    pub communication: Vec<[usize; 2]>,
    #[serde(default = "unit")]
    pub price_unit: f64,
    #[serde(default = "default_peak_epsilon")]
    pub peak_epsilon: f64,
}

fn default_peak_epsilon() -> f64 {
    DEFAULT_PEAK_EPSILON
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<PerArea>,
    #[serde(default)]
    pub events: Vec<EventEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventEntry {
    pub time: f64,
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSection {
    /// Check W_max and α* against the sampled drift bound. Costs a few
    /// short simulations.
    #[serde(default = "yes")]
    pub gain_check: bool,
    #[serde(default)]
    pub envelope: OperatingEnvelope,
}

impl Default for ValidationSection {
    fn default() -> Self {
        Self {
            gain_check: true,
            envelope: OperatingEnvelope::default(),
        }
    }
}

fn yes() -> bool {
    true
}

/// A validated scenario ready to run.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub file: ScenarioFile,
    pub scenario: Scenario,
    pub thresholds: Thresholds,
    pub warnings: Vec<String>,
    pub gains: Option<GainBounds>,
    pub config_hash: String,
}

impl LoadedScenario {
    pub fn plot_stride(&self) -> usize {
        self.file.simulation.plot_stride
    }
}

struct Invalid {
    rule: String,
    location: String,
    message: String,
}

impl Invalid {
    fn new(rule: &str, location: &str, message: impl Into<String>) -> Self {
        Self {
            rule: rule.into(),
            location: location.into(),
            message: message.into(),
        }
    }
}

pub fn load_scenario(path: &Path) -> Result<LoadedScenario, LoadError> {
    load_scenario_with(path, true)
}

/// Like [`load_scenario`]; `gain_check = false` skips the sampled gain
/// check even when the file asks for it.
pub fn load_scenario_with(path: &Path, gain_check: bool) -> Result<LoadedScenario, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file = parse_scenario(&text, &path.display().to_string())?;
    build_scenario_with(file, &path.display().to_string(), gain_check)
}

pub fn parse_scenario(text: &str, path: &str) -> Result<ScenarioFile, LoadError> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s));
        LoadError::Parse {
            path: path.into(),
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })
}

fn line_column(text: &str, span: Range<usize>) -> (usize, usize) {
    let before = &text[..span.start.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Runs every validator and builds the core scenario.
pub fn build_scenario(file: ScenarioFile, path: &str) -> Result<LoadedScenario, LoadError> {
    build_scenario_with(file, path, true)
}

fn build_scenario_with(
    file: ScenarioFile,
    path: &str,
    gain_check: bool,
) -> Result<LoadedScenario, LoadError> {
    let invalid = |i: Invalid| LoadError::Invalid {
        path: path.into(),
        rule: i.rule,
        location: i.location,
        message: i.message,
    };
    let (scenario, warnings) = assemble(&file).map_err(invalid)?;
    let gains = if gain_check && file.validation.gain_check {
        let g = gain_bounds(
            &scenario.network,
            &scenario.controller,
            &scenario.baseline_pd,
            &file.validation.envelope,
        )
        .map_err(|e| {
            invalid(Invalid::new(
                e.rule_id(),
                "validation.envelope",
                e.to_string(),
            ))
        })?;
        check_gain_report(&g).map_err(invalid)?;
        Some(g)
    } else {
        None
    };
    let config_hash = config_hash(&file);
    Ok(LoadedScenario {
        thresholds: file.thresholds.clone(),
        file,
        scenario,
        warnings,
        gains,
        config_hash,
    })
}

fn check_gain_report(g: &GainBounds) -> Result<(), Invalid> {
    let r = &g.report;
    if let Some(i) = r.alpha_ok.iter().position(|ok| !ok) {
        return Err(Invalid::new(
            "alpha* below 3 G_min / G_max",
            &format!("controller.alpha_star[{}]", i + 1),
            format!("limit {:.4}", r.alpha_limit[i]),
        ));
    }
    if let Some(i) = r.w_ok.iter().position(|ok| !ok) {
        return Err(Invalid::new(
            "W_max satisfies gain constraints",
            &format!("controller.w_max[{}]", i + 1),
            format!(
                "needs W_max > {:.4} for sampled Phi {:.4}",
                r.w_required[i], g.phi[i]
            ),
        ));
    }
    Ok(())
}

fn assemble(file: &ScenarioFile) -> Result<(Scenario, Vec<String>), Invalid> {
    let n = file.network.areas.len();
    let sim = &file.simulation;
    if sim.plot_stride == 0 {
        return Err(Invalid::new(
            "plot stride positive",
            "simulation.plot_stride",
            "must be at least 1",
        ));
    }

    let area_index = |k: usize, what: &str, a: usize| {
        if (1..=n).contains(&a) {
            Ok(a - 1)
        } else {
            Err(Invalid::new(
                "area index in range",
                &format!("{what}[{}]", k + 1),
                format!("area {a} outside 1..={n}"),
            ))
        }
    };

    let areas: Vec<AreaParams> = file
        .network
        .areas
        .iter()
        .map(|a| AreaParams {
            t_p: a.t_p,
            t_t: a.t_t,
            t_g: a.t_g,
            t_v: a.t_v,
            k_p: a.k_p,
            r: a.r,
            x_d: a.x_d,
            x_d_prime: a.x_d_prime,
            e_f: a.e_f,
            b_self: a.b_self,
            demand_bound: a.demand_bound,
        })
        .collect();
    let mut lines = Vec::with_capacity(file.network.lines.len());
    for (k, l) in file.network.lines.iter().enumerate() {
        lines.push(Line {
            from: area_index(k, "network.lines", l.from)?,
            to: area_index(k, "network.lines", l.to)?,
            susceptance: l.susceptance,
        });
    }
    let (network, warnings) = Network::new(
        areas,
        NetworkTopology::new(n, lines),
        file.network.self_susceptance,
    )
    .map_err(|e| Invalid::new(e.rule_id(), "network", e.to_string()))?;

    let c = &file.cost;
    let zeros = PerArea::Uniform(0.0);
    let cost = CostModel::new(
        c.q.expand(n, "cost.q")? * c.scale,
        c.r.as_ref().unwrap_or(&zeros).expand(n, "cost.r")? * c.scale,
        c.c0.as_ref().unwrap_or(&zeros).expand(n, "cost.c0")? * c.scale,
    )
    .map_err(|e| Invalid::new("cost strictly convex", "cost.q", e.to_string()))?;

    let ctl = &file.controller;
    let mut communication = Vec::with_capacity(ctl.communication.len());
    for (k, [a, b]) in ctl.communication.iter().enumerate() {
        communication.push((
            area_index(k, "controller.communication", *a)?,
            area_index(k, "controller.communication", *b)?,
        ));
    }
    let params = ControllerParams {
        variant: ctl.variant,
        m1: ctl.m1.expand(n, "controller.m1")?,
        m2: ctl.m2.expand(n, "controller.m2")?,
        m3: ctl.m3.expand(n, "controller.m3")?,
        w_max: ctl.w_max.expand(n, "controller.w_max")?,
        alpha_star: ctl.alpha_star.expand(n, "controller.alpha_star")?,
        t_theta: ctl.t_theta.expand(n, "controller.t_theta")?,
        communication,
        price_unit: ctl.price_unit,
        peak_epsilon: ctl.peak_epsilon,
    };
    let controller = ControllerConfig::new(params, cost).map_err(|e| {
        let location = match &e {
            dssosm_core::controller::ControllerError::Rule { area, .. } => {
                format!("controller (area {})", area + 1)
            }
            _ => "controller".into(),
        };
        Invalid::new(e.rule_id(), &location, e.to_string())
    })?;

    let baseline_pd = match &file.demand.baseline {
        Some(b) => b.expand(n, "demand.baseline")?,
        None => DVector::zeros(n),
    };
    let events = file
        .demand
        .events
        .iter()
        .enumerate()
        .map(|(k, e)| {
            if e.delta.len() != n {
                return Err(Invalid::new(
                    "dimension",
                    &format!("demand.events[{}].delta", k + 1),
                    format!("expected {n} values, got {}", e.delta.len()),
                ));
            }
            Ok(LoadEvent {
                time: e.time,
                delta: DVector::from_column_slice(&e.delta),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let scenario = Scenario {
        network,
        controller,
        baseline_pd,
        events,
        t_end: sim.t_end,
        dt: sim.dt,
        record_stride: sim.record_stride,
        initial: InitialCondition::Equilibrium,
    };
    scenario
        .validate()
        .map_err(|e| Invalid::new(e.rule_id(), "simulation", e.to_string()))?;
    Ok((scenario, warnings))
}

/// SHA-256 of the canonical JSON form of the parsed scenario.
pub fn config_hash(file: &ScenarioFile) -> String {
    let canonical = serde_json::to_vec(file).expect("scenario serialises to JSON");
    hex::encode(Sha256::digest(&canonical))
}

/// Serialises a parsed scenario back to TOML.
pub fn to_toml(file: &ScenarioFile) -> String {
    toml::to_string(file).expect("scenario serialises to TOML")
}
