//! Fixed-step closed-loop simulation under timed load steps.
//!
//! Time is kept on the integer grid t_k = k·dt. Each step integrates the
//! smooth states with RK4 while u and P_d are held, then the switching law
//! reads the new σ sample, returns w and integrates u.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::controller::{
    sliding_derivative, sliding_function, ssosm_step, ControllerConfig, ControllerVariant,
    SsosmMemory,
};
use crate::dispatch::optimal_dispatch;
use crate::dynamics::{controller_stiffness, rk4_step, SystemState, RK4_REAL_STABILITY};
use crate::network::{solve_equilibrium, Network, NetworkError, NewtonOptions, PhysicalState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("scenario rule violated: {rule}: {detail}")]
    Invalid { rule: &'static str, detail: String },
    #[error("initial equilibrium: {0}")]
    Equilibrium(#[from] NetworkError),
    #[error("non-finite state after t = {last_valid_time} s")]
    NonFinite { last_valid_time: f64 },
}

impl SimulationError {
    /// Stable identifier of the violated rule.
    pub fn rule_id(&self) -> &'static str {
        match self {
            Self::Invalid { rule, .. } => rule,
            Self::Equilibrium(e) => e.rule_id(),
            Self::NonFinite { .. } => "finite-state",
        }
    }

    fn invalid(rule: &'static str, detail: impl Into<String>) -> Self {
        Self::Invalid {
            rule,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadEvent {
    pub time: f64,
    pub delta: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// Steady state at the optimal dispatch of the baseline demand.
    Equilibrium,
    Explicit(Box<SystemState>),
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub network: Network,
    pub controller: ControllerConfig,
    pub baseline_pd: DVector<f64>,
    pub events: Vec<LoadEvent>,
    pub t_end: f64,
    pub dt: f64,
    pub record_stride: usize,
    pub initial: InitialCondition,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let n = self.network.n();
        if self.controller.n() != n {
            return Err(SimulationError::invalid(
                "dimension",
                format!("controller has {} areas, network {n}", self.controller.n()),
            ));
        }
        if self.baseline_pd.len() != n {
            return Err(SimulationError::invalid("dimension", "baseline demand"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SimulationError::invalid(
                "dt strictly positive",
                format!("dt = {}", self.dt),
            ));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(SimulationError::invalid(
                "t_end strictly positive",
                format!("t_end = {}", self.t_end),
            ));
        }
        if self.record_stride == 0 {
            return Err(SimulationError::invalid(
                "record stride positive",
                "record_stride = 0",
            ));
        }
        let mut last = f64::NEG_INFINITY;
        for (k, e) in self.events.iter().enumerate() {
            if !(0.0..=self.t_end).contains(&e.time) {
                return Err(SimulationError::invalid(
                    "event time within [0, t_end]",
                    format!("event {} at {}", k + 1, e.time),
                ));
            }
            if e.time <= last {
                return Err(SimulationError::invalid(
                    "event times strictly increasing",
                    format!("event {} at {}", k + 1, e.time),
                ));
            }
            if e.delta.len() != n {
                return Err(SimulationError::invalid(
                    "dimension",
                    format!("event {} delta", k + 1),
                ));
            }
            last = e.time;
        }
        let stiffness = controller_stiffness(&self.controller) * self.dt;
        if stiffness >= RK4_REAL_STABILITY {
            return Err(SimulationError::invalid(
                "controller stiffness within RK4 stability",
                format!(
                    "fastest controller rate times dt is {stiffness:.3e} (limit {RK4_REAL_STABILITY}); raise price_unit or lower dt"
                ),
            ));
        }
        if let InitialCondition::Explicit(s) = &self.initial {
            if !s.dimensions_match(&self.network, &self.controller) {
                return Err(SimulationError::invalid(
                    "dimension",
                    "explicit initial state",
                ));
            }
            if !s.physical.voltages_positive() {
                return Err(SimulationError::invalid(
                    "voltages positive",
                    "explicit initial state",
                ));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    /// Step index from which event `e` is in force.
    pub fn event_step(&self, e: &LoadEvent) -> usize {
        (e.time / self.dt).round() as usize
    }

    /// Demand in force over step k.
    pub fn demand_at_step(&self, k: usize) -> DVector<f64> {
        let mut p_d = self.baseline_pd.clone();
        for e in self.events.iter().filter(|e| self.event_step(e) <= k) {
            p_d += &e.delta;
        }
        p_d
    }

    /// Demand after all events.
    pub fn final_demand(&self) -> DVector<f64> {
        self.events
            .iter()
            .fold(self.baseline_pd.clone(), |acc, e| acc + &e.delta)
    }

    /// Boundaries of the event segments: [0, t_e1, t_e2, ..., t_end].
    pub fn segment_bounds(&self) -> Vec<f64> {
        let mut b = vec![0.0];
        b.extend(self.events.iter().map(|e| e.time).filter(|&t| t > 0.0));
        b.push(self.t_end);
        b
    }

    pub fn with_variant(&self, variant: ControllerVariant) -> Self {
        let mut s = self.clone();
        s.controller = self.controller.with_variant(variant);
        s.initial = InitialCondition::Equilibrium;
        s
    }
}

/// Minimum-norm v with B_com v = target.
pub fn min_norm_flows(b_com: &DMatrix<f64>, target: &DVector<f64>) -> DVector<f64> {
    // v = Bᵀy with (B Bᵀ) y = t, solvable when 1ᵀt = 0
    let lap = b_com * b_com.transpose();
    let y = lap
        .pseudo_inverse(1e-12)
        .expect("pseudo-inverse of a Laplacian")
        * target;
    b_com.tr_mul(&y)
}

/// Steady state of the closed loop for a balanced demand: optimal dispatch
/// in every generation and controller state.
pub fn equilibrium_state(
    net: &Network,
    cfg: &ControllerConfig,
    p_d: &DVector<f64>,
) -> Result<SystemState, NetworkError> {
    let opt = optimal_dispatch(p_d, cfg.cost());
    let eq = solve_equilibrium(net, &opt.p_t_opt, p_d, None, NewtonOptions::default())?;
    let n = net.n();
    let (v, lambda) = match cfg.variant {
        ControllerVariant::PrimalDual => (
            min_norm_flows(cfg.b_com(), &(&opt.p_t_opt - p_d)),
            DVector::from_element(n, opt.lambda_opt / cfg.price_unit),
        ),
        _ => (DVector::zeros(0), DVector::zeros(0)),
    };
    Ok(SystemState {
        physical: PhysicalState {
            eta: eq.eta,
            f: DVector::from_element(n, eq.f_star),
            v: eq.v,
            p_t: opt.p_t_opt.clone(),
            p_g: opt.p_t_opt.clone(),
        },
        theta: opt.p_t_opt.clone(),
        u: opt.p_t_opt,
        v,
        lambda,
    })
}

/// Recorded closed-loop run on the grid t = j·stride·dt.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub record_stride: usize,
    pub t: Vec<f64>,
    pub states: Vec<SystemState>,
    pub w: Vec<DVector<f64>>,
    pub sigma: Vec<DVector<f64>>,
    pub sigma_dot: Vec<DVector<f64>>,
    pub p_d: Vec<DVector<f64>>,
    /// max over all steps and areas of |Δu_i| / (W_max_i dt).
    pub max_du_ratio: f64,
    /// Number of integration steps taken.
    pub steps: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn last(&self) -> &SystemState {
        self.states.last().expect("non-empty trajectory")
    }

    pub fn n(&self) -> usize {
        self.states.first().map_or(0, |s| s.theta.len())
    }
}

pub fn initial_state(scenario: &Scenario) -> Result<SystemState, SimulationError> {
    match &scenario.initial {
        InitialCondition::Equilibrium => Ok(equilibrium_state(
            &scenario.network,
            &scenario.controller,
            &scenario.baseline_pd,
        )?),
        InitialCondition::Explicit(s) => Ok((**s).clone()),
    }
}

/// Runs a validated scenario to t_end.
pub fn run_scenario(scenario: &Scenario) -> Result<Trajectory, SimulationError> {
    scenario.validate()?;
    let net = &scenario.network;
    let cfg = &scenario.controller;
    let dt = scenario.dt;
    let steps = scenario.steps();
    let stride = scenario.record_stride;
    let n = net.n();

    let mut state = initial_state(scenario)?;
    let sigma = |s: &SystemState| {
        sliding_function(
            &s.physical.f,
            &s.physical.p_t,
            &s.physical.p_g,
            &s.theta,
            cfg,
        )
    };
    let mut memory = SsosmMemory::new(&sigma(&state), state.u.clone());

    let records = steps / stride + 1;
    let mut traj = Trajectory {
        dt,
        record_stride: stride,
        t: Vec::with_capacity(records),
        states: Vec::with_capacity(records),
        w: Vec::with_capacity(records),
        sigma: Vec::with_capacity(records),
        sigma_dot: Vec::with_capacity(records),
        p_d: Vec::with_capacity(records),
        max_du_ratio: 0.0,
        steps,
    };

    let event_steps: Vec<usize> = scenario
        .events
        .iter()
        .map(|e| scenario.event_step(e))
        .collect();
    let mut p_d = scenario.demand_at_step(0);
    let mut w = DVector::zeros(n);
    let record = |traj: &mut Trajectory,
                  k: usize,
                  state: &SystemState,
                  w: &DVector<f64>,
                  p_d: &DVector<f64>| {
        traj.t.push(k as f64 * dt);
        traj.sigma.push(sigma(state));
        traj.sigma_dot
            .push(sliding_derivative(net, state, p_d, cfg));
        traj.states.push(state.clone());
        traj.w.push(w.clone());
        traj.p_d.push(p_d.clone());
    };

    for k in 0..steps {
        if event_steps.contains(&k) {
            p_d = scenario.demand_at_step(k);
        }
        if k % stride == 0 {
            record(&mut traj, k, &state, &w, &p_d);
        }
        let next = rk4_step(net, cfg, &state, &p_d, dt);
        if !next.is_finite() {
            return Err(SimulationError::NonFinite {
                last_valid_time: k as f64 * dt,
            });
        }
        state = next;
        let u_prev = memory.u.clone();
        w = ssosm_step(&sigma(&state), &mut memory, dt, cfg);
        for i in 0..n {
            let ratio = (memory.u[i] - u_prev[i]).abs() / (cfg.w_max[i] * dt);
            traj.max_du_ratio = traj.max_du_ratio.max(ratio);
        }
        state.u.copy_from(&memory.u);
    }
    if steps.is_multiple_of(stride) {
        if event_steps.contains(&steps) {
            p_d = scenario.demand_at_step(steps);
        }
        record(&mut traj, steps, &state, &w, &p_d);
    }
    Ok(traj)
}

/// Runs independent scenarios in parallel; results keep the input order.
pub fn run_batch(scenarios: &[Scenario]) -> Vec<Result<Trajectory, SimulationError>> {
    scenarios.par_iter().map(run_scenario).collect()
}
