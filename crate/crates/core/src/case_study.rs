//! Four-area reference case: parameters, lines, gains and load step.

use nalgebra::DVector;

use crate::controller::{
    ControllerConfig, ControllerParams, ControllerVariant, OperatingEnvelope, DEFAULT_PEAK_EPSILON,
};
use crate::dispatch::CostModel;
use crate::dynamics::SystemState;
use crate::network::{AreaParams, Line, Network, NetworkTopology, SelfSusceptancePolicy};
use crate::simulator::{equilibrium_state, InitialCondition, LoadEvent, Scenario};

pub const N: usize = 4;
/// Unit of the tabulated quadratic cost coefficients ($/h per p.u.²).
pub const COST_SCALE: f64 = 1e4;
/// Controller price unit used by the bundled scenarios.
pub const PRICE_UNIT: f64 = 1e4;
pub const DEMAND_BOUND: f64 = 0.02;
pub const STEP_TIME: f64 = 1.0;
pub const T_END: f64 = 60.0;
pub const DT: f64 = 1e-4;
pub const RECORD_STRIDE: usize = 10;

const T_P: [f64; N] = [21.0, 25.0, 23.0, 22.0];
const T_T: [f64; N] = [0.30, 0.33, 0.35, 0.28];
const T_G: [f64; N] = [0.080, 0.072, 0.070, 0.081];
const T_V: [f64; N] = [5.54, 7.41, 6.11, 6.22];
const K_P: [f64; N] = [120.0, 112.5, 115.0, 118.5];
const R: [f64; N] = [2.5, 2.7, 2.6, 2.8];
const X_D: [f64; N] = [1.85, 1.84, 1.86, 1.83];
const X_D_PRIME: [f64; N] = [0.25, 0.24, 0.26, 0.23];
const T_THETA: f64 = 0.33;
const Q: [f64; N] = [2.42, 3.78, 3.31, 2.75];
const DELTA_PD: [f64; N] = [0.010, 0.015, 0.012, 0.014];

pub fn area_params() -> Vec<AreaParams> {
    (0..N)
        .map(|i| AreaParams {
            t_p: T_P[i],
            t_t: T_T[i],
            t_g: T_G[i],
            t_v: T_V[i],
            k_p: K_P[i],
            r: R[i],
            x_d: X_D[i],
            x_d_prime: X_D_PRIME[i],
            e_f: 1.0,
            b_self: None,
            demand_bound: DEMAND_BOUND,
        })
        .collect()
}

/// Physical lines 1→2, 2→3, 3→4, 1→4 (0-based indices).
pub fn topology() -> NetworkTopology {
    let line = |from, to, susceptance| Line {
        from,
        to,
        susceptance,
    };
    NetworkTopology::new(
        N,
        vec![
            line(0, 1, -5.4),
            line(1, 2, -5.0),
            line(2, 3, -4.5),
            line(0, 3, -5.2),
        ],
    )
}

/// Path 1-2-3-4.
pub fn communication() -> Vec<(usize, usize)> {
    vec![(0, 1), (1, 2), (2, 3)]
}

pub fn cost_model() -> CostModel {
    CostModel::quadratic(DVector::from_iterator(N, Q.iter().map(|q| q * COST_SCALE)))
        .expect("positive Q")
}

pub fn load_step() -> DVector<f64> {
    DVector::from_row_slice(&DELTA_PD)
}

pub fn network() -> Network {
    let (net, warnings) = Network::new(area_params(), topology(), SelfSusceptancePolicy::Derive)
        .expect("valid case network");
    debug_assert!(warnings.is_empty());
    net
}

pub fn controller_params(variant: ControllerVariant, price_unit: f64) -> ControllerParams {
    let v = |x: f64| DVector::from_element(N, x);
    ControllerParams {
        variant,
        m1: v(3.0),
        m2: v(1.0),
        m3: v(0.1),
        w_max: v(10.0),
        alpha_star: v(1.0),
        t_theta: v(T_THETA),
        communication: communication(),
        price_unit,
        peak_epsilon: DEFAULT_PEAK_EPSILON,
    }
}

pub fn controller_with_price_unit(variant: ControllerVariant, price_unit: f64) -> ControllerConfig {
    ControllerConfig::new(controller_params(variant, price_unit), cost_model())
        .expect("valid case controller")
}

pub fn controller(variant: ControllerVariant) -> ControllerConfig {
    controller_with_price_unit(variant, PRICE_UNIT)
}

/// Network, controller and the load step.
pub fn components(variant: ControllerVariant) -> (Network, ControllerConfig, DVector<f64>) {
    (network(), controller(variant), load_step())
}

/// Pre-step steady state (zero baseline demand).
pub fn initial_state(net: &Network, cfg: &ControllerConfig) -> SystemState {
    equilibrium_state(net, cfg, &DVector::zeros(net.n())).expect("case equilibrium")
}

pub fn scenario(variant: ControllerVariant) -> Scenario {
    Scenario {
        network: network(),
        controller: controller(variant),
        baseline_pd: DVector::zeros(N),
        events: vec![LoadEvent {
            time: STEP_TIME,
            delta: load_step(),
        }],
        t_end: T_END,
        dt: DT,
        record_stride: RECORD_STRIDE,
        initial: InitialCondition::Equilibrium,
    }
}

/// Envelope used to check W_max = 10 for the case study.
pub fn envelope() -> OperatingEnvelope {
    OperatingEnvelope::default()
}
