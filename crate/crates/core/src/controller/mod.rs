//! Distributed suboptimal second-order sliding mode (D-SSOSM) controller.
//!
//! Each area measures its own frequency deviation, turbine and governor
//! outputs, and keeps a virtual generation state θ_i whose marginal cost is
//! exchanged with communication neighbours. The sliding function
//!
//! ```text
//! σ = M1 f + M2 P_t + M3 P_g + M4 θ,    M4 = -(M2 + M3)
//! ```
//!
//! is driven to σ = σ̇ = 0 by integrating a discontinuous input w, so the
//! governor setpoint u = ∫w stays continuous.
//!
//! Marginal-cost signals inside the controller (Qθ + R, ∇C, λ) are
//! expressed in multiples of [`ControllerConfig::price_unit`].

mod bounds;
mod ssosm;

pub use bounds::{
    check_gains, gain_bounds, DriftSample, GainBounds, GainReport, OperatingEnvelope,
};
pub use ssosm::{ssosm_step, AreaSsosm, SsosmMemory};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::CostModel;
use crate::dynamics::SystemState;
use crate::graph;
use crate::network::{network_injection, network_rhs, turbine_governor_rhs, Network};

/// Default minimum separation between successive detected extremal values.
pub const DEFAULT_PEAK_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("controller rule violated: {rule} (area {area})")]
    Rule { rule: &'static str, area: usize },
    #[error("controller rule violated: {rule}")]
    Global { rule: &'static str },
    #[error("communication graph is disconnected; components: {components:?}")]
    Disconnected { components: Vec<Vec<usize>> },
    #[error("communication edge {edge} ({a}-{b}) is invalid")]
    InvalidEdge { edge: usize, a: usize, b: usize },
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("operating envelope is empty: {reason}")]
    EmptyEnvelope { reason: &'static str },
    #[error("envelope simulation failed: {reason}")]
    EnvelopeRun { reason: String },
}

impl ControllerError {
    /// Stable identifier of the violated rule.
    pub fn rule_id(&self) -> &'static str {
        match self {
            Self::Rule { rule, .. } | Self::Global { rule } => rule,
            Self::Disconnected { .. } => "communication-graph-connected",
            Self::InvalidEdge { .. } => "communication-edge-valid",
            Self::Dimension { .. } => "dimension",
            Self::EmptyEnvelope { .. } => "envelope-non-empty",
            Self::EnvelopeRun { .. } => "envelope-simulation",
        }
    }
}

/// Which augmentation of the turbine-governor dynamics is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerVariant {
    /// Marginal-cost consensus through the communication Laplacian.
    #[default]
    SsosmConsensus,
    /// Same as consensus with A = 0 (no communication).
    SsosmAZero,
    /// Primal-dual dynamics on the communication graph; needs P_d.
    PrimalDual,
}

impl ControllerVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::SsosmConsensus => "ssosm-consensus",
            Self::SsosmAZero => "ssosm-a-zero",
            Self::PrimalDual => "primal-dual",
        }
    }
}

/// User-facing controller parameters, validated by [`ControllerConfig::new`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub variant: ControllerVariant,
    pub m1: DVector<f64>,
    pub m2: DVector<f64>,
    pub m3: DVector<f64>,
    pub w_max: DVector<f64>,
    pub alpha_star: DVector<f64>,
    pub t_theta: DVector<f64>,
    /// Undirected communication edges (0-based area indices).
    pub communication: Vec<(usize, usize)>,
    pub price_unit: f64,
    pub peak_epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub variant: ControllerVariant,
    pub m1: DVector<f64>,
    pub m2: DVector<f64>,
    pub m3: DVector<f64>,
    pub w_max: DVector<f64>,
    pub alpha_star: DVector<f64>,
    pub t_theta: DVector<f64>,
    pub communication: Vec<(usize, usize)>,
    pub price_unit: f64,
    pub peak_epsilon: f64,
    l_com: DMatrix<f64>,
    b_com: DMatrix<f64>,
    cost: CostModel,
    price_cost: CostModel,
}

impl ControllerConfig {
    pub fn new(params: ControllerParams, cost: CostModel) -> Result<Self, ControllerError> {
        let n = cost.n();
        for (what, v) in [
            ("M1", &params.m1),
            ("M2", &params.m2),
            ("M3", &params.m3),
            ("W_max", &params.w_max),
            ("alpha*", &params.alpha_star),
            ("T_theta", &params.t_theta),
        ] {
            if v.len() != n {
                return Err(ControllerError::Dimension {
                    what,
                    expected: n,
                    got: v.len(),
                });
            }
        }
        let check = |v: &DVector<f64>, ok: fn(f64) -> bool, rule: &'static str| match v
            .iter()
            .position(|&x| !x.is_finite() || !ok(x))
        {
            Some(area) => Err(ControllerError::Rule { rule, area }),
            None => Ok(()),
        };
        check(&params.m1, |x| x > 0.0, "M1 strictly positive")?;
        check(&params.m2, |x| x >= 0.0, "M2 non-negative")?;
        check(&params.m3, |x| x > 0.0, "M3 strictly positive")?;
        check(&params.w_max, |x| x > 0.0, "W_max strictly positive")?;
        check(
            &params.alpha_star,
            |x| x > 0.0 && x <= 1.0,
            "alpha* in (0, 1]",
        )?;
        check(&params.t_theta, |x| x > 0.0, "T_theta strictly positive")?;
        if !(params.price_unit > 0.0) || !params.price_unit.is_finite() {
            return Err(ControllerError::Global {
                rule: "price unit strictly positive",
            });
        }
        if !(params.peak_epsilon >= 0.0) {
            return Err(ControllerError::Global {
                rule: "peak epsilon non-negative",
            });
        }
        for (k, &(a, b)) in params.communication.iter().enumerate() {
            if a >= n || b >= n || a == b {
                return Err(ControllerError::InvalidEdge { edge: k, a, b });
            }
        }
        let components = graph::connected_components(n, &params.communication);
        if components.len() > 1 {
            return Err(ControllerError::Disconnected { components });
        }

        Ok(Self {
            l_com: graph::laplacian(n, &params.communication),
            b_com: graph::incidence(n, &params.communication),
            price_cost: cost.rescaled(params.price_unit),
            cost,
            variant: params.variant,
            m1: params.m1,
            m2: params.m2,
            m3: params.m3,
            w_max: params.w_max,
            alpha_star: params.alpha_star,
            t_theta: params.t_theta,
            communication: params.communication,
            price_unit: params.price_unit,
            peak_epsilon: params.peak_epsilon,
        })
    }

    pub fn params(&self) -> ControllerParams {
        ControllerParams {
            variant: self.variant,
            m1: self.m1.clone(),
            m2: self.m2.clone(),
            m3: self.m3.clone(),
            w_max: self.w_max.clone(),
            alpha_star: self.alpha_star.clone(),
            t_theta: self.t_theta.clone(),
            communication: self.communication.clone(),
            price_unit: self.price_unit,
            peak_epsilon: self.peak_epsilon,
        }
    }

    /// Same configuration with a different variant.
    pub fn with_variant(&self, variant: ControllerVariant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    pub fn n(&self) -> usize {
        self.m1.len()
    }

    /// M4 = -(M2 + M3).
    pub fn m4(&self) -> DVector<f64> {
        -(&self.m2 + &self.m3)
    }

    /// Communication Laplacian.
    pub fn l_com(&self) -> &DMatrix<f64> {
        &self.l_com
    }

    /// Oriented incidence of the communication graph.
    pub fn b_com(&self) -> &DMatrix<f64> {
        &self.b_com
    }

    /// Number of communication edges (dimension of the primal-dual v state).
    pub fn comm_edges(&self) -> usize {
        self.communication.len()
    }

    /// Cost model in currency/h.
    pub fn cost(&self) -> &CostModel {
        &self.cost
    }

    /// Cost model expressed in controller price units.
    pub fn price_cost(&self) -> &CostModel {
        &self.price_cost
    }

    /// Input gain G = M3 T_g⁻¹ of σ̈ with respect to w.
    pub fn input_gain(&self, net: &Network) -> DVector<f64> {
        self.m3.component_div(&net.t_g)
    }

    /// Virtual marginal costs (Qθ + R) in price units.
    pub fn marginal_costs(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.price_cost.marginal(theta)
    }

    /// Diagonal of the consensus gain actually applied: A for the consensus
    /// variant, zero otherwise.
    pub fn effective_a(&self) -> DVector<f64> {
        match self.variant {
            ControllerVariant::SsosmConsensus => build_a(self),
            _ => DVector::zeros(self.n()),
        }
    }
}

/// σ = M1 f + M2 P_t + M3 P_g + M4 θ (componentwise, area-local).
pub fn sliding_function(
    f: &DVector<f64>,
    p_t: &DVector<f64>,
    p_g: &DVector<f64>,
    theta: &DVector<f64>,
    cfg: &ControllerConfig,
) -> DVector<f64> {
    let n = cfg.n();
    DVector::from_fn(n, |i, _| {
        cfg.m1[i] * f[i] + cfg.m2[i] * p_t[i] + cfg.m3[i] * p_g[i]
            - (cfg.m2[i] + cfg.m3[i]) * theta[i]
    })
}

/// Diagonal of A = (M2 + M3)⁻¹ M1 Q, with Q in price units.
pub fn build_a(cfg: &ControllerConfig) -> DVector<f64> {
    let q = cfg.price_cost.q();
    DVector::from_fn(cfg.n(), |i, _| cfg.m1[i] * q[i] / (cfg.m2[i] + cfg.m3[i]))
}

/// T_θ θ̇ = -θ + P_t - A L_com (Qθ + R).
pub fn consensus_rhs(
    theta: &DVector<f64>,
    p_t: &DVector<f64>,
    cfg: &ControllerConfig,
) -> DVector<f64> {
    let a = cfg.effective_a();
    let exchange = &cfg.l_com * cfg.marginal_costs(theta);
    DVector::from_fn(cfg.n(), |i, _| {
        (-theta[i] + p_t[i] - a[i] * exchange[i]) / cfg.t_theta[i]
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualDerivative {
    pub theta: DVector<f64>,
    pub v: DVector<f64>,
    pub lambda: DVector<f64>,
}

/// T_θ θ̇ = -θ + P_t - M1 (M2 + M3)⁻¹ (∇C(θ) - λ), v̇ = -Bᵀλ, λ̇ = B v - θ + P_d,
/// with B the communication incidence and λ in price units.
pub fn primal_dual_rhs(
    theta: &DVector<f64>,
    v: &DVector<f64>,
    lambda: &DVector<f64>,
    p_t: &DVector<f64>,
    p_d: &DVector<f64>,
    cfg: &ControllerConfig,
) -> PrimalDualDerivative {
    let grad = cfg.marginal_costs(theta);
    let theta_dot = DVector::from_fn(cfg.n(), |i, _| {
        let k = cfg.m1[i] / (cfg.m2[i] + cfg.m3[i]);
        (-theta[i] + p_t[i] - k * (grad[i] - lambda[i])) / cfg.t_theta[i]
    });
    PrimalDualDerivative {
        theta: theta_dot,
        v: -cfg.b_com.tr_mul(lambda),
        lambda: &cfg.b_com * v - theta + p_d,
    }
}

/// Derivative of the controller's internal states for the active variant.
/// `v` and `lambda` derivatives are empty for the consensus variants.
pub fn controller_rhs(
    state: &SystemState,
    p_d: &DVector<f64>,
    cfg: &ControllerConfig,
) -> PrimalDualDerivative {
    match cfg.variant {
        ControllerVariant::PrimalDual => primal_dual_rhs(
            &state.theta,
            &state.v,
            &state.lambda,
            &state.physical.p_t,
            p_d,
            cfg,
        ),
        _ => PrimalDualDerivative {
            theta: consensus_rhs(&state.theta, &state.physical.p_t, cfg),
            v: DVector::zeros(0),
            lambda: DVector::zeros(0),
        },
    }
}

/// Reduced dynamics on σ = σ̇ = 0:
/// M3 T_t Ṗ_t = -(M2 + M3) P_t - M4 θ - M1 f, and the consensus θ dynamics.
pub fn equivalent_rhs(
    p_t: &DVector<f64>,
    theta: &DVector<f64>,
    f: &DVector<f64>,
    net: &Network,
    cfg: &ControllerConfig,
) -> (DVector<f64>, DVector<f64>) {
    let dp_t = DVector::from_fn(cfg.n(), |i, _| {
        let s = cfg.m2[i] + cfg.m3[i];
        (-s * p_t[i] + s * theta[i] - cfg.m1[i] * f[i]) / (cfg.m3[i] * net.t_t[i])
    });
    (dp_t, consensus_rhs(theta, p_t, cfg))
}

/// σ̇ = M1 ḟ + M2 Ṗ_t + M3 Ṗ_g + M4 θ̇ from the analytic right-hand sides.
/// Diagnostic only: the controller itself never uses σ̇.
pub fn sliding_derivative(
    net: &Network,
    state: &SystemState,
    p_d: &DVector<f64>,
    cfg: &ControllerConfig,
) -> DVector<f64> {
    let phys = &state.physical;
    let nd = network_rhs(net, phys, p_d);
    let (dp_t, dp_g) = turbine_governor_rhs(net, &phys.p_t, &phys.p_g, &phys.f, &state.u);
    let dtheta = controller_rhs(state, p_d, cfg).theta;
    sliding_function(&nd.f, &dp_t, &dp_g, &dtheta, cfg)
}

/// Drift φ of the auxiliary system σ̈ = φ + G w, i.e. σ̈ evaluated with
/// w = 0 and P_d held constant.
pub fn sliding_drift(
    net: &Network,
    state: &SystemState,
    p_d: &DVector<f64>,
    cfg: &ControllerConfig,
) -> DVector<f64> {
    let n = net.n();
    let phys = &state.physical;
    let nd = network_rhs(net, phys, p_d);
    let (dp_t, dp_g) = turbine_governor_rhs(net, &phys.p_t, &phys.p_g, &phys.f, &state.u);
    let cd = controller_rhs(state, p_d, cfg);

    // d/dt of the network injection Σ B_ij V_i V_j sin(δ_i - δ_j)
    let mut d_inj: DVector<f64> = DVector::zeros(n);
    for (k, l) in net.topology().lines.iter().enumerate() {
        let (s, c) = phys.eta[k].sin_cos();
        let (i, j) = (l.from, l.to);
        let rate = l.susceptance
            * ((nd.v[i] * phys.v[j] + phys.v[i] * nd.v[j]) * s
                + phys.v[i] * phys.v[j] * c * nd.eta[k]);
        d_inj[i] += rate;
        d_inj[j] -= rate;
    }

    let f_dd = DVector::from_fn(n, |i, _| {
        (-nd.f[i] + net.k_p[i] * (dp_t[i] + d_inj[i])) / net.t_p[i]
    });
    let p_t_dd = DVector::from_fn(n, |i, _| (dp_g[i] - dp_t[i]) / net.t_t[i]);
    let p_g_dd = DVector::from_fn(n, |i, _| (-nd.f[i] / net.r[i] - dp_g[i]) / net.t_g[i]);

    let theta_dd = match cfg.variant {
        ControllerVariant::PrimalDual => {
            let dgrad = cfg.price_cost.q().component_mul(&cd.theta);
            DVector::from_fn(n, |i, _| {
                let k = cfg.m1[i] / (cfg.m2[i] + cfg.m3[i]);
                (-cd.theta[i] + dp_t[i] - k * (dgrad[i] - cd.lambda[i])) / cfg.t_theta[i]
            })
        }
        _ => {
            let a = cfg.effective_a();
            let exchange = &cfg.l_com * cfg.price_cost.q().component_mul(&cd.theta);
            DVector::from_fn(n, |i, _| {
                (-cd.theta[i] + dp_t[i] - a[i] * exchange[i]) / cfg.t_theta[i]
            })
        }
    };
    sliding_function(&f_dd, &p_t_dd, &p_g_dd, &theta_dd, cfg)
}

/// Per-area neighbour-sum form of the consensus exchange term:
/// Q_i M1_i / (M2_i + M3_i) Σ_{j ∈ N_i} (λ_i - λ_j) with λ = Qθ + R.
pub fn consensus_exchange_local(theta: &DVector<f64>, cfg: &ControllerConfig, area: usize) -> f64 {
    let mc = cfg.marginal_costs(theta);
    let gain = build_a(cfg)[area];
    let sum: f64 = cfg
        .communication
        .iter()
        .filter_map(|&(a, b)| match (a == area, b == area) {
            (true, _) => Some(mc[area] - mc[b]),
            (_, true) => Some(mc[area] - mc[a]),
            _ => None,
        })
        .sum();
    gain * sum
}

/// The injection helper re-exported for callers computing σ̈ by hand.
pub fn injection(net: &Network, state: &SystemState) -> DVector<f64> {
    network_injection(&state.physical.eta, &state.physical.v, net)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::case_study;
    use approx::assert_relative_eq;

    pub(crate) fn uniform(n: usize, v: f64) -> DVector<f64> {
        DVector::from_element(n, v)
    }

    pub(crate) fn params(n: usize) -> ControllerParams {
        ControllerParams {
            variant: ControllerVariant::SsosmConsensus,
            m1: uniform(n, 3.0),
            m2: uniform(n, 1.0),
            m3: uniform(n, 0.1),
            w_max: uniform(n, 10.0),
            alpha_star: uniform(n, 1.0),
            t_theta: uniform(n, 0.33),
            communication: (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect(),
            price_unit: 1.0,
            peak_epsilon: DEFAULT_PEAK_EPSILON,
        }
    }

    fn raw_table_config() -> ControllerConfig {
        let cost =
            CostModel::quadratic(DVector::from_vec(vec![2.42e4, 3.78e4, 3.31e4, 2.75e4])).unwrap();
        ControllerConfig::new(params(4), cost).unwrap()
    }

    #[test]
    fn sigma_vanishes_on_manifold_steady_state() {
        let cfg = raw_table_config();
        let p = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        let s = sliding_function(&DVector::zeros(4), &p, &p, &p, &cfg);
        assert!(s.amax() < 1e-15);
    }

    #[test]
    fn sigma_arithmetic_example() {
        let cfg = raw_table_config();
        let s = sliding_function(
            &uniform(4, 0.1),
            &uniform(4, 0.2),
            &uniform(4, 0.3),
            &DVector::zeros(4),
            &cfg,
        );
        for x in s.iter() {
            assert_relative_eq!(*x, 0.53, epsilon = 1e-15);
        }
    }

    #[test]
    fn sigma_is_area_local() {
        let cfg = raw_table_config();
        let base = sliding_function(
            &uniform(4, 0.1),
            &uniform(4, 0.2),
            &uniform(4, 0.3),
            &uniform(4, 0.1),
            &cfg,
        );
        let mut f = uniform(4, 0.1);
        f[2] = 5.0;
        let mut th = uniform(4, 0.1);
        th[2] = -1.0;
        let moved = sliding_function(&f, &uniform(4, 0.2), &uniform(4, 0.3), &th, &cfg);
        for i in [0, 1, 3] {
            assert_eq!(base[i], moved[i]);
        }
        assert_ne!(base[2], moved[2]);
    }

    #[test]
    fn a_matrix_from_raw_costs() {
        let a = build_a(&raw_table_config());
        assert_relative_eq!(a[0], 66000.0, epsilon = 1e-9);
        assert!(a.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn a_is_identity_when_gains_match() {
        let cost = CostModel::quadratic(uniform(3, 1.0)).unwrap();
        let mut p = params(3);
        p.m1 = uniform(3, 1.1);
        let cfg = ControllerConfig::new(p, cost).unwrap();
        assert_eq!(build_a(&cfg), uniform(3, 1.0));
    }

    #[test]
    fn rejects_zero_m3() {
        let cost = CostModel::quadratic(uniform(3, 1.0)).unwrap();
        let mut p = params(3);
        p.m3[1] = 0.0;
        let err = ControllerConfig::new(p, cost).unwrap_err();
        assert_eq!(err.rule_id(), "M3 strictly positive");
    }

    #[test]
    fn rejects_disconnected_communication() {
        let cost = CostModel::quadratic(uniform(4, 1.0)).unwrap();
        let mut p = params(4);
        p.communication = vec![(0, 1), (2, 3)];
        let err = ControllerConfig::new(p, cost).unwrap_err();
        assert_eq!(err.rule_id(), "communication-graph-connected");
    }

    #[test]
    fn rejects_alpha_out_of_range() {
        let cost = CostModel::quadratic(uniform(2, 1.0)).unwrap();
        let mut p = params(2);
        p.alpha_star[0] = 1.5;
        assert_eq!(
            ControllerConfig::new(p, cost).unwrap_err().rule_id(),
            "alpha* in (0, 1]"
        );
    }

    #[test]
    fn consensus_rest_at_equal_marginal_costs() {
        let cfg = raw_table_config();
        let q = cfg.cost().q();
        let theta = DVector::from_fn(4, |i, _| 100.0 / q[i]);
        let d = consensus_rhs(&theta, &theta, &cfg);
        assert!(d.amax() < 1e-12, "{d}");
    }

    #[test]
    fn a_zero_is_low_pass() {
        let cfg = raw_table_config().with_variant(ControllerVariant::SsosmAZero);
        let theta = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.0]);
        let p_t = DVector::from_vec(vec![0.0, 0.1, 0.1, 0.5]);
        let d = consensus_rhs(&theta, &p_t, &cfg);
        for i in 0..4 {
            assert_relative_eq!(d[i], (p_t[i] - theta[i]) / 0.33, epsilon = 1e-15);
        }
    }

    #[test]
    fn laplacian_annihilates_consensus_component() {
        let cost = CostModel::quadratic(uniform(4, 5.0)).unwrap();
        let cfg = ControllerConfig::new(params(4), cost).unwrap();
        let theta = uniform(4, 0.37);
        let exchange = cfg.l_com() * cfg.marginal_costs(&theta);
        assert!(exchange.amax() < 1e-15);
    }

    #[test]
    fn neighbour_sum_matches_matrix_form() {
        let cfg = raw_table_config();
        let theta = DVector::from_vec(vec![0.01, 0.02, -0.005, 0.013]);
        let p_t = DVector::from_vec(vec![0.0, 0.01, 0.02, 0.03]);
        let d = consensus_rhs(&theta, &p_t, &cfg);
        for i in 0..4 {
            let local =
                (-theta[i] + p_t[i] - consensus_exchange_local(&theta, &cfg, i)) / cfg.t_theta[i];
            assert_relative_eq!(d[i], local, max_relative = 1e-12);
        }
    }

    #[test]
    fn equivalent_system_steady_state() {
        let (net, cfg, _) = case_study::components(ControllerVariant::SsosmConsensus);
        let p_opt = crate::dispatch::optimal_dispatch(&case_study::load_step(), cfg.cost()).p_t_opt;
        let (dp, dth) = equivalent_rhs(&p_opt, &p_opt, &DVector::zeros(4), &net, &cfg);
        assert!(dp.amax() < 1e-15);
        assert!(dth.amax() < 1e-12, "{dth}");
    }

    #[test]
    fn primal_dual_rest_at_optimum() {
        let (_, cfg, _) = case_study::components(ControllerVariant::PrimalDual);
        let p_d = case_study::load_step();
        let opt = crate::dispatch::optimal_dispatch(&p_d, cfg.cost());
        let lambda = uniform(4, opt.lambda_opt / cfg.price_unit);
        // path graph: solve B v = θ̄ - P_d by cumulative sums
        let mismatch = &opt.p_t_opt - &p_d;
        let mut v = DVector::zeros(3);
        let mut acc = 0.0;
        for k in 0..3 {
            acc += mismatch[k];
            v[k] = acc;
        }
        assert!((cfg.b_com() * &v - &mismatch).amax() < 1e-15);
        let d = primal_dual_rhs(&opt.p_t_opt, &v, &lambda, &opt.p_t_opt, &p_d, &cfg);
        assert!(d.theta.amax() < 1e-12 && d.v.amax() < 1e-12 && d.lambda.amax() < 1e-15);
    }
}
