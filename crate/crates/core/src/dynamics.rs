//! Closed-loop state vector and the explicit RK4 step of its smooth part.

use nalgebra::DVector;

use crate::controller::{controller_rhs, ControllerConfig, ControllerVariant};
use crate::network::{network_rhs, turbine_governor_rhs, Network, PhysicalState};

/// Full dynamic state. `v` and `lambda` are empty unless the primal-dual
/// variant is active.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub physical: PhysicalState,
    pub theta: DVector<f64>,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub lambda: DVector<f64>,
}

impl SystemState {
    pub fn is_finite(&self) -> bool {
        self.physical.is_finite()
            && [&self.theta, &self.u, &self.v, &self.lambda]
                .iter()
                .all(|x| x.iter().all(|v| v.is_finite()))
    }

    /// Check dimensions against a network and controller.
    pub fn dimensions_match(&self, net: &Network, cfg: &ControllerConfig) -> bool {
        let n = net.n();
        let (nv, nl) = match cfg.variant {
            ControllerVariant::PrimalDual => (cfg.comm_edges(), n),
            _ => (0, 0),
        };
        self.physical.check_dimensions(n, net.m()).is_ok()
            && self.theta.len() == n
            && self.u.len() == n
            && self.v.len() == nv
            && self.lambda.len() == nl
    }

    /// Largest absolute componentwise difference over all smooth states and u.
    pub fn max_abs_diff(&self, other: &SystemState) -> f64 {
        let p = &self.physical;
        let q = &other.physical;
        [
            (&p.eta, &q.eta),
            (&p.f, &q.f),
            (&p.v, &q.v),
            (&p.p_t, &q.p_t),
            (&p.p_g, &q.p_g),
            (&self.theta, &other.theta),
            (&self.u, &other.u),
            (&self.v, &other.v),
            (&self.lambda, &other.lambda),
        ]
        .iter()
        .map(|(a, b)| if a.is_empty() { 0.0 } else { (*a - *b).amax() })
        .fold(0.0, f64::max)
    }
}

/// Time derivative of the smooth states (u is held).
#[derive(Debug, Clone, PartialEq)]
pub struct SystemDerivative {
    pub eta: DVector<f64>,
    pub f: DVector<f64>,
    pub v_net: DVector<f64>,
    pub p_t: DVector<f64>,
    pub p_g: DVector<f64>,
    pub theta: DVector<f64>,
    pub v: DVector<f64>,
    pub lambda: DVector<f64>,
}

pub fn closed_loop_rhs(
    net: &Network,
    cfg: &ControllerConfig,
    state: &SystemState,
    p_d: &DVector<f64>,
) -> SystemDerivative {
    let phys = &state.physical;
    let nd = network_rhs(net, phys, p_d);
    let (p_t, p_g) = turbine_governor_rhs(net, &phys.p_t, &phys.p_g, &phys.f, &state.u);
    let cd = controller_rhs(state, p_d, cfg);
    SystemDerivative {
        eta: nd.eta,
        f: nd.f,
        v_net: nd.v,
        p_t,
        p_g,
        theta: cd.theta,
        v: cd.v,
        lambda: cd.lambda,
    }
}

fn advance(state: &SystemState, h: f64, d: &SystemDerivative) -> SystemState {
    let p = &state.physical;
    SystemState {
        physical: PhysicalState {
            eta: &p.eta + &d.eta * h,
            f: &p.f + &d.f * h,
            v: &p.v + &d.v_net * h,
            p_t: &p.p_t + &d.p_t * h,
            p_g: &p.p_g + &d.p_g * h,
        },
        theta: &state.theta + &d.theta * h,
        u: state.u.clone(),
        v: &state.v + &d.v * h,
        lambda: &state.lambda + &d.lambda * h,
    }
}

/// One classical RK4 step with u and P_d held constant over the step.
pub fn rk4_step(
    net: &Network,
    cfg: &ControllerConfig,
    state: &SystemState,
    p_d: &DVector<f64>,
    dt: f64,
) -> SystemState {
    let k1 = closed_loop_rhs(net, cfg, state, p_d);
    let k2 = closed_loop_rhs(net, cfg, &advance(state, 0.5 * dt, &k1), p_d);
    let k3 = closed_loop_rhs(net, cfg, &advance(state, 0.5 * dt, &k2), p_d);
    let k4 = closed_loop_rhs(net, cfg, &advance(state, dt, &k3), p_d);
    let comb = |a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>, d: &DVector<f64>| {
        (a + b * 2.0 + c * 2.0 + d) / 6.0
    };
    let slope = SystemDerivative {
        eta: comb(&k1.eta, &k2.eta, &k3.eta, &k4.eta),
        f: comb(&k1.f, &k2.f, &k3.f, &k4.f),
        v_net: comb(&k1.v_net, &k2.v_net, &k3.v_net, &k4.v_net),
        p_t: comb(&k1.p_t, &k2.p_t, &k3.p_t, &k4.p_t),
        p_g: comb(&k1.p_g, &k2.p_g, &k3.p_g, &k4.p_g),
        theta: comb(&k1.theta, &k2.theta, &k3.theta, &k4.theta),
        v: comb(&k1.v, &k2.v, &k3.v, &k4.v),
        lambda: comb(&k1.lambda, &k2.lambda, &k3.lambda, &k4.lambda),
    };
    advance(state, dt, &slope)
}

/// Real-axis RK4 stability limit |hλ| for the scalar test equation.
pub const RK4_REAL_STABILITY: f64 = 2.785;

/// Fastest decay rate of the linear controller dynamics (θ and, for the
/// primal-dual variant, its coupling to λ), bounded through Gershgorin
/// discs. Used to reject step sizes that would make RK4 unstable.
pub fn controller_stiffness(cfg: &ControllerConfig) -> f64 {
    let n = cfg.n();
    let q = cfg.price_cost().q();
    let l = cfg.l_com();
    match cfg.variant {
        ControllerVariant::PrimalDual => (0..n)
            .map(|i| {
                let k = cfg.m1[i] / (cfg.m2[i] + cfg.m3[i]);
                (1.0 + k * q[i] + k) / cfg.t_theta[i]
            })
            .fold(0.0, f64::max),
        _ => {
            let a = cfg.effective_a();
            (0..n)
                .map(|i| {
                    let row: f64 = (0..n).map(|j| (l[(i, j)] * q[j]).abs()).sum();
                    (1.0 + a[i] * row) / cfg.t_theta[i]
                })
                .fold(0.0, f64::max)
        }
    }
}
