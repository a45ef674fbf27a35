//! Multi-area power network: per-area flux-decay generator model, lossless
//! tie lines, turbine-governor chain, and the algebraic equilibrium solver.
//!
//! Conventions: powers in p.u. on the system base, frequency deviation in
//! Hz, angles in rad, time in s. Line `k` joins `from` (positive end) and
//! `to` (negative end) so `η_k = δ_from - δ_to`. Line susceptances are
//! negative and the per-area network injection is
//!
//! ```text
//! p_net_i = Σ_{k ∼ {i,j}} B_ij V_i V_j sin(δ_i - δ_j) = (𝓑 Γ(V) sin η)_i
//! ```
//!
//! which enters the frequency equation with a positive sign, so an area
//! exporting power (δ_i > δ_j) sees its available power reduced.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph;

/// Tolerance for the self-susceptance consistency check in strict mode.
pub const SELF_SUSCEPTANCE_STRICT_TOL: f64 = 1e-9;
/// A user-supplied self-susceptance differing from the line sum by more
/// than this is reported when it is overridden.
pub const SELF_SUSCEPTANCE_WARN_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("network must contain at least one area")]
    Empty,
    #[error("network graph is disconnected; components: {components:?}")]
    Disconnected { components: Vec<Vec<usize>> },
    #[error("area {area}: {rule}")]
    InvalidArea { area: usize, rule: &'static str },
    #[error("line {line} ({from}-{to}): {rule}")]
    InvalidLine {
        line: usize,
        from: usize,
        to: usize,
        rule: &'static str,
    },
    #[error("area {area}: self-susceptance {given} differs from incident line sum {derived}")]
    SelfSusceptanceMismatch {
        area: usize,
        given: f64,
        derived: f64,
    },
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("equilibrium solve did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("equilibrium Jacobian is singular at iteration {iteration}")]
    SingularJacobian { iteration: usize },
}

impl NetworkError {
    /// Stable identifier of the violated rule.
    pub fn rule_id(&self) -> &'static str {
        match self {
            Self::Empty => "network-non-empty",
            Self::Disconnected { .. } => "network-graph-connected",
            Self::InvalidArea { rule, .. } | Self::InvalidLine { rule, .. } => rule,
            Self::SelfSusceptanceMismatch { .. } => "self-susceptance-consistent",
            Self::Dimension { .. } => "dimension",
            Self::NotConverged { .. } => "equilibrium-converged",
            Self::SingularJacobian { .. } => "equilibrium-jacobian-regular",
        }
    }
}

/// Physical constants of one control area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaParams {
    /// Area time constant (s).
    pub t_p: f64,
    /// Turbine time constant (s).
    pub t_t: f64,
    /// Governor time constant (s).
    pub t_g: f64,
    /// Direct-axis transient open-circuit constant (s).
    pub t_v: f64,
    /// Area gain (Hz/p.u.).
    pub k_p: f64,
    /// Speed regulation coefficient (Hz/p.u.).
    pub r: f64,
    /// Direct synchronous reactance (p.u.).
    pub x_d: f64,
    /// Direct synchronous transient reactance (p.u.).
    pub x_d_prime: f64,
    /// Constant exciter voltage (p.u.).
    pub e_f: f64,
    /// Self-susceptance (p.u.). `None` means derive from incident lines.
    pub b_self: Option<f64>,
    /// Known bound on the absolute demand (p.u.).
    pub demand_bound: f64,
}

impl AreaParams {
    fn validate(&self, area: usize) -> Result<(), NetworkError> {
        let bad = |rule| Err(NetworkError::InvalidArea { area, rule });
        let finite = [
            self.t_p,
            self.t_t,
            self.t_g,
            self.t_v,
            self.k_p,
            self.r,
            self.x_d,
            self.x_d_prime,
            self.e_f,
            self.demand_bound,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return bad("parameters must be finite");
        }
        if self.t_p <= 0.0 || self.t_t <= 0.0 || self.t_g <= 0.0 || self.t_v <= 0.0 {
            return bad("time constants strictly positive");
        }
        if self.k_p <= 0.0 {
            return bad("area gain strictly positive");
        }
        if self.r <= 0.0 {
            return bad("speed regulation strictly positive");
        }
        if self.x_d <= self.x_d_prime {
            return bad("synchronous reactance exceeds transient reactance");
        }
        if self.demand_bound < 0.0 {
            return bad("demand bound non-negative");
        }
        if let Some(b) = self.b_self {
            if !(b <= 0.0) {
                return bad("self-susceptance non-positive");
            }
        }
        Ok(())
    }
}

/// A transmission line between two areas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    /// Positive end.
    pub from: usize,
    /// Negative end.
    pub to: usize,
    /// Line susceptance B_ij (p.u., negative).
    pub susceptance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub n: usize,
    pub lines: Vec<Line>,
}

impl NetworkTopology {
    pub fn new(n: usize, lines: Vec<Line>) -> Self {
        Self { n, lines }
    }

    pub fn m(&self) -> usize {
        self.lines.len()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.lines.iter().map(|l| (l.from, l.to)).collect()
    }

    fn validate(&self) -> Result<(), NetworkError> {
        if self.n == 0 {
            return Err(NetworkError::Empty);
        }
        for (k, l) in self.lines.iter().enumerate() {
            let bad = |rule| {
                Err(NetworkError::InvalidLine {
                    line: k,
                    from: l.from,
                    to: l.to,
                    rule,
                })
            };
            if l.from >= self.n || l.to >= self.n {
                return bad("endpoint out of range");
            }
            if l.from == l.to {
                return bad("self-loop");
            }
            if !(l.susceptance < 0.0) || !l.susceptance.is_finite() {
                return bad("line susceptance strictly negative");
            }
        }
        let components = graph::connected_components(self.n, &self.edges());
        if components.len() > 1 {
            return Err(NetworkError::Disconnected { components });
        }
        Ok(())
    }
}

/// Oriented n × m incidence matrix of a validated, connected topology.
pub fn build_incidence(topology: &NetworkTopology) -> Result<DMatrix<f64>, NetworkError> {
    topology.validate()?;
    Ok(graph::incidence(topology.n, &topology.edges()))
}

/// How the self-susceptances B_ii are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelfSusceptancePolicy {
    /// Use the incident-line sum; a disagreeing user value is overridden
    /// and reported as a warning.
    #[default]
    Derive,
    /// Reject any user value that differs from the line sum.
    Strict,
}

/// Validated network data with per-area parameters gathered into vectors.
#[derive(Debug, Clone)]
pub struct Network {
    areas: Vec<AreaParams>,
    topology: NetworkTopology,
    incidence: DMatrix<f64>,
    b_self: DVector<f64>,
    pub t_p: DVector<f64>,
    pub t_t: DVector<f64>,
    pub t_g: DVector<f64>,
    pub t_v: DVector<f64>,
    pub k_p: DVector<f64>,
    pub r: DVector<f64>,
    /// X_d - X'_d per area.
    pub reactance_gap: DVector<f64>,
    pub e_f: DVector<f64>,
    pub demand_bound: DVector<f64>,
}

impl Network {
    /// Validates parameters and topology. Returns the network together with
    /// any non-fatal warnings.
    pub fn new(
        areas: Vec<AreaParams>,
        topology: NetworkTopology,
        policy: SelfSusceptancePolicy,
    ) -> Result<(Self, Vec<String>), NetworkError> {
        if areas.len() != topology.n {
            return Err(NetworkError::Dimension {
                what: "area parameter list",
                expected: topology.n,
                got: areas.len(),
            });
        }
        for (i, a) in areas.iter().enumerate() {
            a.validate(i)?;
        }
        let incidence = build_incidence(&topology)?;

        let mut derived = vec![0.0; topology.n];
        for l in &topology.lines {
            derived[l.from] += l.susceptance;
            derived[l.to] += l.susceptance;
        }
        let mut warnings = Vec::new();
        for (i, a) in areas.iter().enumerate() {
            if let Some(given) = a.b_self {
                let diff = (given - derived[i]).abs();
                match policy {
                    SelfSusceptancePolicy::Strict if diff > SELF_SUSCEPTANCE_STRICT_TOL => {
                        return Err(NetworkError::SelfSusceptanceMismatch {
                            area: i,
                            given,
                            derived: derived[i],
                        });
                    }
                    SelfSusceptancePolicy::Derive if diff > SELF_SUSCEPTANCE_WARN_TOL => {
                        warnings.push(format!(
                            "area {}: self-susceptance {given} overridden by incident line sum {}",
                            i + 1,
                            derived[i]
                        ));
                    }
                    _ => {}
                }
            }
        }

        let collect =
            |f: fn(&AreaParams) -> f64| DVector::from_iterator(areas.len(), areas.iter().map(f));
        let net = Self {
            t_p: collect(|a| a.t_p),
            t_t: collect(|a| a.t_t),
            t_g: collect(|a| a.t_g),
            t_v: collect(|a| a.t_v),
            k_p: collect(|a| a.k_p),
            r: collect(|a| a.r),
            reactance_gap: collect(|a| a.x_d - a.x_d_prime),
            e_f: collect(|a| a.e_f),
            demand_bound: collect(|a| a.demand_bound),
            b_self: DVector::from_vec(derived),
            incidence,
            topology,
            areas,
        };
        Ok((net, warnings))
    }

    pub fn n(&self) -> usize {
        self.topology.n
    }

    pub fn m(&self) -> usize {
        self.topology.m()
    }

    pub fn areas(&self) -> &[AreaParams] {
        &self.areas
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn incidence(&self) -> &DMatrix<f64> {
        &self.incidence
    }

    /// Self-susceptances B_ii actually used by the model.
    pub fn self_susceptance(&self) -> &DVector<f64> {
        &self.b_self
    }
}

/// Dynamic state of the uncontrolled network and generation chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalState {
    /// Line angle differences η = 𝓑ᵀδ (rad), one per line.
    pub eta: DVector<f64>,
    /// Frequency deviation (Hz).
    pub f: DVector<f64>,
    /// Voltage magnitude (p.u.).
    pub v: DVector<f64>,
    /// Turbine output (p.u.).
    pub p_t: DVector<f64>,
    /// Governor output (p.u.).
    pub p_g: DVector<f64>,
}

impl PhysicalState {
    pub fn check_dimensions(&self, n: usize, m: usize) -> Result<(), NetworkError> {
        let check = |what, got: usize, expected| {
            if got == expected {
                Ok(())
            } else {
                Err(NetworkError::Dimension {
                    what,
                    expected,
                    got,
                })
            }
        };
        check("eta", self.eta.len(), m)?;
        check("f", self.f.len(), n)?;
        check("V", self.v.len(), n)?;
        check("P_t", self.p_t.len(), n)?;
        check("P_g", self.p_g.len(), n)
    }

    pub fn voltages_positive(&self) -> bool {
        self.v.iter().all(|&v| v > 0.0)
    }

    pub fn is_finite(&self) -> bool {
        [&self.eta, &self.f, &self.v, &self.p_t, &self.p_g]
            .iter()
            .all(|x| x.iter().all(|v| v.is_finite()))
    }
}

/// Symmetric matrix E(η): E_ii = 1/(X_d - X'_d) - B_ii, E_ij = B_ij cos η_k.
pub fn assemble_e(eta: &DVector<f64>, net: &Network) -> DMatrix<f64> {
    assert_eq!(eta.len(), net.m(), "eta has one entry per line");
    let n = net.n();
    let mut e = DMatrix::zeros(n, n);
    for i in 0..n {
        e[(i, i)] = 1.0 / net.reactance_gap[i] - net.b_self[i];
    }
    for (k, l) in net.topology.lines.iter().enumerate() {
        let c = l.susceptance * eta[k].cos();
        e[(l.from, l.to)] += c;
        e[(l.to, l.from)] += c;
    }
    e
}

/// Per-line signed flow Γ(V)_k sin η_k = V_i V_j B_ij sin η_k.
pub fn line_flows(
    eta: &DVector<f64>,
    v: &DVector<f64>,
    topology: &NetworkTopology,
) -> DVector<f64> {
    assert_eq!(eta.len(), topology.m());
    assert_eq!(v.len(), topology.n);
    DVector::from_iterator(
        topology.m(),
        topology
            .lines
            .iter()
            .zip(eta.iter())
            .map(|(l, &e)| v[l.from] * v[l.to] * l.susceptance * e.sin()),
    )
}

/// Net power injected into each area by the network, 𝓑 Γ(V) sin η.
pub fn network_injection(eta: &DVector<f64>, v: &DVector<f64>, net: &Network) -> DVector<f64> {
    &net.incidence * line_flows(eta, v, &net.topology)
}

/// Time derivatives of the network states.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkDerivative {
    pub eta: DVector<f64>,
    pub f: DVector<f64>,
    pub v: DVector<f64>,
}

/// η̇ = 𝓑ᵀf, T_p ḟ = -f + K_p(P_t - P_d + 𝓑Γ(V) sin η),
/// T_V V̇ = -(X_d - X'_d) E(η) V + E_f.
pub fn network_rhs(net: &Network, state: &PhysicalState, p_d: &DVector<f64>) -> NetworkDerivative {
    let injection = network_injection(&state.eta, &state.v, net);
    let eta = net.incidence.tr_mul(&state.f);
    let mut f = DVector::zeros(net.n());
    for i in 0..net.n() {
        f[i] = (-state.f[i] + net.k_p[i] * (state.p_t[i] - p_d[i] + injection[i])) / net.t_p[i];
    }
    let ev = assemble_e(&state.eta, net) * &state.v;
    let mut v = DVector::zeros(net.n());
    for i in 0..net.n() {
        v[i] = (-net.reactance_gap[i] * ev[i] + net.e_f[i]) / net.t_v[i];
    }
    NetworkDerivative { eta, f, v }
}

/// T_t Ṗ_t = -P_t + P_g, T_g Ṗ_g = -f/R - P_g + u.
pub fn turbine_governor_rhs(
    net: &Network,
    p_t: &DVector<f64>,
    p_g: &DVector<f64>,
    f: &DVector<f64>,
    u: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = net.n();
    let dp_t = DVector::from_fn(n, |i, _| (-p_t[i] + p_g[i]) / net.t_t[i]);
    let dp_g = DVector::from_fn(n, |i, _| (-f[i] / net.r[i] - p_g[i] + u[i]) / net.t_g[i]);
    (dp_t, dp_g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 50,
            max_halvings: 8,
        }
    }
}

/// Outcome of the steady-state security test on an equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct SecurityCheck {
    /// Every |η̄_k| < π/2.
    pub angles_within_bounds: bool,
    pub voltages_positive: bool,
    /// Per-area margin 1/(X_d-X'_d) - B_ii + Σ B_ij (V_i + V_j sin²η_k)/(V_i cos η_k).
    pub margins: DVector<f64>,
}

impl SecurityCheck {
    pub fn passed(&self) -> bool {
        self.angles_within_bounds && self.voltages_positive && self.margins.iter().all(|&m| m > 0.0)
    }
}

/// Evaluates the voltage/angle security condition at a candidate equilibrium.
pub fn security_check(net: &Network, eta: &DVector<f64>, v: &DVector<f64>) -> SecurityCheck {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut margins = DVector::from_fn(net.n(), |i, _| 1.0 / net.reactance_gap[i] - net.b_self[i]);
    for (k, l) in net.topology.lines.iter().enumerate() {
        let (s, c) = eta[k].sin_cos();
        let (i, j) = (l.from, l.to);
        margins[i] += l.susceptance * (v[i] + v[j] * s * s) / (v[i] * c);
        margins[j] += l.susceptance * (v[j] + v[i] * s * s) / (v[j] * c);
    }
    SecurityCheck {
        angles_within_bounds: eta.iter().all(|e| e.abs() < half_pi),
        voltages_positive: v.iter().all(|&x| x > 0.0),
        margins,
    }
}

/// A solved steady state of the network equations.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub eta: DVector<f64>,
    pub v: DVector<f64>,
    /// Common steady-state frequency deviation (zero when generation and
    /// demand balance).
    pub f_star: f64,
    /// Infinity norm of the algebraic residual.
    pub residual: f64,
    pub iterations: usize,
    pub security: SecurityCheck,
}

impl Equilibrium {
    /// Whether the angles lie outside (-π/2, π/2) or the local-minimum
    /// condition fails. The result is still usable.
    pub fn flagged(&self) -> bool {
        !self.security.passed()
    }
}

struct Unknowns {
    delta: DVector<f64>,
    v: DVector<f64>,
}

fn angle_differences(net: &Network, delta: &DVector<f64>) -> DVector<f64> {
    net.incidence.tr_mul(delta)
}

/// Residual: per-area power balance with the common frequency offset
/// removed, followed by the per-area voltage equation.
fn equilibrium_residual(
    net: &Network,
    x: &Unknowns,
    p_t: &DVector<f64>,
    p_d: &DVector<f64>,
    f_star: f64,
) -> (DVector<f64>, DVector<f64>) {
    let eta = angle_differences(net, &x.delta);
    let inj = network_injection(&eta, &x.v, net);
    let balance = DVector::from_fn(net.n(), |i, _| {
        p_t[i] - p_d[i] + inj[i] - f_star / net.k_p[i]
    });
    let ev = assemble_e(&eta, net) * &x.v;
    let voltage = DVector::from_fn(net.n(), |i, _| net.e_f[i] - net.reactance_gap[i] * ev[i]);
    (balance, voltage)
}

fn residual_norm(parts: &(DVector<f64>, DVector<f64>)) -> f64 {
    parts.0.amax().max(parts.1.amax())
}

/// Jacobian of [balance_1..balance_{n-1}; voltage_0..voltage_{n-1}] with
/// respect to [δ_1..δ_{n-1}; V_0..V_{n-1}] (area 0 is the angle reference).
fn equilibrium_jacobian(net: &Network, x: &Unknowns) -> DMatrix<f64> {
    let n = net.n();
    // full derivatives w.r.t. all δ and V, then drop the reference rows/cols
    let mut d_inj_d_delta = DMatrix::zeros(n, n);
    let mut d_inj_d_v = DMatrix::zeros(n, n);
    let mut d_volt_d_delta = DMatrix::zeros(n, n);
    let mut d_volt_d_v = DMatrix::zeros(n, n);
    for i in 0..n {
        d_volt_d_v[(i, i)] = -net.reactance_gap[i] * (1.0 / net.reactance_gap[i] - net.b_self[i]);
    }
    for l in &net.topology.lines {
        let b = l.susceptance;
        for (i, j) in [(l.from, l.to), (l.to, l.from)] {
            let (s, c) = (x.delta[i] - x.delta[j]).sin_cos();
            let (vi, vj) = (x.v[i], x.v[j]);
            // injection_i += b vi vj sin(δi-δj)
            d_inj_d_delta[(i, i)] += b * vi * vj * c;
            d_inj_d_delta[(i, j)] -= b * vi * vj * c;
            d_inj_d_v[(i, i)] += b * vj * s;
            d_inj_d_v[(i, j)] += b * vi * s;
            // voltage_i -= gap_i b cos(δi-δj) vj
            let g = net.reactance_gap[i];
            d_volt_d_v[(i, j)] -= g * b * c;
            d_volt_d_delta[(i, i)] += g * b * s * vj;
            d_volt_d_delta[(i, j)] -= g * b * s * vj;
        }
    }
    let dim = 2 * n - 1;
    let mut jac = DMatrix::zeros(dim, dim);
    for r in 1..n {
        for c in 1..n {
            jac[(r - 1, c - 1)] = d_inj_d_delta[(r, c)];
        }
        for c in 0..n {
            jac[(r - 1, n - 1 + c)] = d_inj_d_v[(r, c)];
        }
    }
    for r in 0..n {
        for c in 1..n {
            jac[(n - 1 + r, c - 1)] = d_volt_d_delta[(r, c)];
        }
        for c in 0..n {
            jac[(n - 1 + r, n - 1 + c)] = d_volt_d_v[(r, c)];
        }
    }
    jac
}

/// Least-squares node angles (reference area 0 at zero) reproducing `eta`.
fn angles_from_line_differences(net: &Network, eta: &DVector<f64>) -> DVector<f64> {
    let n = net.n();
    if n == 1 {
        return DVector::zeros(1);
    }
    let b_red = net.incidence.rows(1, n - 1).into_owned();
    let normal = &b_red * b_red.transpose();
    let rhs = &b_red * eta;
    let reduced = normal
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .unwrap_or_else(|| DVector::zeros(n - 1));
    let mut delta = DVector::zeros(n);
    delta.rows_mut(1, n - 1).copy_from(&reduced);
    delta
}

/// Solves the algebraic steady state for a given turbine output and demand
/// by damped Newton iteration over node angles and voltages.
///
/// When Σ(P_t - P_d) ≠ 0 the steady state has a common frequency
/// deviation f* = Σ(P_t - P_d) / Σ K_p⁻¹, which is returned alongside.
pub fn solve_equilibrium(
    net: &Network,
    p_t: &DVector<f64>,
    p_d: &DVector<f64>,
    initial_guess: Option<(&DVector<f64>, &DVector<f64>)>,
    options: NewtonOptions,
) -> Result<Equilibrium, NetworkError> {
    let n = net.n();
    for (what, v) in [("P_t", p_t), ("P_d", p_d)] {
        if v.len() != n {
            return Err(NetworkError::Dimension {
                what,
                expected: n,
                got: v.len(),
            });
        }
    }
    let f_star = (p_t - p_d).sum() / net.k_p.map(|k| 1.0 / k).sum();

    let mut x = match initial_guess {
        Some((eta, v)) => Unknowns {
            delta: angles_from_line_differences(net, eta),
            v: v.clone(),
        },
        None => Unknowns {
            delta: DVector::zeros(n),
            v: DVector::from_element(n, 1.0),
        },
    };

    let mut res = equilibrium_residual(net, &x, p_t, p_d, f_star);
    let mut norm = residual_norm(&res);
    let mut iterations = 0;
    while norm > options.tolerance {
        if iterations >= options.max_iterations {
            return Err(NetworkError::NotConverged {
                iterations,
                residual: norm,
            });
        }
        iterations += 1;
        let jac = equilibrium_jacobian(net, &x);
        let mut rhs = DVector::zeros(2 * n - 1);
        for r in 1..n {
            rhs[r - 1] = -res.0[r];
        }
        for r in 0..n {
            rhs[n - 1 + r] = -res.1[r];
        }
        let step = jac.lu().solve(&rhs).ok_or(NetworkError::SingularJacobian {
            iteration: iterations,
        })?;

        let mut scale = 1.0;
        let mut halvings = 0;
        loop {
            let mut trial = Unknowns {
                delta: x.delta.clone(),
                v: x.v.clone(),
            };
            for r in 1..n {
                trial.delta[r] += scale * step[r - 1];
            }
            for r in 0..n {
                trial.v[r] += scale * step[n - 1 + r];
            }
            let trial_res = equilibrium_residual(net, &trial, p_t, p_d, f_star);
            let trial_norm = residual_norm(&trial_res);
            if trial_norm <= norm || halvings >= options.max_halvings {
                x = trial;
                res = trial_res;
                norm = trial_norm;
                break;
            }
            scale *= 0.5;
            halvings += 1;
        }
    }

    let eta = angle_differences(net, &x.delta);
    let security = security_check(net, &eta, &x.v);
    Ok(Equilibrium {
        eta,
        v: x.v,
        f_star,
        residual: norm,
        iterations,
        security,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn area(gap: f64) -> AreaParams {
        AreaParams {
            t_p: 20.0,
            t_t: 0.3,
            t_g: 0.08,
            t_v: 6.0,
            k_p: 120.0,
            r: 2.5,
            x_d: 0.25 + gap,
            x_d_prime: 0.25,
            e_f: 1.0,
            b_self: None,
            demand_bound: 0.02,
        }
    }

    fn two_area(b12: f64) -> Network {
        let topo = NetworkTopology::new(
            2,
            vec![Line {
                from: 0,
                to: 1,
                susceptance: b12,
            }],
        );
        Network::new(
            vec![area(0.5), area(0.5)],
            topo,
            SelfSusceptancePolicy::Derive,
        )
        .unwrap()
        .0
    }

    #[test]
    fn two_area_incidence() {
        let net = two_area(-1.0);
        assert_eq!(net.incidence().column(0).as_slice(), &[1.0, -1.0]);
    }

    #[test]
    fn disconnected_topology_lists_components() {
        let topo = NetworkTopology::new(
            4,
            vec![
                Line {
                    from: 0,
                    to: 1,
                    susceptance: -1.0,
                },
                Line {
                    from: 2,
                    to: 3,
                    susceptance: -1.0,
                },
            ],
        );
        match build_incidence(&topo) {
            Err(NetworkError::Disconnected { components }) => {
                assert_eq!(components, vec![vec![0, 1], vec![2, 3]]);
            }
            other => panic!("expected disconnected error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let topo = NetworkTopology::new(
            2,
            vec![Line {
                from: 0,
                to: 1,
                susceptance: -1.0,
            }],
        );
        let mut a = area(0.5);
        a.x_d = a.x_d_prime;
        let err = Network::new(
            vec![a, area(0.5)],
            topo.clone(),
            SelfSusceptancePolicy::Derive,
        )
        .unwrap_err();
        assert!(matches!(err, NetworkError::InvalidArea { area: 0, .. }));

        let pos = NetworkTopology::new(
            2,
            vec![Line {
                from: 0,
                to: 1,
                susceptance: 1.0,
            }],
        );
        assert!(matches!(
            build_incidence(&pos),
            Err(NetworkError::InvalidLine { .. })
        ));
    }

    #[test]
    fn self_susceptance_policies() {
        let topo = NetworkTopology::new(
            2,
            vec![Line {
                from: 0,
                to: 1,
                susceptance: -1.0,
            }],
        );
        let mut a = area(0.5);
        a.b_self = Some(-1.5);
        let (net, warnings) = Network::new(
            vec![a.clone(), area(0.5)],
            topo.clone(),
            SelfSusceptancePolicy::Derive,
        )
        .unwrap();
        assert_eq!(warnings.len(), 1);
        assert_eq!(net.self_susceptance()[0], -1.0);
        let err =
            Network::new(vec![a, area(0.5)], topo, SelfSusceptancePolicy::Strict).unwrap_err();
        assert!(matches!(
            err,
            NetworkError::SelfSusceptanceMismatch { area: 0, .. }
        ));
    }

    #[test]
    fn e_matrix_two_area_zero_angle() {
        let net = two_area(-1.0);
        let e = assemble_e(&DVector::zeros(1), &net);
        assert_eq!(e, DMatrix::from_row_slice(2, 2, &[3.0, -1.0, -1.0, 3.0]));
    }

    #[test]
    fn line_flow_single_line() {
        let net = two_area(-5.4);
        let flows = line_flows(
            &DVector::from_element(1, 0.1),
            &DVector::from_element(2, 1.0),
            net.topology(),
        );
        assert_relative_eq!(flows[0], -0.539_100_449_892_872_1, epsilon = 1e-12);
        let zero = line_flows(
            &DVector::zeros(1),
            &DVector::from_element(2, 1.0),
            net.topology(),
        );
        assert_eq!(zero[0], 0.0);
    }

    #[test]
    fn governor_derivative_for_unit_setpoint() {
        let net = two_area(-1.0);
        let z = DVector::zeros(2);
        let u = DVector::from_element(2, 1.0);
        let (dp_t, dp_g) = turbine_governor_rhs(&net, &z, &z, &z, &u);
        assert_eq!(dp_t, z);
        assert_relative_eq!(dp_g[0], 12.5, epsilon = 1e-12);

        let p = DVector::from_element(2, 0.3);
        let (a, b) = turbine_governor_rhs(&net, &p, &p, &z, &p);
        assert_eq!(a, z);
        assert_eq!(b, z);
    }

    #[test]
    fn zero_injection_equilibrium_is_linear_solve() {
        let net = two_area(-1.0);
        let z = DVector::zeros(2);
        let eq = solve_equilibrium(&net, &z, &z, None, NewtonOptions::default()).unwrap();
        let scaled =
            DMatrix::from_diagonal(&net.reactance_gap) * assemble_e(&DVector::zeros(1), &net);
        let expected = scaled.lu().solve(&net.e_f).unwrap();
        assert_relative_eq!(eq.v, expected, epsilon = 1e-12);
        assert_eq!(eq.eta[0], 0.0);
        assert!(eq.security.passed());
        assert_eq!(eq.f_star, 0.0);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let net = two_area(-2.0);
        let x = Unknowns {
            delta: DVector::from_vec(vec![0.0, -0.07]),
            v: DVector::from_vec(vec![1.02, 0.97]),
        };
        let p = DVector::from_vec(vec![0.1, -0.05]);
        let d = DVector::from_vec(vec![0.02, 0.03]);
        let pack = |r: (DVector<f64>, DVector<f64>)| {
            let mut out = DVector::zeros(3);
            out[0] = r.0[1];
            out[1] = r.1[0];
            out[2] = r.1[1];
            out
        };
        let jac = equilibrium_jacobian(&net, &x);
        let h = 1e-6;
        for c in 0..3 {
            let shift = |sign: f64| {
                let mut y = Unknowns {
                    delta: x.delta.clone(),
                    v: x.v.clone(),
                };
                if c == 0 {
                    y.delta[1] += sign * h;
                } else {
                    y.v[c - 1] += sign * h;
                }
                pack(equilibrium_residual(&net, &y, &p, &d, 0.0))
            };
            let fd = (shift(1.0) - shift(-1.0)) / (2.0 * h);
            for r in 0..3 {
                assert_relative_eq!(jac[(r, c)], fd[r], epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn unbalanced_equilibrium_has_common_frequency() {
        let net = two_area(-3.0);
        let p_t = DVector::from_vec(vec![0.02, 0.0]);
        let p_d = DVector::from_vec(vec![0.0, 0.01]);
        let eq = solve_equilibrium(&net, &p_t, &p_d, None, NewtonOptions::default()).unwrap();
        assert!(eq.residual < 1e-10);
        let state = PhysicalState {
            eta: eq.eta.clone(),
            f: DVector::from_element(2, eq.f_star),
            v: eq.v.clone(),
            p_t: p_t.clone(),
            p_g: p_t.clone(),
        };
        let d = network_rhs(&net, &state, &p_d);
        assert!(d.f.amax() < 1e-8 && d.v.amax() < 1e-8 && d.eta.amax() == 0.0);
        assert_relative_eq!(eq.f_star, 0.01 / (2.0 / 120.0), epsilon = 1e-12);
    }

    #[test]
    fn non_convergence_is_reported() {
        let net = two_area(-0.01);
        // transfer far beyond the line capacity
        let p_t = DVector::from_vec(vec![5.0, 0.0]);
        let p_d = DVector::from_vec(vec![0.0, 5.0]);
        let opts = NewtonOptions {
            max_iterations: 10,
            ..Default::default()
        };
        assert!(matches!(
            solve_equilibrium(&net, &p_t, &p_d, None, opts),
            Err(NetworkError::NotConverged { .. }) | Err(NetworkError::SingularJacobian { .. })
        ));
    }
}
