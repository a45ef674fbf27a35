//! Bounds of the auxiliary system σ̈ = φ + G w and the gain constraints of
//! the switching law.
//!
//! G = M3 T_g⁻¹ is exact. |φ| is estimated by evaluating the analytic drift
//! along simulated load steps, then inflated by a safety factor. The
//! estimate is advisory: it only covers the steps that were simulated.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sliding_drift, ControllerConfig, ControllerError};
use crate::network::Network;
use crate::simulator::{run_scenario, InitialCondition, LoadEvent, Scenario};

/// Load steps over which |φ| is maximised. Each sample starts from the
/// closed-loop equilibrium at the baseline demand, applies one step and
/// evaluates φ along the recorded trajectory once |σ_i| has entered the
/// band for good. Steps are the declared `steps` when given, otherwise
/// vertices ±𝒟_i of the demand box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatingEnvelope {
    /// Simulated time after the step (s).
    pub horizon: f64,
    pub dt: f64,
    pub record_stride: usize,
    /// |σ_i| band marking the end of the reaching phase.
    pub sigma_band: f64,
    /// Explicit load steps, each of length n.
    pub steps: Vec<Vec<f64>>,
    /// Number of load steps. All 2ⁿ vertices are used when this is at
    /// least 2ⁿ, otherwise vertices are drawn at random.
    pub samples: usize,
    pub seed: u64,
    /// Relative uncertainty of T_g, widening [G_min, G_max].
    pub governor_uncertainty: f64,
    pub safety_factor: f64,
}

impl Default for OperatingEnvelope {
    fn default() -> Self {
        Self {
            horizon: 2.0,
            dt: 1e-4,
            record_stride: 10,
            sigma_band: 1e-4,
            steps: Vec::new(),
            samples: 16,
            seed: 7,
            governor_uncertainty: 0.0,
            safety_factor: 2.0,
        }
    }
}

impl OperatingEnvelope {
    fn validate(&self) -> Result<(), ControllerError> {
        let empty = |reason| Err(ControllerError::EmptyEnvelope { reason });
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return empty("non-positive horizon");
        }
        if !(self.dt > 0.0) || self.dt > self.horizon {
            return empty("step size outside (0, horizon]");
        }
        if self.record_stride == 0 || !(self.sigma_band > 0.0) {
            return empty("zero record stride or band");
        }
        if self.samples == 0 && self.steps.is_empty() {
            return empty("zero samples");
        }
        if !(0.0..1.0).contains(&self.governor_uncertainty) {
            return empty("governor uncertainty outside [0, 1)");
        }
        if !(self.safety_factor >= 1.0) {
            return empty("safety factor below 1");
        }
        Ok(())
    }

    /// Load steps used by the estimate, one sign pattern per sample.
    pub fn load_steps(&self, bound: &DVector<f64>) -> Vec<DVector<f64>> {
        let n = bound.len();
        if !self.steps.is_empty() {
            return self
                .steps
                .iter()
                .map(|s| DVector::from_column_slice(s))
                .collect();
        }
        let vertex = |bits: u64| {
            DVector::from_fn(n, |i, _| {
                if bits >> i & 1 == 1 {
                    bound[i]
                } else {
                    -bound[i]
                }
            })
        };
        let count = 1u64.checked_shl(n as u32).unwrap_or(u64::MAX);
        if n < 64 && (self.samples as u64) >= count {
            (0..count).map(vertex).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            (0..self.samples)
                .map(|_| vertex(rng.random::<u64>()))
                .collect()
        }
    }
}

/// Per-area outcome of the constraint check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainReport {
    /// Smallest admissible W_max (strict bound).
    pub w_required: DVector<f64>,
    /// Upper limit 3 G_min / G_max on α*.
    pub alpha_limit: DVector<f64>,
    pub w_ok: Vec<bool>,
    pub alpha_ok: Vec<bool>,
}

impl GainReport {
    pub fn passed(&self) -> bool {
        self.w_ok.iter().chain(&self.alpha_ok).all(|&b| b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainBounds {
    /// Φ_i including the safety factor.
    pub phi: DVector<f64>,
    /// Raw sampled max |φ_i| in the sliding phase.
    pub phi_sampled: DVector<f64>,
    /// Raw sampled max |φ_i| before σ enters the band. Not covered by Φ.
    pub phi_reaching: DVector<f64>,
    pub g_min: DVector<f64>,
    pub g_max: DVector<f64>,
    pub report: GainReport,
}

/// Constraint check for given Φ, G bounds and gains.
pub fn check_gains(
    phi: &DVector<f64>,
    g_min: &DVector<f64>,
    g_max: &DVector<f64>,
    w_max: &DVector<f64>,
    alpha_star: &DVector<f64>,
) -> GainReport {
    let n = phi.len();
    let alpha_limit = DVector::from_fn(n, |i, _| 3.0 * g_min[i] / g_max[i]);
    let alpha_ok: Vec<bool> = (0..n).map(|i| alpha_star[i] < alpha_limit[i]).collect();
    let w_required = DVector::from_fn(n, |i, _| {
        let denom = 3.0 * g_min[i] - alpha_star[i] * g_max[i];
        let second = if denom > 0.0 {
            4.0 * phi[i] / denom
        } else {
            f64::INFINITY
        };
        (phi[i] / (alpha_star[i] * g_min[i])).max(second)
    });
    let w_ok = (0..n).map(|i| w_max[i] > w_required[i]).collect();
    GainReport {
        w_required,
        alpha_limit,
        w_ok,
        alpha_ok,
    }
}

/// Drift statistics of one simulated load step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftSample {
    pub step: DVector<f64>,
    /// max |φ_i| once σ is inside the band.
    pub sliding: DVector<f64>,
    /// max |φ_i| during the reaching phase.
    pub reaching: DVector<f64>,
}

/// Estimates Φ from simulated load steps starting at the equilibrium of
/// `baseline_pd`, and checks the configured W_max and α*.
pub fn gain_bounds(
    net: &Network,
    cfg: &ControllerConfig,
    baseline_pd: &DVector<f64>,
    envelope: &OperatingEnvelope,
) -> Result<GainBounds, ControllerError> {
    envelope.validate()?;
    let n = net.n();
    if let Some(s) = envelope.steps.iter().find(|s| s.len() != n) {
        return Err(ControllerError::Dimension {
            what: "envelope step",
            expected: n,
            got: s.len(),
        });
    }
    let x = envelope.governor_uncertainty;
    let g_min = DVector::from_fn(n, |i, _| cfg.m3[i] / (net.t_g[i] * (1.0 + x)));
    let g_max = DVector::from_fn(n, |i, _| cfg.m3[i] / (net.t_g[i] * (1.0 - x)));

    let samples: Vec<DriftSample> = envelope
        .load_steps(&net.demand_bound)
        .into_par_iter()
        .map(|step| drift_along_step(net, cfg, baseline_pd, step, envelope))
        .collect::<Result<_, _>>()?;

    let fold = |pick: fn(&DriftSample) -> &DVector<f64>| {
        samples
            .iter()
            .fold(DVector::zeros(n), |acc: DVector<f64>, s| acc.sup(pick(s)))
    };
    let phi_sampled = fold(|s| &s.sliding);
    let phi_reaching = fold(|s| &s.reaching);
    let phi = &phi_sampled * envelope.safety_factor;
    let report = check_gains(&phi, &g_min, &g_max, &cfg.w_max, &cfg.alpha_star);
    Ok(GainBounds {
        phi,
        phi_sampled,
        phi_reaching,
        g_min,
        g_max,
        report,
    })
}

fn drift_along_step(
    net: &Network,
    cfg: &ControllerConfig,
    baseline_pd: &DVector<f64>,
    step: DVector<f64>,
    env: &OperatingEnvelope,
) -> Result<DriftSample, ControllerError> {
    let n = net.n();
    let scenario = Scenario {
        network: net.clone(),
        controller: cfg.clone(),
        baseline_pd: baseline_pd.clone(),
        events: vec![LoadEvent {
            time: 0.0,
            delta: step.clone(),
        }],
        t_end: env.horizon,
        dt: env.dt,
        record_stride: env.record_stride,
        initial: InitialCondition::Equilibrium,
    };
    let traj = run_scenario(&scenario).map_err(|e| ControllerError::EnvelopeRun {
        reason: e.to_string(),
    })?;
    // per area, the first record after which |σ_i| stays inside the band
    let entry: Vec<usize> = (0..n)
        .map(|i| {
            traj.sigma
                .iter()
                .rposition(|s| s[i].abs() >= env.sigma_band)
                .map_or(0, |j| j + 1)
        })
        .collect();
    let mut sliding = DVector::zeros(n);
    let mut reaching = DVector::zeros(n);
    for (j, state) in traj.states.iter().enumerate() {
        let phi = sliding_drift(net, state, &traj.p_d[j], cfg);
        for i in 0..n {
            let slot = if j >= entry[i] {
                &mut sliding[i]
            } else {
                &mut reaching[i]
            };
            *slot = f64::max(*slot, phi[i].abs());
        }
    }
    Ok(DriftSample {
        step,
        sliding,
        reaching,
    })
}
