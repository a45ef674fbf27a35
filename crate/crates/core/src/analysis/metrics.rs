//! Convergence, reaching, dispatch and Lyapunov metrics of a finished run.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::storage::{primal_dual_reference, storage_s1, storage_s2, storage_s3};
use crate::controller::ControllerVariant;
use crate::dispatch::{optimal_dispatch, total_cost, CostModel, DispatchResult};
use crate::network::NetworkError;
use crate::simulator::{equilibrium_state, Scenario, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("reference cost is zero; savings are undefined")]
    ZeroReferenceCost,
    #[error("reference equilibrium: {0}")]
    Equilibrium(#[from] NetworkError),
    #[error("trajectory is empty")]
    EmptyTrajectory,
}

/// 100 (1 - C(P_t) / C(own-demand dispatch)).
pub fn cost_savings(
    p_t: &DVector<f64>,
    model: &CostModel,
    own_demand: &DVector<f64>,
) -> Result<f64, AnalysisError> {
    let reference = total_cost(own_demand, model);
    if reference == 0.0 {
        return Err(AnalysisError::ZeroReferenceCost);
    }
    Ok(100.0 * (1.0 - total_cost(p_t, model) / reference))
}

/// Pass thresholds for the verification criteria.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// |f_i| bound defining settling (Hz).
    pub settling_frequency: f64,
    /// How long |f_i| must stay below the bound (s).
    pub settling_window: f64,
    /// |σ_i| band for the reaching criterion.
    pub reaching_band: f64,
    /// |σ_i| band whose reaching time starts the Lyapunov check.
    pub lyapunov_band: f64,
    /// Per-area |P_t(t_end) - P_t_opt| bound (p.u.).
    pub dispatch_tolerance: f64,
    /// Marginal-cost spread bound relative to λ_opt.
    pub consensus_relative: f64,
    /// |1ᵀP_t - 1ᵀP_d| bound at t_end (p.u.).
    pub balance_tolerance: f64,
    /// Allowed distance from the oracle savings (percentage points).
    pub savings_tolerance: f64,
    /// Plausibility band for the savings (%).
    pub savings_band: [f64; 2],
    /// Allowed positive storage increment relative to the window maximum.
    pub lyapunov_relative: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            settling_frequency: 1e-3,
            settling_window: 5.0,
            reaching_band: 1e-3,
            lyapunov_band: 1e-4,
            dispatch_tolerance: 1e-4,
            consensus_relative: 1e-6,
            balance_tolerance: 1e-6,
            savings_tolerance: 0.5,
            savings_band: [5.0, 15.0],
            lyapunov_relative: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Settling {
    Settled {
        time: f64,
    },
    NotSettled,
    /// Settled too close to t_end to confirm the window.
    Inconclusive {
        time: f64,
    },
}

/// Reaching times of one event segment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentReaching {
    pub start: f64,
    pub end: f64,
    /// Per area, None when σ_i is still outside the band at segment end.
    pub t_r: Vec<Option<f64>>,
}

impl SegmentReaching {
    pub fn all_reached(&self) -> bool {
        self.t_r.iter().all(Option::is_some)
    }

    pub fn max_t_r(&self) -> Option<f64> {
        self.t_r
            .iter()
            .try_fold(self.start, |acc, t| t.map(|t| acc.max(t)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovCheck {
    /// Number of recorded increments checked.
    pub checked: usize,
    pub violations: usize,
    /// Largest increment divided by the window maximum of S.
    pub worst_relative_increment: f64,
    pub max_storage: f64,
    /// Segments whose reaching time was not found (not checked).
    pub unchecked_segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Criterion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub variant: &'static str,
    pub t_end: f64,
    pub settling: Settling,
    pub reaching: Vec<SegmentReaching>,
    pub lyapunov_reaching: Vec<SegmentReaching>,
    pub dispatch: DispatchResult,
    pub dispatch_error: f64,
    pub marginal_cost_spread: f64,
    pub balance_error: f64,
    pub savings_percent: Option<f64>,
    pub savings_oracle: Option<f64>,
    pub lyapunov: LyapunovCheck,
    pub max_du_ratio: f64,
    pub criteria: Vec<Criterion>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    pub fn criterion(&self, name: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.name == name)
    }

    /// Human-readable summary, one line per criterion.
    pub fn to_text(&self) -> String {
        let mut out = format!("variant: {}\n", self.variant);
        for c in &self.criteria {
            out.push_str(&format!(
                "[{}] {}: {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            ));
        }
        out
    }
}

/// First recorded time in [from, to] after which every |x_j(t)| stays
/// below `bound` up to and including the last sample before `to`.
fn entry_time(
    t: &[f64],
    value: impl Fn(usize) -> f64,
    from: f64,
    to: f64,
    bound: f64,
    last_inclusive: bool,
) -> Option<f64> {
    let idx: Vec<usize> = (0..t.len())
        .filter(|&j| {
            t[j] >= from - 1e-12
                && if last_inclusive {
                    t[j] <= to + 1e-12
                } else {
                    t[j] < to - 1e-12
                }
        })
        .collect();
    let mut entry = None;
    for &j in &idx {
        if value(j) < bound {
            entry.get_or_insert(t[j]);
        } else {
            entry = None;
        }
    }
    entry
}

pub fn reaching_times(traj: &Trajectory, scenario: &Scenario, band: f64) -> Vec<SegmentReaching> {
    let bounds = scenario.segment_bounds();
    let n = traj.n();
    bounds
        .windows(2)
        .enumerate()
        .map(|(s, w)| {
            let last = s + 2 == bounds.len();
            SegmentReaching {
                start: w[0],
                end: w[1],
                t_r: (0..n)
                    .map(|i| {
                        entry_time(&traj.t, |j| traj.sigma[j][i].abs(), w[0], w[1], band, last)
                    })
                    .collect(),
            }
        })
        .collect()
}

fn settling(traj: &Trajectory, scenario: &Scenario, th: &Thresholds) -> Settling {
    let from = scenario.events.last().map_or(0.0, |e| e.time);
    let t_end = *traj.t.last().unwrap_or(&0.0);
    match entry_time(
        &traj.t,
        |j| traj.states[j].physical.f.amax(),
        from,
        t_end,
        th.settling_frequency,
        true,
    ) {
        None => Settling::NotSettled,
        Some(t) if t_end - t < th.settling_window => Settling::Inconclusive { time: t },
        Some(t) => Settling::Settled { time: t },
    }
}

fn lyapunov(
    traj: &Trajectory,
    scenario: &Scenario,
    segments: &[SegmentReaching],
    th: &Thresholds,
) -> Result<LyapunovCheck, AnalysisError> {
    let net = &scenario.network;
    let cfg = &scenario.controller;
    let mut check = LyapunovCheck {
        checked: 0,
        violations: 0,
        worst_relative_increment: f64::NEG_INFINITY,
        max_storage: 0.0,
        unchecked_segments: 0,
    };
    let last_segment = segments.len().saturating_sub(1);
    for (s, seg) in segments.iter().enumerate() {
        let Some(t_r) = seg.max_t_r() else {
            check.unchecked_segments += 1;
            continue;
        };
        let start = t_r + scenario.dt;
        let idx: Vec<usize> = (0..traj.len())
            .filter(|&j| {
                let t = traj.t[j];
                t >= start - 1e-12
                    && (t < seg.end - 1e-12 || (s == last_segment && t <= seg.end + 1e-12))
            })
            .collect();
        if idx.len() < 2 {
            continue;
        }
        let p_d = traj.p_d[idx[0]].clone();
        let reference = equilibrium_state(net, cfg, &p_d)?;
        let opt = optimal_dispatch(&p_d, cfg.cost());
        let pd_ref = match cfg.variant {
            ControllerVariant::PrimalDual => Some(primal_dual_reference(
                cfg,
                &opt.p_t_opt,
                &p_d,
                opt.lambda_opt,
                &traj.states[idx[0]].v,
            )),
            _ => None,
        };
        let storage: Vec<f64> = idx
            .iter()
            .map(|&j| {
                let st = &traj.states[j];
                let mut total = storage_s1(&st.physical, &reference.physical, net)
                    + storage_s2(
                        &st.physical.p_t,
                        &st.theta,
                        &opt.p_t_opt,
                        &opt.p_t_opt,
                        net,
                        cfg,
                    );
                if let Some((v_bar, l_bar)) = &pd_ref {
                    total += storage_s3(&st.v, &st.lambda, v_bar, l_bar);
                }
                total
            })
            .collect();
        let max_s = storage.iter().cloned().fold(0.0, f64::max);
        check.max_storage = check.max_storage.max(max_s);
        for pair in storage.windows(2) {
            let rel = if max_s > 0.0 {
                (pair[1] - pair[0]) / max_s
            } else {
                0.0
            };
            check.checked += 1;
            check.worst_relative_increment = check.worst_relative_increment.max(rel);
            if rel > th.lyapunov_relative {
                check.violations += 1;
            }
        }
    }
    Ok(check)
}

/// Computes every report field and evaluates the criteria.
pub fn convergence_metrics(
    traj: &Trajectory,
    scenario: &Scenario,
    th: &Thresholds,
) -> Result<VerificationReport, AnalysisError> {
    if traj.is_empty() {
        return Err(AnalysisError::EmptyTrajectory);
    }
    let cfg = &scenario.controller;
    let last = traj.last();
    let p_d_end = traj.p_d.last().expect("non-empty").clone();
    let dispatch = optimal_dispatch(&p_d_end, cfg.cost());

    let settling = settling(traj, scenario, th);
    let reaching = reaching_times(traj, scenario, th.reaching_band);
    let lyapunov_reaching = reaching_times(traj, scenario, th.lyapunov_band);
    let lyapunov = lyapunov(traj, scenario, &lyapunov_reaching, th)?;

    let dispatch_error = (&last.physical.p_t - &dispatch.p_t_opt).amax();
    let mc = cfg.cost().marginal(&last.theta);
    let marginal_cost_spread = mc.max() - mc.min();
    let balance_error = (last.physical.p_t.sum() - p_d_end.sum()).abs();

    // own-demand reference: each area covers the demand change it sees
    let increment = &p_d_end - &scenario.baseline_pd;
    let base_opt = optimal_dispatch(&scenario.baseline_pd, cfg.cost()).p_t_opt;
    let own_demand = &base_opt + &increment;
    let savings_percent = cost_savings(&last.physical.p_t, cfg.cost(), &own_demand).ok();
    let savings_oracle = cost_savings(&dispatch.p_t_opt, cfg.cost(), &own_demand).ok();

    let mut criteria = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        criteria.push(Criterion {
            name: name.to_string(),
            passed,
            detail,
        })
    };

    push(
        "frequency-settling",
        matches!(settling, Settling::Settled { .. }),
        match settling {
            Settling::Settled { time } => {
                format!("|f| < {:e} Hz from t = {time:.3} s", th.settling_frequency)
            }
            Settling::NotSettled => "frequency never settles".into(),
            Settling::Inconclusive { time } => {
                format!("settled at {time:.3} s, less than the window before t_end")
            }
        },
    );
    push(
        "dispatch-optimality",
        dispatch_error < th.dispatch_tolerance,
        format!(
            "max |P_t - P_t_opt| = {dispatch_error:.3e} p.u. (tol {:e})",
            th.dispatch_tolerance
        ),
    );
    let consensus_bound = th.consensus_relative * dispatch.lambda_opt.abs();
    push(
        "marginal-cost-consensus",
        marginal_cost_spread < consensus_bound,
        format!("spread {marginal_cost_spread:.3e} vs bound {consensus_bound:.3e}"),
    );
    push(
        "balance",
        balance_error < th.balance_tolerance,
        format!("|sum P_t - sum P_d| = {balance_error:.3e} p.u."),
    );
    let savings_ok = match (savings_percent, savings_oracle) {
        (Some(s), Some(o)) => {
            (s - o).abs() < th.savings_tolerance
                && (th.savings_band[0]..=th.savings_band[1]).contains(&s)
        }
        _ => false,
    };
    push(
        "cost-savings",
        savings_ok,
        match (savings_percent, savings_oracle) {
            (Some(s), Some(o)) => format!(
                "{s:.4} % simulated, {o:.4} % oracle, band [{}, {}] %",
                th.savings_band[0], th.savings_band[1]
            ),
            _ => "reference cost is zero; savings undefined".into(),
        },
    );
    let reached = reaching.iter().all(SegmentReaching::all_reached);
    let worst_tr = reaching
        .iter()
        .filter_map(|s| s.max_t_r().map(|t| t - s.start))
        .fold(0.0, f64::max);
    push(
        "sliding-reaching",
        reached,
        if reached {
            format!(
                "|sigma| < {:e} within {worst_tr:.4} s of each event",
                th.reaching_band
            )
        } else {
            "sigma does not stay in the band".into()
        },
    );
    let u_ok = traj.max_du_ratio <= 1.0 + 1e-9;
    push(
        "control-continuity",
        u_ok,
        format!("max |du| / (W_max dt) = {:.6}", traj.max_du_ratio),
    );
    let lyap_ok =
        lyapunov.violations == 0 && lyapunov.unchecked_segments == 0 && lyapunov.checked > 0;
    push(
        "lyapunov-monotonicity",
        lyap_ok,
        format!(
            "{} violations in {} increments, worst {:.3e} relative, {} segments without reaching",
            lyapunov.violations,
            lyapunov.checked,
            lyapunov.worst_relative_increment,
            lyapunov.unchecked_segments
        ),
    );

    Ok(VerificationReport {
        variant: cfg.variant.as_str(),
        t_end: scenario.t_end,
        settling,
        reaching,
        lyapunov_reaching,
        dispatch,
        dispatch_error,
        marginal_cost_spread,
        balance_error,
        savings_percent,
        savings_oracle,
        lyapunov,
        max_du_ratio: traj.max_du_ratio,
        criteria,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_study;
    use crate::simulator::run_scenario;
    use approx::assert_relative_eq;

    #[test]
    fn uniform_costs_give_no_savings() {
        let m = CostModel::quadratic(DVector::from_element(3, 4.0)).unwrap();
        let d = DVector::from_element(3, 0.01);
        let opt = optimal_dispatch(&d, &m);
        assert_relative_eq!(
            cost_savings(&opt.p_t_opt, &m, &d).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_reference_cost_is_reported() {
        let m = CostModel::quadratic(DVector::from_element(2, 1.0)).unwrap();
        let z = DVector::zeros(2);
        assert_eq!(
            cost_savings(&z, &m, &z),
            Err(AnalysisError::ZeroReferenceCost)
        );
    }

    #[test]
    fn table_savings_oracle() {
        let m = case_study::cost_model();
        let d = case_study::load_step();
        let opt = optimal_dispatch(&d, &m);
        let s = cost_savings(&opt.p_t_opt, &m, &d).unwrap();
        // frozen from the closed form
        assert_relative_eq!(s, 8.167_7, epsilon = 1e-4);
    }

    #[test]
    fn entry_time_requires_staying_inside() {
        let t = [0.0, 1.0, 2.0, 3.0, 4.0];
        let x = [5.0, 0.1, 5.0, 0.1, 0.1];
        assert_eq!(entry_time(&t, |j| x[j], 0.0, 4.0, 1.0, true), Some(3.0));
        assert_eq!(entry_time(&t, |j| x[j], 0.0, 2.0, 1.0, true), None);
    }

    #[test]
    fn rest_run_settles_immediately() {
        let mut s = case_study::scenario(ControllerVariant::SsosmConsensus);
        s.events.clear();
        s.t_end = 6.0;
        let traj = run_scenario(&s).unwrap();
        let r = convergence_metrics(&traj, &s, &Thresholds::default()).unwrap();
        assert_eq!(r.settling, Settling::Settled { time: 0.0 });
        assert!(r.dispatch_error < 1e-15);
    }
}
