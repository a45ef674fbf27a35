//! Economic dispatch for strictly convex linear-quadratic generation costs
//! under a single balance constraint, and the steady-state frequency that
//! an arbitrary constant control input produces.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::Network;

/// Default bound on |P_t_opt_i| above which a dispatch is flagged as
/// implausible (the model has no capacity limits).
pub const DEFAULT_PLAUSIBILITY_BOUND: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostModelError {
    #[error("cost vectors have inconsistent lengths ({q}, {r}, {c0})")]
    Dimension { q: usize, r: usize, c0: usize },
    #[error("area {area}: quadratic cost coefficient must be strictly positive (got {value})")]
    NotStrictlyConvex { area: usize, value: f64 },
}

/// C_i(P) = ½ Q_i P² + R_i P + C0_i, in currency/h with P in p.u.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    q: DVector<f64>,
    r: DVector<f64>,
    c0: DVector<f64>,
}

impl CostModel {
    pub fn new(q: DVector<f64>, r: DVector<f64>, c0: DVector<f64>) -> Result<Self, CostModelError> {
        if q.len() != r.len() || q.len() != c0.len() {
            return Err(CostModelError::Dimension {
                q: q.len(),
                r: r.len(),
                c0: c0.len(),
            });
        }
        if let Some((area, &value)) = q
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v > 0.0) || !v.is_finite())
        {
            return Err(CostModelError::NotStrictlyConvex { area, value });
        }
        Ok(Self { q, r, c0 })
    }

    /// Pure quadratic costs (R = C0 = 0).
    pub fn quadratic(q: DVector<f64>) -> Result<Self, CostModelError> {
        let n = q.len();
        Self::new(q, DVector::zeros(n), DVector::zeros(n))
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn r(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn c0(&self) -> &DVector<f64> {
        &self.c0
    }

    /// Marginal costs Q P + R.
    pub fn marginal(&self, p: &DVector<f64>) -> DVector<f64> {
        self.q.component_mul(p) + &self.r
    }

    /// Same model expressed in a different currency unit: all coefficients
    /// divided by `unit`.
    pub fn rescaled(&self, unit: f64) -> Self {
        Self {
            q: &self.q / unit,
            r: &self.r / unit,
            c0: &self.c0 / unit,
        }
    }

    pub fn with_offsets(&self, c0: DVector<f64>) -> Self {
        Self { c0, ..self.clone() }
    }
}

/// Σ_i (½ Q_i P_i² + R_i P_i + C0_i).
pub fn total_cost(p_t: &DVector<f64>, model: &CostModel) -> f64 {
    assert_eq!(p_t.len(), model.n());
    p_t.iter()
        .zip(model.q.iter().zip(model.r.iter().zip(model.c0.iter())))
        .map(|(&p, (&q, (&r, &c)))| 0.5 * q * p * p + r * p + c)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatchResult {
    /// Optimal generation per area (p.u.).
    pub p_t_opt: DVector<f64>,
    /// Common marginal cost at the optimum (currency/h per p.u.).
    pub lambda_opt: f64,
}

impl DispatchResult {
    /// Areas whose optimal generation exceeds `bound` in magnitude.
    pub fn implausible_areas(&self, bound: f64) -> Vec<usize> {
        self.p_t_opt
            .iter()
            .enumerate()
            .filter(|(_, p)| p.abs() > bound)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Closed-form minimiser of total cost subject to Σ P_t = Σ P_d:
/// λ = Σ(P_d + R/Q) / Σ(1/Q), P_t = (λ - R)/Q.
pub fn optimal_dispatch(p_d: &DVector<f64>, model: &CostModel) -> DispatchResult {
    assert_eq!(p_d.len(), model.n());
    let inv_q_sum: f64 = model.q.iter().map(|q| 1.0 / q).sum();
    let numerator: f64 = p_d
        .iter()
        .zip(model.q.iter().zip(model.r.iter()))
        .map(|(&d, (&q, &r))| d + r / q)
        .sum();
    let lambda_opt = numerator / inv_q_sum;
    let p_t_opt = DVector::from_fn(model.n(), |i, _| (lambda_opt - model.r[i]) / model.q[i]);
    DispatchResult {
        p_t_opt,
        lambda_opt,
    }
}

/// f* = Σ(ū - P_d) / Σ(1/K_p + 1/R): the common frequency deviation reached
/// with a constant control input ū.
pub fn steady_state_frequency(u_bar: &DVector<f64>, p_d: &DVector<f64>, net: &Network) -> f64 {
    let denom: f64 = net
        .k_p
        .iter()
        .zip(net.r.iter())
        .map(|(k, r)| 1.0 / k + 1.0 / r)
        .sum();
    (u_bar - p_d).sum() / denom
}
