//! Incremental storage functions used to check monotone convergence.

use nalgebra::{DMatrix, DVector};

use crate::controller::ControllerConfig;
use crate::network::{assemble_e, line_flows, Network, PhysicalState};
use crate::simulator::min_norm_flows;

/// Un-shifted network storage ½ fᵀT_pK_p⁻¹f + ½ VᵀE(η)V.
pub fn network_energy(state: &PhysicalState, net: &Network) -> f64 {
    let kinetic: f64 = (0..net.n())
        .map(|i| 0.5 * net.t_p[i] / net.k_p[i] * state.f[i] * state.f[i])
        .sum();
    let e = assemble_e(&state.eta, net);
    kinetic + 0.5 * state.v.dot(&(e * &state.v))
}

/// Bregman distance of the network storage between `state` and the
/// reference equilibrium, over (η, f, V). ∂/∂η of ½VᵀE(η)V is -Γ(V) sin η.
pub fn storage_s1(state: &PhysicalState, reference: &PhysicalState, net: &Network) -> f64 {
    let grad_eta = -line_flows(&reference.eta, &reference.v, net.topology());
    let grad_f = DVector::from_fn(net.n(), |i, _| net.t_p[i] / net.k_p[i] * reference.f[i]);
    let grad_v = assemble_e(&reference.eta, net) * &reference.v;
    network_energy(state, net)
        - network_energy(reference, net)
        - grad_eta.dot(&(&state.eta - &reference.eta))
        - grad_f.dot(&(&state.f - &reference.f))
        - grad_v.dot(&(&state.v - &reference.v))
}

/// ½ΔP_tᵀM1⁻¹M3T_tΔP_t + ½ΔθᵀM1⁻¹(M2+M3)T_θΔθ.
pub fn storage_s2(
    p_t: &DVector<f64>,
    theta: &DVector<f64>,
    p_t_opt: &DVector<f64>,
    theta_bar: &DVector<f64>,
    net: &Network,
    cfg: &ControllerConfig,
) -> f64 {
    (0..cfg.n())
        .map(|i| {
            let dp = p_t[i] - p_t_opt[i];
            let dth = theta[i] - theta_bar[i];
            0.5 * cfg.m3[i] * net.t_t[i] / cfg.m1[i] * dp * dp
                + 0.5 * (cfg.m2[i] + cfg.m3[i]) * cfg.t_theta[i] / cfg.m1[i] * dth * dth
        })
        .sum()
}

/// ½|v - v̄|² + ½|λ - λ̄|².
pub fn storage_s3(
    v: &DVector<f64>,
    lambda: &DVector<f64>,
    v_bar: &DVector<f64>,
    lambda_bar: &DVector<f64>,
) -> f64 {
    0.5 * (v - v_bar).norm_squared() + 0.5 * (lambda - lambda_bar).norm_squared()
}

/// Steady state (v̄, λ̄) of the primal-dual states reached from v(0):
/// λ̄ = λ_opt·1 (price units) and v̄ solves B v̄ = θ̄ - P_d while keeping
/// the null-space component of v(0), which v̇ = -Bᵀλ never changes.
pub fn primal_dual_reference(
    cfg: &ControllerConfig,
    theta_bar: &DVector<f64>,
    p_d: &DVector<f64>,
    lambda_opt: f64,
    v0: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let b = cfg.b_com();
    let particular = min_norm_flows(b, &(theta_bar - p_d));
    let v_bar = particular + null_space_projection(b) * v0;
    (
        v_bar,
        DVector::from_element(cfg.n(), lambda_opt / cfg.price_unit),
    )
}

/// Orthogonal projector onto ker(B).
fn null_space_projection(b: &DMatrix<f64>) -> DMatrix<f64> {
    let m = b.ncols();
    let gram = b.tr_mul(b);
    let pinv = gram
        .clone()
        .pseudo_inverse(1e-12)
        .expect("pseudo-inverse of a Gram matrix");
    DMatrix::identity(m, m) - pinv * gram
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_study;
    use crate::controller::ControllerVariant;
    use crate::dispatch::optimal_dispatch;
    use crate::simulator::equilibrium_state;

    fn reference() -> (Network, ControllerConfig, PhysicalState) {
        let (net, cfg, pd) = case_study::components(ControllerVariant::SsosmConsensus);
        let s = equilibrium_state(&net, &cfg, &pd).unwrap();
        (net, cfg, s.physical)
    }

    #[test]
    fn s1_vanishes_at_reference() {
        let (net, _, r) = reference();
        assert!(storage_s1(&r, &r, &net).abs() < 1e-14);
    }

    #[test]
    fn s1_hessian_positive_definite() {
        // finite-difference Hessian over (η, f, V) on δ-consistent directions
        let (net, _, r) = reference();
        let n = net.n();
        let dim = (n - 1) + 2 * n;
        let apply = |x: &DVector<f64>| {
            let mut s = r.clone();
            let mut delta = DVector::zeros(n);
            for i in 1..n {
                delta[i] = x[i - 1];
            }
            s.eta += net.incidence().tr_mul(&delta);
            for i in 0..n {
                s.f[i] += x[n - 1 + i];
                s.v[i] += x[2 * n - 1 + i];
            }
            storage_s1(&s, &r, &net)
        };
        let h = 1e-4;
        let mut hess = DMatrix::zeros(dim, dim);
        for a in 0..dim {
            for b in 0..dim {
                let mut e = DVector::zeros(dim);
                e[a] += h;
                e[b] += h;
                let pp = apply(&e);
                e[b] -= 2.0 * h;
                let pm = apply(&e);
                e[a] -= 2.0 * h;
                let mm = apply(&e);
                e[b] += 2.0 * h;
                let mp = apply(&e);
                hess[(a, b)] = (pp - pm - mp + mm) / (4.0 * h * h);
            }
        }
        let sym = (&hess + hess.transpose()) * 0.5;
        let eig = sym.symmetric_eigenvalues();
        assert!(eig.min() > 0.0, "{eig}");
    }

    #[test]
    fn s1_positive_for_small_perturbations() {
        let (net, _, r) = reference();
        let mut s = r.clone();
        for k in 0..20 {
            let x = (k as f64 * 0.37).sin() * 1e-2;
            s.eta = &r.eta
                + net
                    .incidence()
                    .tr_mul(&DVector::from_vec(vec![0.0, x, -x, 0.5 * x]));
            s.v = r.v.add_scalar(0.3 * x);
            s.f = DVector::from_element(4, x);
            if x != 0.0 {
                assert!(storage_s1(&s, &r, &net) > 0.0);
            }
        }
    }

    #[test]
    fn s2_is_quadratic() {
        let (net, cfg, _) = reference();
        let opt = optimal_dispatch(&case_study::load_step(), cfg.cost()).p_t_opt;
        assert_eq!(storage_s2(&opt, &opt, &opt, &opt, &net, &cfg), 0.0);
        let d = DVector::from_vec(vec![1e-3, -2e-3, 5e-4, 0.0]);
        let one = storage_s2(&(&opt + &d), &(&opt - &d), &opt, &opt, &net, &cfg);
        let two = storage_s2(
            &(&opt + &d * 2.0),
            &(&opt - &d * 2.0),
            &opt,
            &opt,
            &net,
            &cfg,
        );
        assert!((two - 4.0 * one).abs() < 1e-15 * two.max(1.0));
    }

    #[test]
    fn primal_dual_reference_solves_steady_state() {
        let cfg = case_study::controller(ControllerVariant::PrimalDual);
        let pd = case_study::load_step();
        let opt = optimal_dispatch(&pd, cfg.cost());
        let v0 = DVector::from_vec(vec![0.3, -0.1, 0.2]);
        let (v_bar, lambda_bar) =
            primal_dual_reference(&cfg, &opt.p_t_opt, &pd, opt.lambda_opt, &v0);
        let residual = cfg.b_com() * &v_bar - (&opt.p_t_opt - &pd);
        assert!(residual.amax() < 1e-9);
        assert!((cfg.b_com().tr_mul(&lambda_bar)).amax() < 1e-12);
        assert_eq!(storage_s3(&v_bar, &lambda_bar, &v_bar, &lambda_bar), 0.0);
    }
}
