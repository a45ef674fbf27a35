//! Closed-form dispatch checked against two independent QP solvers on
//! random instances: projected gradient descent on the balance hyperplane
//! and Newton on the problem with the last area eliminated.

use dssosm_core::dispatch::{optimal_dispatch, total_cost, CostModel};
use dssosm_core::nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    q: DVector<f64>,
    r: DVector<f64>,
    p_d: DVector<f64>,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(2..=6);
    Instance {
        q: DVector::from_fn(n, |_, _| rng.random_range(0.5..5.0)),
        r: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
        p_d: DVector::from_fn(n, |_, _| rng.random_range(-0.5..1.0)),
    }
}

fn projected_gradient(inst: &Instance) -> DVector<f64> {
    let n = inst.q.len();
    let step = 1.0 / inst.q.max();
    // any feasible start: equal shares of total demand
    let mut p = DVector::from_element(n, inst.p_d.sum() / n as f64);
    for _ in 0..20_000 {
        let g = inst.q.component_mul(&p) + &inst.r;
        let mean = g.mean();
        p -= (g.add_scalar(-mean)) * step;
    }
    p
}

fn eliminated_newton(inst: &Instance) -> DVector<f64> {
    // P_n = D - Σ_{i<n} P_i; the reduced cost is quadratic so one Newton
    // step from zero is exact
    let n = inst.q.len();
    let d = inst.p_d.sum();
    let k = n - 1;
    let (qn, rn) = (inst.q[k], inst.r[k]);
    let hess = DMatrix::from_fn(k, k, |i, j| if i == j { inst.q[i] + qn } else { qn });
    let grad0 = DVector::from_fn(k, |i, _| inst.r[i] - (qn * d + rn));
    let x = hess
        .lu()
        .solve(&(-grad0))
        .expect("reduced Hessian is positive definite");
    let mut p = DVector::zeros(n);
    p.rows_mut(0, k).copy_from(&x);
    p[k] = d - x.sum();
    p
}

#[test]
fn closed_form_matches_qp_oracles_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let inst = random_instance(&mut rng);
        let n = inst.q.len();
        let model = CostModel::new(inst.q.clone(), inst.r.clone(), DVector::zeros(n)).unwrap();
        let closed = optimal_dispatch(&inst.p_d, &model);

        let pg = projected_gradient(&inst);
        let nt = eliminated_newton(&inst);
        for (name, oracle) in [("projected gradient", &pg), ("elimination", &nt)] {
            let err = (&closed.p_t_opt - oracle).amax();
            assert!(err < 1e-8, "case {case} ({name}): error {err:e}");
        }
        let lambda_oracle = inst.q[0] * nt[0] + inst.r[0];
        assert!(
            (closed.lambda_opt - lambda_oracle).abs() < 1e-8 * lambda_oracle.abs().max(1.0),
            "case {case}"
        );
        assert!(
            (closed.p_t_opt.sum() - inst.p_d.sum()).abs() < 1e-12,
            "case {case}"
        );
        assert!(
            total_cost(&closed.p_t_opt, &model) <= total_cost(&pg, &model) + 1e-12,
            "case {case}"
        );
    }
}
