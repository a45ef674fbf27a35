use dssosm_core::case_study;
use dssosm_core::controller::ControllerVariant;
use dssosm_core::dispatch::{optimal_dispatch, steady_state_frequency, total_cost, CostModel};
use dssosm_core::nalgebra::DVector;
use dssosm_core::network::{
    assemble_e, network_injection, network_rhs, turbine_governor_rhs, Line, Network,
    NetworkTopology, PhysicalState, SelfSusceptancePolicy,
};
use dssosm_core::simulator::{run_scenario, LoadEvent};
use proptest::prelude::*;

/// Random connected network: a random spanning tree plus optional chords.
fn arb_network() -> impl Strategy<Value = Network> {
    (2usize..=7).prop_flat_map(|n| {
        let parents: Vec<_> = (1..n).map(|i| 0..i).collect();
        let tree_b = prop::collection::vec(-8.0..-0.5f64, n - 1);
        let chords = prop::collection::vec((0..n, 0..n, -8.0..-0.5f64), 0..3);
        (Just(n), parents, tree_b, chords).prop_map(|(n, parents, tree_b, chords)| {
            let mut lines: Vec<Line> = parents
                .iter()
                .zip(&tree_b)
                .enumerate()
                .map(|(k, (&p, &b))| Line {
                    from: p,
                    to: k + 1,
                    susceptance: b,
                })
                .collect();
            for (a, b, s) in chords {
                let dup = lines
                    .iter()
                    .any(|l| (l.from, l.to) == (a, b) || (l.from, l.to) == (b, a));
                if a != b && !dup {
                    lines.push(Line {
                        from: a,
                        to: b,
                        susceptance: s,
                    });
                }
            }
            let base = case_study::area_params()[0].clone();
            let areas = vec![base; n];
            Network::new(
                areas,
                NetworkTopology::new(n, lines),
                SelfSusceptancePolicy::Derive,
            )
            .unwrap()
            .0
        })
    })
}

fn arb_network_and_state() -> impl Strategy<Value = (Network, DVector<f64>, DVector<f64>)> {
    arb_network().prop_flat_map(|net| {
        let (n, m) = (net.n(), net.m());
        let eta = prop::collection::vec(-std::f64::consts::PI..std::f64::consts::PI, m);
        let v = prop::collection::vec(0.5..1.5f64, n);
        (Just(net), eta, v)
            .prop_map(|(net, eta, v)| (net, DVector::from_vec(eta), DVector::from_vec(v)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn e_matrix_positive_definite_for_any_angles((net, eta, _) in arb_network_and_state()) {
        let e = assemble_e(&eta, &net);
        prop_assert_eq!(&e, &e.transpose());
        prop_assert!(e.cholesky().is_some());
    }
}

proptest! {
    #[test]
    fn network_is_lossless((net, eta, v) in arb_network_and_state()) {
        let total = network_injection(&eta, &v, &net).sum();
        prop_assert!(total.abs() < 1e-12, "{}", total);
    }

    #[test]
    fn incidence_columns_sum_to_zero(net in arb_network()) {
        for col in net.incidence().column_iter() {
            prop_assert_eq!(col.sum(), 0.0);
            prop_assert_eq!(col.iter().filter(|x| **x != 0.0).count(), 2);
        }
    }

    #[test]
    fn plant_rhs_is_deterministic((net, eta, v) in arb_network_and_state(), seed in 0.0..1.0f64) {
        let n = net.n();
        let state = PhysicalState {
            eta,
            v,
            f: DVector::from_fn(n, |i, _| 0.01 * (seed + i as f64).sin()),
            p_t: DVector::from_element(n, seed * 0.1),
            p_g: DVector::from_element(n, seed * 0.2),
        };
        let p_d = DVector::from_element(n, 0.05);
        let u = DVector::from_element(n, 0.03);
        let before = state.clone();
        let a = network_rhs(&net, &state, &p_d);
        let b = network_rhs(&net, &state, &p_d);
        prop_assert_eq!(a, b);
        let c = turbine_governor_rhs(&net, &state.p_t, &state.p_g, &state.f, &u);
        let d = turbine_governor_rhs(&net, &state.p_t, &state.p_g, &state.f, &u);
        prop_assert_eq!(c, d);
        prop_assert_eq!(before, state);
    }
}

fn arb_cost() -> impl Strategy<Value = (CostModel, DVector<f64>)> {
    (2usize..=6).prop_flat_map(|n| {
        (
            prop::collection::vec(0.1..10.0f64, n),
            prop::collection::vec(-2.0..2.0f64, n),
            prop::collection::vec(-1.0..1.0f64, n),
        )
            .prop_map(|(q, r, d)| {
                let n = q.len();
                let model = CostModel::new(
                    DVector::from_vec(q),
                    DVector::from_vec(r),
                    DVector::zeros(n),
                )
                .unwrap();
                (model, DVector::from_vec(d))
            })
    })
}

proptest! {
    #[test]
    fn dispatch_ignores_cost_offsets((model, p_d) in arb_cost(), shift in -1e3..1e3f64, spread in -1.0..1.0f64) {
        let base = optimal_dispatch(&p_d, &model);
        let n = model.n();
        let shifted = model.with_offsets(DVector::from_fn(n, |i, _| shift + spread * i as f64));
        let moved = optimal_dispatch(&p_d, &shifted);
        prop_assert_eq!(base, moved);
    }

    #[test]
    fn dispatch_is_locally_optimal((model, p_d) in arb_cost(), eps in 1e-4..1e-1f64, i in 0usize..6, j in 0usize..6) {
        let n = model.n();
        let (i, j) = (i % n, j % n);
        prop_assume!(i != j);
        let opt = optimal_dispatch(&p_d, &model);
        let mut p = opt.p_t_opt.clone();
        p[i] += eps;
        p[j] -= eps;
        prop_assert!(total_cost(&p, &model) > total_cost(&opt.p_t_opt, &model));
    }

    #[test]
    fn steady_frequency_is_linear(
        u in prop::collection::vec(-1.0..1.0f64, 4),
        w in prop::collection::vec(-1.0..1.0f64, 4),
        d in prop::collection::vec(-1.0..1.0f64, 4),
        a in -3.0..3.0f64,
    ) {
        let net = case_study::network();
        let (u, w, d) = (DVector::from_vec(u), DVector::from_vec(w), DVector::from_vec(d));
        let z = DVector::zeros(4);
        let combined = steady_state_frequency(&(&u + &w * a), &d, &net);
        let parts = steady_state_frequency(&u, &z, &net) + a * steady_state_frequency(&w, &z, &net)
            + steady_state_frequency(&z, &d, &net);
        prop_assert!((combined - parts).abs() < 1e-12 * (1.0 + combined.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    // short closed-loop runs with random steps inside the demand bound
    #[test]
    fn control_continuous_and_demand_piecewise_constant(
        steps in prop::collection::vec(prop::collection::vec(-0.02..0.02f64, 4), 1..3),
        variant in prop::sample::select(vec![
            ControllerVariant::SsosmConsensus,
            ControllerVariant::SsosmAZero,
            ControllerVariant::PrimalDual,
        ]),
    ) {
        let mut scenario = case_study::scenario(variant);
        scenario.t_end = 0.3;
        scenario.record_stride = 1;
        scenario.events = steps
            .iter()
            .enumerate()
            .map(|(k, d)| LoadEvent { time: 0.05 + 0.1 * k as f64, delta: DVector::from_vec(d.clone()) })
            .collect();
        let traj = run_scenario(&scenario).unwrap();
        prop_assert!(traj.max_du_ratio <= 1.0 + 1e-9, "{}", traj.max_du_ratio);
        let w_dt = &scenario.controller.w_max * scenario.dt;
        for pair in traj.states.windows(2) {
            let du = (&pair[1].u - &pair[0].u).abs();
            prop_assert!(du.iter().zip(w_dt.iter()).all(|(a, b)| *a <= b * (1.0 + 1e-9)));
        }
        for (j, &t) in traj.t.iter().enumerate() {
            let mut expected = scenario.baseline_pd.clone();
            for e in scenario.events.iter().filter(|e| scenario.event_step(e) <= (t / scenario.dt).round() as usize) {
                expected += &e.delta;
            }
            prop_assert_eq!(&traj.p_d[j], &expected);
        }
        let again = run_scenario(&scenario).unwrap();
        prop_assert_eq!(traj, again);
    }
}
