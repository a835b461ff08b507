mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use psofed::model::NetworkSpec;
use psofed::theory::{expected_self_kron, steady_state_mse, KronBundle, Layout, Operator, TheoryOptions};

fn small_spec(k: usize, d: usize, m: usize, s: usize) -> NetworkSpec {
    let mut spec = NetworkSpec::homogeneous(k, d, m, s, 0.05, 1.0, 0.01);
    for (i, c) in spec.clients.iter_mut().enumerate() {
        c.input_variance = 0.4 + 0.2 * i as f64;
    }
    spec
}

fn ones_bvec(lay: &Layout) -> Vec<f64> {
    let n = lay.ext_dim();
    lay.bvec(&DMatrix::from_element(n, n, 1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn realized_combine_and_aggregate_are_row_stochastic(
        k in 2usize..5, d in 2usize..5, m_off in 0usize..4, s_off in 0usize..4, seed in 0u64..10_000,
    ) {
        let m = 1 + m_off % d;
        let s = 1 + s_off % k;
        let spec = small_spec(k, d, m, s);
        for op in [Operator::Combine, Operator::Aggregate] {
            let a = common::realized_dense(op, &spec, seed);
            for r in 0..a.nrows() {
                let sum: f64 = a.row(r).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12, "{op:?} row {r} sums to {sum}");
                prop_assert!(a.row(r).iter().all(|&v| v >= -1e-15));
            }
        }
    }

    #[test]
    fn expected_self_kron_fixes_the_consensus_direction(
        k in 2usize..5, d in 2usize..4, m_off in 0usize..4, s_off in 0usize..4,
    ) {
        let m = 1 + m_off % d;
        let s = 1 + s_off % k;
        let spec = small_spec(k, d, m, s);
        let lay = Layout::new(k, d);
        let one = ones_bvec(&lay);
        for op in [Operator::Combine, Operator::Aggregate] {
            let q = expected_self_kron(&spec, op).unwrap();
            let y = q.matvec(&one);
            let err = y.iter().zip(&one).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(err < 1e-12, "{op:?}: max deviation {err}");
        }
    }

    #[test]
    fn attack_term_depends_on_the_product_of_probability_and_variance(
        p in 0.05f64..0.5, v in 0.05f64..1.0, byz in 1usize..3,
    ) {
        let base = small_spec(4, 3, 1, 2);
        let opts = TheoryOptions::default();
        let mse = |p_a: f64, var_b: f64| {
            let spec = base.clone().with_attack(p_a, var_b, byz);
            steady_state_mse(&KronBundle::new(&spec).unwrap(), spec.stepsize, opts).unwrap()
        };
        let clean = steady_state_mse(&KronBundle::new(&base).unwrap(), base.stepsize, opts).unwrap();
        let a = mse(p, v);
        let b = mse(2.0 * p, 0.5 * v);
        let c = mse(p, 2.0 * v);
        prop_assert!((a.e_omega - b.e_omega).abs() <= 1e-9 * a.e_omega);
        prop_assert!((c.e_omega - 2.0 * a.e_omega).abs() <= 1e-9 * c.e_omega);
        prop_assert!((a.e_phi - clean.e_phi).abs() <= 1e-12 * clean.e_phi.max(1e-300));
        prop_assert!((a.e_theta - clean.e_theta).abs() <= 1e-12);
        prop_assert!(clean.e_omega.abs() < 1e-15);
    }
}

#[test]
fn operator_moments_match_monte_carlo_on_a_small_network() {
    let spec = common::oracle_spec(2, 2);
    for (i, op) in [Operator::Combine, Operator::Aggregate, Operator::Inject].into_iter().enumerate() {
        let r = common::operator_oracle(&spec, op, 20_000, 90 + i as u64);
        // 3 SE per entry; duplicated entries make failures come in clusters.
        assert!(r.pass_rate() >= 0.95, "{}: {}/{} ({})", r.name, r.passed, r.checked, r.worst);
    }
}

#[test]
fn second_order_input_moments_match_monte_carlo() {
    let spec = common::oracle_spec(1, 1);
    let h = common::h_oracle(&spec, 50_000, 3);
    let phi = common::phi_nu_oracle(&spec, 50_000, 4);
    for r in [h, phi] {
        assert!(r.pass_rate() >= 0.95, "{}: {}/{} ({})", r.name, r.passed, r.checked, r.worst);
    }
}
