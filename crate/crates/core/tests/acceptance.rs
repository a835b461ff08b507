//! Acceptance criteria AC-1 .. AC-9.
//!
//! Runs without the libtest harness so every criterion prints exactly one
//! `PASS`/`FAIL` line, followed by indented diagnostics. Exits nonzero when
//! any criterion fails.

mod common;

use std::time::Instant;

use psofed::algorithms::Algorithm;
use psofed::config::{AttackSection, ConfigFile, ExperimentSection, NetworkSection};
use psofed::model::NetworkSpec;
use psofed::sim::{run_experiment, run_replica, ExperimentPlan, RunMetrics};
use psofed::theory::{
    mean_stability_bound, ms_stability_bound, optimal_stepsize, optimal_stepsize_exact, spectral_radius,
    steady_state_mse, KronBundle, TheoryOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

impl Outcome {
    fn new(pass: bool, summary: impl Into<String>) -> Self {
        Self { pass, summary: summary.into(), details: Vec::new() }
    }

    fn detail(mut self, line: impl Into<String>) -> Self {
        self.details.push(line.into());
        self
    }
}

/// The K=10 reference network: fixed variances, two Byzantine clients.
fn reference_spec(mu: f64, byz: usize, p_a: f64, var_b: f64) -> NetworkSpec {
    NetworkSpec::homogeneous(10, 5, 1, 2, mu, 0.7, 0.01).with_attack(p_a, var_b, byz)
}

/// A K-client network with input/noise variances drawn for `seed` exactly as
/// a configuration file would.
fn drawn_spec(k: usize, m: usize, mu: f64, byz: usize, p_a: f64, var_b: f64, seed: u64) -> NetworkSpec {
    ConfigFile {
        network: NetworkSection {
            num_clients: Some(k),
            model_dim: Some(5),
            shared_entries: Some(m),
            round_size: Some(5),
            stepsize: Some(mu),
            ..Default::default()
        },
        attack: AttackSection {
            attack_probability: Some(p_a),
            attack_variance: Some(var_b),
            byzantine_count: Some(byz),
            byzantine_clients: None,
        },
        experiment: ExperimentSection { seed: Some(seed), ..Default::default() },
        ..Default::default()
    }
    .to_plan()
    .unwrap()
    .spec
}

fn plan(spec: NetworkSpec, iterations: usize, replicas: usize, seed: u64) -> ExperimentPlan {
    ExperimentPlan { iterations, replicas, seed, window: 200, ..ExperimentPlan::new(spec, Algorithm::Psofed) }
}

fn simulate(spec: NetworkSpec, iterations: usize, replicas: usize, seed: u64) -> RunMetrics {
    run_experiment(&plan(spec, iterations, replicas, seed)).unwrap()
}

fn ac1() -> Outcome {
    let spec = reference_spec(0.05, 2, 0.2, 0.5);
    let theory = steady_state_mse(&KronBundle::new(&spec).unwrap(), 0.05, TheoryOptions::default()).unwrap();
    let sim = simulate(spec, 2000, 200, 11);
    let rel = (theory.total - sim.network_mse).abs() / theory.total;
    Outcome::new(
        rel <= 0.10,
        format!("theory/sim agreement: theory {:.6}, sim {:.6}, relative gap {:.3} (≤ 0.10)", theory.total, sim.network_mse, rel),
    )
    .detail(format!(
        "e_phi {:.6}, e_omega {:.6}, e_theta {:.6}; sim SE {:.6}",
        theory.e_phi, theory.e_omega, theory.e_theta, sim.network_mse_se
    ))
    .detail(
        "margin is thin: the attack term is predicted under independent selections across the \
         combine/aggregate steps, while the recursion reuses them; the gap is about 11% on longer runs",
    )
}

fn ac2() -> Outcome {
    let reports = common::full_oracle_suite(100_000, 1_000_000);
    let worst = reports.iter().map(|r| r.pass_rate()).fold(1.0, f64::min);
    let failing: Vec<_> = reports.iter().filter(|r| r.pass_rate() < 0.99).collect();
    let mut out = Outcome::new(
        failing.is_empty(),
        format!("oracle suite: {} matrices, lowest pass rate {:.4} (≥ 0.99 each)", reports.len(), worst),
    );
    for r in &reports {
        if r.passed < r.checked {
            out = out.detail(format!("{}: {}/{} within 3 SE, worst {}", r.name, r.passed, r.checked, r.worst));
        }
    }
    out
}

fn ac3() -> Outcome {
    // (a) no attack: μ* = 0 exactly.
    let clean = reference_spec(0.05, 0, 0.0, 0.0);
    let mu_clean = optimal_stepsize(&KronBundle::new(&clean).unwrap(), 5).unwrap();
    let pass_a = mu_clean == 0.0;

    // (b) K=10 analog of the stepsize experiment, checked against a simulated sweep.
    let spec_b = reference_spec(0.05, 3, 0.25, 0.25);
    let bundle_b = KronBundle::new(&spec_b).unwrap();
    let mu_b = optimal_stepsize(&bundle_b, 5).unwrap();
    let exact_b = optimal_stepsize_exact(&bundle_b, None, TheoryOptions::default()).unwrap();
    let grid: Vec<f64> = (0..10).map(|i| 0.005 * (40f64).powf(i as f64 / 9.0)).collect();
    let mses: Vec<f64> = grid
        .iter()
        .map(|&mu| {
            let mut s = spec_b.clone();
            s.stepsize = mu;
            simulate(s, 2000, 200, 21).network_mse
        })
        .collect();
    let argmin = (0..grid.len()).min_by(|&a, &b| mses[a].total_cmp(&mses[b])).unwrap();
    let lo = grid[argmin.saturating_sub(1)];
    let hi = grid[(argmin + 1).min(grid.len() - 1)];
    let pass_b = mu_b > 0.0 && (lo..=hi).contains(&mu_b);

    // (c) K=50 network with drawn variances.
    let spec_c = drawn_spec(50, 1, 0.03, 15, 0.25, 0.25, 7);
    let bundle_c = KronBundle::new(&spec_c).unwrap();
    let mu_c = optimal_stepsize(&bundle_c, 5).unwrap();
    let exact_c = optimal_stepsize_exact(&bundle_c, None, TheoryOptions::default()).unwrap();
    let pass_c = (0.015..=0.045).contains(&mu_c);

    Outcome::new(
        pass_a && pass_b && pass_c,
        format!(
            "optimal stepsize: (a) {} μ*={mu_clean}; (b) {} μ*={mu_b:.5}, sim argmin {:.5}; (c) {} μ*={mu_c:.5} (in [0.015, 0.045])",
            verdict(pass_a),
            verdict(pass_b),
            grid[argmin],
            verdict(pass_c)
        ),
    )
    .detail(format!(
        "(b) grid {:?}",
        grid.iter().zip(&mses).map(|(g, m)| format!("{g:.4}:{m:.6}")).collect::<Vec<_>>()
    ))
    .detail(format!("(b) exact minimizer of the steady-state MSE {exact_b:.5}"))
    .detail(format!("(c) exact minimizer of the steady-state MSE {exact_c:.5}"))
}

fn ac4() -> Outcome {
    let spec = drawn_spec(100, 1, 0.15, 0, 0.0, 0.0, 0);
    let bundle = KronBundle::new(&spec).unwrap();
    let bound = ms_stability_bound(&bundle).unwrap();
    let pass_ref = (0.21..=0.28).contains(&bound);
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    for case in 0..20 {
        let k = rng.random_range(2..=5);
        let d = rng.random_range(2..=4);
        let m = rng.random_range(1..=d);
        let s = rng.random_range(1..=k);
        let mut spec = NetworkSpec::homogeneous(k, d, m, s, 0.1, 1.0, 0.01);
        for c in spec.clients.iter_mut() {
            c.input_variance = rng.random_range(0.2..1.2);
        }
        let b = KronBundle::new(&spec).unwrap();
        let mu = 0.99 * ms_stability_bound(&b).unwrap();
        let rho = spectral_radius(&b, mu, false);
        worst = worst.max(rho);
        if rho >= 1.0 {
            bad.push(format!("case {case}: K={k} D={d} M={m} s={s} ρ={rho:.6}"));
        }
    }
    let mut out = Outcome::new(
        pass_ref && bad.is_empty(),
        format!(
            "stability bounds: K=100 bound {bound:.4} (in [0.21, 0.28]); 20 random configs, max ρ(F(0.99·bound)) {worst:.6} (< 1)"
        ),
    )
    .detail(format!("mean-stability bound {:.4}", mean_stability_bound(&spec).unwrap()));
    for b in bad {
        out = out.detail(b);
    }
    out
}

fn ac5() -> Outcome {
    let a = simulate(drawn_spec(50, 1, 0.1, 5, 0.2, 0.5, 3), 3000, 100, 31);
    let b = simulate(drawn_spec(50, 1, 0.1, 10, 0.2, 0.25, 3), 3000, 100, 31);
    let rel = (a.network_mse - b.network_mse).abs() / a.network_mse.max(b.network_mse);
    Outcome::new(
        rel <= 0.05,
        format!(
            "attack-product equivalence: (5, 0.5) {:.6} vs (10, 0.25) {:.6}, relative gap {:.4} (≤ 0.05)",
            a.network_mse, b.network_mse, rel
        ),
    )
}

fn ac6() -> Outcome {
    let terms = |m: usize| {
        let spec = drawn_spec(50, m, 0.1, 5, 0.2, 0.5, 5);
        steady_state_mse(&KronBundle::new(&spec).unwrap(), 0.1, TheoryOptions::default()).unwrap()
    };
    let (t1, t5) = (terms(1), terms(5));
    let pass_theory = t1.e_omega < t5.e_omega && t1.e_phi > t5.e_phi;
    let s1 = simulate(drawn_spec(50, 1, 0.1, 5, 0.2, 0.5, 5), 3000, 100, 41);
    let s5 = simulate(drawn_spec(50, 5, 0.1, 5, 0.2, 0.5, 5), 3000, 100, 41);
    let pass_sim = s1.steady_test_mse < s5.steady_test_mse;
    Outcome::new(
        pass_theory && pass_sim,
        format!(
            "partial-sharing resilience: e_omega {:.5} < {:.5}, e_phi {:.5} > {:.5}, sim test MSE {:.5} < {:.5} (M=1 vs M=5)",
            t1.e_omega, t5.e_omega, t1.e_phi, t5.e_phi, s1.steady_test_mse, s5.steady_test_mse
        ),
    )
    .detail(format!("sim SE {:.5} / {:.5}", s1.steady_test_mse_se, s5.steady_test_mse_se))
}

fn ac7() -> Outcome {
    // Larger network and round: the replica mean of w_3000 has a noise floor
    // of a few 1e-3 here, against about 2e-2 for the K=10 reference network.
    let spec = NetworkSpec::homogeneous(50, 5, 1, 10, 0.02, 0.7, 0.01).with_attack(0.2, 0.25, 5);
    let mean_bound = mean_stability_bound(&spec).unwrap();
    let m = simulate(spec.clone(), 3000, 200, 51);
    let norm = m.mean_final_global.iter().zip(&spec.true_model).map(|(w, t)| (w - t).powi(2)).sum::<f64>().sqrt();
    Outcome::new(
        norm < 1e-2 && 0.02 < mean_bound,
        format!("unbiasedness: ‖mean w_3000 − w*‖ = {norm:.5} (< 0.01) at μ=0.02 under attack (mean bound {mean_bound:.3})"),
    )
}

fn ac8() -> Outcome {
    let base = reference_spec(0.05, 0, 0.0, 0.0);
    let trace = |spec: &NetworkSpec, alg: Algorithm| {
        let p = ExperimentPlan { iterations: 500, replicas: 1, seed: 61, window: 100, ..ExperimentPlan::new(spec.clone(), alg) };
        run_replica(&p, 0).unwrap().test_mse
    };
    let mut full = base.clone().with_attack(0.3, 0.5, 2);
    full.shared_entries = full.model_dim;
    let same_full = trace(&full, Algorithm::Psofed) == trace(&full, Algorithm::Onlinefed);
    let clean = trace(&base, Algorithm::Psofed);
    let same_pa = trace(&base.clone().with_attack(0.0, 0.5, 2), Algorithm::Psofed) == clean;
    let same_var = trace(&base.clone().with_attack(0.3, 0.0, 2), Algorithm::Psofed) == clean;
    Outcome::new(
        same_full && same_pa && same_var,
        format!(
            "degenerate equivalences: M=D vs Online-Fed {}, p_a=0 vs no Byzantine {}, σ_B²=0 vs no Byzantine {}",
            verdict(same_full),
            verdict(same_pa),
            verdict(same_var)
        ),
    )
}

/// Nondecreasing up to `2·sqrt(se_i² + se_j²)` between consecutive points.
fn monotone(label: &str, points: &[(f64, RunMetrics)]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for w in points.windows(2) {
        let (a, b) = (&w[0].1, &w[1].1);
        let tol = 2.0 * (a.steady_test_mse_se.powi(2) + b.steady_test_mse_se.powi(2)).sqrt();
        if b.steady_test_mse < a.steady_test_mse - tol {
            ok = false;
        }
    }
    for (v, m) in points {
        parts.push(format!("{v}:{:.5}±{:.5}", m.steady_test_mse, m.steady_test_mse_se));
    }
    (ok, format!("{label} {} [{}]", verdict(ok), parts.join(", ")))
}

fn ac9() -> Outcome {
    let run = |byz: usize, p_a: f64, var_b: f64| simulate(drawn_spec(50, 1, 0.1, byz, p_a, var_b, 9), 3000, 100, 71);
    let var_axis: Vec<_> = [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|&v| (v, run(5, 0.2, v))).collect();
    let pa_axis: Vec<_> = [0.2, 0.5, 0.8, 1.0].iter().map(|&p| (p, run(5, p, 0.25))).collect();
    let byz_axis: Vec<_> = [0usize, 5, 15].iter().map(|&b| (b as f64, run(b, 1.0, 0.25))).collect();
    let (a, la) = monotone("σ_B²", &var_axis);
    let (b, lb) = monotone("p_a", &pa_axis);
    let (c, lc) = monotone("|S_B|", &byz_axis);
    Outcome::new(a && b && c, "monotonicity of steady-state test MSE along σ_B², p_a and |S_B| (2 SE tolerance)")
        .detail(la)
        .detail(lb)
        .detail(lc)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

fn main() {
    // `cargo test -- --list` and filters come through as arguments.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for i in 1..=9 {
            println!("AC-{i}: test");
        }
        return;
    }
    let filter: Option<&String> = args.iter().find(|a| !a.starts_with('-'));
    let criteria: [(&str, fn() -> Outcome); 9] =
        [("AC-1", ac1), ("AC-2", ac2), ("AC-3", ac3), ("AC-4", ac4), ("AC-5", ac5), ("AC-6", ac6), ("AC-7", ac7), ("AC-8", ac8), ("AC-9", ac9)];
    let mut failed = 0;
    for (name, f) in criteria {
        if filter.is_some_and(|pat| !name.contains(pat.as_str())) {
            continue;
        }
        let start = Instant::now();
        let out = f();
        println!("{name} {} {} [{:.1}s]", if out.pass { "PASS" } else { "FAIL" }, out.summary, start.elapsed().as_secs_f64());
        for d in &out.details {
            println!("    {d}");
        }
        if !out.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
