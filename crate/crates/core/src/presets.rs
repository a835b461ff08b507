//! Desk-scale versions of the reference experiments.
//!
//! Each preset is a list of curves; every curve is an [`ExperimentPlan`] with
//! its own sweep axis. Networks use the reference setup (`D = 5`, input
//! variances in `[0.2, 1.2]`, noise variances in `[0.005, 0.025]`) but fewer
//! replicas than a publication run.

use crate::config::{AlgorithmSection, AttackSection, ConfigFile, ExperimentSection, NetworkSection};
use crate::error::{Error, Result};
use crate::sim::ExperimentPlan;

pub const DESK_REPLICAS: usize = 20;

#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub curves: Vec<ExperimentPlan>,
}

pub const NAMES: [&str; 9] = ["fig1", "fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9"];

struct Curve {
    k: usize,
    m: usize,
    mu: f64,
    p_a: f64,
    var_b: f64,
    byz: usize,
    alg: &'static str,
    small_step: bool,
    sweep: (&'static str, Vec<f64>),
}

impl Default for Curve {
    fn default() -> Self {
        Self {
            k: 50,
            m: 1,
            mu: 0.1,
            p_a: 0.2,
            var_b: 0.5,
            byz: 5,
            alg: "psofed",
            small_step: false,
            sweep: ("stepsize", vec![0.1]),
        }
    }
}

impl Curve {
    fn plan(self, seed: u64) -> Result<ExperimentPlan> {
        ConfigFile {
            network: NetworkSection {
                num_clients: Some(self.k),
                model_dim: Some(5),
                shared_entries: Some(self.m),
                round_size: Some(5),
                stepsize: Some(self.mu),
                ..Default::default()
            },
            attack: AttackSection {
                attack_probability: Some(self.p_a),
                attack_variance: Some(self.var_b),
                byzantine_count: Some(self.byz),
                byzantine_clients: None,
            },
            algorithm: AlgorithmSection {
                name: Some(self.alg.into()),
                neumann_order: None,
                small_step: Some(self.small_step),
            },
            experiment: ExperimentSection {
                replicas: Some(DESK_REPLICAS),
                seed: Some(seed),
                sweep_param: Some(self.sweep.0.into()),
                sweep_values: Some(self.sweep.1),
                ..Default::default()
            },
        }
        .to_plan()
    }
}

fn stepsizes() -> Vec<f64> {
    vec![0.005, 0.01, 0.02, 0.03, 0.05, 0.08, 0.12, 0.16, 0.2]
}

fn probabilities() -> Vec<f64> {
    vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
}

pub fn preset(name: &str, seed: u64) -> Result<Preset> {
    let shares = || ("shared_entries", vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    let (description, curves): (&'static str, Vec<Curve>) = match name {
        "fig1" => (
            "PSO-Fed, Online-Fed and SignSGD against the number of Byzantine clients (K=100, p_a=1, var_B=0.25)",
            [("psofed", 0.15), ("onlinefed", 0.15), ("signsgd", 0.08)]
                .into_iter()
                .map(|(alg, mu)| Curve {
                    k: 100,
                    mu,
                    p_a: 1.0,
                    var_b: 0.25,
                    alg,
                    sweep: ("byzantine_count", vec![0.0, 5.0, 10.0, 20.0]),
                    ..Default::default()
                })
                .collect(),
        ),
        "fig2" => (
            "steady-state MSE against shared entries M for |S_B| in {5, 15}",
            [5, 15].into_iter().map(|byz| Curve { byz, sweep: shares(), ..Default::default() }).collect(),
        ),
        "fig3" => (
            "steady-state MSE against attack variance for |S_B| in {5, 15}",
            [5, 15]
                .into_iter()
                .map(|byz| Curve { byz, sweep: ("attack_variance", vec![0.0, 0.25, 0.5, 0.75, 1.0]), ..Default::default() })
                .collect(),
        ),
        "fig4" => (
            "steady-state MSE against attack probability for M in {1, 5}",
            [1, 5]
                .into_iter()
                .map(|m| Curve { m, var_b: 0.25, sweep: ("attack_probability", probabilities()), ..Default::default() })
                .collect(),
        ),
        "fig5" => (
            "steady-state MSE against attack probability for |S_B| in {5, 15}",
            [5, 15]
                .into_iter()
                .map(|byz| Curve { byz, var_b: 0.25, sweep: ("attack_probability", probabilities()), ..Default::default() })
                .collect(),
        ),
        "fig6" => (
            "steady-state MSE against stepsize for |S_B| in {0, 5, 15}",
            [0, 5, 15]
                .into_iter()
                .map(|byz| Curve { byz, p_a: 0.25, var_b: 0.25, sweep: ("stepsize", stepsizes()), ..Default::default() })
                .collect(),
        ),
        "fig7" => (
            "steady-state MSE against stepsize for attack variance in {0.25, 0.5, 1}",
            [0.25, 0.5, 1.0]
                .into_iter()
                .map(|var_b| Curve { p_a: 0.25, var_b, sweep: ("stepsize", stepsizes()), ..Default::default() })
                .collect(),
        ),
        "fig8" => (
            "small-step theory against simulation over stepsize for |S_B| in {0, 10}",
            [0, 10]
                .into_iter()
                .map(|byz| Curve { byz, p_a: 0.25, small_step: true, sweep: ("stepsize", stepsizes()), ..Default::default() })
                .collect(),
        ),
        "fig9" => (
            "attack and input terms of the steady-state MSE against M for |S_B| in {5, 15}",
            [5, 15].into_iter().map(|byz| Curve { byz, sweep: shares(), ..Default::default() }).collect(),
        ),
        other => {
            return Err(Error::Argument(format!("unknown preset {other:?} (expected one of {})", NAMES.join(", "))))
        }
    };
    let name = NAMES.iter().copied().find(|n| *n == name).unwrap_or("fig1");
    let curves = curves.into_iter().map(|c| c.plan(seed)).collect::<Result<Vec<_>>>()?;
    Ok(Preset { name, description, curves })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::Algorithm;

    #[test]
    fn every_preset_builds_valid_plans() {
        for name in NAMES {
            let p = preset(name, 1).unwrap();
            assert!(!p.curves.is_empty(), "{name}");
            for plan in &p.curves {
                plan.validate().unwrap();
                let sw = plan.sweep.as_ref().unwrap();
                for &v in &sw.values {
                    sw.param.apply(&plan.spec, v).unwrap();
                }
            }
        }
    }

    #[test]
    fn fig1_compares_three_algorithms() {
        let p = preset("fig1", 0).unwrap();
        let algs: Vec<_> = p.curves.iter().map(|c| (c.algorithm, c.spec.stepsize)).collect();
        assert_eq!(algs, vec![(Algorithm::Psofed, 0.15), (Algorithm::Onlinefed, 0.15), (Algorithm::Signsgd, 0.08)]);
        assert!(p.curves.iter().all(|c| c.spec.num_clients == 100));
    }

    #[test]
    fn unknown_preset_is_an_argument_error() {
        assert!(matches!(preset("fig10", 0), Err(Error::Argument(_))));
    }
}
