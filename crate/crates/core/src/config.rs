//! TOML experiment configuration.
//!
//! ```toml
//! [network]
//! num_clients = 50            # K
//! model_dim = 5               # D
//! shared_entries = 1          # M
//! round_size = 5              # clients per round
//! stepsize = 0.15
//! mask_mode = "uniform"       # or "round-robin"
//! input_variance_range = [0.2, 1.2]     # or input_variances = [...] (K values)
//! noise_variance_range = [0.005, 0.025] # or noise_variances = [...]
//! # true_model = [...]       # D values, default (1/sqrt(D)) * ones
//!
//! [attack]
//! attack_probability = 0.0
//! attack_variance = 0.0
//! byzantine_count = 0         # first n clients, or byzantine_clients = [ids]
//!
//! [algorithm]
//! name = "psofed"             # psofed | onlinefed | signsgd
//! neumann_order = 5
//! small_step = false
//!
//! [experiment]
//! iterations = 3000
//! replicas = 100
//! seed = 0
//! window = 200
//! test_size = 50
//! theory = true
//! # sweep_param = "stepsize"
//! # sweep_values = [0.01, 0.02]
//! ```
//!
//! Variance ranges are sampled once per experiment from the seed's variance
//! stream: `K` input variances, then `K` noise variances.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::algorithms::Algorithm;
use crate::error::{Error, Result};
use crate::model::{default_true_model, draw_uniform_variances, ClientSpec, MaskMode, NetworkSpec};
use crate::rng::{experiment_stream, ExperimentPurpose};
use crate::sim::{ExperimentPlan, Sweep, SweepParam};
use crate::theory::DEFAULT_NEUMANN_ORDER;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub algorithm: AlgorithmSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub num_clients: Option<usize>,
    pub model_dim: Option<usize>,
    pub shared_entries: Option<usize>,
    pub round_size: Option<usize>,
    pub stepsize: Option<f64>,
    pub mask_mode: Option<MaskMode>,
    pub input_variances: Option<Vec<f64>>,
    pub input_variance_range: Option<[f64; 2]>,
    pub noise_variances: Option<Vec<f64>>,
    pub noise_variance_range: Option<[f64; 2]>,
    pub true_model: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub attack_probability: Option<f64>,
    pub attack_variance: Option<f64>,
    pub byzantine_count: Option<usize>,
    pub byzantine_clients: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    pub name: Option<String>,
    pub neumann_order: Option<usize>,
    pub small_step: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub iterations: Option<usize>,
    pub replicas: Option<usize>,
    pub seed: Option<u64>,
    pub window: Option<usize>,
    pub test_size: Option<usize>,
    pub theory: Option<bool>,
    pub sweep_param: Option<String>,
    pub sweep_values: Option<Vec<f64>>,
}

pub const DEFAULT_NUM_CLIENTS: usize = 50;
pub const DEFAULT_MODEL_DIM: usize = 5;
pub const DEFAULT_SHARED_ENTRIES: usize = 1;
pub const DEFAULT_ROUND_SIZE: usize = 5;
pub const DEFAULT_STEPSIZE: f64 = 0.15;
pub const DEFAULT_INPUT_VARIANCE_RANGE: [f64; 2] = [0.2, 1.2];
pub const DEFAULT_NOISE_VARIANCE_RANGE: [f64; 2] = [0.005, 0.025];
pub const DEFAULT_ITERATIONS: usize = 3000;
pub const DEFAULT_REPLICAS: usize = 100;
pub const DEFAULT_WINDOW: usize = 200;
pub const DEFAULT_TEST_SIZE: usize = 50;

impl ConfigFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string() + &span_hint(text, e.span())))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Same configuration with every defaulted key written out. Variance
    /// ranges are kept as ranges; [`ConfigFile::resolved`] replaces them by
    /// the drawn values.
    pub fn canonical(&self) -> Self {
        let n = &self.network;
        let a = &self.attack;
        let g = &self.algorithm;
        let e = &self.experiment;
        let input_range = n.input_variance_range.or(n.input_variances.is_none().then_some(DEFAULT_INPUT_VARIANCE_RANGE));
        let noise_range = n.noise_variance_range.or(n.noise_variances.is_none().then_some(DEFAULT_NOISE_VARIANCE_RANGE));
        Self {
            network: NetworkSection {
                num_clients: Some(n.num_clients.unwrap_or(DEFAULT_NUM_CLIENTS)),
                model_dim: Some(n.model_dim.unwrap_or(DEFAULT_MODEL_DIM)),
                shared_entries: Some(n.shared_entries.unwrap_or(DEFAULT_SHARED_ENTRIES)),
                round_size: Some(n.round_size.unwrap_or(DEFAULT_ROUND_SIZE)),
                stepsize: Some(n.stepsize.unwrap_or(DEFAULT_STEPSIZE)),
                mask_mode: Some(n.mask_mode.unwrap_or_default()),
                input_variances: n.input_variances.clone(),
                input_variance_range: input_range,
                noise_variances: n.noise_variances.clone(),
                noise_variance_range: noise_range,
                true_model: n.true_model.clone(),
            },
            attack: AttackSection {
                attack_probability: Some(a.attack_probability.unwrap_or(0.0)),
                attack_variance: Some(a.attack_variance.unwrap_or(0.0)),
                byzantine_count: if a.byzantine_clients.is_some() { None } else { Some(a.byzantine_count.unwrap_or(0)) },
                byzantine_clients: a.byzantine_clients.clone(),
            },
            algorithm: AlgorithmSection {
                name: Some(g.name.clone().unwrap_or_else(|| "psofed".into())),
                neumann_order: Some(g.neumann_order.unwrap_or(DEFAULT_NEUMANN_ORDER)),
                small_step: Some(g.small_step.unwrap_or(false)),
            },
            experiment: ExperimentSection {
                iterations: Some(e.iterations.unwrap_or(DEFAULT_ITERATIONS)),
                replicas: Some(e.replicas.unwrap_or(DEFAULT_REPLICAS)),
                seed: Some(e.seed.unwrap_or(0)),
                window: Some(e.window.unwrap_or(DEFAULT_WINDOW)),
                test_size: Some(e.test_size.unwrap_or(DEFAULT_TEST_SIZE)),
                theory: Some(e.theory.unwrap_or(true)),
                sweep_param: e.sweep_param.clone(),
                sweep_values: e.sweep_values.clone(),
            },
        }
    }

    /// Canonical form with variance ranges replaced by the values drawn for
    /// the configured seed, so the experiment can be replayed exactly.
    pub fn resolved(&self) -> Result<Self> {
        let plan = self.to_plan()?;
        let mut out = self.canonical();
        out.network.input_variances = Some(plan.spec.input_variances());
        out.network.noise_variances = Some(plan.spec.noise_variances());
        out.network.input_variance_range = None;
        out.network.noise_variance_range = None;
        out.network.true_model = Some(plan.spec.true_model.clone());
        Ok(out)
    }

    pub fn to_plan(&self) -> Result<ExperimentPlan> {
        let c = self.canonical();
        let n = &c.network;
        let k = n.num_clients.unwrap_or_default();
        let d = n.model_dim.unwrap_or_default();
        if k == 0 {
            return Err(Error::Config("network.num_clients: K ≥ 1 violated".into()));
        }
        if d == 0 {
            return Err(Error::Config("network.model_dim: D ≥ 1 violated".into()));
        }
        let seed = c.experiment.seed.unwrap_or_default();
        let mut rng = experiment_stream(seed, ExperimentPurpose::Variances);
        let input = variances("input", k, &n.input_variances, &n.input_variance_range, &mut rng)?;
        let noise = variances("noise", k, &n.noise_variances, &n.noise_variance_range, &mut rng)?;
        let mut byz = vec![false; k];
        match (&c.attack.byzantine_clients, c.attack.byzantine_count) {
            (Some(ids), _) => {
                for &id in ids {
                    if id >= k {
                        return Err(Error::Config(format!("attack.byzantine_clients: id {id} ≥ K={k}")));
                    }
                    byz[id] = true;
                }
            }
            (None, Some(count)) => {
                if count > k {
                    return Err(Error::Config(format!("attack.byzantine_count: |S_B| ≤ K violated ({count} > {k})")));
                }
                byz.iter_mut().take(count).for_each(|b| *b = true);
            }
            (None, None) => {}
        }
        let spec = NetworkSpec {
            num_clients: k,
            model_dim: d,
            shared_entries: n.shared_entries.unwrap_or_default(),
            round_size: n.round_size.unwrap_or_default(),
            stepsize: n.stepsize.unwrap_or_default(),
            attack_probability: c.attack.attack_probability.unwrap_or_default(),
            attack_variance: c.attack.attack_variance.unwrap_or_default(),
            clients: (0..k)
                .map(|i| ClientSpec { input_variance: input[i], noise_variance: noise[i], byzantine: byz[i] })
                .collect(),
            true_model: n.true_model.clone().unwrap_or_else(|| default_true_model(d)),
            mask_mode: n.mask_mode.unwrap_or_default(),
        };
        spec.validate().map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("network/attack: {m}")),
            other => other,
        })?;
        let algorithm = Algorithm::parse(c.algorithm.name.as_deref().unwrap_or("psofed"))?;
        let e = &c.experiment;
        let sweep = match (&e.sweep_param, &e.sweep_values) {
            (Some(p), Some(v)) => Some(Sweep { param: SweepParam::parse(p)?, values: v.clone() }),
            (None, None) => None,
            (Some(_), None) => return Err(Error::Config("experiment.sweep_values: required with sweep_param".into())),
            (None, Some(_)) => return Err(Error::Config("experiment.sweep_param: required with sweep_values".into())),
        };
        let plan = ExperimentPlan {
            spec,
            algorithm,
            iterations: e.iterations.unwrap_or_default(),
            replicas: e.replicas.unwrap_or_default(),
            seed,
            sweep,
            window: e.window.unwrap_or_default(),
            test_size: e.test_size.unwrap_or_default(),
            theory: e.theory.unwrap_or(true),
            neumann_order: c.algorithm.neumann_order.unwrap_or(DEFAULT_NEUMANN_ORDER),
            small_step: c.algorithm.small_step.unwrap_or(false),
        };
        if plan.neumann_order < 3 {
            return Err(Error::Config(format!("algorithm.neumann_order: J ≥ 3 violated (J={})", plan.neumann_order)));
        }
        plan.validate().map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("experiment: {m}")),
            other => other,
        })?;
        Ok(plan)
    }
}

fn variances(
    which: &str,
    k: usize,
    explicit: &Option<Vec<f64>>,
    range: &Option<[f64; 2]>,
    rng: &mut crate::rng::Stream,
) -> Result<Vec<f64>> {
    match (explicit, range) {
        (Some(_), Some(_)) => Err(Error::Config(format!(
            "network.{which}_variances: give either {which}_variances or {which}_variance_range, not both"
        ))),
        (Some(v), None) if v.len() == 1 => Ok(vec![v[0]; k]),
        (Some(v), None) if v.len() == k => Ok(v.clone()),
        (Some(v), None) => Err(Error::Config(format!(
            "network.{which}_variances: expected 1 or K={k} values, got {}",
            v.len()
        ))),
        (None, Some([lo, hi])) => draw_uniform_variances(k, *lo, *hi, rng)
            .map_err(|e| Error::Config(format!("network.{which}_variance_range: {e}"))),
        (None, None) => Err(Error::Config(format!("network.{which}_variances: missing"))),
    }
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(s) => {
            let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}

/// Reads, validates and resolves a configuration file.
pub fn parse_config(path: &Path) -> Result<ExperimentPlan> {
    ConfigFile::from_path(path)?.to_plan()
}
