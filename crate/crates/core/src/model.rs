//! Network configuration, the linear observation model and error metrics.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::attack::AttackSpec;
use crate::error::{Error, Result};

/// Per-client data statistics and Byzantine flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientSpec {
    /// Variance of every entry of the client's input vectors.
    pub input_variance: f64,
    /// Variance of the client's observation noise.
    pub noise_variance: f64,
    pub byzantine: bool,
}

impl ClientSpec {
    pub fn honest(input_variance: f64, noise_variance: f64) -> Self {
        Self { input_variance, noise_variance, byzantine: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.input_variance.is_finite() && self.input_variance > 0.0) {
            return Err(Error::Config(format!(
                "input_variance must be > 0 (got {})",
                self.input_variance
            )));
        }
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            return Err(Error::Config(format!(
                "noise_variance must be >= 0 (got {})",
                self.noise_variance
            )));
        }
        Ok(())
    }
}

/// How the coordinates exchanged with the server are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// `M` coordinates uniformly without replacement, independently per client
    /// and per iteration. This is the law the theory engine assumes.
    #[default]
    Uniform,
    /// A cyclic window of width `M` advancing by `M` each iteration.
    RoundRobin,
}

/// Full experiment configuration of one federated network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `K`
    pub num_clients: usize,
    /// `D`
    pub model_dim: usize,
    /// `M`, entries exchanged per client per round.
    pub shared_entries: usize,
    /// `|S_n|`, clients scheduled per round.
    pub round_size: usize,
    pub stepsize: f64,
    pub attack_probability: f64,
    pub attack_variance: f64,
    pub clients: Vec<ClientSpec>,
    pub true_model: Vec<f64>,
    pub mask_mode: MaskMode,
}

impl NetworkSpec {
    /// Attack-free network where every client has the same statistics and the
    /// true model is `(1/sqrt(D)) * ones`.
    pub fn homogeneous(
        num_clients: usize,
        model_dim: usize,
        shared_entries: usize,
        round_size: usize,
        stepsize: f64,
        input_variance: f64,
        noise_variance: f64,
    ) -> Self {
        Self {
            num_clients,
            model_dim,
            shared_entries,
            round_size,
            stepsize,
            attack_probability: 0.0,
            attack_variance: 0.0,
            clients: vec![ClientSpec::honest(input_variance, noise_variance); num_clients],
            true_model: default_true_model(model_dim),
            mask_mode: MaskMode::Uniform,
        }
    }

    /// Marks the first `byzantine_count` clients as Byzantine and sets the
    /// attack parameters.
    pub fn with_attack(mut self, probability: f64, variance: f64, byzantine_count: usize) -> Self {
        self.attack_probability = probability;
        self.attack_variance = variance;
        for (k, c) in self.clients.iter_mut().enumerate() {
            c.byzantine = k < byzantine_count;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_clients;
        let d = self.model_dim;
        if k == 0 {
            return Err(Error::Config("num_clients: K ≥ 1 violated (K=0)".into()));
        }
        if d == 0 {
            return Err(Error::Config("model_dim: D ≥ 1 violated (D=0)".into()));
        }
        if self.shared_entries == 0 || self.shared_entries > d {
            return Err(Error::Config(format!(
                "shared_entries: 1 ≤ M ≤ D violated (M={}, D={})",
                self.shared_entries, d
            )));
        }
        if self.round_size == 0 || self.round_size > k {
            return Err(Error::Config(format!(
                "round_size: 1 ≤ round_size ≤ K violated (round_size={}, K={})",
                self.round_size, k
            )));
        }
        if !(self.stepsize.is_finite() && self.stepsize >= 0.0) {
            return Err(Error::Config(format!("stepsize: μ ≥ 0 violated (μ={})", self.stepsize)));
        }
        if self.clients.len() != k {
            return Err(Error::Config(format!(
                "clients: expected {} client entries, got {}",
                k,
                self.clients.len()
            )));
        }
        if self.true_model.len() != d {
            return Err(Error::Config(format!(
                "true_model: expected {} entries (D), got {}",
                d,
                self.true_model.len()
            )));
        }
        if self.true_model.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("true_model: entries must be finite".into()));
        }
        for (i, c) in self.clients.iter().enumerate() {
            c.validate().map_err(|e| Error::Config(format!("client {i}: {e}")))?;
        }
        self.attack_spec().validate()
    }

    /// `p_e = M / D`
    pub fn sharing_probability(&self) -> f64 {
        self.shared_entries as f64 / self.model_dim as f64
    }

    /// `p_c = |S_n| / K`
    pub fn selection_probability(&self) -> f64 {
        self.round_size as f64 / self.num_clients as f64
    }

    pub fn byzantine_set(&self) -> Vec<usize> {
        self.clients
            .iter()
            .enumerate()
            .filter_map(|(k, c)| c.byzantine.then_some(k))
            .collect()
    }

    pub fn attack_spec(&self) -> AttackSpec {
        AttackSpec {
            attack_probability: self.attack_probability,
            attack_variance: self.attack_variance,
            byzantine: self.clients.iter().map(|c| c.byzantine).collect(),
        }
    }

    pub fn input_variances(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.input_variance).collect()
    }

    pub fn noise_variances(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.noise_variance).collect()
    }

    /// The same network exchanging the full model every round (Online-Fed).
    pub fn with_full_sharing(&self) -> Self {
        Self { shared_entries: self.model_dim, ..self.clone() }
    }
}

/// `(1/sqrt(D)) * [1, ..., 1]`
pub fn default_true_model(dim: usize) -> Vec<f64> {
    vec![1.0 / (dim as f64).sqrt(); dim]
}

/// Draws `n` values uniformly from `[low, high)`.
pub fn draw_uniform_variances<R: Rng + ?Sized>(n: usize, low: f64, high: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(low.is_finite() && high.is_finite() && low <= high) {
        return Err(Error::Config(format!("variance range [{low}, {high}] is not a valid interval")));
    }
    if low == high {
        return Ok(vec![low; n]);
    }
    let dist = Uniform::new(low, high).map_err(|e| Error::Config(e.to_string()))?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

/// One observation `(x, y)` with `y = w*ᵀx + ν`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSample {
    pub input: Vec<f64>,
    pub response: f64,
}

/// Global model, local models and the iteration counter of one replica.
#[derive(Debug, Clone, PartialEq)]
pub struct FedState {
    pub global_model: Vec<f64>,
    pub local_models: Vec<Vec<f64>>,
    pub iteration: usize,
}

impl FedState {
    /// All models start at the zero vector.
    pub fn zeros(num_clients: usize, dim: usize) -> Self {
        Self {
            global_model: vec![0.0; dim],
            local_models: vec![vec![0.0; dim]; num_clients],
            iteration: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.global_model.iter().chain(self.local_models.iter().flatten()).all(|v| v.is_finite())
    }
}

pub fn generate_sample<R: Rng + ?Sized>(client: &ClientSpec, true_model: &[f64], rng: &mut R) -> Result<DataSample> {
    if true_model.is_empty() {
        return Err(Error::Config("true_model must have at least one entry".into()));
    }
    client.validate()?;
    let mut input = vec![0.0; true_model.len()];
    let response = fill_sample(client, true_model, &mut input, rng);
    Ok(DataSample { input, response })
}

/// Allocation-free form of [`generate_sample`]: writes the input into `input`
/// (whose length must equal `true_model.len()`) and returns the response.
///
/// Consumes exactly `D + 1` standard normals from `rng`.
pub(crate) fn fill_sample<R: Rng + ?Sized>(
    client: &ClientSpec,
    true_model: &[f64],
    input: &mut [f64],
    rng: &mut R,
) -> f64 {
    debug_assert_eq!(input.len(), true_model.len());
    let sx = client.input_variance.sqrt();
    let mut clean = 0.0;
    for (x, w) in input.iter_mut().zip(true_model) {
        let z: f64 = StandardNormal.sample(rng);
        *x = sx * z;
        clean += w * *x;
    }
    let z: f64 = StandardNormal.sample(rng);
    clean + client.noise_variance.sqrt() * z
}

/// `(1/N_t) ‖y − Xᵀw‖²` over a server-side test set.
pub fn test_mse(global_model: &[f64], test_inputs: &[Vec<f64>], test_responses: &[f64]) -> Result<f64> {
    if test_inputs.is_empty() {
        return Err(Error::Argument("test set is empty".into()));
    }
    if test_inputs.len() != test_responses.len() {
        return Err(Error::Argument(format!(
            "{} test inputs but {} responses",
            test_inputs.len(),
            test_responses.len()
        )));
    }
    let mut sum = 0.0;
    for (x, y) in test_inputs.iter().zip(test_responses) {
        if x.len() != global_model.len() {
            return Err(Error::Argument(format!(
                "test input has {} entries, model has {}",
                x.len(),
                global_model.len()
            )));
        }
        let r = y - dot(x, global_model);
        sum += r * r;
    }
    Ok(sum / test_inputs.len() as f64)
}

/// Network-wide steady-state MSE: the client average of the mean squared
/// local error over each stream's final `window` entries.
pub fn network_mse(per_client_errors: &[Vec<f64>], window: usize) -> Result<f64> {
    if window == 0 {
        return Err(Error::Argument("window must be ≥ 1".into()));
    }
    if per_client_errors.is_empty() {
        return Err(Error::Argument("no client error streams".into()));
    }
    let mut total = 0.0;
    for (k, errors) in per_client_errors.iter().enumerate() {
        if errors.len() < window {
            return Err(Error::Argument(format!(
                "client {k} has {} errors, fewer than the window {window}",
                errors.len()
            )));
        }
        let tail = &errors[errors.len() - window..];
        total += tail.iter().map(|e| e * e).sum::<f64>() / window as f64;
    }
    Ok(total / per_client_errors.len() as f64)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
