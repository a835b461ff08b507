//! Intermittent additive model poisoning.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    /// `p_a`
    pub attack_probability: f64,
    /// `σ_B²`
    pub attack_variance: f64,
    /// `β_k` per client.
    pub byzantine: Vec<bool>,
}

impl AttackSpec {
    pub fn none(num_clients: usize) -> Self {
        Self { attack_probability: 0.0, attack_variance: 0.0, byzantine: vec![false; num_clients] }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.attack_probability) {
            return Err(Error::Config(format!(
                "attack_probability: 0 ≤ p_a ≤ 1 violated (p_a={})",
                self.attack_probability
            )));
        }
        if !(self.attack_variance.is_finite() && self.attack_variance >= 0.0) {
            return Err(Error::Config(format!(
                "attack_variance: σ_B² ≥ 0 violated (σ_B²={})",
                self.attack_variance
            )));
        }
        Ok(())
    }

    pub fn is_byzantine(&self, client: usize) -> bool {
        self.byzantine.get(client).copied().unwrap_or(false)
    }

    pub fn byzantine_count(&self) -> usize {
        self.byzantine.iter().filter(|&&b| b).count()
    }

    /// True when no upload can ever be perturbed.
    pub fn is_inert(&self) -> bool {
        self.attack_probability == 0.0 || self.attack_variance == 0.0 || self.byzantine_count() == 0
    }
}

/// Returns `w + β_k τ δ` with `τ ~ Bernoulli(p_a)` and `δ ~ N(0, σ_B² I)`.
pub fn corrupt_model<R: Rng + ?Sized>(local_model: &[f64], client: usize, spec: &AttackSpec, rng: &mut R) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut out = local_model.to_vec();
    corrupt_in_place(&mut out, client, spec, rng);
    Ok(out)
}

/// In-place form of [`corrupt_model`] for a validated spec; returns whether
/// the model was perturbed.
///
/// Honest clients consume no randomness. A Byzantine client consumes one
/// draw for `τ` and, when attacking, `D` normals. When `p_a` or `σ_B²` is
/// zero the stream is left untouched, which keeps such runs bit-identical to
/// runs without Byzantine clients.
pub(crate) fn corrupt_in_place<R: Rng + ?Sized>(model: &mut [f64], client: usize, spec: &AttackSpec, rng: &mut R) -> bool {
    if !spec.is_byzantine(client) || spec.attack_probability == 0.0 || spec.attack_variance == 0.0 {
        return false;
    }
    let tau = Bernoulli::new(spec.attack_probability).map(|b| b.sample(rng)).unwrap_or(false);
    if !tau {
        return false;
    }
    let sd = spec.attack_variance.sqrt();
    for w in model.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *w += sd * z;
    }
    true
}
