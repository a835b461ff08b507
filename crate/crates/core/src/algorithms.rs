//! Client and server recursions of PSO-Fed, Online-Fed and SignSGD.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, DataSample, FedState};
use crate::schedule::SelectionMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Psofed,
    Onlinefed,
    Signsgd,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Psofed => "psofed",
            Algorithm::Onlinefed => "onlinefed",
            Algorithm::Signsgd => "signsgd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "psofed" => Ok(Algorithm::Psofed),
            "onlinefed" => Ok(Algorithm::Onlinefed),
            "signsgd" => Ok(Algorithm::Signsgd),
            other => Err(Error::Config(format!(
                "algorithm: unknown algorithm '{other}' (expected psofed, onlinefed or signsgd)"
            ))),
        }
    }
}

/// Uplink message: the entries of `S_{k,n+1} w'_{k,n+1}` in mask order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub masked_model: Vec<f64>,
    pub mask: SelectionMask,
}

impl ClientUpdate {
    pub fn from_model(client_id: usize, model: &[f64], mask: &SelectionMask) -> Self {
        Self {
            client_id,
            masked_model: mask.indices().iter().map(|&i| model[i]).collect(),
            mask: mask.clone(),
        }
    }
}

/// `S w_n + (I − S) w_k`
pub fn blend(global: &[f64], local: &[f64], mask: &SelectionMask) -> Vec<f64> {
    let mut out = local.to_vec();
    for &i in mask.indices() {
        out[i] = global[i];
    }
    out
}

/// One local step. `local` is overwritten with the updated model and the
/// a-priori error is returned.
///
/// A selected client passes its current mask and first pulls the masked
/// global entries; an unselected client passes `None` and runs plain LMS on
/// its retained model.
pub(crate) fn client_step_in_place(
    global: &[f64],
    local: &mut [f64],
    input: &[f64],
    response: f64,
    mask: Option<&SelectionMask>,
    stepsize: f64,
) -> f64 {
    if let Some(mask) = mask {
        for &i in mask.indices() {
            local[i] = global[i];
        }
    }
    let err = response - dot(local, input);
    let g = stepsize * err;
    for (w, x) in local.iter_mut().zip(input) {
        *w += g * x;
    }
    err
}

/// Returns `(w_{k,n+1}, ε_{k,n})`.
pub fn psofed_client_step(
    state: &FedState,
    client: usize,
    sample: &DataSample,
    mask_in: Option<&SelectionMask>,
    stepsize: f64,
) -> Result<(Vec<f64>, f64)> {
    let local = state
        .local_models
        .get(client)
        .ok_or_else(|| Error::Argument(format!("client {client} out of range")))?;
    let d = state.global_model.len();
    if sample.input.len() != d || local.len() != d {
        return Err(Error::Argument(format!(
            "dimension mismatch: model D={d}, local {}, input {}",
            local.len(),
            sample.input.len()
        )));
    }
    if let Some(m) = mask_in {
        if m.dim() != d {
            return Err(Error::Argument(format!("mask built for D={}, model has D={d}", m.dim())));
        }
    }
    if !(sample.response.is_finite() && sample.input.iter().all(|x| x.is_finite())) {
        return Err(Error::Numeric(format!("non-finite sample at client {client}")));
    }
    if !(stepsize.is_finite() && stepsize >= 0.0) {
        return Err(Error::Argument(format!("stepsize must be ≥ 0 (got {stepsize})")));
    }
    let mut out = local.clone();
    let err = client_step_in_place(&state.global_model, &mut out, &sample.input, sample.response, mask_in, stepsize);
    Ok((out, err))
}

/// `w_{n+1} = (1/|S_n|) Σ_k [S'_k w'_k + (I − S'_k) w_n]`
pub fn psofed_server_aggregate(state: &FedState, updates: &[ClientUpdate], round_size: usize) -> Result<Vec<f64>> {
    if updates.len() != round_size {
        return Err(Error::Protocol(format!(
            "expected {round_size} client updates, received {}",
            updates.len()
        )));
    }
    let d = state.global_model.len();
    let mut acc = vec![0.0; d];
    let mut contribution = vec![0.0; d];
    for u in updates {
        if u.mask.dim() != d || u.masked_model.len() != u.mask.len() {
            return Err(Error::Protocol(format!("malformed update from client {}", u.client_id)));
        }
        contribution.copy_from_slice(&state.global_model);
        for (&i, &v) in u.mask.indices().iter().zip(&u.masked_model) {
            contribution[i] = v;
        }
        for (a, c) in acc.iter_mut().zip(&contribution) {
            *a += c;
        }
    }
    let inv = 1.0 / round_size as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

/// Same contract as [`psofed_server_aggregate`] with every mask full.
pub fn onlinefed_aggregate(state: &FedState, local_models: &[(usize, Vec<f64>)], round_size: usize) -> Result<Vec<f64>> {
    let full = SelectionMask::full(state.global_model.len());
    let updates: Vec<ClientUpdate> =
        local_models.iter().map(|(k, w)| ClientUpdate::from_model(*k, w, &full)).collect();
    psofed_server_aggregate(state, &updates, round_size)
}

/// `sign(x)` with `sign(0) = 0`.
#[inline]
pub fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Local gradient `g = −x ε` at the global model, with its error `ε`.
pub fn signsgd_gradient(global: &[f64], sample: &DataSample) -> (Vec<f64>, f64) {
    let err = sample.response - dot(global, &sample.input);
    (sample.input.iter().map(|x| -x * err).collect(), err)
}

/// Coordinate-wise sign of a gradient.
pub fn signsgd_message(gradient: &[f64]) -> Vec<f64> {
    gradient.iter().map(|&g| sign0(g)).collect()
}

/// Majority vote: `w − μ sign(Σ messages)`.
pub fn signsgd_round(global: &[f64], messages: &[Vec<f64>], stepsize: f64) -> Vec<f64> {
    let mut votes = vec![0.0; global.len()];
    for m in messages {
        for (v, s) in votes.iter_mut().zip(m) {
            *v += s;
        }
    }
    global.iter().zip(&votes).map(|(w, v)| w - stepsize * sign0(*v)).collect()
}
