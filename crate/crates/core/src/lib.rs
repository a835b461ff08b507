//! Partial-sharing online federated learning (PSO-Fed) under intermittent
//! model-poisoning attacks.
//!
//! The crate has two halves that are meant to be checked against each other:
//!
//! - a Monte-Carlo simulator ([`sim`]) of the PSO-Fed client/server recursions
//!   ([`algorithms`]), the client and coordinate scheduling ([`schedule`]) and
//!   the Gaussian model-poisoning attack ([`attack`]);
//! - a closed-form theory engine ([`theory`]) that assembles the block-Kronecker
//!   moment matrices of the extended recursion and predicts stability bounds,
//!   the steady-state MSE decomposition and the optimal stepsize.
//!
//! [`config`] and [`results`] hold the file formats used by the `psofed` CLI.

pub mod algorithms;
pub mod attack;
pub mod config;
pub mod error;
pub mod model;
pub mod presets;
pub mod results;
pub mod rng;
pub mod schedule;
pub mod sim;
pub mod theory;

pub use error::{Error, Result};
