//! Deterministic random streams.
//!
//! Every experiment has one root seed. Each random stream is a ChaCha8
//! keystream keyed by that seed and addressed by a 64-bit stream id, so streams
//! are independent and any stream can be reconstructed without replaying the
//! others:
//!
//! | stream id                      | use                                   |
//! |--------------------------------|---------------------------------------|
//! | `replica * 16 + 1`             | client sets and selection masks       |
//! | `replica * 16 + 2`             | inputs and observation noise          |
//! | `replica * 16 + 3`             | attack coin flips and perturbations   |
//! | `2^63 + 1`                     | per-client variance draws             |
//! | `2^63 + 2`                     | server test set                       |
//!
//! Because the attack has its own stream, changing any attack parameter never
//! changes the data or the schedule a replica sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplicaPurpose {
    Schedule = 1,
    Data = 2,
    Attack = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentPurpose {
    Variances = 1,
    TestSet = 2,
}

const EXPERIMENT_BIT: u64 = 1 << 63;

pub fn replica_stream(seed: u64, replica: usize, purpose: ReplicaPurpose) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((replica as u64) * 16 + purpose as u64);
    rng
}

pub fn experiment_stream(seed: u64, purpose: ExperimentPurpose) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(EXPERIMENT_BIT | purpose as u64);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut r1 = replica_stream(7, 3, ReplicaPurpose::Data);
        let mut r2 = replica_stream(7, 3, ReplicaPurpose::Data);
        let a: Vec<u64> = (0..4).map(|_| r1.random()).collect();
        let b: Vec<u64> = (0..4).map(|_| r2.random()).collect();
        assert_eq!(a, b);
        let mut other = replica_stream(7, 3, ReplicaPurpose::Attack);
        let c: Vec<u64> = (0..4).map(|_| other.random()).collect();
        assert_ne!(a, c);
        let mut next = replica_stream(7, 4, ReplicaPurpose::Data);
        let d: Vec<u64> = (0..4).map(|_| next.random()).collect();
        assert_ne!(a, d);
    }
}
