//! Counter-style random streams keyed by `(seed, purpose, shape, sweep)`.
//!
//! Every random draw of a run comes from a stream whose key is fixed by its
//! role, so results do not depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type Rng = ChaCha20Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    InitialWiener = 1,
    Bridge = 2,
    Momenta = 3,
    Theta = 4,
    Template = 5,
    Simulate = 6,
    ObservationNoise = 7,
    Initialisation = 8,
    Test = 99,
}

/// Independent stream for the given key.
pub fn stream(seed: u64, purpose: Purpose, shape: u64, sweep: u64) -> Rng {
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_exact_mut(8).zip([seed, purpose as u64, shape, sweep]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha20Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(1, Purpose::Bridge, 0, 5).random();
        let b: u64 = stream(1, Purpose::Bridge, 0, 5).random();
        let c: u64 = stream(1, Purpose::Bridge, 1, 5).random();
        let d: u64 = stream(1, Purpose::Momenta, 0, 5).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
