//! Shared setup for the criterion benches.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use slap_core::group::Scalar;
use slap_core::gsig::{message_scalar, DEPLOYMENT_MESSAGE_LEN};
use slap_core::protocol::Deployment;
use slap_core::tlp::TOY_MODULUS_BITS;

pub const SEED: u64 = 0xbe9c;

pub fn rng() -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(SEED)
}

/// The attack-suite deployment on toy puzzle moduli.
pub fn deployment() -> Deployment {
    slap_cli::fixture::world(SEED, TOY_MODULUS_BITS).expect("fixture deployment")
}

/// A location-proof sized message vector.
pub fn message() -> Vec<Scalar> {
    (0..DEPLOYMENT_MESSAGE_LEN)
        .map(|i| message_scalar("bench", &[i as u8]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_builds() {
        let d = deployment();
        assert_eq!(d.holders.len(), 4);
        assert_eq!(message().len(), DEPLOYMENT_MESSAGE_LEN);
    }
}
