//! Fiat-Shamir Schnorr proofs of knowledge of a discrete log in G1.

use ark_ec::PrimeGroup;
use rand::{CryptoRng, RngCore};

use crate::group::{hash_to_scalar, random_nonzero, Canonical, Scalar, G1};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchnorrProof {
    pub challenge: Scalar,
    pub response: Scalar,
}

pub const SCHNORR_BYTES: usize = 64;

fn challenge(domain: &[u8], public: &G1, commit: &G1, transcript: &[u8]) -> Scalar {
    let mut msg = Vec::with_capacity(64 + transcript.len());
    msg.extend_from_slice(&public.to_bytes());
    msg.extend_from_slice(&commit.to_bytes());
    msg.extend_from_slice(transcript);
    hash_to_scalar(domain, &msg)
}

impl SchnorrProof {
    /// Proves knowledge of `secret` with `public = secret * g1`, bound to
    /// `domain` and `transcript`.
    pub fn prove<R: RngCore + CryptoRng + ?Sized>(
        domain: &[u8],
        secret: &Scalar,
        public: &G1,
        transcript: &[u8],
        rng: &mut R,
    ) -> Self {
        let r = random_nonzero(rng);
        let commit = G1::generator() * r;
        let c = challenge(domain, public, &commit, transcript);
        SchnorrProof {
            challenge: c,
            response: r + c * secret,
        }
    }

    pub fn verify(&self, domain: &[u8], public: &G1, transcript: &[u8]) -> bool {
        let commit = G1::generator() * self.response - *public * self.challenge;
        challenge(domain, public, &commit, transcript) == self.challenge
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.challenge.to_bytes();
        out.extend_from_slice(&self.response.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != SCHNORR_BYTES {
            return None;
        }
        Some(SchnorrProof {
            challenge: Scalar::from_bytes(&bytes[..32]).ok()?,
            response: Scalar::from_bytes(&bytes[32..]).ok()?,
        })
    }
}
