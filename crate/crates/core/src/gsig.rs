//! BBS-style group signatures used by access points to sign location proofs.
//!
//! `C = g1 + Σ h_i·m_i`, `A = C / (x + ē)`; verification checks
//! `e(A, ē·g2 + GK) = e(C, g2)`.

use ark_ec::PrimeGroup;
use ark_ff::{Field, Zero};
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::group::{
    hash_to_g1, hash_to_scalar, pairing_product_is_one, random_nonzero, Canonical, GroupError,
    Scalar, G1, G1_BYTES, G2, SCALAR_BYTES,
};

/// Message slots in the deployment profile.
pub const DEPLOYMENT_MESSAGE_LEN: usize = 6;

pub const SIGNATURE_BYTES: usize = G1_BYTES + SCALAR_BYTES;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GsError {
    #[error("message vector of {got} entries exceeds the {max} supported")]
    MessageTooLong { got: usize, max: usize },
    #[error("message vector length must be at least 1")]
    EmptyBasis,
    #[error(transparent)]
    Group(#[from] GroupError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GsParams {
    pub h: Vec<G1>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GsSecretKey(pub Scalar);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupKey(pub G2);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GsKeys {
    pub sk: GsSecretKey,
    pub gk: GroupKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupSignature {
    pub a: G1,
    pub e: Scalar,
}

impl GroupSignature {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.a.to_bytes();
        out.extend_from_slice(&self.e.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GsError> {
        if bytes.len() != SIGNATURE_BYTES {
            return Err(GroupError::Encoding {
                kind: "group signature",
                reason: format!("length {}", bytes.len()),
            }
            .into());
        }
        Ok(GroupSignature {
            a: G1::from_bytes(&bytes[..G1_BYTES])?,
            e: Scalar::from_bytes(&bytes[G1_BYTES..])?,
        })
    }
}

/// Generators with unknown discrete logs, derived from `seed`.
pub fn gs_setup(len: usize, seed: &[u8]) -> Result<GsParams, GsError> {
    if len == 0 {
        return Err(GsError::EmptyBasis);
    }
    let h = (0..len as u32)
        .map(|i| hash_to_g1(b"slap/gsig/basis", &[seed, &i.to_be_bytes()].concat()))
        .collect();
    Ok(GsParams { h })
}

pub fn gs_keygen<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> GsKeys {
    let x = random_nonzero(rng);
    GsKeys {
        sk: GsSecretKey(x),
        gk: GroupKey(G2::generator() * x),
    }
}

/// Hashes one signed field to a scalar under a role-specific domain.
pub fn message_scalar(role: &str, bytes: &[u8]) -> Scalar {
    hash_to_scalar(&[b"slap/gsig/msg/".as_slice(), role.as_bytes()].concat(), bytes)
}

impl GsParams {
    pub fn commit(&self, m: &[Scalar]) -> Result<G1, GsError> {
        if m.len() > self.h.len() {
            return Err(GsError::MessageTooLong {
                got: m.len(),
                max: self.h.len(),
            });
        }
        Ok(G1::generator() + self.h.iter().zip(m).map(|(h, m)| *h * m).sum::<G1>())
    }
}

pub fn gs_sign<R: RngCore + CryptoRng + ?Sized>(
    params: &GsParams,
    sk: &GsSecretKey,
    m: &[Scalar],
    rng: &mut R,
) -> Result<GroupSignature, GsError> {
    let c = params.commit(m)?;
    loop {
        let e = random_nonzero(rng);
        if let Some(inv) = (sk.0 + e).inverse() {
            return Ok(GroupSignature { a: c * inv, e });
        }
    }
}

pub fn gs_verify(params: &GsParams, gk: &GroupKey, m: &[Scalar], sig: &GroupSignature) -> bool {
    let Ok(c) = params.commit(m) else {
        return false;
    };
    if sig.a.is_zero() {
        return false;
    }
    let g2 = G2::generator();
    pairing_product_is_one(&[sig.a, -c], &[g2 * sig.e + gk.0, g2])
}

/// Verifies all items with one two-pairing check over random weights. On
/// failure, falls back to per-item checks and reports the first bad index.
pub fn gs_batch_verify(
    params: &GsParams,
    gk: &GroupKey,
    items: &[(Vec<Scalar>, GroupSignature)],
) -> Result<(), usize> {
    if items.is_empty() {
        return Ok(());
    }
    let mut transcript = gk.0.to_bytes();
    for (m, s) in items {
        for x in m {
            transcript.extend_from_slice(&x.to_bytes());
        }
        transcript.extend_from_slice(&s.to_bytes());
    }
    let mut left = G1::zero();
    let mut right = G1::zero();
    let mut well_formed = true;
    for (i, (m, s)) in items.iter().enumerate() {
        let Ok(c) = params.commit(m) else {
            well_formed = false;
            break;
        };
        if s.a.is_zero() {
            well_formed = false;
            break;
        }
        let r = hash_to_scalar(
            b"slap/gsig/batch",
            &[transcript.as_slice(), &(i as u64).to_be_bytes()].concat(),
        );
        left += (s.a * s.e - c) * r;
        right += s.a * r;
    }
    // e(Σ r(ē·A − C), g2) · e(Σ r·A, GK) = 1
    if well_formed && pairing_product_is_one(&[left, right], &[G2::generator(), gk.0]) {
        return Ok(());
    }
    for (i, (m, s)) in items.iter().enumerate() {
        if !gs_verify(params, gk, m, s) {
            return Err(i);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ark_ec::CurveGroup;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn msg(rng: &mut ChaCha20Rng, n: usize) -> Vec<Scalar> {
        (0..n).map(|_| random_nonzero(rng)).collect()
    }

    #[test]
    fn setup_shape() {
        let p = gs_setup(6, b"seed").unwrap();
        assert_eq!(p.h.len(), 6);
        assert_ne!(p.h, gs_setup(6, b"other").unwrap().h);
        assert!(p.h.iter().all(|h| h.into_affine().is_on_curve()));
        let distinct: std::collections::HashSet<_> = p.h.iter().map(|h| h.to_bytes()).collect();
        assert_eq!(distinct.len(), 6);
        assert_eq!(gs_setup(0, b"s"), Err(GsError::EmptyBasis));
    }

    #[test]
    fn keygen_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let k1 = gs_keygen(&mut rng);
        let k2 = gs_keygen(&mut rng);
        assert_eq!(k1.gk.0, G2::generator() * k1.sk.0);
        assert_ne!(k1, k2);
        assert!(!k1.sk.0.is_zero());
    }

    #[test]
    fn sign_verify_and_exponent_oracle() {
        let p = gs_setup(6, b"s").unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let keys = gs_keygen(&mut rng);
        let m = msg(&mut rng, 6);
        let s1 = gs_sign(&p, &keys.sk, &m, &mut rng).unwrap();
        assert!(gs_verify(&p, &keys.gk, &m, &s1));
        // A^{x+ē} = C, with C rebuilt term by term.
        let mut c = G1::generator();
        for (h, mi) in p.h.iter().zip(&m) {
            c += *h * mi;
        }
        assert_eq!(s1.a * (keys.sk.0 + s1.e), c);
        let s2 = gs_sign(&p, &keys.sk, &m, &mut rng).unwrap();
        assert_ne!(s1.e, s2.e);
        assert_eq!(GroupSignature::from_bytes(&s1.to_bytes()).unwrap(), s1);
        assert_eq!(s1.to_bytes().len(), 64);
    }

    #[test]
    fn tamper_rejections() {
        let p = gs_setup(6, b"s").unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let keys = gs_keygen(&mut rng);
        let other = gs_keygen(&mut rng);
        let m = msg(&mut rng, 6);
        let s = gs_sign(&p, &keys.sk, &m, &mut rng).unwrap();
        for i in 0..6 {
            let mut bad = m.clone();
            bad[i] += Scalar::from(1u64);
            assert!(!gs_verify(&p, &keys.gk, &bad, &s));
        }
        assert!(!gs_verify(&p, &other.gk, &m, &s));
        assert!(!gs_verify(&p, &keys.gk, &m, &GroupSignature { a: G1::zero(), e: s.e }));
        assert!(gs_sign(&p, &keys.sk, &msg(&mut rng, 7), &mut rng).is_err());
    }

    #[test]
    fn random_pairs_never_verify() {
        let p = gs_setup(6, b"s").unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let keys = gs_keygen(&mut rng);
        let m = msg(&mut rng, 6);
        for _ in 0..200 {
            let forged = GroupSignature {
                a: G1::generator() * random_nonzero(&mut rng),
                e: random_nonzero(&mut rng),
            };
            assert!(!gs_verify(&p, &keys.gk, &m, &forged));
        }
    }

    /// Every corruption pattern over batches of up to 8 agrees with
    /// per-item verification.
    #[test]
    fn batch_matches_single_exhaustive() {
        let p = gs_setup(3, b"s").unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let keys = gs_keygen(&mut rng);
        let honest: Vec<(Vec<Scalar>, GroupSignature)> = (0..8)
            .map(|_| {
                let m = msg(&mut rng, 3);
                let s = gs_sign(&p, &keys.sk, &m, &mut rng).unwrap();
                (m, s)
            })
            .collect();
        for size in 1..=8usize {
            for mask in 0u32..(1 << size) {
                let mut batch = honest[..size].to_vec();
                for (i, item) in batch.iter_mut().enumerate() {
                    if mask >> i & 1 == 1 {
                        item.1.e += Scalar::from(1u64);
                    }
                }
                let expected = (0..size).find(|i| mask >> i & 1 == 1);
                assert_eq!(gs_batch_verify(&p, &keys.gk, &batch).err(), expected);
                if size == 1 {
                    assert_eq!(
                        gs_batch_verify(&p, &keys.gk, &batch).is_ok(),
                        gs_verify(&p, &keys.gk, &batch[0].0, &batch[0].1)
                    );
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn completeness(seed in any::<u64>(), n in 0usize..=6) {
            let p = gs_setup(6, b"prop").unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let keys = gs_keygen(&mut rng);
            let m = msg(&mut rng, n);
            let s = gs_sign(&p, &keys.sk, &m, &mut rng).unwrap();
            prop_assert!(gs_verify(&p, &keys.gk, &m, &s));
        }
    }
}
