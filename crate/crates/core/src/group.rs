//! Bilinear group triple, hashing into it, and RSA-style modulus generation.
//!
//! All wire sizes in the crate key off the encodings fixed here: compressed
//! points and fixed-length big-endian scalars.

use ark_bn254::{Bn254, Fq, Fr, G1Affine, G1Projective, G2Affine, G2Projective};
use ark_ec::pairing::{Pairing, PairingOutput};
use ark_ec::short_weierstrass::Projective;
use ark_ec::{AffineRepr, CurveGroup, PrimeGroup};
use ark_ff::{BigInteger, Field, PrimeField, Zero};
use ark_serialize::{CanonicalDeserialize, CanonicalSerialize};
use num_bigint_dig::{BigUint, ModInverse, RandPrime};
use num_integer::Integer;
use num_traits::{One, ToPrimitive};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type Scalar = Fr;
pub type G1 = G1Projective;
pub type G2 = G2Projective;
pub type Gt = PairingOutput<Bn254>;

pub const SCALAR_BYTES: usize = 32;
pub const G1_BYTES: usize = 32;
pub const G2_BYTES: usize = 64;
pub const GT_BYTES: usize = 384;

/// Minimum modulus size accepted by [`rsa_modulus_gen`].
pub const MIN_MODULUS_BITS: usize = 64;
/// Modulus size of the production profile.
pub const PRODUCTION_MODULUS_BITS: usize = 2048;

const PRIME_RETRIES: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GroupError {
    #[error("unsupported security level: {0} bits (expected 100 or 128)")]
    UnsupportedSecurity(u32),
    #[error("invalid encoding for {kind}: {reason}")]
    Encoding { kind: &'static str, reason: String },
    #[error("modulus of {0} bits is below the {MIN_MODULUS_BITS}-bit minimum")]
    ModulusTooSmall(usize),
    #[error("prime generation failed after {0} attempts")]
    PrimeGeneration(usize),
    #[error("modulus factors must be distinct primes")]
    BadFactors,
}

fn enc_err(kind: &'static str, reason: impl Into<String>) -> GroupError {
    GroupError::Encoding {
        kind,
        reason: reason.into(),
    }
}

/// Fixed-size canonical byte encoding.
pub trait Canonical: Sized {
    const SIZE: usize;
    fn to_bytes(&self) -> Vec<u8>;
    fn from_bytes(bytes: &[u8]) -> Result<Self, GroupError>;
}

impl Canonical for Scalar {
    const SIZE: usize = SCALAR_BYTES;

    fn to_bytes(&self) -> Vec<u8> {
        self.into_bigint().to_bytes_be()
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self, GroupError> {
        if bytes.len() != SCALAR_BYTES {
            return Err(enc_err("scalar", format!("length {}", bytes.len())));
        }
        let s = Scalar::from_be_bytes_mod_order(bytes);
        // Non-canonical (>= p) encodings reduce to a different byte string.
        if s.to_bytes() != bytes {
            return Err(enc_err("scalar", "value not below group order"));
        }
        Ok(s)
    }
}

macro_rules! point_canonical {
    ($proj:ty, $affine:ty, $size:expr, $name:literal) => {
        impl Canonical for $proj {
            const SIZE: usize = $size;

            fn to_bytes(&self) -> Vec<u8> {
                let mut out = Vec::with_capacity($size);
                self.into_affine()
                    .serialize_compressed(&mut out)
                    .expect("writing to a Vec cannot fail");
                out
            }

            fn from_bytes(bytes: &[u8]) -> Result<Self, GroupError> {
                if bytes.len() != $size {
                    return Err(enc_err($name, format!("length {}", bytes.len())));
                }
                <$affine>::deserialize_compressed(bytes)
                    .map(Into::into)
                    .map_err(|e| enc_err($name, e.to_string()))
            }
        }
    };
}

// Spelled with the concrete configs: the aliases go through an associated
// type, which coherence cannot tell apart.
point_canonical!(
    Projective<ark_bn254::g1::Config>,
    G1Affine,
    G1_BYTES,
    "G1 point"
);
point_canonical!(
    Projective<ark_bn254::g2::Config>,
    G2Affine,
    G2_BYTES,
    "G2 point"
);

impl Canonical for Gt {
    const SIZE: usize = GT_BYTES;

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(GT_BYTES);
        self.serialize_compressed(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self, GroupError> {
        if bytes.len() != GT_BYTES {
            return Err(enc_err("GT element", format!("length {}", bytes.len())));
        }
        Gt::deserialize_compressed(bytes).map_err(|e| enc_err("GT element", e.to_string()))
    }
}

/// Public description of the pairing group triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupParams {
    pub security_bits: u32,
    pub g1: G1,
    pub g2: G2,
}

impl GroupParams {
    pub fn pairing(&self, a: &G1, b: &G2) -> Gt {
        pairing(a, b)
    }

    /// Order of the three groups, big-endian.
    pub fn order_be(&self) -> Vec<u8> {
        Scalar::MODULUS.to_bytes_be()
    }
}

/// Both supported levels map onto BN254; the encoded sizes are the contract.
pub fn group_setup(security_bits: u32) -> Result<GroupParams, GroupError> {
    match security_bits {
        100 | 128 => Ok(GroupParams {
            security_bits,
            g1: G1::generator(),
            g2: G2::generator(),
        }),
        other => Err(GroupError::UnsupportedSecurity(other)),
    }
}

pub fn pairing(a: &G1, b: &G2) -> Gt {
    Bn254::pairing(a.into_affine(), b.into_affine())
}

/// Returns true when `prod e(a_i, b_i)` is the identity of GT.
pub fn pairing_product_is_one(lhs: &[G1], rhs: &[G2]) -> bool {
    debug_assert_eq!(lhs.len(), rhs.len());
    let a = G1::normalize_batch(lhs);
    let b = G2::normalize_batch(rhs);
    Bn254::multi_pairing(a, b).is_zero()
}

fn sha256_parts(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_be_bytes());
        h.update(p);
    }
    h.finalize().into()
}

/// Domain-separated hash into `Z_p`, reduced from 512 bits of SHA-256 output.
pub fn hash_to_scalar(domain_tag: &[u8], msg: &[u8]) -> Scalar {
    let lo = sha256_parts(&[domain_tag, msg, &[0]]);
    let hi = sha256_parts(&[domain_tag, msg, &[1]]);
    let mut wide = [0u8; 64];
    wide[..32].copy_from_slice(&lo);
    wide[32..].copy_from_slice(&hi);
    Scalar::from_be_bytes_mod_order(&wide)
}

/// Try-and-increment hash onto G1. The result has no known discrete log.
pub fn hash_to_g1(domain_tag: &[u8], msg: &[u8]) -> G1 {
    for ctr in 0u32.. {
        let lo = sha256_parts(&[domain_tag, msg, &ctr.to_be_bytes(), &[0]]);
        let hi = sha256_parts(&[domain_tag, msg, &ctr.to_be_bytes(), &[1]]);
        let mut wide = [0u8; 64];
        wide[..32].copy_from_slice(&lo);
        wide[32..].copy_from_slice(&hi);
        let x = Fq::from_be_bytes_mod_order(&wide);
        let greatest = hi[31] & 1 == 1;
        if let Some(p) = G1Affine::get_point_from_x_unchecked(x, greatest) {
            // BN254 G1 has cofactor 1, so every curve point is in the group.
            if !p.is_zero() {
                return p.into_group();
            }
        }
    }
    unreachable!("counter space exhausted")
}

/// Uniform non-zero scalar.
pub fn random_nonzero<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Scalar {
    loop {
        let mut wide = [0u8; 64];
        rng.fill_bytes(&mut wide);
        let s = Scalar::from_be_bytes_mod_order(&wide);
        if !s.is_zero() {
            return s;
        }
    }
}

pub fn inverse(s: &Scalar) -> Option<Scalar> {
    s.inverse()
}

/// RSA modulus, optionally carrying its factorization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BigModulus {
    pub n: BigUint,
    factors: Option<(BigUint, BigUint)>,
}

impl BigModulus {
    pub fn from_primes(p: BigUint, q: BigUint) -> Result<Self, GroupError> {
        if p == q || p <= BigUint::one() || q <= BigUint::one() {
            return Err(GroupError::BadFactors);
        }
        Ok(Self {
            n: &p * &q,
            factors: Some((p, q)),
        })
    }

    /// A bare modulus whose factorization is unknown to the holder.
    pub fn public(n: BigUint) -> Self {
        Self { n, factors: None }
    }

    pub fn factors(&self) -> Option<(&BigUint, &BigUint)> {
        self.factors.as_ref().map(|(p, q)| (p, q))
    }

    /// `phi(n) = (p-1)(q-1)` when the factorization is known.
    pub fn phi(&self) -> Option<BigUint> {
        self.factors
            .as_ref()
            .map(|(p, q)| (p - BigUint::one()) * (q - BigUint::one()))
    }

    pub fn bits(&self) -> usize {
        self.n.bits()
    }

    pub fn without_factors(&self) -> Self {
        Self::public(self.n.clone())
    }
}

/// Two distinct random primes of `bits/2` bits each.
pub fn rsa_modulus_gen<R: RngCore + CryptoRng + ?Sized>(
    bits: usize,
    rng: &mut R,
) -> Result<BigModulus, GroupError> {
    if bits < MIN_MODULUS_BITS {
        return Err(GroupError::ModulusTooSmall(bits));
    }
    let half = bits / 2;
    let mut rng = RngAdapter(rng);
    for _ in 0..PRIME_RETRIES {
        let p = rng.gen_prime(half);
        let q = rng.gen_prime(bits - half);
        if p != q {
            return BigModulus::from_primes(p, q);
        }
    }
    Err(GroupError::PrimeGeneration(PRIME_RETRIES))
}

/// Lets a `?Sized` generator drive APIs that want a sized `Rng`.
struct RngAdapter<'a, R: RngCore + ?Sized>(&'a mut R);

impl<R: RngCore + ?Sized> RngCore for RngAdapter<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}

/// Uniform value in `[low, high)`.
pub fn random_below<R: RngCore + ?Sized>(low: &BigUint, high: &BigUint, rng: &mut R) -> BigUint {
    use num_bigint_dig::RandBigInt;
    RngAdapter(rng).gen_biguint_range(low, high)
}

pub fn mod_inverse(a: &BigUint, m: &BigUint) -> Option<BigUint> {
    let inv = a.clone().mod_inverse(m)?;
    inv.to_biguint()
}

pub fn coprime(a: &BigUint, b: &BigUint) -> bool {
    a.gcd(b).is_one()
}

pub fn biguint_to_u64(v: &BigUint) -> Option<u64> {
    v.to_u64()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ark_ff::UniformRand;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    #[test]
    fn setup_sizes_and_levels() {
        let p = group_setup(100).unwrap();
        assert_eq!(p.g1.to_bytes().len(), 32);
        assert_eq!(p.g2.to_bytes().len(), 64);
        assert_eq!(Scalar::from(7u64).to_bytes().len(), 32);
        assert_eq!(p.pairing(&p.g1, &p.g2).to_bytes().len(), 384);
        assert_eq!(group_setup(128).unwrap().g1, p.g1);
        assert_eq!(group_setup(80), Err(GroupError::UnsupportedSecurity(80)));
    }

    #[test]
    fn pairing_non_degenerate() {
        let p = group_setup(100).unwrap();
        assert!(!p.pairing(&p.g1, &p.g2).is_zero());
    }

    #[test]
    fn bilinearity_against_gt_exponentiation() {
        let p = group_setup(100).unwrap();
        let mut r = rng(1);
        let a = Scalar::rand(&mut r);
        let b = Scalar::rand(&mut r);
        let lhs = p.pairing(&(p.g1 * a), &(p.g2 * b));
        // Exponentiate in GT directly, independent of the curve-side scaling.
        let base = p.pairing(&p.g1, &p.g2).0;
        let rhs = base.pow((a * b).into_bigint());
        assert_eq!(lhs.0, rhs);
    }

    #[test]
    fn hash_to_scalar_determinism_and_separation() {
        let a = hash_to_scalar(b"tag-a", b"msg");
        assert_eq!(a, hash_to_scalar(b"tag-a", b"msg"));
        assert_ne!(a, hash_to_scalar(b"tag-b", b"msg"));
        // Output is always a canonical element below p.
        assert!(Scalar::from_bytes(&a.to_bytes()).is_ok());
    }

    #[test]
    fn hash_to_g1_is_on_curve_and_distinct() {
        let a = hash_to_g1(b"t", b"0");
        let b = hash_to_g1(b"t", b"1");
        assert_ne!(a, b);
        assert!(a.into_affine().is_on_curve());
        assert_eq!(G1::from_bytes(&a.to_bytes()).unwrap(), a);
    }

    #[test]
    fn scalar_rejects_out_of_range() {
        let bytes = [0xffu8; 32];
        assert!(Scalar::from_bytes(&bytes).is_err());
        assert!(Scalar::from_bytes(&[0u8; 31]).is_err());
    }

    #[test]
    fn g1_rejects_off_curve() {
        // x = 4 gives x^3 + 3 = 67, a non-residue in Fq, so the byte string
        // cannot decode to any point.
        let mut bytes = vec![0u8; 32];
        bytes[0] = 4;
        assert!(G1::from_bytes(&bytes).is_err());
        assert!(G2::from_bytes(&[1u8; 10]).is_err());
    }

    #[test]
    fn toy_modulus_arithmetic() {
        let m = BigModulus::from_primes(BigUint::from(11u32), BigUint::from(23u32)).unwrap();
        assert_eq!(m.n, BigUint::from(253u32));
        assert_eq!(m.phi(), Some(BigUint::from(220u32)));
        assert_eq!(
            BigModulus::from_primes(BigUint::from(11u32), BigUint::from(11u32)),
            Err(GroupError::BadFactors)
        );
    }

    #[test]
    fn modulus_generation() {
        let mut r = rng(3);
        let m = rsa_modulus_gen(128, &mut r).unwrap();
        let (p, q) = m.factors().unwrap();
        assert_ne!(p, q);
        assert_eq!(&(p * q), &m.n);
        assert_eq!(m.phi().unwrap(), (p - 1u32) * (q - 1u32));
        assert!(rsa_modulus_gen(32, &mut r).is_err());
    }

    #[test]
    fn production_modulus_within_budget() {
        let mut r = rng(4);
        let start = std::time::Instant::now();
        let m = rsa_modulus_gen(PRODUCTION_MODULUS_BITS, &mut r).unwrap();
        assert!(m.bits() >= PRODUCTION_MODULUS_BITS - 1);
        assert!(start.elapsed() < std::time::Duration::from_secs(30));
    }

    /// Independent square-and-multiply over u128.
    fn naive_modpow(mut base: u128, mut exp: u128, m: u128) -> u128 {
        let mut acc = 1u128 % m;
        base %= m;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = acc * base % m;
            }
            base = base * base % m;
            exp >>= 1;
        }
        acc
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn scalar_roundtrip(seed in any::<u64>()) {
            let s = Scalar::rand(&mut rng(seed));
            prop_assert_eq!(Scalar::from_bytes(&s.to_bytes()).unwrap(), s);
        }

        #[test]
        fn point_roundtrips(seed in any::<u64>()) {
            let mut r = rng(seed);
            let a = G1::rand(&mut r);
            let b = G2::rand(&mut r);
            prop_assert_eq!(G1::from_bytes(&a.to_bytes()).unwrap(), a);
            prop_assert_eq!(G2::from_bytes(&b.to_bytes()).unwrap(), b);
        }

        #[test]
        fn pairing_linear_in_exponent(seed in any::<u64>()) {
            let mut r = rng(seed);
            let x = G1::rand(&mut r);
            let y = G2::rand(&mut r);
            let a = Scalar::rand(&mut r);
            let e = pairing(&x, &y);
            prop_assert_eq!(pairing(&(x * a), &y).0, e.0.pow(a.into_bigint()));
        }

        #[test]
        fn modpow_matches_naive(base in 0u64.., exp in 0u64.., m in 2u64..) {
            let got = BigUint::from(base).modpow(&BigUint::from(exp), &BigUint::from(m));
            let want = naive_modpow(base as u128, exp as u128, m as u128);
            prop_assert_eq!(got, BigUint::from(want));
        }
    }

    #[test]
    fn gt_roundtrip() {
        let mut r = rng(9);
        let e = pairing(&G1::rand(&mut r), &G2::rand(&mut r));
        assert_eq!(Gt::from_bytes(&e.to_bytes()).unwrap(), e);
    }
}
