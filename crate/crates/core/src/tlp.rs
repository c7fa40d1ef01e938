//! RSA time-lock puzzles.
//!
//! The server picks `d` coprime to `φ(n)` with `e = d⁻¹`, and publishes
//! `ẽ = 2^κ + z` with `z = φ(n) − (2^κ mod φ(n)) + e`, compactly as
//! `(n, κ, z)`. Solving `c = m^ẽ mod n` without `φ(n)` takes `κ` sequential
//! squarings; since `ẽ ≡ e (mod φ(n))` the server checks `c^d = m` with one
//! exponentiation.

use std::collections::{BTreeMap, HashSet};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use num_bigint_dig::BigUint;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::group::{
    coprime, mod_inverse, random_below, rsa_modulus_gen, BigModulus, GroupError,
    PRODUCTION_MODULUS_BITS,
};
use crate::wire::{Reader, WireError, Writer};

/// Modulus size of the toy profile.
pub const TOY_MODULUS_BITS: usize = 512;

/// Squarings in the rate-calibration probe.
pub const CALIBRATION_PROBE: u64 = 10_000;

pub const PROFILE_ENV: &str = "SLAP_PROFILE";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TlpError {
    #[error("difficulty must be at least 1")]
    ZeroDifficulty,
    #[error("modulus already carries a published exponent")]
    ModulusReuse,
    #[error("message must satisfy 0 < m < n")]
    MessageRange,
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Toy,
    Production,
}

impl Profile {
    pub fn modulus_bits(self) -> usize {
        match self {
            Profile::Toy => TOY_MODULUS_BITS,
            Profile::Production => PRODUCTION_MODULUS_BITS,
        }
    }

    /// Reads [`PROFILE_ENV`]; unset or unrecognized values give the toy
    /// profile.
    pub fn from_env() -> Self {
        std::env::var(PROFILE_ENV)
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or_default()
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "toy" => Ok(Profile::Toy),
            "production" | "prod" => Ok(Profile::Production),
            other => Err(format!("unknown profile `{other}` (expected toy or production)")),
        }
    }
}

/// Public puzzle in compact form.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PuzzlePublic {
    pub n: BigUint,
    pub kappa: u64,
    pub z: BigUint,
}

impl PuzzlePublic {
    /// `ẽ = 2^κ + z`. Only for inspection; solvers never need it.
    pub fn e_tilde(&self) -> BigUint {
        (BigUint::one() << self.kappa as usize) + &self.z
    }

    pub fn to_wire(&self) -> Vec<u8> {
        Writer::new()
            .field(&self.n.to_bytes_be())
            .raw(&self.kappa.to_be_bytes())
            .field(&self.z.to_bytes_be())
            .finish()
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self, TlpError> {
        let mut r = Reader::new(bytes);
        let n = BigUint::from_bytes_be(r.field()?);
        let kappa = u64::from_be_bytes(r.fixed::<8>()?);
        let z = BigUint::from_bytes_be(r.field()?);
        r.finish()?;
        if kappa == 0 {
            return Err(TlpError::ZeroDifficulty);
        }
        Ok(PuzzlePublic { n, kappa, z })
    }

    /// Stable identifier for registries.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_wire()).into()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PuzzleSecret {
    pub n: BigUint,
    pub d: BigUint,
}

/// Everything the generating server holds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PuzzleKeys {
    pub public: PuzzlePublic,
    pub secret: PuzzleSecret,
    pub e: BigUint,
    pub modulus: BigModulus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PuzzleSolution {
    pub m: BigUint,
    pub c: BigUint,
}

impl PuzzleSolution {
    pub fn to_wire(&self) -> Vec<u8> {
        Writer::new()
            .field(&self.m.to_bytes_be())
            .field(&self.c.to_bytes_be())
            .finish()
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self, TlpError> {
        let mut r = Reader::new(bytes);
        let m = BigUint::from_bytes_be(r.field()?);
        let c = BigUint::from_bytes_be(r.field()?);
        r.finish()?;
        Ok(PuzzleSolution { m, c })
    }
}

/// Moduli that already carry a published exponent. One `ẽ` per modulus:
/// two exponents on the same `n` leak a multiple of `φ(n)`.
#[derive(Debug, Default)]
pub struct PuzzleRegistry {
    seen: Mutex<HashSet<Vec<u8>>>,
}

impl PuzzleRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, n: &BigUint) -> Result<(), TlpError> {
        let mut seen = self.seen.lock().expect("registry lock poisoned");
        if seen.insert(n.to_bytes_be()) {
            Ok(())
        } else {
            Err(TlpError::ModulusReuse)
        }
    }

    pub fn len(&self) -> usize {
        self.seen.lock().expect("registry lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn build(modulus: BigModulus, d: BigUint, kappa: u64) -> Result<PuzzleKeys, TlpError> {
    if kappa == 0 {
        return Err(TlpError::ZeroDifficulty);
    }
    let phi = modulus.phi().ok_or(GroupError::BadFactors)?;
    let e = mod_inverse(&d, &phi).ok_or(GroupError::BadFactors)?;
    let r = BigUint::from(2u32).modpow(&BigUint::from(kappa), &phi);
    let z = &phi - r + &e;
    Ok(PuzzleKeys {
        public: PuzzlePublic {
            n: modulus.n.clone(),
            kappa,
            z,
        },
        secret: PuzzleSecret {
            n: modulus.n.clone(),
            d,
        },
        e,
        modulus,
    })
}

/// Fresh puzzle on a fresh modulus of `bits` bits.
pub fn puzzle_gen<R: RngCore + CryptoRng + ?Sized>(
    bits: usize,
    kappa: u64,
    registry: &PuzzleRegistry,
    rng: &mut R,
) -> Result<PuzzleKeys, TlpError> {
    if kappa == 0 {
        return Err(TlpError::ZeroDifficulty);
    }
    let modulus = rsa_modulus_gen(bits, rng)?;
    let phi = modulus.phi().expect("generated modulus keeps its factors");
    let two = BigUint::from(2u32);
    let d = loop {
        let d = random_below(&two, &phi, rng);
        if coprime(&d, &phi) {
            break d;
        }
    };
    let keys = build(modulus, d, kappa)?;
    registry.register(&keys.public.n)?;
    Ok(keys)
}

/// Puzzle from explicit factors and private exponent.
pub fn puzzle_from_parts(
    p: BigUint,
    q: BigUint,
    d: BigUint,
    kappa: u64,
    registry: &PuzzleRegistry,
) -> Result<PuzzleKeys, TlpError> {
    let modulus = BigModulus::from_primes(p, q)?;
    let phi = modulus.phi().expect("factors present");
    if !coprime(&d, &phi) {
        return Err(GroupError::BadFactors.into());
    }
    let keys = build(modulus, d, kappa)?;
    registry.register(&keys.public.n)?;
    Ok(keys)
}

/// Work performed by the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SolveTrace {
    pub squarings: u64,
}

/// `c = (m^{2^κ} mod n)·(m^z mod n) mod n`, the first factor by `κ`
/// sequential squarings.
pub fn puzzle_solve(m: &BigUint, puzzle: &PuzzlePublic) -> Result<(PuzzleSolution, SolveTrace), TlpError> {
    let n = &puzzle.n;
    if m.is_zero() || m >= n {
        return Err(TlpError::MessageRange);
    }
    let mut c1 = m.clone();
    let mut trace = SolveTrace::default();
    for _ in 0..puzzle.kappa {
        c1 = &c1 * &c1 % n;
        trace.squarings += 1;
    }
    let c2 = m.modpow(&puzzle.z, n);
    Ok((
        PuzzleSolution {
            m: m.clone(),
            c: c1 * c2 % n,
        },
        trace,
    ))
}

pub fn solution_verify(secret: &PuzzleSecret, sol: &PuzzleSolution) -> bool {
    let n = &secret.n;
    if sol.m.is_zero() || &sol.m >= n || &sol.c >= n {
        return false;
    }
    sol.c.modpow(&secret.d, n) == sol.m
}

/// Maps a payload and server nonce into `[2, n)`.
pub fn message_representative(payload: &[u8], nonce: &[u8], n: &BigUint) -> BigUint {
    let want = n.bits() / 8 + 16;
    let mut out = Vec::with_capacity(want + 32);
    let mut ctr = 0u32;
    while out.len() < want {
        let mut h = Sha256::new();
        h.update(b"slap/tlp/representative");
        h.update(ctr.to_be_bytes());
        h.update((payload.len() as u64).to_be_bytes());
        h.update(payload);
        h.update(nonce);
        out.extend_from_slice(&h.finalize());
        ctr += 1;
    }
    let two = BigUint::from(2u32);
    BigUint::from_bytes_be(&out) % (n - &two) + two
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThreatLevel {
    None,
    Low,
    Medium,
    High,
    Severe,
}

impl FromStr for ThreatLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "none" => ThreatLevel::None,
            "low" => ThreatLevel::Low,
            "medium" => ThreatLevel::Medium,
            "high" => ThreatLevel::High,
            "severe" => ThreatLevel::Severe,
            other => return Err(format!("unknown threat level `{other}`")),
        })
    }
}

/// Maps device classes and threat levels to a squaring count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyPolicy {
    /// Lower bound on any issued difficulty.
    pub floor: u64,
    /// Squarings per second by device class.
    pub rates: BTreeMap<String, f64>,
    /// Rate assumed for classes not in `rates`.
    pub default_rate: f64,
    /// Target solve time in seconds by threat level.
    pub targets: BTreeMap<ThreatLevel, f64>,
}

impl Default for DifficultyPolicy {
    fn default() -> Self {
        let rates: BTreeMap<String, f64> = [
            ("iot", 1e5),
            ("mobile", 4e5),
            ("laptop", 1e6),
            ("base-station", 2e6),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        // Unknown classes are treated as the fastest known device.
        let default_rate = rates.values().copied().fold(0.0, f64::max);
        let targets = [
            (ThreatLevel::None, 0.0),
            (ThreatLevel::Low, 0.1),
            (ThreatLevel::Medium, 0.5),
            (ThreatLevel::High, 2.0),
            (ThreatLevel::Severe, 10.0),
        ]
        .into_iter()
        .collect();
        DifficultyPolicy {
            floor: 1,
            rates,
            default_rate,
            targets,
        }
    }
}

/// `κ = max(floor, round(T·S))`.
pub fn difficulty_for(device_class: &str, threat: ThreatLevel, policy: &DifficultyPolicy) -> u64 {
    let rate = policy
        .rates
        .get(device_class)
        .copied()
        .unwrap_or(policy.default_rate);
    // Missing levels inherit the next lower configured target.
    let target = policy
        .targets
        .range(..=threat)
        .next_back()
        .map(|(_, t)| *t)
        .unwrap_or(0.0);
    policy.floor.max(1).max((target * rate).round() as u64)
}

/// Measured squarings per second at a modulus of `bits` bits.
pub fn calibrate_rate<R: RngCore + ?Sized>(bits: usize, probe: u64, rng: &mut R) -> f64 {
    let mut bytes = vec![0u8; bits.div_ceil(8)];
    rng.fill_bytes(&mut bytes);
    bytes[0] |= 0x80;
    let n = BigUint::from_bytes_be(&bytes) | BigUint::one();
    let mut x = BigUint::from(3u32);
    let start = Instant::now();
    for _ in 0..probe {
        x = &x * &x % &n;
    }
    let secs = start.elapsed().as_secs_f64().max(1e-9);
    std::hint::black_box(x);
    probe as f64 / secs
}

/// Pre-generated puzzles, keyed by difficulty.
#[derive(Debug, Default)]
pub struct PuzzlePool {
    bits: usize,
    pools: BTreeMap<u64, Vec<PuzzleKeys>>,
}

impl PuzzlePool {
    pub fn new(bits: usize) -> Self {
        PuzzlePool {
            bits,
            pools: BTreeMap::new(),
        }
    }

    pub fn fill<R: RngCore + CryptoRng + ?Sized>(
        &mut self,
        kappa: u64,
        count: usize,
        registry: &PuzzleRegistry,
        rng: &mut R,
    ) -> Result<(), TlpError> {
        let slot = self.pools.entry(kappa).or_default();
        for _ in 0..count {
            slot.push(puzzle_gen(self.bits, kappa, registry, rng)?);
        }
        Ok(())
    }

    pub fn available(&self, kappa: u64) -> usize {
        self.pools.get(&kappa).map_or(0, Vec::len)
    }

    /// Takes a pooled puzzle, generating one when the pool is dry.
    pub fn take<R: RngCore + CryptoRng + ?Sized>(
        &mut self,
        kappa: u64,
        registry: &PuzzleRegistry,
        rng: &mut R,
    ) -> Result<PuzzleKeys, TlpError> {
        match self.pools.get_mut(&kappa).and_then(Vec::pop) {
            Some(p) => Ok(p),
            None => puzzle_gen(self.bits, kappa, registry, rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn big(v: u64) -> BigUint {
        BigUint::from(v)
    }

    /// Square-and-multiply over u128, independent of the bignum library.
    fn naive_modpow(mut b: u128, mut e: u128, m: u128) -> u128 {
        let mut acc = 1 % m;
        b %= m;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * b % m;
            }
            b = b * b % m;
            e >>= 1;
        }
        acc
    }

    #[test]
    fn toy_vector() {
        let reg = PuzzleRegistry::new();
        let k = puzzle_from_parts(big(11), big(23), big(27), 5, &reg).unwrap();
        assert_eq!(k.e, big(163));
        assert_eq!(k.public.z, big(351));
        assert_eq!(k.public.e_tilde(), big(383));
        assert_eq!(naive_modpow(2, 5, 220), 32);
        let (sol, trace) = puzzle_solve(&big(2), &k.public).unwrap();
        assert_eq!(trace.squarings, 5);
        assert_eq!(naive_modpow(2, 32, 253), 81);
        assert_eq!(naive_modpow(2, 351, 253), 35);
        assert_eq!(sol.c, big(52));
        assert_eq!(naive_modpow(2, 383, 253), 52);
        assert_eq!(naive_modpow(52, 27, 253), 2);
        assert!(solution_verify(&k.secret, &sol));
        let bumped = PuzzleSolution { m: sol.m.clone(), c: &sol.c + 1u32 };
        assert!(!solution_verify(&k.secret, &bumped));
    }

    #[test]
    fn boundaries() {
        let reg = PuzzleRegistry::new();
        let k = puzzle_from_parts(big(11), big(23), big(27), 1, &reg).unwrap();
        let (sol, t) = puzzle_solve(&big(5), &k.public).unwrap();
        assert_eq!(t.squarings, 1);
        assert!(solution_verify(&k.secret, &sol));
        let (one, _) = puzzle_solve(&big(1), &k.public).unwrap();
        assert_eq!(one.c, big(1));
        assert_eq!(puzzle_solve(&big(0), &k.public), Err(TlpError::MessageRange));
        assert_eq!(puzzle_solve(&big(253), &k.public), Err(TlpError::MessageRange));
        assert_eq!(
            puzzle_from_parts(big(11), big(23), big(27), 3, &reg),
            Err(TlpError::ModulusReuse)
        );
        let reg2 = PuzzleRegistry::new();
        assert_eq!(
            puzzle_from_parts(big(11), big(23), big(27), 0, &reg2),
            Err(TlpError::ZeroDifficulty)
        );
    }

    #[test]
    fn generated_moduli_are_distinct() {
        let reg = PuzzleRegistry::new();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let a = puzzle_gen(256, 10, &reg, &mut rng).unwrap();
        let b = puzzle_gen(256, 10, &reg, &mut rng).unwrap();
        assert_ne!(a.public.n, b.public.n);
        assert_eq!(reg.len(), 2);
        assert_eq!(PuzzlePublic::from_wire(&a.public.to_wire()).unwrap(), a.public);
        // Wire layout: prefixed n, raw 8-byte κ, prefixed z.
        let w = a.public.to_wire();
        let n_len = a.public.n.to_bytes_be().len();
        assert_eq!(&w[4 + n_len..12 + n_len], &10u64.to_be_bytes());
    }

    #[test]
    fn solution_is_m_to_the_e() {
        let reg = PuzzleRegistry::new();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let k = puzzle_gen(128, 300, &reg, &mut rng).unwrap();
        let m = message_representative(b"payload", b"nonce", &k.public.n);
        let (sol, _) = puzzle_solve(&m, &k.public).unwrap();
        assert_eq!(sol.c, m.modpow(&k.e, &k.public.n));
        assert!(solution_verify(&k.secret, &sol));
    }

    #[test]
    fn production_modulus_roundtrip() {
        let reg = PuzzleRegistry::new();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let k = puzzle_gen(PRODUCTION_MODULUS_BITS, 50, &reg, &mut rng).unwrap();
        let m = message_representative(b"x", b"y", &k.public.n);
        let (sol, t) = puzzle_solve(&m, &k.public).unwrap();
        assert_eq!(t.squarings, 50);
        assert!(solution_verify(&k.secret, &sol));
        assert_eq!(PuzzleSolution::from_wire(&sol.to_wire()).unwrap(), sol);
    }

    #[test]
    fn difficulty_policy() {
        let p = DifficultyPolicy::default();
        assert_eq!(difficulty_for("iot", ThreatLevel::Low, &p), 10_000);
        assert_eq!(difficulty_for("iot", ThreatLevel::None, &p), 1);
        assert_eq!(
            difficulty_for("unknown-class", ThreatLevel::Low, &p),
            difficulty_for("base-station", ThreatLevel::Low, &p)
        );
        for class in ["iot", "mobile", "laptop", "zzz"] {
            let mut prev = 0;
            for t in [ThreatLevel::None, ThreatLevel::Low, ThreatLevel::Medium, ThreatLevel::High, ThreatLevel::Severe] {
                let k = difficulty_for(class, t, &p);
                assert!(k >= prev);
                prev = k;
            }
        }
    }

    #[test]
    fn profile_parsing() {
        assert_eq!("toy".parse::<Profile>(), Ok(Profile::Toy));
        assert_eq!("Production".parse::<Profile>(), Ok(Profile::Production));
        assert!("huge".parse::<Profile>().is_err());
        assert_eq!(Profile::Production.modulus_bits(), 2048);
    }

    #[test]
    fn pool_take_and_refill() {
        let reg = PuzzleRegistry::new();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let mut pool = PuzzlePool::new(128);
        pool.fill(20, 2, &reg, &mut rng).unwrap();
        assert_eq!(pool.available(20), 2);
        pool.take(20, &reg, &mut rng).unwrap();
        pool.take(20, &reg, &mut rng).unwrap();
        let fresh = pool.take(20, &reg, &mut rng).unwrap();
        assert_eq!(fresh.public.kappa, 20);
        assert_eq!(reg.len(), 3);
        assert!(calibrate_rate(128, 1000, &mut rng) > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn solve_verify_toy(m in 1u64..253, kappa in 1u64..64) {
            let reg = PuzzleRegistry::new();
            let k = puzzle_from_parts(big(11), big(23), big(27), kappa, &reg).unwrap();
            let (sol, t) = puzzle_solve(&big(m), &k.public).unwrap();
            prop_assert_eq!(t.squarings, kappa);
            prop_assert_eq!(sol.c.clone(), big(naive_modpow(m as u128, 163, 253) as u64));
            prop_assert!(solution_verify(&k.secret, &sol));
        }

        #[test]
        fn solve_verify_generated(seed in any::<u64>(), kappa in 1u64..200) {
            let reg = PuzzleRegistry::new();
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let k = puzzle_gen(256, kappa, &reg, &mut rng).unwrap();
            let m = message_representative(&seed.to_be_bytes(), b"n", &k.public.n);
            let (sol, _) = puzzle_solve(&m, &k.public).unwrap();
            prop_assert!(solution_verify(&k.secret, &sol));
        }
    }
}
