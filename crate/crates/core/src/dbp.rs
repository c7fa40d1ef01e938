//! Public-key distance bounding.
//!
//! Prover and verifier agree on a `2n`-bit session key `ss` by hashing a
//! nonce-bound Diffie-Hellman value. The verifier sends a random pad `m`;
//! both sides set `a = ss ⊕ m`. In round `i` (0-indexed) the verifier sends
//! challenge bit `c_i` and expects `a[2i + c_i]` back within
//! `2·th / c + allowance`.

use ark_ff::Zero;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::group::{Canonical, Scalar, G1};
use crate::simnet::{propagation_ns, Channel, EndpointId, Network, C_LIGHT};

/// Default prover processing allowance added to the round-trip bound.
pub const DEFAULT_ALLOWANCE_NS: u64 = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DbpError {
    #[error("peer public key is the identity")]
    IdentityKey,
    #[error("round count must be at least 1")]
    ZeroRounds,
    #[error("unknown adversary strategy `{0}`")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Verifier,
    Prover,
}

/// Session-key expansion: `2n` bits from the shared point, the nonce and
/// both public keys (verifier first).
pub fn session_bits(shared: &G1, nonce: &[u8], pk_v: &G1, pk_p: &G1, rounds: usize) -> Vec<u8> {
    let want = 2 * rounds;
    let mut bits = Vec::with_capacity(want + 256);
    let mut ctr = 0u32;
    while bits.len() < want {
        let mut h = Sha256::new();
        h.update(b"slap/dbp/session");
        h.update(ctr.to_be_bytes());
        h.update(shared.to_bytes());
        h.update((nonce.len() as u64).to_be_bytes());
        h.update(nonce);
        h.update(pk_v.to_bytes());
        h.update(pk_p.to_bytes());
        for byte in h.finalize() {
            bits.extend((0..8).rev().map(|k| (byte >> k) & 1));
        }
        ctr += 1;
    }
    bits.truncate(want);
    bits
}

pub fn aka_derive(
    own_sk: &Scalar,
    own_pk: &G1,
    peer_pk: &G1,
    nonce: &[u8],
    role: Role,
    rounds: usize,
) -> Result<Vec<u8>, DbpError> {
    if peer_pk.is_zero() {
        return Err(DbpError::IdentityKey);
    }
    if rounds == 0 {
        return Err(DbpError::ZeroRounds);
    }
    let shared = *peer_pk * own_sk;
    let (pk_v, pk_p) = match role {
        Role::Verifier => (own_pk, peer_pk),
        Role::Prover => (peer_pk, own_pk),
    };
    Ok(session_bits(&shared, nonce, pk_v, pk_p, rounds))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbpConfig {
    pub rounds: usize,
    pub threshold_m: f64,
    pub allowance_ns: u64,
}

impl DbpConfig {
    pub fn new(rounds: usize, threshold_m: f64) -> Self {
        DbpConfig {
            rounds,
            threshold_m,
            allowance_ns: DEFAULT_ALLOWANCE_NS,
        }
    }

    /// `2·th / c` in nanoseconds plus the processing allowance.
    pub fn timer_bound_ns(&self) -> f64 {
        2.0 * self.threshold_m / C_LIGHT * 1e9 + self.allowance_ns as f64
    }
}

fn xor(a: &[u8], b: &[u8]) -> Vec<u8> {
    a.iter().zip(b).map(|(x, y)| x ^ y).collect()
}

/// The prover side of the rapid exchange.
pub trait Responder {
    fn initialize(&mut self, pad: &[u8]);
    /// `None` means no answer this round.
    fn respond(&mut self, round: usize, challenge: u8) -> Option<u8>;
    /// Time between receiving a challenge and sending the answer.
    fn processing_ns(&self) -> u64 {
        0
    }
}

/// Answers each round once, from `a = ss ⊕ m`.
#[derive(Debug, Clone)]
pub struct HonestProver {
    ss: Vec<u8>,
    a: Vec<u8>,
    answered: Vec<bool>,
    processing_ns: u64,
}

impl HonestProver {
    pub fn new(ss: Vec<u8>) -> Self {
        HonestProver {
            ss,
            a: Vec::new(),
            answered: Vec::new(),
            processing_ns: 0,
        }
    }

    pub fn with_processing(mut self, ns: u64) -> Self {
        self.processing_ns = ns;
        self
    }
}

impl Responder for HonestProver {
    fn initialize(&mut self, pad: &[u8]) {
        self.a = xor(&self.ss, pad);
        self.answered = vec![false; self.a.len() / 2];
    }

    fn respond(&mut self, round: usize, challenge: u8) -> Option<u8> {
        let seen = self.answered.get_mut(round)?;
        if *seen {
            return None;
        }
        *seen = true;
        self.a.get(2 * round + challenge as usize).copied()
    }

    fn processing_ns(&self) -> u64 {
        self.processing_ns
    }
}

/// Answers uniformly at random.
#[derive(Debug, Clone)]
pub struct Guess {
    rng: ChaCha20Rng,
}

impl Guess {
    pub fn new(seed: u64) -> Self {
        Guess {
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }
}

impl Responder for Guess {
    fn initialize(&mut self, _pad: &[u8]) {}

    fn respond(&mut self, _round: usize, _challenge: u8) -> Option<u8> {
        Some(self.rng.gen_range(0..=1))
    }
}

/// Mafia fraud: before the timed phase, query the far honest prover with
/// guessed challenges; replay its answer when the guess matches and guess
/// otherwise. Succeeds per round with probability 3/4.
#[derive(Debug, Clone)]
pub struct PreAsk {
    prover: HonestProver,
    pre_challenges: Vec<u8>,
    pre_answers: Vec<Option<u8>>,
    guesses: Vec<u8>,
    rng: Option<ChaCha20Rng>,
}

impl PreAsk {
    pub fn new(prover: HonestProver, seed: u64) -> Self {
        PreAsk {
            prover,
            pre_challenges: Vec::new(),
            pre_answers: Vec::new(),
            guesses: Vec::new(),
            rng: Some(ChaCha20Rng::seed_from_u64(seed)),
        }
    }

    /// Fixed pre-challenges and fallback guesses, for enumeration.
    pub fn scripted(prover: HonestProver, pre_challenges: Vec<u8>, guesses: Vec<u8>) -> Self {
        PreAsk {
            prover,
            pre_challenges,
            pre_answers: Vec::new(),
            guesses,
            rng: None,
        }
    }
}

impl Responder for PreAsk {
    fn initialize(&mut self, pad: &[u8]) {
        self.prover.initialize(pad);
        let rounds = pad.len() / 2;
        if let Some(rng) = self.rng.as_mut() {
            self.pre_challenges = (0..rounds).map(|_| rng.gen_range(0..=1)).collect();
            self.guesses = (0..rounds).map(|_| rng.gen_range(0..=1)).collect();
        }
        self.pre_answers = (0..rounds)
            .map(|i| self.prover.respond(i, self.pre_challenges[i]))
            .collect();
    }

    fn respond(&mut self, round: usize, challenge: u8) -> Option<u8> {
        if self.pre_challenges.get(round) == Some(&challenge) {
            self.pre_answers[round]
        } else {
            self.guesses.get(round).copied()
        }
    }
}

/// A prover far from the verifier answering correctly with no processing;
/// geometry alone defeats it.
pub type DistanceFraud = HonestProver;

/// A nearby honest prover answers with its own session, on behalf of a far
/// dishonest one.
#[derive(Debug, Clone)]
pub struct DistanceHijack {
    inner: HonestProver,
}

impl DistanceHijack {
    pub fn new(helper_ss: Vec<u8>) -> Self {
        DistanceHijack {
            inner: HonestProver::new(helper_ss),
        }
    }
}

impl Responder for DistanceHijack {
    fn initialize(&mut self, pad: &[u8]) {
        self.inner.initialize(pad)
    }

    fn respond(&mut self, round: usize, challenge: u8) -> Option<u8> {
        self.inner.respond(round, challenge)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryKind {
    Guess,
    PreAsk,
    DistanceFraud,
    DistanceHijack,
}

impl std::str::FromStr for AdversaryKind {
    type Err = DbpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "guess" => AdversaryKind::Guess,
            "pre_ask" => AdversaryKind::PreAsk,
            "distance_fraud" => AdversaryKind::DistanceFraud,
            "distance_hijack" => AdversaryKind::DistanceHijack,
            other => return Err(DbpError::UnknownStrategy(other.to_string())),
        })
    }
}

/// Builds the responder for `kind`. `victim_ss` is the session the verifier
/// shares with the legitimate prover; `seed` drives the adversary's coins.
pub fn adversary_strategy(kind: AdversaryKind, victim_ss: &[u8], seed: u64) -> Box<dyn Responder + Send> {
    match kind {
        AdversaryKind::Guess => Box::new(Guess::new(seed)),
        AdversaryKind::PreAsk => Box::new(PreAsk::new(HonestProver::new(victim_ss.to_vec()), seed)),
        AdversaryKind::DistanceFraud => Box::new(HonestProver::new(victim_ss.to_vec())),
        AdversaryKind::DistanceHijack => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let helper: Vec<u8> = (0..victim_ss.len()).map(|_| rng.gen_range(0..=1)).collect();
            Box::new(DistanceHijack::new(helper))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub challenge: u8,
    pub response: Option<u8>,
    pub timer_ns: u64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbpTranscript {
    pub ss: Vec<u8>,
    pub pad: Vec<u8>,
    pub rounds: Vec<RoundRecord>,
    pub verdict: bool,
    pub abort: Option<String>,
}

impl DbpTranscript {
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.rounds {
            out.push_str(&serde_json::to_string(r).expect("round record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Verifier state for one run.
#[derive(Debug, Clone)]
pub struct DbpSession {
    pub config: DbpConfig,
    ss: Vec<u8>,
    pad: Vec<u8>,
    a: Vec<u8>,
    rng: ChaCha20Rng,
}

impl DbpSession {
    pub fn new(ss: Vec<u8>, config: DbpConfig, seed: u64) -> Result<Self, DbpError> {
        if config.rounds == 0 {
            return Err(DbpError::ZeroRounds);
        }
        assert_eq!(ss.len(), 2 * config.rounds, "session key must have 2n bits");
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let pad: Vec<u8> = (0..ss.len()).map(|_| rng.gen_range(0..=1)).collect();
        let a = xor(&ss, &pad);
        Ok(DbpSession {
            config,
            ss,
            pad,
            a,
            rng,
        })
    }

    pub fn pad(&self) -> &[u8] {
        &self.pad
    }

    pub fn expected(&self, round: usize, challenge: u8) -> u8 {
        self.a[2 * round + challenge as usize]
    }

    fn challenge(&mut self) -> u8 {
        self.rng.gen_range(0..=1)
    }

    fn transcript(&self, rounds: Vec<RoundRecord>, abort: Option<String>) -> DbpTranscript {
        let verdict = abort.is_none()
            && rounds.len() == self.config.rounds
            && rounds.iter().all(|r| r.pass);
        DbpTranscript {
            ss: self.ss.clone(),
            pad: self.pad.clone(),
            rounds,
            verdict,
            abort,
        }
    }

    fn judge(&self, round: usize, challenge: u8, response: Option<u8>, timer_ns: u64) -> RoundRecord {
        let in_time = timer_ns as f64 <= self.config.timer_bound_ns();
        RoundRecord {
            round,
            challenge,
            response,
            timer_ns,
            pass: in_time && response == Some(self.expected(round, challenge)),
        }
    }
}

/// Runs the pad transfer and rapid exchange over the simulated radio.
pub fn dbp_run(
    net: &mut Network,
    verifier: EndpointId,
    prover: EndpointId,
    session: &mut DbpSession,
    responder: &mut dyn Responder,
) -> (bool, DbpTranscript) {
    let abort = |s: &DbpSession, rounds, why: String| {
        let t = s.transcript(rounds, Some(why));
        (false, t)
    };
    if let Err(e) = net.send(verifier, prover, "dbp-pad", session.pad.clone(), Channel::Radio) {
        return abort(session, Vec::new(), e.to_string());
    }
    match net.await_message(prover, "dbp-pad") {
        Ok(ev) => responder.initialize(&ev.payload),
        Err(e) => return abort(session, Vec::new(), e.to_string()),
    }
    let mut rounds = Vec::with_capacity(session.config.rounds);
    for i in 0..session.config.rounds {
        let c = session.challenge();
        let sent = match net.send_with_processing(
            verifier,
            prover,
            "dbp-challenge",
            vec![c],
            Channel::Radio,
            0,
        ) {
            Ok(s) => s,
            Err(e) => return abort(session, rounds, e.to_string()),
        };
        let ev = match net.await_message(prover, "dbp-challenge") {
            Ok(ev) => ev,
            Err(e) => return abort(session, rounds, e.to_string()),
        };
        let Some(r) = responder.respond(i, ev.payload[0]) else {
            return abort(session, rounds, format!("no response in round {i}"));
        };
        if let Err(e) = net.send_with_processing(
            prover,
            verifier,
            "dbp-response",
            vec![r],
            Channel::Radio,
            responder.processing_ns(),
        ) {
            return abort(session, rounds, e.to_string());
        }
        let back = match net.await_message(verifier, "dbp-response") {
            Ok(ev) => ev,
            Err(e) => return abort(session, rounds, e.to_string()),
        };
        let timer = back.deliver_at - sent.departed_at;
        rounds.push(session.judge(i, c, Some(back.payload[0]), timer));
    }
    let t = session.transcript(rounds, None);
    (t.verdict, t)
}

/// The same exchange against a responder at fixed distance, without an event
/// queue. Used for large Monte Carlo runs.
pub fn dbp_run_direct(
    session: &mut DbpSession,
    responder: &mut dyn Responder,
    distance_m: f64,
) -> (bool, DbpTranscript) {
    responder.initialize(&session.pad.clone());
    let flight = 2 * propagation_ns(distance_m);
    let mut rounds = Vec::with_capacity(session.config.rounds);
    for i in 0..session.config.rounds {
        let c = session.challenge();
        let r = responder.respond(i, c);
        if r.is_none() {
            let t = session.transcript(rounds, Some(format!("no response in round {i}")));
            return (false, t);
        }
        rounds.push(session.judge(i, c, r, flight + responder.processing_ns()));
    }
    let t = session.transcript(rounds, None);
    (t.verdict, t)
}

/// Uniform random `2n`-bit session key.
pub fn random_session<R: RngCore + ?Sized>(rounds: usize, rng: &mut R) -> Vec<u8> {
    (0..2 * rounds).map(|_| (rng.next_u32() & 1) as u8).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::random_nonzero;
    use crate::simnet::{Delay, Position};
    use ark_ec::PrimeGroup;

    fn keys(seed: u64) -> (Scalar, G1) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let sk = random_nonzero(&mut rng);
        (sk, G1::generator() * sk)
    }

    #[test]
    fn aka_agreement_and_oracle() {
        let (sv, pv) = keys(1);
        let (sp, pp) = keys(2);
        let v = aka_derive(&sv, &pv, &pp, b"nonce", Role::Verifier, 16).unwrap();
        let p = aka_derive(&sp, &pp, &pv, b"nonce", Role::Prover, 16).unwrap();
        assert_eq!(v, p);
        assert_eq!(v.len(), 32);
        let other = aka_derive(&sv, &pv, &pp, b"nonce2", Role::Verifier, 16).unwrap();
        assert_ne!(v, other);
        // DH computed from both secrets directly.
        let shared = G1::generator() * (sv * sp);
        assert_eq!(v, session_bits(&shared, b"nonce", &pv, &pp, 16));
        assert_eq!(
            aka_derive(&sv, &pv, &G1::zero(), b"n", Role::Verifier, 4),
            Err(DbpError::IdentityKey)
        );
    }

    /// Honest answers for every challenge string match the 1-indexed
    /// `a_{2i + c_i - 1}`.
    #[test]
    fn index_mapping_exhaustive() {
        for n in 1..=4usize {
            let mut rng = ChaCha20Rng::seed_from_u64(n as u64);
            let ss = random_session(n, &mut rng);
            let pad = random_session(n, &mut rng);
            let a: Vec<u8> = ss.iter().zip(&pad).map(|(x, y)| x ^ y).collect();
            for cs in 0u32..(1 << n) {
                let mut p = HonestProver::new(ss.clone());
                p.initialize(&pad);
                for i in 1..=n {
                    let c = ((cs >> (i - 1)) & 1) as u8;
                    let one_indexed = 2 * i + c as usize - 1;
                    assert_eq!(p.respond(i - 1, c), Some(a[one_indexed - 1]));
                }
            }
        }
    }

    #[test]
    fn honest_prover_answers_once() {
        let mut p = HonestProver::new(vec![0, 1, 1, 0]);
        p.initialize(&[0, 0, 0, 0]);
        assert_eq!(p.respond(0, 1), Some(1));
        assert_eq!(p.respond(0, 0), None);
        assert_eq!(p.respond(5, 0), None);
    }

    #[test]
    fn pre_ask_enumeration_n4() {
        let n = 4;
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let ss = random_session(n, &mut rng);
        let mut wins = 0u32;
        let mut total = 0u32;
        for pre in 0u32..16 {
            for guess in 0u32..16 {
                for chal in 0u32..16 {
                    let bits = |v: u32| (0..n).map(|i| ((v >> i) & 1) as u8).collect::<Vec<_>>();
                    let mut adv = PreAsk::scripted(HonestProver::new(ss.clone()), bits(pre), bits(guess));
                    let mut s = DbpSession::new(ss.clone(), DbpConfig::new(n, 10.0), 0).unwrap();
                    adv.initialize(&s.pad.clone());
                    let c = bits(chal);
                    let ok = (0..n).all(|i| adv.respond(i, c[i]) == Some(s.expected(i, c[i])));
                    let _ = s.challenge();
                    wins += ok as u32;
                    total += 1;
                }
            }
        }
        assert_eq!(total, 4096);
        // 81/256 of 4096.
        assert_eq!(wins, 1296);
    }

    #[test]
    fn guess_rate_about_half() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let trials = 100_000;
        let mut ok = 0;
        for t in 0..trials {
            let ss = random_session(1, &mut rng);
            let mut s = DbpSession::new(ss, DbpConfig::new(1, 10.0), t).unwrap();
            let mut g = Guess::new(t ^ 0xabc);
            ok += dbp_run_direct(&mut s, &mut g, 1.0).0 as u32;
        }
        let p = ok as f64 / trials as f64;
        let sigma = (0.25f64 / trials as f64).sqrt();
        assert!((p - 0.5).abs() <= 3.0 * sigma, "rate {p}");
    }

    #[test]
    fn pre_ask_rate_three_quarters_per_round() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let trials = 100_000u64;
        let mut ok = 0;
        for t in 0..trials {
            let ss = random_session(1, &mut rng);
            let mut s = DbpSession::new(ss.clone(), DbpConfig::new(1, 10.0), t).unwrap();
            let mut adv = PreAsk::new(HonestProver::new(ss), t.wrapping_mul(31));
            ok += dbp_run_direct(&mut s, &mut adv, 1.0).0 as u32;
        }
        let p = ok as f64 / trials as f64;
        let sigma = (0.75 * 0.25 / trials as f64).sqrt();
        assert!((p - 0.75).abs() <= 3.0 * sigma, "rate {p}");
    }

    fn sim(distance: f64) -> (Network, EndpointId, EndpointId) {
        let mut net = Network::new(1);
        let v = net.add_endpoint("v", Position::new(0.0, 0.0), Delay::fixed(1000), 1_000.0).unwrap();
        let p = net.add_endpoint("p", Position::new(distance, 0.0), Delay::fixed(1000), 1_000.0).unwrap();
        (net, v, p)
    }

    #[test]
    fn honest_close_accepts_far_rejects() {
        let th = 50.0;
        for (d, expect) in [(10.0, true), (49.0, true), (120.0, false)] {
            let (mut net, v, p) = sim(d);
            let mut rng = ChaCha20Rng::seed_from_u64(5);
            let ss = random_session(16, &mut rng);
            let mut s = DbpSession::new(ss.clone(), DbpConfig::new(16, th), 6).unwrap();
            let mut prover = HonestProver::new(ss);
            let (ok, t) = dbp_run(&mut net, v, p, &mut s, &mut prover);
            assert_eq!(ok, expect, "distance {d}");
            assert_eq!(t.rounds.len(), 16);
            assert!(t.rounds.iter().all(|r| r.response.is_some()));
            assert_eq!(t.to_ndjson().lines().count(), 16);
        }
    }

    #[test]
    fn distance_fraud_fails_every_round() {
        let th = 50.0;
        let (mut net, v, p) = sim(2.0 * th);
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let ss = random_session(8, &mut rng);
        let mut s = DbpSession::new(ss.clone(), DbpConfig::new(8, th), 8).unwrap();
        let mut fraud: DistanceFraud = HonestProver::new(ss);
        let (ok, t) = dbp_run(&mut net, v, p, &mut s, &mut fraud);
        assert!(!ok);
        assert!(t.rounds.iter().all(|r| !r.pass));
        // Answers were right; only timing failed.
        assert!(t.rounds.iter().all(|r| r.response == Some(s.expected(r.round, r.challenge))));
    }

    #[test]
    fn hijack_and_strategy_parsing() {
        assert_eq!("pre_ask".parse::<AdversaryKind>(), Ok(AdversaryKind::PreAsk));
        assert!("bogus".parse::<AdversaryKind>().is_err());
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let trials = 20_000u64;
        let mut ok = 0;
        for t in 0..trials {
            let ss = random_session(1, &mut rng);
            let mut s = DbpSession::new(ss.clone(), DbpConfig::new(1, 10.0), t).unwrap();
            let mut adv = adversary_strategy(AdversaryKind::DistanceHijack, &ss, t);
            ok += dbp_run_direct(&mut s, adv.as_mut(), 1.0).0 as u32;
        }
        let p = ok as f64 / trials as f64;
        assert!((p - 0.5).abs() < 3.0 * (0.25 / trials as f64).sqrt());
    }

    #[test]
    fn timer_bound_conversion() {
        let cfg = DbpConfig { rounds: 1, threshold_m: 299_792_458.0 / 2.0, allowance_ns: 0 };
        assert!((cfg.timer_bound_ns() - 1e9).abs() < 1e-6);
    }
}
