//! Seeded adversarial trials against the protocol and its primitives.
//!
//! Every kind reports an acceptance rate with a Wilson interval. Rejection
//! attacks expect zero acceptances; the distance-bounding kinds compare the
//! rate with its analytic value.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use num_bigint_dig::BigUint;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use slap_core::dac::cred_prove;
use slap_core::dbp::{dbp_run_direct, random_session, DbpConfig, DbpSession, HonestProver, PreAsk, Responder};
use slap_core::group::{hash_to_g1, random_below, random_nonzero};
use slap_core::gsig::{gs_keygen, gs_sign, GroupSignature};
use slap_core::protocol::{
    notify_representative, verify_location_proof, ClientSession, Deployment, LocationProofAp, NotifyRequest,
    PolEvidence, ProtocolError,
};
use slap_core::setcommit::{Attribute, AttributeRole, AttributeSet};
use slap_core::simnet::{Interposition, LinkPattern, Position};
use slap_core::tlp::{puzzle_solve, PuzzleSolution, TOY_MODULUS_BITS};

use crate::fixture::{usage_report, world, ALICE, AP, BAND, MALLORY, PSD};
use crate::stats::{binomial_sigma, median, wilson, Interval};
use crate::CliError;

const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttackKind {
    Mafia,
    DistanceFraud,
    RelayPol,
    ForgeGs,
    StaleTs,
    Coverage,
    ReplayNym,
    WrongSolution,
    WrongSubset,
    DosFlood,
    Unlink,
}

impl AttackKind {
    pub const ALL: [AttackKind; 11] = [
        AttackKind::Mafia,
        AttackKind::DistanceFraud,
        AttackKind::RelayPol,
        AttackKind::ForgeGs,
        AttackKind::StaleTs,
        AttackKind::Coverage,
        AttackKind::ReplayNym,
        AttackKind::WrongSolution,
        AttackKind::WrongSubset,
        AttackKind::DosFlood,
        AttackKind::Unlink,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Mafia => "mafia",
            AttackKind::DistanceFraud => "distance_fraud",
            AttackKind::RelayPol => "relay_pol",
            AttackKind::ForgeGs => "forge_gs",
            AttackKind::StaleTs => "stale_ts",
            AttackKind::Coverage => "coverage",
            AttackKind::ReplayNym => "replay_nym",
            AttackKind::WrongSolution => "wrong_solution",
            AttackKind::WrongSubset => "wrong_subset",
            AttackKind::DosFlood => "dos_flood",
            AttackKind::Unlink => "unlink",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.replace('-', "_");
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = AttackKind::ALL.iter().map(|k| k.name()).collect();
                format!("unknown attack `{s}`; expected one of {}", names.join(", "))
            })
    }
}

#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub trials: u64,
    pub seed: u64,
    /// Independent deployments the trials are split across.
    pub chunks: usize,
    /// Rounds for the distance-bounding kinds.
    pub rounds: Vec<usize>,
    /// Difficulty ladder for `dos_flood`.
    pub kappas: Vec<u64>,
    pub tlp_bits: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            trials: 1000,
            seed: 1,
            chunks: 4,
            rounds: vec![4, 8, 16],
            kappas: vec![1_000, 15_000, 50_000, 100_000],
            tlp_bits: TOY_MODULUS_BITS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackReport {
    pub kind: String,
    pub label: String,
    pub trials: u64,
    pub accepted: u64,
    pub rate: f64,
    pub ci95: Interval,
    /// Analytic acceptance rate.
    pub expected: f64,
    pub sigma: f64,
    pub within_3sigma: bool,
    /// Rejection counts by reason.
    pub rejections: BTreeMap<String, u64>,
    pub detail: serde_json::Value,
    pub pass: bool,
}

impl AttackReport {
    fn new(kind: AttackKind, label: String, tally: Tally, expected: f64) -> Self {
        let n = tally.trials;
        let rate = if n == 0 { 0.0 } else { tally.accepted as f64 / n as f64 };
        let sigma = binomial_sigma(expected, n.max(1));
        let within_3sigma = if sigma == 0.0 {
            tally.accepted as f64 == expected * n as f64
        } else {
            (rate - expected).abs() <= 3.0 * sigma
        };
        AttackReport {
            kind: kind.name().to_string(),
            label,
            trials: n,
            accepted: tally.accepted,
            rate,
            ci95: wilson(tally.accepted, n, Z95),
            expected,
            sigma,
            within_3sigma,
            rejections: tally.rejections,
            detail: json!({}),
            pass: within_3sigma && n > 0,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{:<16} {:>8} trials  accepted {:>6}  rate {:.5} [{:.5}, {:.5}]  expected {:.5}  {}",
            self.label,
            self.trials,
            self.accepted,
            self.rate,
            self.ci95.lo,
            self.ci95.hi,
            self.expected,
            if self.pass { "ok" } else { "FAIL" }
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Tally {
    trials: u64,
    accepted: u64,
    rejections: BTreeMap<String, u64>,
}

impl Tally {
    fn record(&mut self, outcome: Result<(), String>) {
        self.trials += 1;
        match outcome {
            Ok(()) => self.accepted += 1,
            Err(r) => *self.rejections.entry(r).or_default() += 1,
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        self.trials += other.trials;
        self.accepted += other.accepted;
        for (k, v) in other.rejections {
            *self.rejections.entry(k).or_default() += v;
        }
        self
    }
}

/// Variant name of a protocol error, used as a rejection reason.
fn reason(e: &ProtocolError) -> String {
    let s = format!("{e:?}");
    s.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("").to_string()
}

fn protocol<T>(r: Result<T, ProtocolError>) -> Result<(), String> {
    r.map(|_| ()).map_err(|e| reason(&e))
}

fn internal(e: impl fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn stream_seed(seed: u64, kind: AttackKind, chunk: usize) -> u64 {
    let tag = kind.name().bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    });
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ tag ^ (chunk as u64).rotate_left(32)
}

/// Splits `trials` over `cfg.chunks` independent workers and merges the
/// tallies in chunk order.
fn chunked<F>(cfg: &AttackConfig, kind: AttackKind, work: F) -> Result<Tally, CliError>
where
    F: Fn(u64, u64) -> Result<Tally, CliError> + Sync,
{
    let chunks = cfg.chunks.max(1) as u64;
    let results: Vec<Result<Tally, CliError>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let n = cfg.trials / chunks + u64::from(c < cfg.trials % chunks);
            work(stream_seed(cfg.seed, kind, c as usize), n)
        })
        .collect();
    results
        .into_iter()
        .try_fold(Tally::default(), |acc, r| Ok(acc.merge(r?)))
}

/// An honest proof of location for alice.
fn honest_pol(d: &mut Deployment) -> Result<(ClientSession, LocationProofAp), CliError> {
    let mut s = d.begin_session(ALICE);
    d.pol_ap(ALICE, AP, &mut s).map_err(internal)?;
    match &s.evidence {
        Some(PolEvidence::Ap(phi)) => {
            let phi = phi.clone();
            Ok((s, phi))
        }
        _ => Err(internal("honest proof of location missing")),
    }
}

/// Runs one attack kind.
pub fn run_attack(kind: AttackKind, cfg: &AttackConfig) -> Result<Vec<AttackReport>, CliError> {
    match kind {
        AttackKind::Mafia => mafia(cfg),
        AttackKind::DistanceFraud => distance_fraud(cfg),
        AttackKind::DosFlood => dos_flood(cfg).map(|r| vec![r]),
        AttackKind::Unlink => unlink(cfg).map(|r| vec![r]),
        _ => {
            let tally = match kind {
                AttackKind::RelayPol => relay_pol(cfg)?,
                AttackKind::ForgeGs => forge_gs(cfg)?,
                AttackKind::StaleTs => stale_ts(cfg)?,
                AttackKind::Coverage => coverage(cfg)?,
                AttackKind::ReplayNym => replay_nym(cfg)?,
                AttackKind::WrongSolution => wrong_solution(cfg)?,
                AttackKind::WrongSubset => wrong_subset(cfg)?,
                _ => unreachable!("handled above"),
            };
            Ok(vec![AttackReport::new(kind, kind.name().to_string(), tally, 0.0)])
        }
    }
}

/// Pre-ask mafia fraud at 5 m from the verifier, for each round count.
/// Four rounds are also enumerated exhaustively.
fn mafia(cfg: &AttackConfig) -> Result<Vec<AttackReport>, CliError> {
    let mut out = Vec::new();
    for &n in &cfg.rounds {
        let tally = chunked(cfg, AttackKind::Mafia, |seed, trials| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed ^ n as u64);
            let mut t = Tally::default();
            for _ in 0..trials {
                let ss = random_session(n, &mut rng);
                let mut s = DbpSession::new(ss.clone(), DbpConfig::new(n, 50.0), rng.next_u64()).map_err(internal)?;
                let mut adv = PreAsk::new(HonestProver::new(ss), rng.next_u64());
                let (ok, tr) = dbp_run_direct(&mut s, &mut adv, 5.0);
                t.record(if ok {
                    Ok(())
                } else {
                    let bad = tr.rounds.iter().filter(|r| !r.pass).count();
                    Err(if bad == 1 { "one-wrong-round" } else { "several-wrong-rounds" }.to_string())
                });
            }
            Ok(t)
        })?;
        let mut r = AttackReport::new(AttackKind::Mafia, format!("mafia n={n}"), tally, 0.75f64.powi(n as i32));
        if n <= 4 {
            let (wins, total) = mafia_enumeration(n)?;
            r.detail = json!({ "exhaustive": { "accepted": wins, "cases": total } });
            r.pass &= wins * 4u64.pow(n as u32) == total * 3u64.pow(n as u32);
        }
        out.push(r);
    }
    Ok(out)
}

/// Counts the (pre-challenge, guess, challenge) triples a pre-asking
/// attacker wins, over all of them, with a fixed session key and pad.
pub fn mafia_enumeration(n: usize) -> Result<(u64, u64), CliError> {
    let mut rng = ChaCha20Rng::seed_from_u64(n as u64);
    let ss = random_session(n, &mut rng);
    let bits = |v: u32| (0..n).map(|i| ((v >> i) & 1) as u8).collect::<Vec<_>>();
    let s = DbpSession::new(ss.clone(), DbpConfig::new(n, 50.0), 0).map_err(internal)?;
    let space = 1u32 << n;
    let mut wins = 0u64;
    for pre in 0..space {
        for guess in 0..space {
            for chal in 0..space {
                let mut adv = PreAsk::scripted(HonestProver::new(ss.clone()), bits(pre), bits(guess));
                adv.initialize(s.pad());
                let c = bits(chal);
                if (0..n).all(|i| adv.respond(i, c[i]) == Some(s.expected(i, c[i]))) {
                    wins += 1;
                }
            }
        }
    }
    Ok((wins, u64::from(space).pow(3)))
}

/// An honest key holder at two or more thresholds away, answering with no
/// processing delay.
fn distance_fraud(cfg: &AttackConfig) -> Result<Vec<AttackReport>, CliError> {
    let th = 50.0;
    let mut out = Vec::new();
    for &n in &cfg.rounds {
        let tally = chunked(cfg, AttackKind::DistanceFraud, |seed, trials| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed ^ n as u64);
            let mut t = Tally::default();
            for _ in 0..trials {
                let ss = random_session(n, &mut rng);
                let mut s = DbpSession::new(ss.clone(), DbpConfig::new(n, th), rng.next_u64()).map_err(internal)?;
                let distance = rng.gen_range(2.0 * th..10.0 * th);
                let (ok, tr) = dbp_run_direct(&mut s, &mut HonestProver::new(ss), distance);
                let late = tr.rounds.iter().filter(|r| !r.pass).count();
                t.record(if ok { Ok(()) } else { Err(format!("late-rounds-{late}-of-{n}")) });
            }
            Ok(t)
        })?;
        out.push(AttackReport::new(AttackKind::DistanceFraud, format!("distance_fraud n={n}"), tally, 0.0));
    }
    Ok(out)
}

/// Ranging relayed through a midpoint with 1 to 20 µs added per leg.
fn relay_pol(cfg: &AttackConfig) -> Result<Tally, CliError> {
    chunked(cfg, AttackKind::RelayPol, |seed, trials| {
        let mut d = world(seed, cfg.tlp_bits)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (c, a) = (d.holder_endpoint(ALICE), d.ap_endpoint(AP));
        let via = Position::new(525.0, 500.0);
        let mut t = Tally::default();
        for _ in 0..trials {
            let extra_ns = rng.gen_range(1_000..=20_000);
            for (src, dst, kind) in [(a, c, "ranging-ping"), (c, a, "ranging-pong")] {
                d.net.interpose(
                    LinkPattern {
                        kind: Some(kind.into()),
                        ..LinkPattern::link(src, dst)
                    },
                    Interposition::Relay { via, extra_ns },
                );
            }
            let mut s = d.begin_session(ALICE);
            t.record(protocol(d.pol_ap(ALICE, AP, &mut s)));
            d.net.remove_interposers();
        }
        Ok(t)
    })
}

/// Location proofs that were never issued by a registered AP, checked the
/// way clients and servers check them.
fn forge_gs(cfg: &AttackConfig) -> Result<Tally, CliError> {
    chunked(cfg, AttackKind::ForgeGs, |seed, trials| {
        let mut d = world(seed, cfg.tlp_bits)?;
        let (_, phi) = honest_pol(&mut d)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut t = Tally::default();
        for i in 0..trials {
            let mut f = phi.clone();
            let label = match i % 4 {
                0 => {
                    let mut seed_bytes = [0u8; 32];
                    rng.fill_bytes(&mut seed_bytes);
                    f.sigma = GroupSignature {
                        a: hash_to_g1(b"slap/attack/forge", &seed_bytes),
                        e: random_nonzero(&mut rng),
                    };
                    "random-signature"
                }
                1 => {
                    match rng.gen_range(0..5) {
                        0 => f.lx += rng.gen_range(1.0..500.0),
                        1 => f.ly -= rng.gen_range(1.0..500.0),
                        2 => f.ts += rng.gen_range(1..1_000),
                        3 => f.nym = d.holders[MALLORY].fresh_nym(&mut rng).nym,
                        _ => f.cred_digest[rng.gen_range(0..32)] ^= 1 << rng.gen_range(0..8),
                    }
                    "altered-message"
                }
                2 => {
                    let rogue = gs_keygen(&mut rng);
                    f.sigma = gs_sign(&d.public.gs, &rogue.sk, &f.scalars(), &mut rng).map_err(internal)?;
                    "rogue-key"
                }
                _ => {
                    f.sigma.e += random_nonzero(&mut rng);
                    "shifted-exponent"
                }
            };
            t.record(if verify_location_proof(&d.public, &f) {
                Ok(())
            } else {
                Err(label.to_string())
            });
        }
        Ok(t)
    })
}

/// Timestamps outside the freshness window, in either direction.
fn stale_ts(cfg: &AttackConfig) -> Result<Tally, CliError> {
    chunked(cfg, AttackKind::StaleTs, |seed, trials| {
        let mut d = world(seed, cfg.tlp_bits)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let w = d.config.freshness_s;
        let mut t = Tally::default();
        for _ in 0..trials {
            let mut s = d.begin_session(ALICE);
            let off = w + 1 + rng.gen_range(0..10 * w);
            s.ts = if rng.gen() { s.ts - off } else { s.ts + off };
            t.record(protocol(d.pol_ap(ALICE, AP, &mut s)));
        }
        Ok(t)
    })
}

/// Claims placed outside the AP's coverage disc.
fn coverage(cfg: &AttackConfig) -> Result<Tally, CliError> {
    chunked(cfg, AttackKind::Coverage, |seed, trials| {
        let mut d = world(seed, cfg.tlp_bits)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (centre, radius) = (d.aps[AP].position(), d.aps[AP].spec.coverage_m);
        let mut t = Tally::default();
        for _ in 0..trials {
            let mut s = d.begin_session(ALICE);
            let r = rng.gen_range(radius + 1.0..5.0 * radius);
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            s.lx = centre.x + r * theta.cos();
            s.ly = centre.y + r * theta.sin();
            t.record(protocol(d.pol_ap(ALICE, AP, &mut s)));
        }
        Ok(t)
    })
}

/// Alice's Φ presented by mallory, as is or with mallory's pseudonym
/// written into it.
fn replay_nym(cfg: &AttackConfig) -> Result<Tally, CliError> {
    chunked(cfg, AttackKind::ReplayNym, |seed, trials| {
        let mut d = world(seed, cfg.tlp_bits)?;
        let (sa, phi) = honest_pol(&mut d)?;
        let mut t = Tally::default();
        for i in 0..trials {
            let mut sm = d.begin_session(MALLORY);
            sm.lx = sa.lx;
            sm.ly = sa.ly;
            sm.ts = sa.ts;
            let mut p = phi.clone();
            if i % 2 == 1 {
                p.nym = sm.nym.nym;
            }
            sm.evidence = Some(PolEvidence::Ap(p));
            t.record(protocol(d.query(MALLORY, PSD, &mut sm, BAND, PSD)));
        }
        Ok(t)
    })
}

/// Notifications carrying solutions that are not the puzzle's.
fn wrong_solution(cfg: &AttackConfig) -> Result<Tally, CliError> {
    chunked(cfg, AttackKind::WrongSolution, |seed, trials| {
        let mut d = world(seed, cfg.tlp_bits)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (mut s, _) = honest_pol(&mut d)?;
        d.query(ALICE, PSD, &mut s, BAND, PSD).map_err(internal)?;
        let resp = s.response.clone().ok_or_else(|| internal("no query response"))?;
        let payload = usage_report();
        let m = notify_representative(&resp, &payload);
        let (good, _) = puzzle_solve(&m, &resp.puzzle).map_err(internal)?;
        let digest = resp.puzzle.digest();
        let ctx = NotifyRequest::context(&resp.target, &digest, &resp.nonce, &payload);
        let disclosure = s.disclosure(&d.holders[ALICE]);
        let presentation = d.present(ALICE, &s, &disclosure, &ctx).map_err(internal)?;
        let n = resp.puzzle.n.clone();
        let one = BigUint::from(1u32);
        let mut t = Tally::default();
        for i in 0..trials {
            let mut sol = good.clone();
            match i % 3 {
                0 => {
                    while sol.c == good.c {
                        sol.c = random_below(&BigUint::default(), &n, &mut rng);
                    }
                }
                1 => sol.c = (&good.c + random_below(&one, &n, &mut rng)) % &n,
                _ => {
                    let other = random_below(&one, &n, &mut rng);
                    sol = puzzle_solve(&other, &resp.puzzle).map_err(internal)?.0;
                }
            }
            let req = NotifyRequest {
                puzzle_digest: digest,
                payload: payload.clone(),
                solution: sol,
                presentation: presentation.clone(),
            };
            t.record(protocol(d.submit_notify(ALICE, PSD, &req)));
        }
        Ok(t)
    })
}

fn set(attrs: Vec<Attribute>) -> Result<AttributeSet, CliError> {
    AttributeSet::new(attrs).map_err(internal)
}

/// Presentations claiming attributes the credential does not carry.
fn wrong_subset(cfg: &AttackConfig) -> Result<Tally, CliError> {
    const CLASSES: [&str; 4] = ["iot", "laptop", "base-station", "satellite"];
    chunked(cfg, AttackKind::WrongSubset, |seed, trials| {
        let mut d = world(seed, cfg.tlp_bits)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ctx = b"slap/attack/wrong-subset".to_vec();
        let s = d.begin_session(ALICE);
        let honest = d.present(ALICE, &s, &[d.holders[ALICE].class_disclosure()], &ctx).map_err(internal)?;
        let mut t = Tally::default();
        for i in 0..trials {
            let class = CLASSES[rng.gen_range(0..CLASSES.len())];
            let outcome = match i % 4 {
                0 => {
                    // An honest prover refuses to show a set it does not hold.
                    let claimed = set(vec![Attribute::new(AttributeRole::DeviceType, class)])?;
                    let h = &d.holders[ALICE];
                    let cred = h.credential.as_ref().ok_or_else(|| internal("alice unregistered"))?;
                    match cred_prove(&d.public.dac, &h.keys, &s.nym, cred, &[claimed], &ctx, &mut rng) {
                        Ok(p) if d.public.verify_credential(&p, &ctx) => Ok(()),
                        Ok(_) => Err("verify".to_string()),
                        Err(_) => Err("prover-refused".to_string()),
                    }
                }
                k => {
                    let mut p = honest.clone();
                    p.disclosed[0] = match k {
                        1 => set(vec![Attribute::new(AttributeRole::DeviceType, class)])?,
                        2 => set(vec![
                            Attribute::new(AttributeRole::DeviceType, "mobile"),
                            Attribute::new(AttributeRole::DeviceId, format!("id-{}", rng.next_u32())),
                        ])?,
                        _ => set(vec![
                            Attribute::new(AttributeRole::DeviceType, "mobile"),
                            Attribute::new(AttributeRole::Location, format!("{},{}", rng.gen_range(0..999), 0)),
                        ])?,
                    };
                    if d.public.verify_credential(&p, &ctx) {
                        Ok(())
                    } else {
                        Err("verify".to_string())
                    }
                }
            };
            t.record(outcome);
        }
        Ok(t)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DosLevel {
    pub kappa: u64,
    /// Squarings the solver performed for the accepted request.
    pub attacker_squarings: u64,
    pub attacker_solve_ns: u64,
    pub flood_requests: u64,
    pub flood_rejected: u64,
    /// Median server time per flood request.
    pub server_median_ns: f64,
    /// Server time for the solved request.
    pub server_accept_ns: u64,
}

/// Garbage-solution floods against puzzles of increasing difficulty.
/// `cfg.trials` is the flood size per level.
fn dos_flood(cfg: &AttackConfig) -> Result<AttackReport, CliError> {
    let mut d = world(stream_seed(cfg.seed, AttackKind::DosFlood, 0), cfg.tlp_bits)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let payload = usage_report();
    let mut tally = Tally::default();
    let mut targets = Vec::new();
    for &kappa in &cfg.kappas {
        d.servers[PSD].policy.floor = kappa;
        let (mut s, _) = honest_pol(&mut d)?;
        d.query(ALICE, PSD, &mut s, BAND, PSD).map_err(internal)?;
        let resp = s.response.clone().ok_or_else(|| internal("no query response"))?;
        let digest = resp.puzzle.digest();
        let ctx = NotifyRequest::context(&resp.target, &digest, &resp.nonce, &payload);
        let disclosure = s.disclosure(&d.holders[ALICE]);
        let presentation = d.present(ALICE, &s, &disclosure, &ctx).map_err(internal)?;
        let m = notify_representative(&resp, &payload);
        targets.push((s, resp, digest, presentation, m));
    }

    // Levels take turns so drift in machine load hits each one alike.
    let mut times = vec![Vec::new(); targets.len()];
    let mut rejected = vec![0u64; targets.len()];
    for _ in 0..cfg.trials {
        for (i, (_, resp, digest, presentation, m)) in targets.iter().enumerate() {
            let sol = PuzzleSolution {
                m: m.clone(),
                c: random_below(&BigUint::default(), &resp.puzzle.n, &mut rng),
            };
            let req = NotifyRequest {
                puzzle_digest: *digest,
                payload: payload.clone(),
                solution: sol,
                presentation: presentation.clone(),
            };
            let start = Instant::now();
            let r = d.servers[PSD].handle_notify(&d.public, &req);
            times[i].push(start.elapsed().as_nanos() as f64);
            if r.is_err() {
                rejected[i] += 1;
            }
            tally.record(protocol(r));
        }
    }

    let mut levels = Vec::new();
    for (i, (s, resp, _, _, m)) in targets.iter().enumerate() {
        // The attacker's cost for a request that gets through.
        let start = Instant::now();
        let (_, trace) = puzzle_solve(m, &resp.puzzle).map_err(internal)?;
        let solve_ns = start.elapsed().as_nanos() as u64;
        let out = d.notify(ALICE, s, &payload).map_err(internal)?;
        levels.push(DosLevel {
            kappa: resp.puzzle.kappa,
            attacker_squarings: trace.squarings.min(out.squarings),
            attacker_solve_ns: solve_ns,
            flood_requests: cfg.trials,
            flood_rejected: rejected[i],
            server_median_ns: if times[i].is_empty() { 0.0 } else { median(&times[i]) },
            server_accept_ns: out.server_cost.total_ns,
        });
    }
    let medians: Vec<f64> = levels.iter().map(|l| l.server_median_ns).filter(|&m| m > 0.0).collect();
    let ratio = if medians.is_empty() {
        1.0
    } else {
        medians.iter().copied().fold(f64::MIN, f64::max) / medians.iter().copied().fold(f64::MAX, f64::min)
    };
    let work_ok = levels.iter().all(|l| l.attacker_squarings >= l.kappa && l.kappa >= 1);
    let mut r = AttackReport::new(AttackKind::DosFlood, "dos_flood".into(), tally, 0.0);
    r.pass &= work_ok && ratio <= 2.0 && !levels.is_empty();
    r.detail = json!({ "levels": levels, "server_cost_ratio": ratio, "attacker_work_ok": work_ok });
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnlinkOutcome {
    pub presentations: u64,
    pub verified: u64,
    pub encodings: u64,
    pub repeated_encodings: u64,
    pub pairs: u64,
    pub exact_links: u64,
    pub linker_correct: u64,
    pub linker_accuracy: f64,
    /// Chance level of the pairing task, `1/pairs`.
    pub chance: f64,
    pub bound: f64,
}

/// `cfg.trials` presentations of one credential under fresh pseudonyms.
/// The linker then tries to re-pair the shuffled second half with the first
/// by exact encoding matches, guessing when nothing matches.
fn unlink(cfg: &AttackConfig) -> Result<AttackReport, CliError> {
    let mut d = world(stream_seed(cfg.seed, AttackKind::Unlink, 0), cfg.tlp_bits)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let ctx = b"slap/attack/unlink".to_vec();
    let disclosure = [d.holders[ALICE].class_disclosure()];
    let mut encodings = Vec::new();
    let mut tally = Tally::default();
    for _ in 0..cfg.trials {
        let s = d.begin_session(ALICE);
        let p = d.present(ALICE, &s, &disclosure, &ctx).map_err(internal)?;
        let ok = d.public.verify_credential(&p, &ctx);
        tally.record(if ok { Ok(()) } else { Err("verify".into()) });
        encodings.push(p.group_element_encodings());
    }
    let total: usize = encodings.iter().map(Vec::len).sum();
    let distinct: HashSet<&Vec<u8>> = encodings.iter().flatten().collect();
    let repeated = (total - distinct.len()) as u64;

    let half = encodings.len() / 2;
    let (first, second) = encodings.split_at(half);
    let mut order: Vec<usize> = (0..half).collect();
    order.shuffle(&mut rng);
    let shuffled: Vec<(usize, HashSet<&Vec<u8>>)> =
        order.iter().map(|&j| (j, second[j].iter().collect())).collect();
    let mut free: Vec<usize> = (0..half).collect();
    let (mut correct, mut exact) = (0u64, 0u64);
    for (i, enc) in first.iter().enumerate() {
        let hit = free
            .iter()
            .position(|&k| enc.iter().any(|e| shuffled[k].1.contains(e)));
        let pick = match hit {
            Some(p) => {
                exact += 1;
                p
            }
            None if free.is_empty() => break,
            None => rng.gen_range(0..free.len()),
        };
        if shuffled[free.swap_remove(pick)].0 == i {
            correct += 1;
        }
    }
    let pairs = half as u64;
    let chance = 1.0 / pairs.max(1) as f64;
    // A random matching has Poisson(1) fixed points; five is a 4e-3 tail.
    let bound = 5.0 * chance;
    let accuracy = correct as f64 * chance;
    let outcome = UnlinkOutcome {
        presentations: cfg.trials,
        verified: tally.accepted,
        encodings: total as u64,
        repeated_encodings: repeated,
        pairs,
        exact_links: exact,
        linker_correct: correct,
        linker_accuracy: accuracy,
        chance,
        bound,
    };
    let mut r = AttackReport::new(AttackKind::Unlink, "unlink".into(), tally, 1.0);
    r.pass &= repeated == 0 && exact == 0 && accuracy <= bound;
    r.detail = serde_json::to_value(&outcome).map_err(internal)?;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(trials: u64) -> AttackConfig {
        AttackConfig {
            trials,
            chunks: 2,
            ..Default::default()
        }
    }

    #[test]
    fn kinds_round_trip_through_names() {
        for k in AttackKind::ALL {
            assert_eq!(k.name().parse::<AttackKind>().unwrap(), k);
        }
        assert_eq!("forge-gs".parse::<AttackKind>().unwrap(), AttackKind::ForgeGs);
        assert!("teleport".parse::<AttackKind>().is_err());
    }

    #[test]
    fn mafia_enumeration_matches_three_quarters_power() {
        assert_eq!(mafia_enumeration(1).unwrap(), (6, 8));
        assert_eq!(mafia_enumeration(2).unwrap(), (36, 64));
    }

    #[test]
    fn chunking_covers_every_trial_deterministically() {
        let cfg = AttackConfig {
            trials: 1001,
            chunks: 3,
            rounds: vec![2],
            ..Default::default()
        };
        let a = run_attack(AttackKind::Mafia, &cfg).unwrap();
        let b = run_attack(AttackKind::Mafia, &cfg).unwrap();
        assert_eq!(a[0].trials, 1001);
        assert_eq!(a, b);
    }

    #[test]
    fn distance_fraud_never_passes() {
        let cfg = AttackConfig {
            rounds: vec![1, 4],
            ..small(500)
        };
        for r in run_attack(AttackKind::DistanceFraud, &cfg).unwrap() {
            assert_eq!(r.accepted, 0);
            assert!(r.pass);
        }
    }

    #[test]
    fn protocol_attacks_are_rejected() {
        for kind in [
            AttackKind::ForgeGs,
            AttackKind::StaleTs,
            AttackKind::ReplayNym,
            AttackKind::WrongSolution,
            AttackKind::WrongSubset,
        ] {
            let r = &run_attack(kind, &small(8)).unwrap()[0];
            assert_eq!(r.trials, 8, "{kind}");
            assert_eq!(r.accepted, 0, "{kind}: {:?}", r.rejections);
            assert!(r.pass);
        }
    }

    #[test]
    fn replay_reasons_cover_both_variants() {
        let r = &run_attack(AttackKind::ReplayNym, &small(4)).unwrap()[0];
        assert_eq!(r.rejections.get("NymMismatch"), Some(&2), "{:?}", r.rejections);
        assert_eq!(r.rejections.get("PolRejected"), Some(&2), "{:?}", r.rejections);
    }

    #[test]
    fn small_dos_ladder_reports_work() {
        let cfg = AttackConfig {
            trials: 3,
            kappas: vec![10, 1_000],
            ..Default::default()
        };
        let r = dos_flood(&cfg).unwrap();
        assert_eq!(r.accepted, 0);
        let levels = r.detail["levels"].as_array().unwrap();
        assert_eq!(levels[1]["kappa"], 1_000);
        assert!(levels[1]["attacker_squarings"].as_u64().unwrap() >= 1_000);
    }

    #[test]
    fn unlink_small_sample() {
        let r = unlink(&small(20)).unwrap();
        assert_eq!(r.accepted, 20);
        assert_eq!(r.detail["repeated_encodings"], 0);
        assert_eq!(r.detail["exact_links"], 0);
    }
}
