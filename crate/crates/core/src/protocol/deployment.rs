//! A deployment: every entity placed on one simulated network, with the
//! phases driven message by message.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::dac::{
    cred_prove, issue_cred, issue_request, receive_offer, Credential, CredentialOffer,
    IssueChallenge, IssueRequest, IssuerSession, Presentation, NONCE_BYTES, NO_DELEGATION,
};
use crate::dbp::{aka_derive, dbp_run, DbpConfig, DbpSession, DbpTranscript, HonestProver, Role};
use crate::group::{Canonical, G1};
use crate::ranging::synth_rss;
use crate::simnet::{Channel, Delay, EndpointId, Network, Position, SimEvent, TraceRecord};
use crate::store::{synth_generate, Query, Region, SpectrumRecord};
use crate::tlp::{puzzle_solve, DifficultyPolicy, ThreatLevel, TOY_MODULUS_BITS};
use crate::wire::{Reader, Writer};

use super::entities::{
    fcc_setup, notify_representative, verify_location_proof, AccessPoint, ApSpec, ClientSession,
    Fcc, Holder, HolderSpec, NotifyEffect, PublicMaterial, Server, ServerCost, ServerMode,
    ServerSpec,
};
use super::messages::{
    location_attributes, tags, LocationProofAp, NotifyRequest, PolApRequest, PolEvidence,
    PolNdRequest, QueryRequest, QueryResponse,
};
use super::{ProtocolError, DEFAULT_FRESHNESS_S};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreConfig {
    #[serde(default = "default_cells")]
    pub cells: u32,
    #[serde(default = "default_bands")]
    pub bands: Vec<u16>,
    #[serde(default = "default_windows")]
    pub windows: u16,
    #[serde(default = "default_density")]
    pub density: f64,
}

fn default_cells() -> u32 {
    20
}
fn default_bands() -> Vec<u16> {
    vec![3550, 3560, 3570]
}
fn default_windows() -> u16 {
    crate::store::DEFAULT_WINDOWS
}
fn default_density() -> f64 {
    0.6
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            cells: default_cells(),
            bands: default_bands(),
            windows: default_windows(),
            density: default_density(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeploymentConfig {
    pub seed: u64,
    pub security_bits: u32,
    pub max_cardinality: usize,
    /// Wall-clock seconds at simulated time zero.
    pub epoch_s: u64,
    pub freshness_s: u64,
    pub tlp_bits: usize,
    pub threat: ThreatLevel,
    pub policy: DifficultyPolicy,
    pub dbp_rounds: usize,
    pub dbp_threshold_m: f64,
    pub dbp_allowance_ns: u64,
    pub beacon_window_ns: u64,
    /// Advance the simulated clock by measured crypto time.
    pub realistic: bool,
    pub regions: Vec<String>,
    pub store: StoreConfig,
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        DeploymentConfig {
            seed: 1,
            security_bits: 100,
            max_cardinality: 8,
            epoch_s: 1_700_000_000,
            freshness_s: DEFAULT_FRESHNESS_S,
            tlp_bits: TOY_MODULUS_BITS,
            threat: ThreatLevel::Low,
            policy: DifficultyPolicy::default(),
            dbp_rounds: 16,
            dbp_threshold_m: 50.0,
            dbp_allowance_ns: crate::dbp::DEFAULT_ALLOWANCE_NS,
            beacon_window_ns: 200_000_000,
            realistic: false,
            regions: vec!["region-1".into()],
            store: StoreConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Registration,
    PolAp,
    PolNd,
    Query,
    Notify,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Registration => "registration",
            Phase::PolAp => "pol-ap",
            Phase::PolNd => "pol-nd",
            Phase::Query => "query",
            Phase::Notify => "notify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub phase: Phase,
    #[serde(flatten)]
    pub trace: TraceRecord,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub runs: u64,
    pub messages: u64,
    pub bytes: u64,
    pub sim_ns: u64,
    /// Wall-clock crypto time; excluded from determinism.
    pub crypto_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolOutcome {
    pub path: Phase,
    pub witness: String,
    pub delta_m: Option<f64>,
    pub dbp_rounds_passed: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub record: SpectrumRecord,
    pub kappa: u64,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotifyOutcome {
    pub squarings: u64,
    pub server_cost: ServerCost,
    pub stored: Option<SpectrumRecord>,
    pub token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub client: String,
    pub pol: PolOutcome,
    pub query: QueryOutcome,
    pub notify: NotifyOutcome,
}

pub struct Deployment {
    pub config: DeploymentConfig,
    pub net: Network,
    fcc: Fcc,
    fcc_ep: EndpointId,
    pub public: PublicMaterial,
    pub holders: Vec<Holder>,
    holder_ep: Vec<EndpointId>,
    pub aps: Vec<AccessPoint>,
    ap_ep: Vec<EndpointId>,
    pub servers: Vec<Server>,
    server_ep: Vec<EndpointId>,
    rng: ChaCha20Rng,
    log: Vec<MessageRecord>,
    stats: BTreeMap<Phase, PhaseStats>,
    /// Most recent distance-bounding transcript, for audit.
    pub last_dbp: Option<DbpTranscript>,
}

fn nonce<R: RngCore + ?Sized>(rng: &mut R) -> [u8; NONCE_BYTES] {
    let mut n = [0u8; NONCE_BYTES];
    rng.fill_bytes(&mut n);
    n
}

impl Deployment {
    pub fn new(config: DeploymentConfig) -> Result<Self, ProtocolError> {
        if config.dbp_rounds == 0 || config.dbp_threshold_m <= 0.0 {
            return Err(ProtocolError::Config("distance bounding needs rounds and a positive threshold".into()));
        }
        if !(0.0..=1.0).contains(&config.store.density) {
            return Err(ProtocolError::Config(format!("store density {} outside [0, 1]", config.store.density)));
        }
        let fcc = fcc_setup(config.seed, config.security_bits, config.max_cardinality, &config.regions)?;
        let public = fcc.public().clone();
        let mut net = Network::new(config.seed);
        let fcc_ep = net.add_endpoint("fcc", Position::new(0.0, 0.0), Delay::ZERO, 0.0)?;
        Ok(Deployment {
            rng: ChaCha20Rng::seed_from_u64(config.seed.wrapping_add(0x5eed)),
            config,
            net,
            fcc,
            fcc_ep,
            public,
            holders: Vec::new(),
            holder_ep: Vec::new(),
            aps: Vec::new(),
            ap_ep: Vec::new(),
            servers: Vec::new(),
            server_ep: Vec::new(),
            log: Vec::new(),
            stats: BTreeMap::new(),
            last_dbp: None,
        })
    }

    pub fn add_holder(&mut self, spec: HolderSpec) -> Result<usize, ProtocolError> {
        let ep = self.net.add_endpoint(&spec.name, Position::new(spec.x, spec.y), Delay::ZERO, spec.radio_range_m)?;
        self.holders.push(Holder::new(spec, &mut self.rng));
        self.holder_ep.push(ep);
        Ok(self.holders.len() - 1)
    }

    pub fn add_ap(&mut self, spec: ApSpec) -> Result<usize, ProtocolError> {
        let keys = self
            .fcc
            .region_keys(&spec.region)
            .ok_or_else(|| ProtocolError::Config(format!("unknown region `{}`", spec.region)))?;
        let ep = self.net.add_endpoint(&spec.name, Position::new(spec.x, spec.y), Delay::ZERO, spec.radio_range_m)?;
        let seed = self.rng.next_u64();
        self.aps.push(AccessPoint::new(spec, keys, self.config.beacon_window_ns, seed)?);
        self.ap_ep.push(ep);
        Ok(self.aps.len() - 1)
    }

    pub fn add_server(&mut self, spec: ServerSpec) -> Result<usize, ProtocolError> {
        let store = match spec.mode {
            ServerMode::Psd => {
                let sc = &self.config.store;
                let region = Region {
                    windows: sc.windows,
                    ..Region::square(sc.cells, sc.bands.clone())
                };
                Some(synth_generate(self.servers.len() as u32 + 1, region, sc.density, self.config.seed))
            }
            ServerMode::Crn => None,
        };
        let ep = self.net.add_endpoint(&spec.name, Position::new(spec.x, spec.y), Delay::ZERO, 0.0)?;
        self.servers.push(Server::new(
            spec,
            store,
            self.config.tlp_bits,
            self.config.threat,
            self.config.policy.clone(),
            self.config.freshness_s,
        )?);
        self.server_ep.push(ep);
        Ok(self.servers.len() - 1)
    }

    pub fn holder(&self, name: &str) -> Result<usize, ProtocolError> {
        self.holders
            .iter()
            .position(|h| h.spec.name == name)
            .ok_or_else(|| ProtocolError::Config(format!("unknown holder `{name}`")))
    }

    pub fn server(&self, name: &str) -> Result<usize, ProtocolError> {
        self.servers
            .iter()
            .position(|s| s.spec.name == name)
            .ok_or_else(|| ProtocolError::Config(format!("unknown server `{name}`")))
    }

    pub fn holder_endpoint(&self, h: usize) -> EndpointId {
        self.holder_ep[h]
    }

    pub fn ap_endpoint(&self, a: usize) -> EndpointId {
        self.ap_ep[a]
    }

    pub fn server_endpoint(&self, s: usize) -> EndpointId {
        self.server_ep[s]
    }

    /// Current timestamp in seconds.
    pub fn now_s(&self) -> u64 {
        self.config.epoch_s + self.net.now() / 1_000_000_000
    }

    pub fn messages(&self) -> &[MessageRecord] {
        &self.log
    }

    pub fn stats(&self) -> &BTreeMap<Phase, PhaseStats> {
        &self.stats
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    fn transmit(
        &mut self,
        src: EndpointId,
        dst: EndpointId,
        kind: &str,
        payload: Vec<u8>,
        channel: Channel,
    ) -> Result<SimEvent, ProtocolError> {
        self.net.send(src, dst, kind, payload, channel)?;
        Ok(self.net.await_message(dst, kind)?)
    }

    /// Runs `f`, charging its wall-clock time to `phase`.
    fn crypto<T>(&mut self, phase: Phase, f: impl FnOnce(&mut Self) -> T) -> T {
        let start = Instant::now();
        let out = f(self);
        let ns = start.elapsed().as_nanos() as u64;
        self.stats.entry(phase).or_default().crypto_ns += ns;
        if self.config.realistic {
            self.net.advance_by(ns);
        }
        out
    }

    /// Runs one phase, attributing messages and simulated time to it.
    fn phase<T>(
        &mut self,
        phase: Phase,
        f: impl FnOnce(&mut Self) -> Result<T, ProtocolError>,
    ) -> Result<T, ProtocolError> {
        let trace_start = self.net.trace().len();
        let t0 = self.net.now();
        let out = f(self);
        let new: Vec<TraceRecord> = self.net.trace()[trace_start..].to_vec();
        let s = self.stats.entry(phase).or_default();
        s.runs += 1;
        s.messages += new.len() as u64;
        s.bytes += new.iter().map(|r| r.size as u64).sum::<u64>();
        s.sim_ns += self.net.now() - t0;
        self.log.extend(new.into_iter().map(|trace| MessageRecord { phase, trace }));
        out
    }

    /// Interactive level-1 issuance between the FCC and a holder, over wired
    /// links.
    pub fn register_user(&mut self, h: usize) -> Result<(), ProtocolError> {
        self.phase(Phase::Registration, |d| {
            let (fcc, user) = (d.fcc_ep, d.holder_ep[h]);
            let ch = d.crypto(Phase::Registration, |d| d.fcc.challenge(&mut d.rng));
            let msg = Writer::with_tag(tags::REGISTER_CHALLENGE).raw(&ch.nonce).finish();
            let ev = d.transmit(fcc, user, "register-challenge", msg, Channel::Wired)?;
            let ch = IssueChallenge {
                nonce: Reader::tagged(&ev.payload, tags::REGISTER_CHALLENGE)?.fixed::<NONCE_BYTES>()?,
            };

            let req = d.crypto(Phase::Registration, |d| d.holders[h].registration_request(&ch, &mut d.rng));
            let attrs = d.holders[h].attributes();
            let msg = Writer::with_tag(tags::REGISTER_REQUEST)
                .field(&req.to_wire())
                .field(&attrs.to_wire())
                .finish();
            let ev = d.transmit(user, fcc, "register-request", msg, Channel::Wired)?;
            let mut r = Reader::tagged(&ev.payload, tags::REGISTER_REQUEST)?;
            let req = IssueRequest::from_wire(r.field()?)?;
            let attrs = crate::setcommit::AttributeSet::from_wire(r.field()?)?;
            r.finish()?;

            let offer = d
                .crypto(Phase::Registration, |d| d.fcc.issue(&req, &attrs, &mut d.rng))
                .map_err(ProtocolError::Registration)?;
            let msg = Writer::with_tag(tags::REGISTER_OFFER).field(&offer.to_wire()).finish();
            let ev = d.transmit(fcc, user, "register-offer", msg, Channel::Wired)?;
            let mut r = Reader::tagged(&ev.payload, tags::REGISTER_OFFER)?;
            let offer = CredentialOffer::from_wire(r.field()?)?;
            r.finish()?;
            d.crypto(Phase::Registration, |d| {
                let params = d.public.dac.clone();
                d.holders[h].accept_registration(&params, &offer, &mut d.rng).map(|_| ())
            })
            .map_err(ProtocolError::Registration)
        })
    }

    pub fn register_all(&mut self) -> Result<(), ProtocolError> {
        for h in 0..self.holders.len() {
            self.register_user(h)?;
        }
        Ok(())
    }

    /// A fresh session at the holder's true position and the current time.
    pub fn begin_session(&mut self, h: usize) -> ClientSession {
        let nym = self.holders[h].fresh_nym(&mut self.rng);
        let p = self.holders[h].position();
        ClientSession::new(nym, p.x, p.y, self.now_s())
    }

    fn prove(
        &mut self,
        phase: Phase,
        h: usize,
        session: &ClientSession,
        disclosed: &[crate::setcommit::AttributeSet],
        context: &[u8],
    ) -> Result<Presentation, ProtocolError> {
        self.crypto(phase, |d| {
            let holder = &d.holders[h];
            let cred = session
                .credential(holder)
                .ok_or_else(|| ProtocolError::Config(format!("`{}` is not registered", holder.spec.name)))?;
            Ok(cred_prove(&d.public.dac, &holder.keys, &session.nym, cred, disclosed, context, &mut d.rng)?)
        })
    }

    /// Proof of location from access point `a`.
    pub fn pol_ap(&mut self, h: usize, a: usize, session: &mut ClientSession) -> Result<PolOutcome, ProtocolError> {
        self.phase(Phase::PolAp, |d| {
            let (client, ap) = (d.holder_ep[h], d.ap_ep[a]);
            let token = d.aps[a].beacon.token(d.net.now());
            let msg = Writer::with_tag(tags::BEACON).raw(&token).finish();
            let ev = d.transmit(ap, client, "beacon", msg, Channel::Radio)?;
            let beacon = Reader::tagged(&ev.payload, tags::BEACON)?.fixed::<16>()?;

            // Client request: claimed location, time, beacon echo and presentation.
            let ap_name = d.aps[a].spec.name.clone();
            let ctx = PolApRequest::context(&ap_name, session.lx, session.ly, session.ts, &beacon);
            let disclosure = session.disclosure(&d.holders[h]);
            let presentation = d.prove(Phase::PolAp, h, session, &disclosure, &ctx)?;
            let req = PolApRequest {
                lx: session.lx,
                ly: session.ly,
                ts: session.ts,
                beacon,
                presentation,
            };
            let ev = d.transmit(client, ap, "pol-ap-request", req.to_wire(), Channel::Radio)?;
            let req = PolApRequest::from_wire(&ev.payload)?;

            // AP checks freshness, the beacon and the credential.
            let (now_ns, now_s, w) = (d.net.now(), d.now_s(), d.config.freshness_s);
            d.crypto(Phase::PolAp, |d| d.aps[a].check_request(&d.public, &req, now_ns, now_s, w))?;

            // One timed ping-pong, RSS from the last hop.
            let t_proc = d.aps[a].spec.env.t_proc_ns;
            let ping = Writer::with_tag(tags::RANGING_PING).finish();
            let sent = d.net.send_with_processing(ap, client, "ranging-ping", ping, Channel::Radio, t_proc)?;
            d.net.await_message(client, "ranging-ping")?;
            let pong = Writer::with_tag(tags::RANGING_PONG).finish();
            d.net.send_with_processing(client, ap, "ranging-pong", pong, Channel::Radio, t_proc)?;
            let back = d.net.await_message(ap, "ranging-pong")?;
            let rtt = back.deliver_at - (sent.departed_at - t_proc);
            let env = d.aps[a].spec.env;
            let rss = synth_rss(&env, back.last_hop.distance(&d.aps[a].position()), &mut d.rng);

            // Distance estimate and coverage test.
            let delta = d.aps[a].assess(rss, rtt, req.lx, req.ly)?;

            // AP signs Φ and returns it.
            let phi = d.crypto(Phase::PolAp, |d| d.aps[a].sign(&d.public, &req, &mut d.rng))?;
            let msg = Writer::with_tag(tags::POL_AP_RESPONSE).field(&phi.to_wire()).finish();
            let ev = d.transmit(ap, client, "pol-ap-response", msg, Channel::Radio)?;
            let mut r = Reader::tagged(&ev.payload, tags::POL_AP_RESPONSE)?;
            let phi = LocationProofAp::from_wire(r.field()?)?;
            r.finish()?;

            // Client checks Φ against what it asked for.
            let ok = d.crypto(Phase::PolAp, |d| verify_location_proof(&d.public, &phi));
            if !ok || phi.nym != session.nym.nym || phi.lx != session.lx || phi.ly != session.ly || phi.ts != session.ts {
                return Err(ProtocolError::PolSignatureRejected);
            }
            session.evidence = Some(PolEvidence::Ap(phi));
            Ok(PolOutcome {
                path: Phase::PolAp,
                witness: ap_name,
                delta_m: Some(delta),
                dbp_rounds_passed: None,
            })
        })
    }

    /// Proof of location and a delegated credential from nearby device `nd`.
    pub fn pol_nd(&mut self, h: usize, nd: usize, session: &mut ClientSession) -> Result<PolOutcome, ProtocolError> {
        self.phase(Phase::PolNd, |d| {
            let (client, dev) = (d.holder_ep[h], d.holder_ep[nd]);
            let nd_name = d.holders[nd].spec.name.clone();
            let nd_cred: Credential = d.holders[nd]
                .credential
                .clone()
                .ok_or_else(|| ProtocolError::Config(format!("nearby device `{nd_name}` is not registered")))?;

            // Client request with a fresh nonce.
            let n = nonce(&mut d.rng);
            let ctx = PolNdRequest::context(&nd_name, session.lx, session.ly, session.ts, &n);
            let disclosure = vec![d.holders[h].class_disclosure()];
            let presentation = d.prove(Phase::PolNd, h, session, &disclosure, &ctx)?;
            let req = PolNdRequest {
                lx: session.lx,
                ly: session.ly,
                ts: session.ts,
                nonce: n,
                presentation,
            };
            let ev = d.transmit(client, dev, "pol-nd-request", req.to_wire(), Channel::Radio)?;
            let req = PolNdRequest::from_wire(&ev.payload)?;

            // Device checks freshness and the client credential, then shows its own.
            let now_s = d.now_s();
            if now_s.abs_diff(req.ts) > d.config.freshness_s {
                return Err(ProtocolError::Stale { ts: req.ts, now: now_s });
            }
            let ctx = PolNdRequest::context(&nd_name, req.lx, req.ly, req.ts, &req.nonce);
            if !d.crypto(Phase::PolNd, |d| d.public.verify_credential(&req.presentation, &ctx)) {
                return Err(ProtocolError::NdCredRejected);
            }
            let client_nym = req.presentation.nym;
            let nd_nym = d.holders[nd].fresh_nym(&mut d.rng);
            let nd_session = ClientSession::new(nd_nym, 0.0, 0.0, 0);
            let wctx = PolNdRequest::witness_context(&req.nonce, &client_nym);
            let nd_disclosure = vec![d.holders[nd].class_disclosure()];
            let witness = d.prove(Phase::PolNd, nd, &nd_session, &nd_disclosure, &wctx)?;
            let msg = Writer::with_tag(tags::ND_WITNESS).field(&witness.to_wire()).finish();
            let ev = d.transmit(dev, client, "pol-nd-witness", msg, Channel::Radio)?;
            let mut r = Reader::tagged(&ev.payload, tags::ND_WITNESS)?;
            let witness = Presentation::from_wire(r.field()?)?;
            r.finish()?;
            let wctx = PolNdRequest::witness_context(&n, &session.nym.nym);
            if !d.crypto(Phase::PolNd, |d| d.public.verify_credential(&witness, &wctx)) {
                return Err(ProtocolError::NdWitnessRejected);
            }

            // Key agreement on the two pseudonyms, then the timed
            // exchange with the device as verifier.
            let rounds = d.config.dbp_rounds;
            let (nd_ss, client_ss) = d.crypto(Phase::PolNd, |d| {
                let nd_keys = &d.holders[nd].keys;
                let c_keys = &d.holders[h].keys;
                let v = aka_derive(&nd_nym.secret(nd_keys), &nd_nym.nym, &client_nym, &req.nonce, Role::Verifier, rounds);
                let p = aka_derive(&session.nym.secret(c_keys), &session.nym.nym, &witness.nym, &n, Role::Prover, rounds);
                v.and_then(|v| p.map(|p| (v, p)))
            })?;
            let cfg = DbpConfig {
                rounds,
                threshold_m: d.config.dbp_threshold_m,
                allowance_ns: d.config.dbp_allowance_ns,
            };
            let mut dbp = DbpSession::new(nd_ss, cfg, d.rng.next_u64())?;
            let mut prover = HonestProver::new(client_ss);
            let (verdict, transcript) = dbp_run(&mut d.net, dev, client, &mut dbp, &mut prover);
            let passed = transcript.rounds.iter().filter(|r| r.pass).count();
            let reason = transcript.abort.clone();
            d.last_dbp = Some(transcript);
            if !verdict {
                return Err(ProtocolError::DbpFailed(
                    reason.unwrap_or_else(|| format!("{passed}/{rounds} rounds passed")),
                ));
            }
            if d.holders[nd].position().distance(&Position::new(req.lx, req.ly)) > d.config.dbp_threshold_m {
                return Err(ProtocolError::NdOutOfThreshold);
            }

            // Delegate with the location as level-2 attributes.
            let mut issuer = IssuerSession::new();
            let ch = issuer.challenge(&mut d.rng);
            let msg = Writer::with_tag(tags::ND_ISSUE_CHALLENGE).raw(&ch.nonce).finish();
            let ev = d.transmit(dev, client, "pol-nd-challenge", msg, Channel::Radio)?;
            let ch = IssueChallenge {
                nonce: Reader::tagged(&ev.payload, tags::ND_ISSUE_CHALLENGE)?.fixed::<NONCE_BYTES>()?,
            };
            let ireq = d.crypto(Phase::PolNd, |d| issue_request(&d.holders[h].keys, &session.nym, &ch, &mut d.rng));
            let msg = Writer::with_tag(tags::ND_ISSUE_REQUEST).field(&ireq.to_wire()).finish();
            let ev = d.transmit(client, dev, "pol-nd-issue-request", msg, Channel::Radio)?;
            let mut r = Reader::tagged(&ev.payload, tags::ND_ISSUE_REQUEST)?;
            let ireq = IssueRequest::from_wire(r.field()?)?;
            r.finish()?;
            if ireq.nym != client_nym {
                return Err(ProtocolError::NdIssuance(crate::dac::DacError::NymMismatch));
            }
            let ext = location_attributes(req.lx, req.ly, req.ts);
            let offer = d
                .crypto(Phase::PolNd, |d| {
                    issue_cred(&d.public.dac, &nd_cred, &mut issuer, &ireq, &ext, NO_DELEGATION, &mut d.rng)
                })
                .map_err(ProtocolError::NdIssuance)?;
            let msg = Writer::with_tag(tags::ND_OFFER).field(&offer.to_wire()).finish();
            let ev = d.transmit(dev, client, "pol-nd-offer", msg, Channel::Radio)?;
            let mut r = Reader::tagged(&ev.payload, tags::ND_OFFER)?;
            let offer = CredentialOffer::from_wire(r.field()?)?;
            r.finish()?;

            // Client receives and checks the delegated credential.
            let cred = d
                .crypto(Phase::PolNd, |d| {
                    receive_offer(&d.public.dac, &d.holders[h].keys, &session.nym, &offer, &mut d.rng)
                })
                .map_err(ProtocolError::NdIssuance)?;
            session.delegated = Some(cred);
            session.evidence = Some(PolEvidence::Nd);
            Ok(PolOutcome {
                path: Phase::PolNd,
                witness: nd_name,
                delta_m: None,
                dbp_rounds_passed: Some(passed),
            })
        })
    }

    /// Nearest access point in radio range of holder `h`.
    pub fn nearest_ap(&self, h: usize) -> Option<usize> {
        let ep = self.holder_ep[h];
        (0..self.aps.len())
            .filter(|&a| self.net.in_radio_range(ep, self.ap_ep[a]) && self.net.in_radio_range(self.ap_ep[a], ep))
            .min_by(|&a, &b| self.net.distance(ep, self.ap_ep[a]).total_cmp(&self.net.distance(ep, self.ap_ep[b])))
    }

    /// Nearest other registered holder within the distance-bounding
    /// threshold and radio range.
    pub fn nearest_nd(&self, h: usize) -> Option<usize> {
        let ep = self.holder_ep[h];
        (0..self.holders.len())
            .filter(|&n| n != h && self.holders[n].credential.as_ref().is_some_and(Credential::can_delegate))
            .filter(|&n| {
                let e = self.holder_ep[n];
                self.net.in_radio_range(ep, e)
                    && self.net.in_radio_range(e, ep)
                    && self.net.distance(ep, e) <= self.config.dbp_threshold_m
            })
            .min_by(|&a, &b| {
                self.net
                    .distance(ep, self.holder_ep[a])
                    .total_cmp(&self.net.distance(ep, self.holder_ep[b]))
            })
    }

    /// AP when one is in range, otherwise the nearby-device fallback.
    pub fn acquire_pol(&mut self, h: usize, session: &mut ClientSession) -> Result<PolOutcome, ProtocolError> {
        if let Some(a) = self.nearest_ap(h) {
            return self.pol_ap(h, a, session);
        }
        match self.nearest_nd(h) {
            Some(nd) => self.pol_nd(h, nd, session),
            None => Err(ProtocolError::NoWitness),
        }
    }

    /// Spectrum query to server `s`; the puzzle is checked by `target`.
    pub fn query(
        &mut self,
        h: usize,
        s: usize,
        session: &mut ClientSession,
        freq: u16,
        target: usize,
    ) -> Result<QueryOutcome, ProtocolError> {
        self.phase(Phase::Query, |d| {
            let evidence = session
                .evidence
                .clone()
                .ok_or_else(|| ProtocolError::Config("query without a proof of location".into()))?;
            let query = Query {
                lx: session.lx,
                ly: session.ly,
                ts: session.ts,
                freq,
            };
            let server_name = d.servers[s].spec.name.clone();
            let ctx = QueryRequest::context(&server_name, &query, &evidence);
            let disclosure = session.disclosure(&d.holders[h]);
            let presentation = d.prove(Phase::Query, h, session, &disclosure, &ctx)?;
            let req = QueryRequest {
                query,
                evidence,
                presentation,
            };
            let (client, server) = (d.holder_ep[h], d.server_ep[s]);
            let ev = d.transmit(client, server, "query-request", req.to_wire(), Channel::Wired)?;
            let req = QueryRequest::from_wire(&ev.payload)?;
            let now_s = d.now_s();
            let target_name = d.servers[target].spec.name.clone();
            let (resp, issued) = d.crypto(Phase::Query, |d| {
                let Deployment { servers, public, rng, .. } = d;
                servers[s].handle_query(public, &req, now_s, &target_name, rng)
            })?;
            if target != s {
                let ev = d.transmit(server, d.server_ep[target], "puzzle-grant", issued.to_wire(), Channel::Wired)?;
                let grant = super::entities::IssuedPuzzle::from_wire(&ev.payload)?;
                d.servers[target].accept_grant(grant);
            }
            let ev = d.transmit(server, client, "query-response", resp.to_wire(), Channel::Wired)?;
            let resp = QueryResponse::from_wire(&ev.payload)?;
            let out = QueryOutcome {
                record: resp.record,
                kappa: resp.puzzle.kappa,
                target: resp.target.clone(),
            };
            session.response = Some(resp);
            Ok(out)
        })
    }

    /// Solve the puzzle and send `payload` to the server named in the query
    /// response.
    pub fn notify(&mut self, h: usize, session: &ClientSession, payload: &[u8]) -> Result<NotifyOutcome, ProtocolError> {
        self.phase(Phase::Notify, |d| {
            let resp = session
                .response
                .clone()
                .ok_or_else(|| ProtocolError::Config("notify without a query response".into()))?;
            let s = d.server(&resp.target)?;
            let m = notify_representative(&resp, payload);
            let (solution, trace) = d.crypto(Phase::Notify, |_| puzzle_solve(&m, &resp.puzzle))?;
            let digest = resp.puzzle.digest();
            let ctx = NotifyRequest::context(&resp.target, &digest, &resp.nonce, payload);
            let disclosure = session.disclosure(&d.holders[h]);
            let presentation = d.prove(Phase::Notify, h, session, &disclosure, &ctx)?;
            let req = NotifyRequest {
                puzzle_digest: digest,
                payload: payload.to_vec(),
                solution,
                presentation,
            };
            let (client, server) = (d.holder_ep[h], d.server_ep[s]);
            let ev = d.transmit(client, server, "notify-request", req.to_wire(), Channel::Wired)?;
            let req = NotifyRequest::from_wire(&ev.payload)?;
            let (effect, cost) = d.crypto(Phase::Notify, |d| {
                let Deployment { servers, public, .. } = d;
                servers[s].handle_notify(public, &req)
            })?;
            let (stored, token) = match effect {
                NotifyEffect::Stored(r) => (Some(r), None),
                NotifyEffect::Granted(t) => (None, Some(hex::encode(t))),
            };
            let ack = Writer::with_tag(tags::NOTIFY_ACK)
                .field(token.as_deref().unwrap_or("stored").as_bytes())
                .finish();
            d.transmit(server, client, "notify-ack", ack, Channel::Wired)?;
            Ok(NotifyOutcome {
                squarings: trace.squarings,
                server_cost: cost,
                stored,
                token,
            })
        })
    }

    /// Sends a hand-built notification, for adversarial harnesses.
    pub fn submit_notify(&mut self, h: usize, s: usize, req: &NotifyRequest) -> Result<ServerCost, ProtocolError> {
        self.phase(Phase::Notify, |d| {
            let ev = d.transmit(d.holder_ep[h], d.server_ep[s], "notify-request", req.to_wire(), Channel::Wired)?;
            let req = NotifyRequest::from_wire(&ev.payload)?;
            let Deployment { servers, public, .. } = d;
            servers[s].handle_notify(public, &req).map(|(_, c)| c)
        })
    }

    /// Sends a hand-built query, for adversarial harnesses.
    pub fn submit_query(&mut self, h: usize, s: usize, req: &QueryRequest) -> Result<QueryResponse, ProtocolError> {
        self.phase(Phase::Query, |d| {
            let ev = d.transmit(d.holder_ep[h], d.server_ep[s], "query-request", req.to_wire(), Channel::Wired)?;
            let req = QueryRequest::from_wire(&ev.payload)?;
            let now_s = d.now_s();
            let name = d.servers[s].spec.name.clone();
            let Deployment { servers, public, rng, .. } = d;
            servers[s].handle_query(public, &req, now_s, &name, rng).map(|(r, _)| r)
        })
    }

    /// Builds a presentation for `session`, for harnesses composing their own
    /// messages.
    pub fn present(
        &mut self,
        h: usize,
        session: &ClientSession,
        disclosed: &[crate::setcommit::AttributeSet],
        context: &[u8],
    ) -> Result<Presentation, ProtocolError> {
        self.prove(Phase::Query, h, session, disclosed, context)
    }

    /// PoL, query and notify for one client.
    pub fn run_session(
        &mut self,
        client: &str,
        server: &str,
        target: &str,
        freq: u16,
        payload: &[u8],
    ) -> Result<SessionOutcome, ProtocolError> {
        let h = self.holder(client)?;
        let s = self.server(server)?;
        let t = self.server(target)?;
        let mut session = self.begin_session(h);
        let pol = self.acquire_pol(h, &mut session)?;
        let query = self.query(h, s, &mut session, freq, t)?;
        let notify = self.notify(h, &session, payload)?;
        Ok(SessionOutcome {
            client: client.to_string(),
            pol,
            query,
            notify,
        })
    }

    /// Pseudonym bytes for audit.
    pub fn nym_bytes(nym: &G1) -> Vec<u8> {
        nym.to_bytes()
    }
}
