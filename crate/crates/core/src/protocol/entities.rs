//! Entity state: the FCC root issuer, credential holders (clients and nearby
//! devices), access points, and PSD/CRN servers.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use num_bigint_dig::BigUint;
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::dac::{
    cred_verify, create_cred, dac_setup, dac_keygen, disclosure_digest, issue_request, nym_gen,
    receive_offer, Credential, CredentialOffer, DacError, DacParams, IssueChallenge, IssueRequest,
    IssuerSession, Presentation, Pseudonym, RootKeys, UserKeys, DEPLOYMENT_DEPTH, NONCE_BYTES,
};
use crate::group::{Canonical, G1};
use crate::gsig::{gs_keygen, gs_setup, gs_sign, gs_verify, GroupKey, GsKeys, GsParams, DEPLOYMENT_MESSAGE_LEN};
use crate::ranging::{in_coverage, prox_verify, BeaconSchedule, EnvParams};
use crate::setcommit::{Attribute, AttributeRole, AttributeSet};
use crate::simnet::Position;
use crate::store::{Query, SpectrumRecord, SpectrumStore};
use crate::tlp::{
    difficulty_for, message_representative, solution_verify, DifficultyPolicy, PuzzlePool,
    PuzzlePublic, PuzzleRegistry, PuzzleSecret, ThreatLevel,
};
use crate::wire::{Reader, WireError, Writer};

use super::messages::{
    parse_location_attributes, tags, LocationProofAp, NotifyRequest, PolApRequest, PolEvidence,
    QueryRequest, QueryResponse, UsageReport,
};
use super::{ProtocolError, MAX_PAYLOAD_BYTES};

/// Public material every endpoint receives after setup.
#[derive(Debug, Clone)]
pub struct PublicMaterial {
    pub dac: DacParams,
    pub gs: GsParams,
    pub group_keys: BTreeMap<String, GroupKey>,
}

impl PublicMaterial {
    pub fn verify_credential(&self, pres: &Presentation, context: &[u8]) -> bool {
        cred_verify(&self.dac, &self.dac.root, pres, context)
    }
}

pub struct Fcc {
    root: RootKeys,
    region_keys: BTreeMap<String, GsKeys>,
    session: IssuerSession,
    public: PublicMaterial,
}

/// Root issuer setup: credential parameters, the message basis for AP
/// signatures, and one group key per region.
pub fn fcc_setup(
    seed: u64,
    security_bits: u32,
    max_cardinality: usize,
    regions: &[String],
) -> Result<Fcc, ProtocolError> {
    let seed_bytes = seed.to_be_bytes();
    let (dac, root) = dac_setup(security_bits, max_cardinality, DEPLOYMENT_DEPTH, &seed_bytes)?;
    let gs = gs_setup(DEPLOYMENT_MESSAGE_LEN, &seed_bytes)
        .map_err(|e| ProtocolError::Config(e.to_string()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x6763_6b65_7973);
    let mut region_keys = BTreeMap::new();
    for r in regions {
        if region_keys.insert(r.clone(), gs_keygen(&mut rng)).is_some() {
            return Err(ProtocolError::Config(format!("duplicate region `{r}`")));
        }
    }
    let group_keys = region_keys.iter().map(|(k, v)| (k.clone(), v.gk)).collect();
    Ok(Fcc {
        root,
        region_keys,
        session: IssuerSession::new(),
        public: PublicMaterial { dac, gs, group_keys },
    })
}

impl Fcc {
    pub fn public(&self) -> &PublicMaterial {
        &self.public
    }

    pub fn region_keys(&self, region: &str) -> Option<GsKeys> {
        self.region_keys.get(region).copied()
    }

    pub fn challenge<R: RngCore + CryptoRng + ?Sized>(&mut self, rng: &mut R) -> IssueChallenge {
        self.session.challenge(rng)
    }

    /// Level-1 credential that allows exactly one delegation.
    pub fn issue<R: RngCore + CryptoRng + ?Sized>(
        &mut self,
        req: &IssueRequest,
        attrs: &AttributeSet,
        rng: &mut R,
    ) -> Result<CredentialOffer, DacError> {
        let bound = self.public.dac.eta;
        create_cred(&self.public.dac, &self.root, &mut self.session, req, attrs, bound, rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolderSpec {
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub device_id: String,
    pub device_class: String,
    #[serde(default = "default_radio_range")]
    pub radio_range_m: f64,
}

fn default_radio_range() -> f64 {
    300.0
}

/// A registered user: clients and nearby devices alike.
#[derive(Debug, Clone)]
pub struct Holder {
    pub spec: HolderSpec,
    pub keys: UserKeys,
    pub credential: Option<Credential>,
    pending: Option<Pseudonym>,
}

impl Holder {
    pub fn new<R: RngCore + CryptoRng + ?Sized>(spec: HolderSpec, rng: &mut R) -> Self {
        Holder {
            spec,
            keys: dac_keygen(rng),
            credential: None,
            pending: None,
        }
    }

    pub fn position(&self) -> Position {
        Position::new(self.spec.x, self.spec.y)
    }

    pub fn attributes(&self) -> AttributeSet {
        AttributeSet::new(vec![
            Attribute::new(AttributeRole::DeviceId, self.spec.device_id.clone()),
            Attribute::new(AttributeRole::DeviceType, self.spec.device_class.clone()),
        ])
        .expect("distinct roles")
    }

    /// The only level-1 attribute shown to verifiers.
    pub fn class_disclosure(&self) -> AttributeSet {
        AttributeSet::new(vec![Attribute::new(
            AttributeRole::DeviceType,
            self.spec.device_class.clone(),
        )])
        .expect("single attribute")
    }

    pub fn registration_request<R: RngCore + CryptoRng + ?Sized>(
        &mut self,
        ch: &IssueChallenge,
        rng: &mut R,
    ) -> IssueRequest {
        let nym = nym_gen(&self.keys, rng);
        self.pending = Some(nym);
        issue_request(&self.keys, &nym, ch, rng)
    }

    pub fn accept_registration<R: RngCore + CryptoRng + ?Sized>(
        &mut self,
        params: &DacParams,
        offer: &CredentialOffer,
        rng: &mut R,
    ) -> Result<&Credential, DacError> {
        let nym = self.pending.take().ok_or(DacError::NymMismatch)?;
        let cred = receive_offer(params, &self.keys, &nym, offer, rng)?;
        Ok(self.credential.insert(cred))
    }

    pub fn fresh_nym<R: RngCore + CryptoRng + ?Sized>(&self, rng: &mut R) -> Pseudonym {
        nym_gen(&self.keys, rng)
    }
}

/// Per-query client state.
#[derive(Debug, Clone)]
pub struct ClientSession {
    pub nym: Pseudonym,
    pub lx: f64,
    pub ly: f64,
    pub ts: u64,
    pub evidence: Option<PolEvidence>,
    /// Delegated credential from a nearby device, when that path was used.
    pub delegated: Option<Credential>,
    pub response: Option<QueryResponse>,
}

impl ClientSession {
    pub fn new(nym: Pseudonym, lx: f64, ly: f64, ts: u64) -> Self {
        ClientSession {
            nym,
            lx,
            ly,
            ts,
            evidence: None,
            delegated: None,
            response: None,
        }
    }

    pub fn credential<'a>(&'a self, holder: &'a Holder) -> Option<&'a Credential> {
        self.delegated.as_ref().or(holder.credential.as_ref())
    }

    /// Disclosed sets for presentations in this session. A delegated chain
    /// shows the delegator's device class at level 1.
    pub fn disclosure(&self, holder: &Holder) -> Vec<AttributeSet> {
        match &self.delegated {
            Some(c) => {
                let class = c.attributes()[0]
                    .iter()
                    .filter(|a| a.role == AttributeRole::DeviceType)
                    .cloned()
                    .collect();
                vec![
                    AttributeSet::new(class).expect("single attribute"),
                    c.attributes()[1].clone(),
                ]
            }
            None => vec![holder.class_disclosure()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApSpec {
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub region: String,
    #[serde(default = "default_coverage")]
    pub coverage_m: f64,
    #[serde(default = "default_margin")]
    pub margin_m: f64,
    #[serde(default = "default_radio_range")]
    pub radio_range_m: f64,
    #[serde(default)]
    pub env: EnvParams,
}

fn default_coverage() -> f64 {
    200.0
}

fn default_margin() -> f64 {
    10.0
}

pub struct AccessPoint {
    pub spec: ApSpec,
    signing: GsKeys,
    pub beacon: BeaconSchedule,
}

impl AccessPoint {
    pub fn new(spec: ApSpec, signing: GsKeys, beacon_window_ns: u64, seed: u64) -> Result<Self, ProtocolError> {
        spec.env
            .validate()
            .map_err(|e| ProtocolError::Config(format!("access point `{}`: {e}", spec.name)))?;
        let mut secret = [0u8; 32];
        ChaCha20Rng::seed_from_u64(seed).fill_bytes(&mut secret);
        let beacon = BeaconSchedule::new(secret, beacon_window_ns)
            .map_err(|e| ProtocolError::Config(e.to_string()))?;
        Ok(AccessPoint {
            spec,
            signing,
            beacon,
        })
    }

    pub fn position(&self) -> Position {
        Position::new(self.spec.x, self.spec.y)
    }

    /// Beacon echo, freshness and credential checks on a client request.
    pub fn check_request(
        &self,
        public: &PublicMaterial,
        req: &PolApRequest,
        now_ns: u64,
        now_s: u64,
        freshness_s: u64,
    ) -> Result<(), ProtocolError> {
        if !self.beacon.is_fresh(&req.beacon, now_ns) {
            return Err(ProtocolError::PolBeaconStale);
        }
        if now_s.abs_diff(req.ts) > freshness_s {
            return Err(ProtocolError::Stale { ts: req.ts, now: now_s });
        }
        let ctx = PolApRequest::context(&self.spec.name, req.lx, req.ly, req.ts, &req.beacon);
        if !public.verify_credential(&req.presentation, &ctx) {
            return Err(ProtocolError::PolCredRejected);
        }
        Ok(())
    }

    /// Δ from RSS and RTT, then the coverage test.
    pub fn assess(&self, rss_dbm: f64, rtt_ns: u64, lx: f64, ly: f64) -> Result<f64, ProtocolError> {
        let delta = prox_verify(rss_dbm, rtt_ns, &self.spec.env).map_err(ProtocolError::PolRanging)?;
        if delta > self.spec.coverage_m
            || !in_coverage(delta, Position::new(lx, ly), self.position(), self.spec.margin_m)
        {
            return Err(ProtocolError::PolOutOfCoverage { x: lx, y: ly });
        }
        Ok(delta)
    }

    /// Signs Φ over the request.
    pub fn sign<R: RngCore + CryptoRng + ?Sized>(
        &self,
        public: &PublicMaterial,
        req: &PolApRequest,
        rng: &mut R,
    ) -> Result<LocationProofAp, ProtocolError> {
        let digest = disclosure_digest(&req.presentation.disclosed[..1]);
        let m = LocationProofAp::message(
            req.lx,
            req.ly,
            req.ts,
            &req.presentation.nym,
            &digest,
            &self.spec.region,
        );
        let sigma = gs_sign(&public.gs, &self.signing.sk, &m, rng)
            .map_err(|e| ProtocolError::Config(e.to_string()))?;
        Ok(LocationProofAp {
            sigma,
            lx: req.lx,
            ly: req.ly,
            ts: req.ts,
            nym: req.presentation.nym,
            cred_digest: digest,
            region: self.spec.region.clone(),
        })
    }
}

/// Client-side check of Φ (step 10).
pub fn verify_location_proof(public: &PublicMaterial, phi: &LocationProofAp) -> bool {
    public
        .group_keys
        .get(&phi.region)
        .is_some_and(|gk| gs_verify(&public.gs, gk, &phi.scalars(), &phi.sigma))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServerMode {
    Psd,
    Crn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSpec {
    pub name: String,
    #[serde(default)]
    pub x: f64,
    #[serde(default)]
    pub y: f64,
    pub mode: ServerMode,
}

/// A puzzle handed out with a query response, kept until solved.
#[derive(Debug, Clone, PartialEq)]
pub struct IssuedPuzzle {
    pub public: PuzzlePublic,
    pub secret: PuzzleSecret,
    pub nym: G1,
    pub nonce: [u8; NONCE_BYTES],
    pub query: Query,
}

impl IssuedPuzzle {
    pub fn to_wire(&self) -> Vec<u8> {
        Writer::with_tag(tags::PUZZLE_GRANT)
            .field(&self.public.to_wire())
            .field(&self.secret.d.to_bytes_be())
            .raw(&self.nym.to_bytes())
            .raw(&self.nonce)
            .raw(&self.query.to_bytes())
            .finish()
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::tagged(bytes, tags::PUZZLE_GRANT)?;
        let public = PuzzlePublic::from_wire(r.field()?)?;
        let d = BigUint::from_bytes_be(r.field()?);
        let nym = G1::from_bytes(&r.fixed::<32>()?).map_err(|e| WireError::field("nym", e))?;
        let nonce = r.fixed::<NONCE_BYTES>()?;
        let query = Query::from_bytes(&r.fixed::<{ crate::store::QUERY_BYTES }>()?)
            .map_err(|e| WireError::field("query", e))?;
        r.finish()?;
        Ok(IssuedPuzzle {
            secret: PuzzleSecret {
                n: public.n.clone(),
                d,
            },
            public,
            nym,
            nonce,
            query,
        })
    }
}

/// Wall-clock cost of the server checks for one notification.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerCost {
    pub cred_verify_ns: u64,
    pub solution_verify_ns: u64,
    pub total_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NotifyEffect {
    Stored(SpectrumRecord),
    Granted([u8; 32]),
}

pub struct Server {
    pub spec: ServerSpec,
    pub store: Option<SpectrumStore>,
    pub threat: ThreatLevel,
    pub policy: DifficultyPolicy,
    pub freshness_s: u64,
    pool: PuzzlePool,
    registry: PuzzleRegistry,
    issued: HashMap<[u8; 32], IssuedPuzzle>,
    tokens: Vec<[u8; 32]>,
}

impl Server {
    pub fn new(
        spec: ServerSpec,
        store: Option<SpectrumStore>,
        tlp_bits: usize,
        threat: ThreatLevel,
        policy: DifficultyPolicy,
        freshness_s: u64,
    ) -> Result<Self, ProtocolError> {
        if spec.mode == ServerMode::Psd && store.is_none() {
            return Err(ProtocolError::Config(format!("PSD `{}` needs a store", spec.name)));
        }
        Ok(Server {
            spec,
            store,
            threat,
            policy,
            freshness_s,
            pool: PuzzlePool::new(tlp_bits),
            registry: PuzzleRegistry::new(),
            issued: HashMap::new(),
            tokens: Vec::new(),
        })
    }

    pub fn prefill<R: RngCore + CryptoRng + ?Sized>(
        &mut self,
        kappa: u64,
        count: usize,
        rng: &mut R,
    ) -> Result<(), ProtocolError> {
        self.pool.fill(kappa, count, &self.registry, rng)?;
        Ok(())
    }

    pub fn outstanding(&self) -> usize {
        self.issued.len()
    }

    pub fn tokens(&self) -> &[[u8; 32]] {
        &self.tokens
    }

    /// Difficulty for a presentation, from its disclosed device class.
    pub fn difficulty(&self, pres: &Presentation) -> u64 {
        let class = pres
            .disclosed
            .first()
            .and_then(|d| d.get(AttributeRole::DeviceType))
            .unwrap_or("");
        difficulty_for(class, self.threat, &self.policy)
    }

    /// Query checks in order: freshness, location match, pseudonym match,
    /// credential, then the AP signature. Returns the response and the
    /// issued puzzle (for forwarding when another server is the target).
    pub fn handle_query<R: RngCore + CryptoRng + ?Sized>(
        &mut self,
        public: &PublicMaterial,
        req: &QueryRequest,
        now_s: u64,
        target: &str,
        rng: &mut R,
    ) -> Result<(QueryResponse, IssuedPuzzle), ProtocolError> {
        let q = &req.query;
        if now_s.abs_diff(q.ts) > self.freshness_s {
            return Err(ProtocolError::Stale { ts: q.ts, now: now_s });
        }
        let pres = &req.presentation;
        match &req.evidence {
            PolEvidence::Ap(phi) => {
                if phi.lx != q.lx || phi.ly != q.ly || phi.ts != q.ts {
                    return Err(ProtocolError::LocationMismatch);
                }
                if phi.nym != pres.nym {
                    return Err(ProtocolError::NymMismatch);
                }
            }
            PolEvidence::Nd => {
                if pres.commitments.len() != DEPLOYMENT_DEPTH {
                    return Err(ProtocolError::PolRejected);
                }
                match pres.disclosed.get(1).and_then(parse_location_attributes) {
                    Some((x, y, ts)) if x == q.lx && y == q.ly && ts == q.ts => {}
                    Some(_) => return Err(ProtocolError::LocationMismatch),
                    None => return Err(ProtocolError::PolRejected),
                }
            }
        }
        let ctx = QueryRequest::context(&self.spec.name, q, &req.evidence);
        if !public.verify_credential(pres, &ctx) {
            return Err(ProtocolError::CredRejected);
        }
        if let PolEvidence::Ap(phi) = &req.evidence {
            let digest_ok = pres
                .disclosed
                .first()
                .is_some_and(|d| disclosure_digest(std::slice::from_ref(d)) == phi.cred_digest);
            if !digest_ok || !verify_location_proof(public, phi) {
                return Err(ProtocolError::PolRejected);
            }
        }
        let store = self.store.as_ref().ok_or(ProtocolError::Config("query sent to a server without a store".into()))?;
        let record = store.lookup(q).map_err(ProtocolError::Store)?;
        let kappa = self.difficulty(pres);
        let keys = self.pool.take(kappa, &self.registry, rng)?;
        let mut nonce = [0u8; NONCE_BYTES];
        rng.fill_bytes(&mut nonce);
        let issued = IssuedPuzzle {
            public: keys.public.clone(),
            secret: keys.secret,
            nym: pres.nym,
            nonce,
            query: *q,
        };
        if target == self.spec.name {
            self.issued.insert(issued.public.digest(), issued.clone());
        }
        Ok((
            QueryResponse {
                record,
                puzzle: keys.public,
                nonce,
                target: target.to_string(),
            },
            issued,
        ))
    }

    /// A puzzle issued on this server's behalf by the PSD.
    pub fn accept_grant(&mut self, grant: IssuedPuzzle) {
        self.issued.insert(grant.public.digest(), grant);
    }

    /// Notification checks in order: puzzle registry, pseudonym, credential,
    /// message binding, solution. A puzzle is consumed only on success.
    pub fn handle_notify(
        &mut self,
        public: &PublicMaterial,
        req: &NotifyRequest,
    ) -> Result<(NotifyEffect, ServerCost), ProtocolError> {
        let start = Instant::now();
        if req.payload.len() >= MAX_PAYLOAD_BYTES {
            return Err(ProtocolError::PayloadTooLong(req.payload.len()));
        }
        let issued = self
            .issued
            .get(&req.puzzle_digest)
            .ok_or(ProtocolError::UnknownPuzzle)?;
        if issued.nym != req.presentation.nym {
            return Err(ProtocolError::NymMismatch);
        }
        let ctx = NotifyRequest::context(&self.spec.name, &req.puzzle_digest, &issued.nonce, &req.payload);
        let t = Instant::now();
        let cred_ok = public.verify_credential(&req.presentation, &ctx);
        let cred_verify_ns = t.elapsed().as_nanos() as u64;
        if !cred_ok {
            return Err(ProtocolError::CredRejected);
        }
        if message_representative(&req.payload, &issued.nonce, &issued.public.n) != req.solution.m {
            return Err(ProtocolError::WrongMessage);
        }
        let t = Instant::now();
        let sol_ok = solution_verify(&issued.secret, &req.solution);
        let solution_verify_ns = t.elapsed().as_nanos() as u64;
        if !sol_ok {
            return Err(ProtocolError::BadSolution);
        }
        let effect = match self.spec.mode {
            ServerMode::Psd => {
                let report = UsageReport::from_bytes(&req.payload).ok_or(ProtocolError::BadPayload)?;
                let query = issued.query;
                let store = self.store.as_mut().expect("PSD has a store");
                let rec = store
                    .populate(
                        &query,
                        report.available,
                        report.incumbent_class,
                        report.max_eirp_cdbm,
                        &req.presentation.nym.to_bytes(),
                        crate::store::Attestation {
                            cred_ok: true,
                            pol_ok: true,
                        },
                    )
                    .map_err(ProtocolError::Store)?;
                NotifyEffect::Stored(rec)
            }
            ServerMode::Crn => {
                use sha2::{Digest, Sha256};
                let token: [u8; 32] = Sha256::new()
                    .chain_update(b"slap/crn/grant")
                    .chain_update(req.puzzle_digest)
                    .chain_update(issued.nonce)
                    .finalize()
                    .into();
                self.tokens.push(token);
                NotifyEffect::Granted(token)
            }
        };
        self.issued.remove(&req.puzzle_digest);
        Ok((
            effect,
            ServerCost {
                cred_verify_ns,
                solution_verify_ns,
                total_ns: start.elapsed().as_nanos() as u64,
            },
        ))
    }
}

/// Representative of a payload under a query response, for the solver.
pub fn notify_representative(resp: &QueryResponse, payload: &[u8]) -> BigUint {
    message_representative(payload, &resp.nonce, &resp.puzzle.n)
}
