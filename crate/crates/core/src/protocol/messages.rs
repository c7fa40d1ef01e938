//! Wire messages. Each starts with a one-byte type tag followed by
//! length-prefixed fields.

use crate::dac::{Presentation, NONCE_BYTES};
use crate::group::{Canonical, Scalar, G1};
use crate::gsig::{message_scalar, GroupSignature, SIGNATURE_BYTES};
use crate::setcommit::{Attribute, AttributeRole, AttributeSet};
use crate::store::{Query, SpectrumRecord};
use crate::tlp::{PuzzlePublic, PuzzleSolution};
use crate::wire::{Reader, WireError, Writer};

use super::ProtocolError;

pub mod tags {
    pub const REGISTER_CHALLENGE: u8 = 0x01;
    pub const REGISTER_REQUEST: u8 = 0x02;
    pub const REGISTER_OFFER: u8 = 0x03;
    pub const BEACON: u8 = 0x10;
    pub const POL_AP_REQUEST: u8 = 0x11;
    pub const RANGING_PING: u8 = 0x12;
    pub const RANGING_PONG: u8 = 0x13;
    pub const POL_AP_RESPONSE: u8 = 0x14;
    pub const ND_REQUEST: u8 = 0x20;
    pub const ND_WITNESS: u8 = 0x21;
    pub const ND_ISSUE_CHALLENGE: u8 = 0x22;
    pub const ND_ISSUE_REQUEST: u8 = 0x23;
    pub const ND_OFFER: u8 = 0x24;
    pub const QUERY_REQUEST: u8 = 0x30;
    pub const QUERY_RESPONSE: u8 = 0x31;
    pub const PUZZLE_GRANT: u8 = 0x32;
    pub const NOTIFY_REQUEST: u8 = 0x40;
    pub const NOTIFY_ACK: u8 = 0x41;
}

fn nonce_from(bytes: &[u8], what: &'static str) -> Result<[u8; NONCE_BYTES], WireError> {
    bytes.try_into().map_err(|_| WireError::field(what, "wrong length"))
}

fn f64_field(r: &mut Reader<'_>) -> Result<f64, WireError> {
    Ok(f64::from_be_bytes(r.fixed::<8>()?))
}

fn u64_field(r: &mut Reader<'_>) -> Result<u64, WireError> {
    Ok(u64::from_be_bytes(r.fixed::<8>()?))
}

/// Φ from an access point: `σ_AP` over `(l_x, l_y, TS, nym, cred digest,
/// region)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationProofAp {
    pub sigma: GroupSignature,
    pub lx: f64,
    pub ly: f64,
    pub ts: u64,
    pub nym: G1,
    /// Digest of the attributes disclosed to the AP.
    pub cred_digest: [u8; 32],
    pub region: String,
}

impl LocationProofAp {
    pub fn message(
        lx: f64,
        ly: f64,
        ts: u64,
        nym: &G1,
        cred_digest: &[u8; 32],
        region: &str,
    ) -> Vec<Scalar> {
        vec![
            message_scalar("lx", &lx.to_be_bytes()),
            message_scalar("ly", &ly.to_be_bytes()),
            message_scalar("ts", &ts.to_be_bytes()),
            message_scalar("nym", &nym.to_bytes()),
            message_scalar("cred", cred_digest),
            message_scalar("region", region.as_bytes()),
        ]
    }

    pub fn scalars(&self) -> Vec<Scalar> {
        Self::message(self.lx, self.ly, self.ts, &self.nym, &self.cred_digest, &self.region)
    }

    pub fn to_wire(&self) -> Vec<u8> {
        Writer::new()
            .raw(&self.sigma.to_bytes())
            .raw(&self.lx.to_be_bytes())
            .raw(&self.ly.to_be_bytes())
            .raw(&self.ts.to_be_bytes())
            .raw(&self.nym.to_bytes())
            .raw(&self.cred_digest)
            .field(self.region.as_bytes())
            .finish()
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(bytes);
        let sigma = GroupSignature::from_bytes(&r.fixed::<SIGNATURE_BYTES>()?)
            .map_err(|e| WireError::field("group signature", e))?;
        let lx = f64_field(&mut r)?;
        let ly = f64_field(&mut r)?;
        let ts = u64_field(&mut r)?;
        let nym = G1::from_bytes(&r.fixed::<32>()?).map_err(|e| WireError::field("nym", e))?;
        let cred_digest = r.fixed::<32>()?;
        let region = String::from_utf8(r.field()?.to_vec())
            .map_err(|e| WireError::field("region", e))?;
        r.finish()?;
        Ok(LocationProofAp {
            sigma,
            lx,
            ly,
            ts,
            nym,
            cred_digest,
            region,
        })
    }
}

/// The level-2 attributes a nearby device certifies.
pub fn location_attributes(lx: f64, ly: f64, ts: u64) -> AttributeSet {
    AttributeSet::new(vec![
        Attribute::new(AttributeRole::Location, format!("{lx},{ly}")),
        Attribute::new(AttributeRole::Timestamp, ts.to_string()),
    ])
    .expect("distinct roles")
}

pub fn parse_location_attributes(set: &AttributeSet) -> Option<(f64, f64, u64)> {
    let (x, y) = set.get(AttributeRole::Location)?.split_once(',')?;
    let ts = set.get(AttributeRole::Timestamp)?.parse().ok()?;
    Some((x.parse().ok()?, y.parse().ok()?, ts))
}

fn location_context(domain: &[u8], peer: &str, lx: f64, ly: f64, ts: u64, extra: &[u8]) -> Vec<u8> {
    Writer::new()
        .field(domain)
        .field(peer.as_bytes())
        .raw(&lx.to_be_bytes())
        .raw(&ly.to_be_bytes())
        .raw(&ts.to_be_bytes())
        .field(extra)
        .finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolApRequest {
    pub lx: f64,
    pub ly: f64,
    pub ts: u64,
    pub beacon: [u8; 16],
    pub presentation: Presentation,
}

impl PolApRequest {
    pub fn context(ap: &str, lx: f64, ly: f64, ts: u64, beacon: &[u8; 16]) -> Vec<u8> {
        location_context(b"slap/pol-ap", ap, lx, ly, ts, beacon)
    }

    pub fn to_wire(&self) -> Vec<u8> {
        Writer::with_tag(tags::POL_AP_REQUEST)
            .raw(&self.lx.to_be_bytes())
            .raw(&self.ly.to_be_bytes())
            .raw(&self.ts.to_be_bytes())
            .raw(&self.beacon)
            .field(&self.presentation.to_wire())
            .finish()
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::tagged(bytes, tags::POL_AP_REQUEST)?;
        let lx = f64_field(&mut r)?;
        let ly = f64_field(&mut r)?;
        let ts = u64_field(&mut r)?;
        let beacon = r.fixed::<16>()?;
        let presentation = Presentation::from_wire(r.field()?)?;
        r.finish()?;
        Ok(PolApRequest {
            lx,
            ly,
            ts,
            beacon,
            presentation,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolNdRequest {
    pub lx: f64,
    pub ly: f64,
    pub ts: u64,
    pub nonce: [u8; NONCE_BYTES],
    pub presentation: Presentation,
}

impl PolNdRequest {
    pub fn context(nd: &str, lx: f64, ly: f64, ts: u64, nonce: &[u8; NONCE_BYTES]) -> Vec<u8> {
        location_context(b"slap/pol-nd", nd, lx, ly, ts, nonce)
    }

    /// Context for the device's own presentation back to the client.
    pub fn witness_context(nonce: &[u8; NONCE_BYTES], client_nym: &G1) -> Vec<u8> {
        Writer::new()
            .field(b"slap/pol-nd/witness")
            .field(nonce)
            .field(&client_nym.to_bytes())
            .finish()
    }

    pub fn to_wire(&self) -> Vec<u8> {
        Writer::with_tag(tags::ND_REQUEST)
            .raw(&self.lx.to_be_bytes())
            .raw(&self.ly.to_be_bytes())
            .raw(&self.ts.to_be_bytes())
            .raw(&self.nonce)
            .field(&self.presentation.to_wire())
            .finish()
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::tagged(bytes, tags::ND_REQUEST)?;
        let lx = f64_field(&mut r)?;
        let ly = f64_field(&mut r)?;
        let ts = u64_field(&mut r)?;
        let nonce = r.fixed::<NONCE_BYTES>()?;
        let presentation = Presentation::from_wire(r.field()?)?;
        r.finish()?;
        Ok(PolNdRequest {
            lx,
            ly,
            ts,
            nonce,
            presentation,
        })
    }
}

/// How the query's location is proven.
#[derive(Debug, Clone, PartialEq)]
pub enum PolEvidence {
    Ap(LocationProofAp),
    /// The proof travels inside the delegated credential's level-2
    /// attributes.
    Nd,
}

impl PolEvidence {
    fn to_wire(&self) -> Vec<u8> {
        match self {
            PolEvidence::Ap(phi) => [vec![1u8], phi.to_wire()].concat(),
            PolEvidence::Nd => vec![2u8],
        }
    }

    fn from_wire(bytes: &[u8]) -> Result<Self, ProtocolError> {
        match bytes.split_first() {
            Some((1, rest)) => Ok(PolEvidence::Ap(LocationProofAp::from_wire(rest)?)),
            Some((2, [])) => Ok(PolEvidence::Nd),
            _ => Err(WireError::field("location evidence", "unknown variant").into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRequest {
    pub query: Query,
    pub evidence: PolEvidence,
    pub presentation: Presentation,
}

impl QueryRequest {
    pub fn context(server: &str, query: &Query, evidence: &PolEvidence) -> Vec<u8> {
        Writer::new()
            .field(b"slap/query")
            .field(server.as_bytes())
            .field(&query.to_bytes())
            .field(&evidence.to_wire())
            .finish()
    }

    pub fn to_wire(&self) -> Vec<u8> {
        Writer::with_tag(tags::QUERY_REQUEST)
            .raw(&self.query.to_bytes())
            .field(&self.evidence.to_wire())
            .field(&self.presentation.to_wire())
            .finish()
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::tagged(bytes, tags::QUERY_REQUEST)?;
        let query = Query::from_bytes(&r.fixed::<{ crate::store::QUERY_BYTES }>()?)
            .map_err(|e| WireError::field("query", e))?;
        let evidence = PolEvidence::from_wire(r.field()?)?;
        let presentation = Presentation::from_wire(r.field()?)?;
        r.finish()?;
        Ok(QueryRequest {
            query,
            evidence,
            presentation,
        })
    }
}

/// ρ_PSD = (β, Π), plus the nonce that links the puzzle to this session and
/// the server that will check the solution.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResponse {
    pub record: SpectrumRecord,
    pub puzzle: PuzzlePublic,
    pub nonce: [u8; NONCE_BYTES],
    pub target: String,
}

impl QueryResponse {
    pub fn to_wire(&self) -> Vec<u8> {
        Writer::with_tag(tags::QUERY_RESPONSE)
            .raw(&self.record.to_bytes())
            .field(&self.puzzle.to_wire())
            .raw(&self.nonce)
            .field(self.target.as_bytes())
            .finish()
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::tagged(bytes, tags::QUERY_RESPONSE)?;
        let record = SpectrumRecord::from_bytes(&r.fixed::<{ crate::store::RECORD_BYTES }>()?)
            .map_err(|e| WireError::field("spectrum record", e))?;
        let puzzle = PuzzlePublic::from_wire(r.field()?)?;
        let nonce = nonce_from(&r.fixed::<NONCE_BYTES>()?, "query nonce")?;
        let target =
            String::from_utf8(r.field()?.to_vec()).map_err(|e| WireError::field("target", e))?;
        r.finish()?;
        Ok(QueryResponse {
            record,
            puzzle,
            nonce,
            target,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NotifyRequest {
    pub puzzle_digest: [u8; 32],
    pub payload: Vec<u8>,
    pub solution: PuzzleSolution,
    pub presentation: Presentation,
}

impl NotifyRequest {
    pub fn context(server: &str, puzzle_digest: &[u8; 32], nonce: &[u8], payload: &[u8]) -> Vec<u8> {
        Writer::new()
            .field(b"slap/notify")
            .field(server.as_bytes())
            .field(puzzle_digest)
            .field(nonce)
            .field(payload)
            .finish()
    }

    pub fn to_wire(&self) -> Vec<u8> {
        Writer::with_tag(tags::NOTIFY_REQUEST)
            .raw(&self.puzzle_digest)
            .field(&self.payload)
            .field(&self.solution.to_wire())
            .field(&self.presentation.to_wire())
            .finish()
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::tagged(bytes, tags::NOTIFY_REQUEST)?;
        let puzzle_digest = r.fixed::<32>()?;
        let payload = r.field()?.to_vec();
        let solution = PuzzleSolution::from_wire(r.field()?)?;
        let presentation = Presentation::from_wire(r.field()?)?;
        r.finish()?;
        Ok(NotifyRequest {
            puzzle_digest,
            payload,
            solution,
            presentation,
        })
    }
}

/// Spectrum usage report carried as a notification payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UsageReport {
    pub available: bool,
    pub incumbent_class: u8,
    pub max_eirp_cdbm: i16,
}

impl UsageReport {
    const MAGIC: u8 = 0x55;

    pub fn to_bytes(&self) -> Vec<u8> {
        let e = self.max_eirp_cdbm.to_be_bytes();
        vec![Self::MAGIC, self.available as u8, self.incumbent_class, e[0], e[1]]
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        match b {
            [Self::MAGIC, a @ (0 | 1), class, e0, e1] => Some(UsageReport {
                available: *a == 1,
                incumbent_class: *class,
                max_eirp_cdbm: i16::from_be_bytes([*e0, *e1]),
            }),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gsig::{gs_keygen, gs_setup, gs_sign, gs_verify};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn location_attributes_roundtrip() {
        let a = location_attributes(12.25, -3.5, 1_700_000_123);
        assert_eq!(parse_location_attributes(&a), Some((12.25, -3.5, 1_700_000_123)));
        assert_eq!(parse_location_attributes(&AttributeSet::empty()), None);
    }

    #[test]
    fn location_proof_wire_and_signature() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let p = gs_setup(6, b"m").unwrap();
        let k = gs_keygen(&mut rng);
        let nym = G1::from_bytes(&crate::group::hash_to_g1(b"t", b"n").to_bytes()).unwrap();
        let m = LocationProofAp::message(1.0, 2.0, 3, &nym, &[7; 32], "r1");
        let phi = LocationProofAp {
            sigma: gs_sign(&p, &k.sk, &m, &mut rng).unwrap(),
            lx: 1.0,
            ly: 2.0,
            ts: 3,
            nym,
            cred_digest: [7; 32],
            region: "r1".into(),
        };
        assert!(gs_verify(&p, &k.gk, &phi.scalars(), &phi.sigma));
        let w = phi.to_wire();
        assert_eq!(w.len(), 64 + 8 + 8 + 8 + 32 + 32 + 4 + 2);
        assert_eq!(LocationProofAp::from_wire(&w).unwrap(), phi);
        let moved = LocationProofAp { lx: 1.5, ..phi.clone() };
        assert!(!gs_verify(&p, &k.gk, &moved.scalars(), &moved.sigma));
    }

    #[test]
    fn usage_report_encoding() {
        let u = UsageReport { available: true, incumbent_class: 2, max_eirp_cdbm: -150 };
        assert_eq!(UsageReport::from_bytes(&u.to_bytes()), Some(u));
        assert_eq!(UsageReport::from_bytes(&[0x55, 2, 0, 0, 0]), None);
        assert_eq!(UsageReport::from_bytes(b"hello"), None);
    }
}
