//! Byte accounting from an independent description of every message layout.
//!
//! Each message kind has a schema listing its fields with their sizes taken
//! from the group constants. Walking a captured payload against its schema
//! yields the canonical size as a sum of field sizes; the walk fails if any
//! fixed field has the wrong width or bytes are left over.

use std::collections::BTreeMap;

use serde::Serialize;
use slap_core::group::{G1_BYTES, G2_BYTES, SCALAR_BYTES};
use slap_core::protocol::{tags, Phase};
use slap_core::simnet::SimEvent;
use slap_core::store::{QUERY_BYTES, RECORD_BYTES};
use slap_core::wire::LEN_PREFIX;

const SCHNORR: usize = 2 * SCALAR_BYTES;
const NONCE: usize = 32;
const COORD: usize = 8;
const TS: usize = 8;
const BEACON: usize = 16;
const DIGEST: usize = 32;
const GS_SIG: usize = G1_BYTES + SCALAR_BYTES;
const U64_BYTES: usize = 8;
const U64_FIELD: usize = LEN_PREFIX + U64_BYTES;

#[derive(Debug, Clone, Copy)]
enum Item {
    Tag(u8),
    Raw(usize, &'static str),
    /// Length-prefixed, exact width.
    Field(usize, &'static str),
    /// Length-prefixed, one of the listed widths.
    FieldOneOf(&'static [usize], &'static str),
    /// Length-prefixed opaque bytes of at most `max`.
    FieldVar(usize, &'static str),
    /// Length-prefixed nested structure.
    Framed(&'static [Item], &'static str),
    /// `u64` count followed by that many repetitions.
    Repeat(&'static [Item]),
    U64,
    /// Tagged union of the two proof-of-location variants, framed.
    Evidence,
    /// `u64` level count; when nonzero, a `u64` first level and one field of
    /// G1 points per level.
    UpdateKey,
}

use Item::*;

const ATTRSET: &[Item] = &[Repeat(&[Field(1, "role"), FieldVar(1024, "value")])];

const PRESENTATION: &[Item] = &[
    Field(G1_BYTES, "nym"),
    Field(G1_BYTES, "sig.z"),
    Field(G1_BYTES, "sig.y"),
    Field(G1_BYTES, "sig.t"),
    Field(G2_BYTES, "sig.y_hat"),
    Repeat(&[Field(G1_BYTES, "commitment"), Framed(ATTRSET, "disclosed")]),
    FieldOneOf(&[0, G1_BYTES], "witness"),
    Field(SCHNORR, "proof"),
];

const ISSUE_REQUEST: &[Item] = &[
    Field(NONCE, "nonce"),
    Field(G1_BYTES, "nym"),
    Field(SCHNORR, "proof"),
];

const OFFER: &[Item] = &[
    Field(G1_BYTES, "z"),
    Field(G1_BYTES, "y"),
    Field(G2_BYTES, "y_hat"),
    Field(G1_BYTES, "orphan"),
    U64,
    Repeat(&[
        Field(G1_BYTES, "commitment"),
        Field(SCALAR_BYTES, "opening"),
        Framed(ATTRSET, "attributes"),
    ]),
    UpdateKey,
];

const PHI: &[Item] = &[
    Raw(GS_SIG, "sigma"),
    Raw(COORD, "lx"),
    Raw(COORD, "ly"),
    Raw(TS, "ts"),
    Raw(G1_BYTES, "nym"),
    Raw(DIGEST, "cred digest"),
    FieldVar(256, "region"),
];

const PUZZLE: &[Item] = &[FieldVar(1024, "n"), Raw(U64_BYTES, "kappa"), FieldVar(1024, "z")];
const SOLUTION: &[Item] = &[FieldVar(1024, "m"), FieldVar(1024, "c")];

fn schema(kind: &str, dbp_rounds: usize) -> Option<Vec<Item>> {
    Some(match kind {
        "register-challenge" => vec![Tag(tags::REGISTER_CHALLENGE), Raw(NONCE, "nonce")],
        "register-request" => vec![
            Tag(tags::REGISTER_REQUEST),
            Framed(ISSUE_REQUEST, "issue request"),
            Framed(ATTRSET, "attributes"),
        ],
        "register-offer" => vec![Tag(tags::REGISTER_OFFER), Framed(OFFER, "offer")],
        "beacon" => vec![Tag(tags::BEACON), Raw(BEACON, "beacon")],
        "pol-ap-request" => vec![
            Tag(tags::POL_AP_REQUEST),
            Raw(COORD, "lx"),
            Raw(COORD, "ly"),
            Raw(TS, "ts"),
            Raw(BEACON, "beacon"),
            Framed(PRESENTATION, "presentation"),
        ],
        "ranging-ping" => vec![Tag(tags::RANGING_PING)],
        "ranging-pong" => vec![Tag(tags::RANGING_PONG)],
        "pol-ap-response" => vec![Tag(tags::POL_AP_RESPONSE), Framed(PHI, "location proof")],
        "pol-nd-request" => vec![
            Tag(tags::ND_REQUEST),
            Raw(COORD, "lx"),
            Raw(COORD, "ly"),
            Raw(TS, "ts"),
            Raw(NONCE, "nonce"),
            Framed(PRESENTATION, "presentation"),
        ],
        "pol-nd-witness" => vec![Tag(tags::ND_WITNESS), Framed(PRESENTATION, "presentation")],
        "pol-nd-challenge" => vec![Tag(tags::ND_ISSUE_CHALLENGE), Raw(NONCE, "nonce")],
        "pol-nd-issue-request" => vec![Tag(tags::ND_ISSUE_REQUEST), Framed(ISSUE_REQUEST, "issue request")],
        "pol-nd-offer" => vec![Tag(tags::ND_OFFER), Framed(OFFER, "offer")],
        "dbp-pad" => vec![Raw(2 * dbp_rounds, "pad")],
        "dbp-challenge" => vec![Raw(1, "challenge bit")],
        "dbp-response" => vec![Raw(1, "response bit")],
        "query-request" => vec![
            Tag(tags::QUERY_REQUEST),
            Raw(QUERY_BYTES, "query"),
            Evidence,
            Framed(PRESENTATION, "presentation"),
        ],
        "query-response" => vec![
            Tag(tags::QUERY_RESPONSE),
            Raw(RECORD_BYTES, "beta"),
            Framed(PUZZLE, "puzzle"),
            Raw(NONCE, "nonce"),
            FieldVar(256, "target"),
        ],
        "puzzle-grant" => vec![
            Tag(tags::PUZZLE_GRANT),
            Framed(PUZZLE, "puzzle"),
            FieldVar(1024, "d"),
            Raw(G1_BYTES, "nym"),
            Raw(NONCE, "nonce"),
            Raw(QUERY_BYTES, "query"),
        ],
        "notify-request" => vec![
            Tag(tags::NOTIFY_REQUEST),
            Raw(DIGEST, "puzzle digest"),
            FieldVar(255, "payload"),
            Framed(SOLUTION, "solution"),
            Framed(PRESENTATION, "presentation"),
        ],
        "notify-ack" => vec![Tag(tags::NOTIFY_ACK), FieldVar(256, "ack")],
        _ => return None,
    })
}

/// Phase of a message kind, from its name alone.
pub fn phase_of(kind: &str) -> Option<Phase> {
    Some(match kind {
        k if k.starts_with("register-") => Phase::Registration,
        "beacon" | "ranging-ping" | "ranging-pong" => Phase::PolAp,
        k if k.starts_with("pol-ap-") => Phase::PolAp,
        k if k.starts_with("pol-nd-") || k.starts_with("dbp-") => Phase::PolNd,
        "query-request" | "query-response" | "puzzle-grant" => Phase::Query,
        k if k.starts_with("notify-") => Phase::Notify,
        _ => return None,
    })
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AccountingError {
    #[error("no layout for message kind `{0}`")]
    UnknownKind(String),
    #[error("`{kind}`: {reason} at offset {offset}")]
    Layout {
        kind: String,
        offset: usize,
        reason: String,
    },
}

struct Walk<'a> {
    data: &'a [u8],
    pos: usize,
    /// Bytes per labelled component, framing excluded.
    parts: Vec<(&'static str, usize)>,
}

impl<'a> Walk<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        match end {
            Some(end) => {
                let s = &self.data[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated: wanted {n} bytes")),
        }
    }

    fn len_prefix(&mut self) -> Result<usize, String> {
        let b = self.take(LEN_PREFIX)?;
        Ok(u32::from_be_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    /// Integers travel as framed 8-byte fields.
    fn u64(&mut self) -> Result<u64, String> {
        let len = self.len_prefix()?;
        if len != U64_BYTES {
            return Err(format!("integer field of {len} bytes"));
        }
        let b = self.take(U64_BYTES)?;
        Ok(u64::from_be_bytes(b.try_into().expect("8 bytes")))
    }

    /// Returns the number of bytes the items account for.
    fn items(&mut self, items: &[Item]) -> Result<usize, String> {
        items.iter().map(|i| self.item(i)).sum()
    }

    fn item(&mut self, item: &Item) -> Result<usize, String> {
        match *item {
            Tag(t) => match self.take(1)? {
                [b] if *b == t => Ok(1),
                [b] => Err(format!("tag {b:#04x}, expected {t:#04x}")),
                _ => unreachable!(),
            },
            Raw(n, label) => {
                self.take(n)?;
                self.parts.push((label, n));
                Ok(n)
            }
            Field(n, label) => self.field(label, |len| (len == n).then_some(()).ok_or(format!("{label} is {len} bytes, expected {n}"))),
            FieldOneOf(ns, label) => self.field(label, |len| {
                ns.contains(&len)
                    .then_some(())
                    .ok_or(format!("{label} is {len} bytes, expected one of {ns:?}"))
            }),
            FieldVar(max, label) => self.field(label, |len| {
                (len <= max).then_some(()).ok_or(format!("{label} is {len} bytes, limit {max}"))
            }),
            Framed(inner, label) => {
                let len = self.len_prefix()?;
                let body = self.take(len)?;
                let mut sub = Walk {
                    data: body,
                    pos: 0,
                    parts: Vec::new(),
                };
                let used = sub.items(inner)?;
                if used != len {
                    return Err(format!("{label}: {} trailing bytes", len - used));
                }
                self.parts.push((label, len));
                Ok(LEN_PREFIX + used)
            }
            Repeat(inner) => {
                let n = self.u64()?;
                if n > 64 {
                    return Err(format!("implausible repeat count {n}"));
                }
                let mut total = U64_FIELD;
                for _ in 0..n {
                    total += self.items(inner)?;
                }
                Ok(total)
            }
            U64 => {
                self.u64()?;
                Ok(U64_FIELD)
            }
            Evidence => {
                let len = self.len_prefix()?;
                let body = self.take(len)?;
                let mut sub = Walk {
                    data: body,
                    pos: 0,
                    parts: Vec::new(),
                };
                let used = match body.first() {
                    Some(1) => 1 + {
                        sub.pos = 1;
                        sub.items(PHI)?
                    },
                    Some(2) => 1,
                    _ => return Err("unknown evidence variant".into()),
                };
                if used != len {
                    return Err(format!("evidence: {} trailing bytes", len - used));
                }
                self.parts.push(("evidence", len));
                Ok(LEN_PREFIX + used)
            }
            UpdateKey => {
                let n = self.u64()?;
                if n == 0 {
                    return Ok(U64_FIELD);
                }
                self.u64()?;
                let mut total = 2 * U64_FIELD;
                for _ in 0..n {
                    total += self.field("update key", |len| {
                        (len % G1_BYTES == 0)
                            .then_some(())
                            .ok_or(format!("update key level of {len} bytes is not whole G1 points"))
                    })?;
                }
                Ok(total)
            }
        }
    }

    fn field(&mut self, label: &'static str, check: impl FnOnce(usize) -> Result<(), String>) -> Result<usize, String> {
        let len = self.len_prefix()?;
        check(len)?;
        self.take(len)?;
        self.parts.push((label, len));
        Ok(LEN_PREFIX + len)
    }
}

/// Canonical size of one message and its top-level components.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MessageSize {
    pub kind: String,
    pub bytes: usize,
    pub components: Vec<(String, usize)>,
}

pub fn canonical_size(kind: &str, payload: &[u8], dbp_rounds: usize) -> Result<MessageSize, AccountingError> {
    let items = schema(kind, dbp_rounds).ok_or_else(|| AccountingError::UnknownKind(kind.to_string()))?;
    let mut w = Walk {
        data: payload,
        pos: 0,
        parts: Vec::new(),
    };
    let layout = |w: &Walk, reason: String| AccountingError::Layout {
        kind: kind.to_string(),
        offset: w.pos,
        reason,
    };
    let bytes = w.items(&items).map_err(|r| layout(&w, r))?;
    if w.pos != payload.len() {
        return Err(layout(&w, format!("{} trailing bytes", payload.len() - w.pos)));
    }
    Ok(MessageSize {
        kind: kind.to_string(),
        bytes,
        components: w.parts.into_iter().map(|(l, n)| (l.to_string(), n)).collect(),
    })
}

/// Per-phase totals recomputed from captured payloads.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PhaseBytes {
    pub messages: u64,
    pub bytes: u64,
    pub by_kind: BTreeMap<String, u64>,
}

pub fn tally(events: &[SimEvent], dbp_rounds: usize) -> Result<BTreeMap<Phase, PhaseBytes>, AccountingError> {
    let mut out: BTreeMap<Phase, PhaseBytes> = BTreeMap::new();
    for ev in events {
        let size = canonical_size(&ev.kind, &ev.payload, dbp_rounds)?;
        let phase = phase_of(&ev.kind).ok_or_else(|| AccountingError::UnknownKind(ev.kind.clone()))?;
        let p = out.entry(phase).or_default();
        p.messages += 1;
        p.bytes += size.bytes as u64;
        *p.by_kind.entry(ev.kind.clone()).or_default() += size.bytes as u64;
    }
    Ok(out)
}

/// One row of the communication-overhead comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub phase: &'static str,
    pub formula: &'static str,
    /// The formula evaluated at delegation level `k = 2` with our sizes.
    pub analytic_bytes: usize,
    /// Reference total for the phase.
    pub printed_bytes: usize,
}

/// Timestamp and coordinate widths in the reference table's accounting.
pub const TABLE_TS_BYTES: usize = 8;
pub const TABLE_LOCATION_BYTES: usize = 16;
pub const TABLE_MESSAGE_BYTES: usize = 256;

/// The reference table's communication formulas at `k` delegation levels
/// and an RSA modulus of `modulus_bytes`.
pub fn table_rows(k: usize, modulus_bytes: usize) -> Vec<TableRow> {
    let (g1, g2, zp) = (G1_BYTES, G2_BYTES, SCALAR_BYTES);
    let loc = TABLE_TS_BYTES + TABLE_LOCATION_BYTES;
    vec![
        TableRow {
            phase: "pol-ap",
            formula: "(k+8)|G1| + 2|G2| + 3|Zp| + |TS| + |(lx,ly)|",
            analytic_bytes: (k + 8) * g1 + 2 * g2 + 3 * zp + loc,
            printed_bytes: 2008,
        },
        TableRow {
            phase: "pol-nd",
            formula: "(3k+8)|G1| + 4|G2| + |TS| + |(lx,ly)| + (k+1)|Zp|",
            analytic_bytes: (3 * k + 8) * g1 + 4 * g2 + loc + (k + 1) * zp,
            printed_bytes: 1856,
        },
        TableRow {
            phase: "query",
            formula: "(k+5)|G1| + |G2| + |Zp| + |TS| + |(lx,ly)| + |beta|",
            analytic_bytes: (k + 5) * g1 + g2 + zp + loc + RECORD_BYTES,
            printed_bytes: 3080,
        },
        TableRow {
            phase: "notify",
            formula: "(k+5)|G1| + |G2| + |Zp| + |m| + |TS| + |Pi| + |psi|",
            analytic_bytes: (k + 5) * g1 + g2 + zp + TABLE_MESSAGE_BYTES + TABLE_TS_BYTES + 4 * modulus_bytes,
            printed_bytes: 2304,
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use slap_core::wire::Writer;

    #[test]
    fn fixed_layouts_sum_field_sizes() {
        let msg = Writer::with_tag(tags::BEACON).raw(&[0u8; 16]).finish();
        let s = canonical_size("beacon", &msg, 16).unwrap();
        assert_eq!(s.bytes, 17);
        let msg = Writer::with_tag(tags::REGISTER_CHALLENGE).raw(&[0u8; 32]).finish();
        assert_eq!(canonical_size("register-challenge", &msg, 16).unwrap().bytes, 33);
        assert_eq!(canonical_size("dbp-pad", &[0u8; 32], 16).unwrap().bytes, 32);
    }

    #[test]
    fn layout_violations_are_reported() {
        let msg = Writer::with_tag(tags::BEACON).raw(&[0u8; 15]).finish();
        assert!(matches!(canonical_size("beacon", &msg, 16), Err(AccountingError::Layout { .. })));
        let msg = Writer::with_tag(tags::BEACON).raw(&[0u8; 17]).finish();
        assert!(matches!(canonical_size("beacon", &msg, 16), Err(AccountingError::Layout { .. })));
        let msg = Writer::with_tag(tags::QUERY_REQUEST).raw(&[0u8; 16]).finish();
        assert!(canonical_size("beacon", &msg, 16).is_err());
        assert!(matches!(canonical_size("gossip", &[], 16), Err(AccountingError::UnknownKind(_))));
    }

    #[test]
    fn table_formulas_at_k2() {
        // Hand evaluation: G1 = Zp = 32, G2 = 64, TS + location = 24.
        let rows = table_rows(2, 256);
        assert_eq!(rows[0].analytic_bytes, 10 * 32 + 128 + 96 + 24);
        assert_eq!(rows[1].analytic_bytes, 14 * 32 + 256 + 24 + 96);
        assert_eq!(rows[2].analytic_bytes, 7 * 32 + 64 + 32 + 24 + 560);
        assert_eq!(rows[3].analytic_bytes, 7 * 32 + 64 + 32 + 256 + 8 + 1024);
    }

    #[test]
    fn every_kind_has_a_phase() {
        for k in [
            "register-challenge",
            "register-request",
            "register-offer",
            "beacon",
            "pol-ap-request",
            "ranging-ping",
            "ranging-pong",
            "pol-ap-response",
            "pol-nd-request",
            "pol-nd-witness",
            "pol-nd-challenge",
            "pol-nd-issue-request",
            "pol-nd-offer",
            "dbp-pad",
            "dbp-challenge",
            "dbp-response",
            "query-request",
            "query-response",
            "puzzle-grant",
            "notify-request",
            "notify-ack",
        ] {
            assert!(schema(k, 16).is_some(), "{k}");
            assert!(phase_of(k).is_some(), "{k}");
        }
    }
}
