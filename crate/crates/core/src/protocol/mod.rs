//! The SLAP entities and phases, composed from the primitives over the
//! simulated network.
//!
//! Phases:
//!
//! 1. Registration: the FCC issues each user a level-1 credential on its
//!    device attributes, delegable once.
//! 2. Proof of location, from an access point (group signature over
//!    location, time, pseudonym and credential digest) or, without an AP in
//!    range, from a nearby device (distance bounding, then a delegated
//!    credential carrying the location as a level-2 attribute).
//! 3. Spectrum query to the PSD, answered with a record and a time-lock
//!    puzzle; the puzzle solution gates the follow-up notification or
//!    service request.

mod deployment;
mod entities;
mod messages;

pub use deployment::{
    Deployment, DeploymentConfig, MessageRecord, NotifyOutcome, Phase, PhaseStats, PolOutcome,
    QueryOutcome, SessionOutcome, StoreConfig,
};
pub use entities::{
    fcc_setup, notify_representative, verify_location_proof, AccessPoint, ApSpec, ClientSession,
    Fcc, Holder, HolderSpec, IssuedPuzzle, NotifyEffect, PublicMaterial, Server, ServerCost,
    ServerMode, ServerSpec,
};
pub use messages::{
    location_attributes, parse_location_attributes, tags, LocationProofAp, NotifyRequest,
    PolApRequest, PolEvidence, PolNdRequest, QueryRequest, QueryResponse, UsageReport,
};

use thiserror::Error;

use crate::dac::DacError;
use crate::dbp::DbpError;
use crate::ranging::RangingError;
use crate::simnet::SimError;
use crate::store::StoreError;
use crate::tlp::TlpError;
use crate::wire::WireError;

/// Default freshness window for timestamps, seconds.
pub const DEFAULT_FRESHNESS_S: u64 = 60;

/// Notification payloads must be shorter than this.
pub const MAX_PAYLOAD_BYTES: usize = 256;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("registration failed: {0}")]
    Registration(DacError),

    #[error("access point rejected the credential")]
    PolCredRejected,
    #[error("access point ranging failed: {0}")]
    PolRanging(RangingError),
    #[error("claimed location ({x:.1}, {y:.1}) is outside the verified coverage")]
    PolOutOfCoverage { x: f64, y: f64 },
    #[error("access point signature did not verify at the client")]
    PolSignatureRejected,
    #[error("beacon token is stale")]
    PolBeaconStale,
    #[error("timestamp {ts} is outside the freshness window at {now}")]
    Stale { ts: u64, now: u64 },

    #[error("nearby device rejected the client credential")]
    NdCredRejected,
    #[error("client rejected the nearby device credential")]
    NdWitnessRejected,
    #[error("distance bounding failed: {0}")]
    DbpFailed(String),
    #[error("claimed location is beyond the distance-bounding threshold")]
    NdOutOfThreshold,
    #[error("delegation failed: {0}")]
    NdIssuance(DacError),
    #[error("no access point or nearby device in range")]
    NoWitness,

    #[error("queried location does not match the proven location")]
    LocationMismatch,
    #[error("presentation pseudonym does not match the proof of location")]
    NymMismatch,
    #[error("server rejected the credential")]
    CredRejected,
    #[error("server rejected the proof of location")]
    PolRejected,
    #[error("spectrum store: {0}")]
    Store(StoreError),

    #[error("puzzle unknown, already used, or issued by another server")]
    UnknownPuzzle,
    #[error("solution message does not bind this payload")]
    WrongMessage,
    #[error("puzzle solution is wrong")]
    BadSolution,
    #[error("payload of {0} bytes is too long")]
    PayloadTooLong(usize),
    #[error("payload is not a usage report")]
    BadPayload,

    #[error(transparent)]
    Network(#[from] SimError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Dac(#[from] DacError),
    #[error(transparent)]
    Tlp(#[from] TlpError),
    #[error(transparent)]
    Dbp(#[from] DbpError),
}

impl ProtocolError {
    /// True for verdicts a verifier reached on well-formed input, as opposed
    /// to configuration or transport failures.
    pub fn is_rejection(&self) -> bool {
        !matches!(
            self,
            ProtocolError::Config(_) | ProtocolError::Network(_) | ProtocolError::Wire(_)
        )
    }
}
