//! Delegatable attribute-based anonymous credentials.
//!
//! Credentials are structure-preserving signatures on equivalence classes
//! over a vector of set commitments, one commitment per delegation level.
//! A signature `(Z, Y, Ŷ, T)` on commitments `C_1..C_k` for pseudonym `nym`
//! satisfies
//!
//! ```text
//! e(Y, g2)   = e(g1, Ŷ)
//! e(T, g2)   = e(Y, X̂1) · e(nym, X̂0)
//! e(Z, Ŷ)    = Π e(C_i, X̂_level_i)
//! ```
//!
//! Randomizing the representative (`change_rep`) scales the commitments and
//! moves the pseudonym inside its class; extending the vector
//! (`change_rel`) uses per-level update keys handed out at issuance.

mod issue;
mod present;
pub mod schnorr;

pub use issue::{
    create_cred, issue_cred, issue_request, receive_offer, CredentialOffer, IssueChallenge,
    IssueRequest, IssuerSession, NONCE_BYTES,
};
pub use present::{cred_prove, cred_verify, presentation_len, Presentation};

use ark_ec::PrimeGroup;
use ark_ff::{Field, Zero};
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::group::{
    group_setup, hash_to_scalar, random_nonzero, Canonical, GroupError, GroupParams,
    pairing_product_is_one, Scalar, G1, G1_BYTES, G2, G2_BYTES, SCALAR_BYTES,
};
use crate::setcommit::{poly_from_roots, sc_setup, AttributeSet, SetCommitError, SetCommitParams};
use crate::wire::{Reader, WireError, Writer};

/// Deepest delegation chain a setup may be asked for.
pub const MAX_DEPTH: usize = 8;

/// Depth of the deployment profile: root, user, delegated user.
pub const DEPLOYMENT_DEPTH: usize = 2;

/// Encoded size of `Z ‖ Y ‖ T ‖ Ŷ ‖ nym ‖ nym secret`.
pub const CREDENTIAL_CORE_BYTES: usize = 4 * G1_BYTES + G2_BYTES + SCALAR_BYTES;

/// Delegation bound that forbids further delegation.
pub const NO_DELEGATION: usize = 0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DacError {
    #[error("invalid setup parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    SetCommit(#[from] SetCommitError),
    #[error("credential does not allow delegation (bound {bound}, depth {depth})")]
    DelegationForbidden { bound: usize, depth: usize },
    #[error("requested delegation bound {requested} exceeds the holder's bound {held}")]
    BoundExceeded { requested: usize, held: usize },
    #[error("delegation bound {requested} is not valid for a credential at depth {depth}")]
    InvalidBound { requested: usize, depth: usize },
    #[error("delegation depth {0} exceeds the maximum")]
    DepthExceeded(usize),
    #[error("issuance nonce is unknown or already used")]
    Replay,
    #[error("proof of knowledge of the pseudonym secret failed")]
    ProofOfKnowledge,
    #[error("issued signature does not verify")]
    BadSignature,
    #[error("issued opening does not match its commitment at level {0}")]
    BadOpening(usize),
    #[error("pseudonym does not belong to the given keys")]
    NymMismatch,
    #[error("{0} disclosed sets for a credential of depth {1}")]
    DisclosureShape(usize, usize),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Root issuer public key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootPublicKey {
    /// `g1^{x0}`, used to convert orphaned signatures to a new pseudonym.
    pub x0: G1,
    pub x0_hat: G2,
    pub x1_hat: G2,
    /// One key per delegation level.
    pub levels: Vec<G2>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootSecretKey {
    pub x0: Scalar,
    pub x1: Scalar,
    pub levels: Vec<Scalar>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootKeys {
    pub sk: RootSecretKey,
    pub pk: RootPublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DacParams {
    pub group: GroupParams,
    pub sc: SetCommitParams,
    pub eta: usize,
    pub root: RootPublicKey,
}

pub fn dac_setup(
    security_bits: u32,
    t: usize,
    eta: usize,
    seed: &[u8],
) -> Result<(DacParams, RootKeys), DacError> {
    if !(2..=MAX_DEPTH).contains(&eta) {
        return Err(DacError::Params(format!(
            "delegation depth {eta} outside 2..={MAX_DEPTH}"
        )));
    }
    let group = group_setup(security_bits)?;
    let sc = sc_setup(t, seed)?;
    let derive = |label: &str| hash_to_scalar(b"slap/dac/root-key", &[seed, label.as_bytes()].concat());
    let sk = RootSecretKey {
        x0: derive("x0"),
        x1: derive("x1"),
        levels: (1..=eta).map(|i| derive(&format!("level-{i}"))).collect(),
    };
    let pk = RootPublicKey {
        x0: group.g1 * sk.x0,
        x0_hat: group.g2 * sk.x0,
        x1_hat: group.g2 * sk.x1,
        levels: sk.levels.iter().map(|x| group.g2 * x).collect(),
    };
    let params = DacParams {
        group,
        sc,
        eta,
        root: pk.clone(),
    };
    Ok((params, RootKeys { sk, pk }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UserKeys {
    pub sk: Scalar,
    pub pk: G1,
}

pub fn dac_keygen<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> UserKeys {
    let sk = random_nonzero(rng);
    UserKeys {
        sk,
        pk: G1::generator() * sk,
    }
}

/// `nym = pk + aux * g1`; the secret behind it is `sk + aux`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pseudonym {
    pub nym: G1,
    pub aux: Scalar,
}

impl Pseudonym {
    pub fn secret(&self, keys: &UserKeys) -> Scalar {
        keys.sk + self.aux
    }

    /// The initial pseudonym, `aux = 0`.
    pub fn identity(keys: &UserKeys) -> Self {
        Pseudonym {
            nym: keys.pk,
            aux: Scalar::zero(),
        }
    }
}

pub fn nym_gen<R: RngCore + CryptoRng + ?Sized>(keys: &UserKeys, rng: &mut R) -> Pseudonym {
    let aux = random_nonzero(rng);
    Pseudonym {
        nym: keys.pk + G1::generator() * aux,
        aux,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Signature {
    pub z: G1,
    pub y: G1,
    pub y_hat: G2,
    pub t: G1,
}

impl Signature {
    fn change_rep(&self, pk: &RootPublicKey, mu: Scalar, psi: Scalar, chi: Scalar) -> Self {
        let psi_inv = psi.inverse().expect("psi is non-zero");
        Signature {
            z: self.z * (mu * psi_inv),
            y: self.y * psi,
            y_hat: self.y_hat * psi,
            t: (self.t + pk.x0 * chi) * psi,
        }
    }
}

/// Checks the three signature equations.
pub fn verify_signature(pk: &RootPublicKey, nym: &G1, commitments: &[G1], sig: &Signature) -> bool {
    let k = commitments.len();
    if k == 0 || k > pk.levels.len() {
        return false;
    }
    if sig.y.is_zero() || nym.is_zero() || commitments.iter().any(Zero::is_zero) {
        return false;
    }
    let g1 = G1::generator();
    let g2 = G2::generator();
    if !pairing_product_is_one(&[sig.y, -g1], &[g2, sig.y_hat]) {
        return false;
    }
    if !pairing_product_is_one(&[sig.t, -sig.y, -*nym], &[g2, pk.x1_hat, pk.x0_hat]) {
        return false;
    }
    let mut lhs = vec![sig.z];
    let mut rhs = vec![sig.y_hat];
    for (c, x) in commitments.iter().zip(&pk.levels) {
        lhs.push(-*c);
        rhs.push(*x);
    }
    pairing_product_is_one(&lhs, &rhs)
}

/// Per-level keys that let a holder append commitments for levels
/// `first_level ..= first_level + keys.len() - 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateKey {
    pub first_level: usize,
    pub keys: Vec<Vec<G1>>,
}

impl UpdateKey {
    fn scale(&self, s: Scalar) -> Self {
        UpdateKey {
            first_level: self.first_level,
            keys: self
                .keys
                .iter()
                .map(|lvl| lvl.iter().map(|p| *p * s).collect())
                .collect(),
        }
    }

    fn for_level(&self, level: usize) -> Option<&[G1]> {
        level
            .checked_sub(self.first_level)
            .and_then(|i| self.keys.get(i))
            .map(Vec::as_slice)
    }

    /// Keeps only levels up to `bound`, starting after `depth`.
    fn truncate(&self, depth: usize, bound: usize) -> Option<UpdateKey> {
        if bound <= depth {
            return None;
        }
        let keys: Vec<Vec<G1>> = (depth + 1..=bound)
            .map(|l| self.for_level(l).map(<[G1]>::to_vec))
            .collect::<Option<_>>()?;
        Some(UpdateKey {
            first_level: depth + 1,
            keys,
        })
    }
}

/// A credential at delegation depth `k = commitments.len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Credential {
    pub(crate) sig: Signature,
    pub(crate) commitments: Vec<G1>,
    pub(crate) openings: Vec<Scalar>,
    pub(crate) attributes: Vec<AttributeSet>,
    pub(crate) update_key: Option<UpdateKey>,
    /// Highest level this credential may delegate to; [`NO_DELEGATION`]
    /// disables delegation.
    pub(crate) bound: usize,
    pub(crate) nym: G1,
    pub(crate) nym_secret: Scalar,
}

impl Credential {
    pub fn depth(&self) -> usize {
        self.commitments.len()
    }

    pub fn bound(&self) -> usize {
        self.bound
    }

    pub fn can_delegate(&self) -> bool {
        self.bound > self.depth() && self.update_key.is_some()
    }

    pub fn attributes(&self) -> &[AttributeSet] {
        &self.attributes
    }

    pub fn nym(&self) -> G1 {
        self.nym
    }

    pub fn signature(&self) -> &Signature {
        &self.sig
    }

    pub fn commitments(&self) -> &[G1] {
        &self.commitments
    }

    pub fn verify(&self, pk: &RootPublicKey) -> bool {
        verify_signature(pk, &self.nym, &self.commitments, &self.sig)
    }

    /// `Z ‖ Y ‖ T ‖ Ŷ ‖ nym ‖ nym secret`.
    pub fn core_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CREDENTIAL_CORE_BYTES);
        out.extend_from_slice(&self.sig.z.to_bytes());
        out.extend_from_slice(&self.sig.y.to_bytes());
        out.extend_from_slice(&self.sig.t.to_bytes());
        out.extend_from_slice(&self.sig.y_hat.to_bytes());
        out.extend_from_slice(&self.nym.to_bytes());
        out.extend_from_slice(&self.nym_secret.to_bytes());
        out
    }

    /// Moves the credential to another representative of its class.
    pub(crate) fn change_rep(
        &self,
        pk: &RootPublicKey,
        mu: Scalar,
        psi: Scalar,
        chi: Scalar,
    ) -> Credential {
        let psi_inv = psi.inverse().expect("psi is non-zero");
        Credential {
            sig: self.sig.change_rep(pk, mu, psi, chi),
            commitments: self.commitments.iter().map(|c| *c * mu).collect(),
            openings: self.openings.iter().map(|o| *o * mu).collect(),
            attributes: self.attributes.clone(),
            update_key: self.update_key.as_ref().map(|uk| uk.scale(psi_inv)),
            bound: self.bound,
            nym: (self.nym + G1::generator() * chi) * psi,
            nym_secret: (self.nym_secret + chi) * psi,
        }
    }

    /// Appends a commitment to `set` at the next level.
    pub(crate) fn change_rel<R: RngCore + CryptoRng + ?Sized>(
        &self,
        params: &DacParams,
        set: &AttributeSet,
        rng: &mut R,
    ) -> Result<Credential, DacError> {
        let level = self.depth() + 1;
        let uk = self
            .update_key
            .as_ref()
            .and_then(|uk| uk.for_level(level))
            .ok_or(DacError::DelegationForbidden {
                bound: self.bound,
                depth: self.depth(),
            })?;
        if set.len() > params.sc.max_cardinality() {
            return Err(SetCommitError::Oversize {
                size: set.len(),
                max: params.sc.max_cardinality(),
            }
            .into());
        }
        let coeffs = poly_from_roots(&set.scalars());
        let base = params.eval_commit_base(&coeffs);
        if base.is_zero() {
            return Err(SetCommitError::Degenerate.into());
        }
        let rho = random_nonzero(rng);
        let z_delta: G1 = coeffs.iter().zip(uk).map(|(c, u)| *u * c).sum::<G1>() * rho;
        let mut next = self.clone();
        next.sig.z += z_delta;
        next.commitments.push(base * rho);
        next.openings.push(rho);
        next.attributes.push(set.clone());
        Ok(next)
    }

    /// Full encoding, including openings and update keys.
    pub fn to_wire(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.field(&self.core_bytes());
        w.u64(self.bound as u64);
        w.u64(self.depth() as u64);
        for ((c, o), a) in self.commitments.iter().zip(&self.openings).zip(&self.attributes) {
            w.field(&c.to_bytes()).field(&o.to_bytes()).field(&a.to_wire());
        }
        encode_update_key(&mut w, self.update_key.as_ref());
        w.finish()
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self, DacError> {
        let mut r = Reader::new(bytes);
        let core = r.field()?;
        if core.len() != CREDENTIAL_CORE_BYTES {
            return Err(WireError::field("credential core", format!("length {}", core.len())).into());
        }
        let g1 = |b: &[u8]| G1::from_bytes(b);
        let sig = Signature {
            z: g1(&core[0..32])?,
            y: g1(&core[32..64])?,
            t: g1(&core[64..96])?,
            y_hat: G2::from_bytes(&core[96..160])?,
        };
        let nym = g1(&core[160..192])?;
        let nym_secret = Scalar::from_bytes(&core[192..224])?;
        let bound = r.u64()? as usize;
        let depth = r.u64()? as usize;
        if depth == 0 || depth > MAX_DEPTH {
            return Err(DacError::DepthExceeded(depth));
        }
        let mut commitments = Vec::with_capacity(depth);
        let mut openings = Vec::with_capacity(depth);
        let mut attributes = Vec::with_capacity(depth);
        for _ in 0..depth {
            commitments.push(G1::from_bytes(r.field()?)?);
            openings.push(Scalar::from_bytes(r.field()?)?);
            attributes.push(AttributeSet::from_wire(r.field()?)?);
        }
        let update_key = decode_update_key(&mut r)?;
        r.finish()?;
        Ok(Credential {
            sig,
            commitments,
            openings,
            attributes,
            update_key,
            bound,
            nym,
            nym_secret,
        })
    }
}

pub(crate) fn encode_update_key(w: &mut Writer, uk: Option<&UpdateKey>) {
    match uk {
        None => {
            w.u64(0);
        }
        Some(uk) => {
            w.u64(uk.keys.len() as u64).u64(uk.first_level as u64);
            for lvl in &uk.keys {
                let bytes: Vec<u8> = lvl.iter().flat_map(|p| p.to_bytes()).collect();
                w.field(&bytes);
            }
        }
    }
}

pub(crate) fn decode_update_key(r: &mut Reader<'_>) -> Result<Option<UpdateKey>, DacError> {
    let n = r.u64()? as usize;
    if n == 0 {
        return Ok(None);
    }
    if n > MAX_DEPTH {
        return Err(DacError::DepthExceeded(n));
    }
    let first_level = r.u64()? as usize;
    let mut keys = Vec::with_capacity(n);
    for _ in 0..n {
        let f = r.field()?;
        if f.len() % G1_BYTES != 0 {
            return Err(WireError::field("update key", "length not a multiple of a point").into());
        }
        keys.push(
            f.chunks(G1_BYTES)
                .map(G1::from_bytes)
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    Ok(Some(UpdateKey { first_level, keys }))
}

impl DacParams {
    fn eval_commit_base(&self, coeffs: &[Scalar]) -> G1 {
        self.sc
            .g1_basis()
            .iter()
            .zip(coeffs)
            .map(|(b, c)| *b * c)
            .sum()
    }

    /// `y^-1 * x_level * g1^{alpha^j}` for every basis power.
    pub(crate) fn update_key_for(&self, sk: &RootSecretKey, y_inv: Scalar, level: usize) -> Vec<G1> {
        let s = y_inv * sk.levels[level - 1];
        self.sc.g1_basis().iter().map(|b| *b * s).collect()
    }
}

/// Digest of disclosed attribute sets, used where a protocol message needs
/// a fixed-size reference to what a presentation revealed.
pub fn disclosure_digest(disclosed: &[AttributeSet]) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(b"slap/dac/disclosure");
    for d in disclosed {
        let w = d.to_wire();
        h.update((w.len() as u64).to_be_bytes());
        h.update(&w);
    }
    h.finalize().into()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::setcommit::{Attribute, AttributeRole};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    pub(crate) fn setup() -> (DacParams, RootKeys) {
        dac_setup(100, 10, 2, b"dac-test").unwrap()
    }

    pub(crate) fn device_attrs(id: &str) -> AttributeSet {
        AttributeSet::new(vec![
            Attribute::new(AttributeRole::DeviceId, id),
            Attribute::new(AttributeRole::DeviceType, "iot"),
        ])
        .unwrap()
    }

    /// Runs the three-message issuance with the root.
    pub(crate) fn issue_root(
        params: &DacParams,
        root: &RootKeys,
        keys: &UserKeys,
        attrs: &AttributeSet,
        bound: usize,
        rng: &mut ChaCha20Rng,
    ) -> Credential {
        let mut session = IssuerSession::new();
        let ch = session.challenge(rng);
        let nym = nym_gen(keys, rng);
        let req = issue_request(keys, &nym, &ch, rng);
        let offer = create_cred(params, root, &mut session, &req, attrs, bound, rng).unwrap();
        receive_offer(params, keys, &nym, &offer, rng).unwrap()
    }

    #[test]
    fn setup_shape_and_key_oracle() {
        let (p, root) = setup();
        assert_eq!(root.pk.levels.len(), 2);
        assert_eq!(p.root, root.pk);
        assert_eq!(setup().1.pk, root.pk);
        for (x, pk) in root.sk.levels.iter().zip(&root.pk.levels) {
            assert_eq!(G2::generator() * x, *pk);
        }
        assert!(dac_setup(100, 10, 1, b"s").is_err());
        assert!(dac_setup(100, 0, 2, b"s").is_err());
        assert!(dac_setup(90, 10, 2, b"s").is_err());
    }

    #[test]
    fn keygen_and_nyms() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let k1 = dac_keygen(&mut rng);
        let k2 = dac_keygen(&mut rng);
        assert_ne!(k1.pk, k2.pk);
        assert_eq!(k1.pk, G1::generator() * k1.sk);
        let n1 = nym_gen(&k1, &mut rng);
        let n2 = nym_gen(&k1, &mut rng);
        assert_ne!(n1.nym.to_bytes(), n2.nym.to_bytes());
        assert_eq!(n1.nym, G1::generator() * n1.secret(&k1));
        assert_eq!(n1.nym - k1.pk, G1::generator() * n1.aux);
        assert_eq!(Pseudonym::identity(&k1).nym, k1.pk);
    }

    #[test]
    fn core_encoding_is_224_bytes() {
        let (p, root) = setup();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let keys = dac_keygen(&mut rng);
        let cred = issue_root(&p, &root, &keys, &device_attrs("dev-1"), 2, &mut rng);
        assert_eq!(CREDENTIAL_CORE_BYTES, 224);
        assert_eq!(cred.core_bytes().len(), 224);
        assert_eq!(Credential::from_wire(&cred.to_wire()).unwrap(), cred);
    }

    #[test]
    fn change_rep_preserves_validity() {
        let (p, root) = setup();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let keys = dac_keygen(&mut rng);
        let cred = issue_root(&p, &root, &keys, &device_attrs("dev-1"), 2, &mut rng);
        assert!(cred.verify(&p.root));
        let mu = random_nonzero(&mut rng);
        let psi = random_nonzero(&mut rng);
        let chi = random_nonzero(&mut rng);
        let moved = cred.change_rep(&p.root, mu, psi, chi);
        assert!(moved.verify(&p.root));
        assert_eq!(moved.nym, G1::generator() * moved.nym_secret);
        assert!(crate::setcommit::sc_open(
            &p.sc,
            &crate::setcommit::SetCommitment(moved.commitments[0]),
            &moved.attributes[0],
            &crate::setcommit::Opening(moved.openings[0]),
        ));
        // Extending after a move still verifies, so update keys moved too.
        let ext = moved
            .change_rel(&p, &device_attrs("extra"), &mut rng)
            .unwrap();
        assert!(ext.verify(&p.root));
    }

    #[test]
    fn signature_rejects_tampering() {
        let (p, root) = setup();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let keys = dac_keygen(&mut rng);
        let cred = issue_root(&p, &root, &keys, &device_attrs("dev-1"), 2, &mut rng);
        let g = G1::generator();
        let mut bad = cred.sig;
        bad.z += g;
        assert!(!verify_signature(&p.root, &cred.nym, &cred.commitments, &bad));
        let mut bad = cred.sig;
        bad.t += g;
        assert!(!verify_signature(&p.root, &cred.nym, &cred.commitments, &bad));
        assert!(!verify_signature(&p.root, &(cred.nym + g), &cred.commitments, &cred.sig));
        let (_, other) = dac_setup(100, 10, 2, b"other-root").unwrap();
        assert!(!verify_signature(&other.pk, &cred.nym, &cred.commitments, &cred.sig));
    }
}
