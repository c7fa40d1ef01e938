//! Interactive issuance and delegation.
//!
//! Both run the same three messages: the issuer sends a fresh nonce, the
//! holder answers with a pseudonym and a proof of knowledge bound to that
//! nonce, and the issuer returns a [`CredentialOffer`]. Offers carry the
//! signature with its pseudonym part removed ("orphaned"); the holder
//! completes it with its own secret.

use std::collections::HashSet;

use ark_ec::PrimeGroup;
use ark_ff::Field;
use rand::{CryptoRng, RngCore};

use super::schnorr::SchnorrProof;
use super::{
    decode_update_key, encode_update_key, verify_signature, Credential, DacError, DacParams,
    Pseudonym, RootKeys, Signature, UpdateKey, UserKeys, MAX_DEPTH, NO_DELEGATION,
};
use crate::group::{random_nonzero, Canonical, Scalar, G1, G2};
use crate::setcommit::{sc_commit, sc_open, AttributeSet, Opening, SetCommitment};
use crate::wire::{Reader, WireError, Writer};

const ISSUE_DOMAIN: &[u8] = b"slap/dac/issue";

pub const NONCE_BYTES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IssueChallenge {
    pub nonce: [u8; NONCE_BYTES],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IssueRequest {
    pub nonce: [u8; NONCE_BYTES],
    pub nym: G1,
    pub proof: SchnorrProof,
}

impl IssueRequest {
    pub fn to_wire(&self) -> Vec<u8> {
        Writer::new()
            .field(&self.nonce)
            .field(&self.nym.to_bytes())
            .field(&self.proof.to_bytes())
            .finish()
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self, DacError> {
        let mut r = Reader::new(bytes);
        let nonce = r
            .field()?
            .try_into()
            .map_err(|_| WireError::field("issuance nonce", "wrong length"))?;
        let nym = G1::from_bytes(r.field()?)?;
        let proof = SchnorrProof::from_bytes(r.field()?)
            .ok_or_else(|| WireError::field("issuance proof", "malformed"))?;
        r.finish()?;
        Ok(IssueRequest { nonce, nym, proof })
    }
}

/// Issuer-side nonce bookkeeping. Each nonce is accepted at most once.
#[derive(Debug, Default, Clone)]
pub struct IssuerSession {
    pending: HashSet<[u8; NONCE_BYTES]>,
    used: HashSet<[u8; NONCE_BYTES]>,
}

impl IssuerSession {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn challenge<R: RngCore + CryptoRng + ?Sized>(&mut self, rng: &mut R) -> IssueChallenge {
        let mut nonce = [0u8; NONCE_BYTES];
        loop {
            rng.fill_bytes(&mut nonce);
            if !self.used.contains(&nonce) && self.pending.insert(nonce) {
                return IssueChallenge { nonce };
            }
        }
    }

    fn accept(&mut self, req: &IssueRequest) -> Result<(), DacError> {
        if !self.pending.remove(&req.nonce) {
            return Err(DacError::Replay);
        }
        self.used.insert(req.nonce);
        if !req.proof.verify(ISSUE_DOMAIN, &req.nym, &req.nonce) {
            return Err(DacError::ProofOfKnowledge);
        }
        Ok(())
    }
}

/// Holder's answer to an issuance challenge.
pub fn issue_request<R: RngCore + CryptoRng + ?Sized>(
    keys: &UserKeys,
    nym: &Pseudonym,
    challenge: &IssueChallenge,
    rng: &mut R,
) -> IssueRequest {
    let proof = SchnorrProof::prove(
        ISSUE_DOMAIN,
        &nym.secret(keys),
        &nym.nym,
        &challenge.nonce,
        rng,
    );
    IssueRequest {
        nonce: challenge.nonce,
        nym: nym.nym,
        proof,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CredentialOffer {
    pub z: G1,
    pub y: G1,
    pub y_hat: G2,
    /// `T` minus the pseudonym term.
    pub orphan: G1,
    pub commitments: Vec<G1>,
    pub openings: Vec<Scalar>,
    pub attributes: Vec<AttributeSet>,
    pub update_key: Option<UpdateKey>,
    pub bound: usize,
}

impl CredentialOffer {
    pub fn to_wire(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.field(&self.z.to_bytes())
            .field(&self.y.to_bytes())
            .field(&self.y_hat.to_bytes())
            .field(&self.orphan.to_bytes())
            .u64(self.bound as u64)
            .u64(self.commitments.len() as u64);
        for ((c, o), a) in self.commitments.iter().zip(&self.openings).zip(&self.attributes) {
            w.field(&c.to_bytes()).field(&o.to_bytes()).field(&a.to_wire());
        }
        encode_update_key(&mut w, self.update_key.as_ref());
        w.finish()
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self, DacError> {
        let mut r = Reader::new(bytes);
        let z = G1::from_bytes(r.field()?)?;
        let y = G1::from_bytes(r.field()?)?;
        let y_hat = G2::from_bytes(r.field()?)?;
        let orphan = G1::from_bytes(r.field()?)?;
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
        Ok(CredentialOffer {
            z,
            y,
            y_hat,
            orphan,
            commitments,
            openings,
            attributes,
            update_key,
            bound,
        })
    }
}

/// Root issuance of a level-1 credential on `attrs` with delegation bound
/// `bound` (`0` or `1` forbid delegation).
pub fn create_cred<R: RngCore + CryptoRng + ?Sized>(
    params: &DacParams,
    root: &RootKeys,
    session: &mut IssuerSession,
    request: &IssueRequest,
    attrs: &AttributeSet,
    bound: usize,
    rng: &mut R,
) -> Result<CredentialOffer, DacError> {
    if bound > params.eta {
        return Err(DacError::BoundExceeded {
            requested: bound,
            held: params.eta,
        });
    }
    session.accept(request)?;
    let (c, o) = sc_commit(&params.sc, attrs, rng)?;
    let y = random_nonzero(rng);
    let y_inv = y.inverse().expect("non-zero");
    let y_g1 = G1::generator() * y;
    let update_key = (bound >= 2).then(|| UpdateKey {
        first_level: 2,
        keys: (2..=bound)
            .map(|l| params.update_key_for(&root.sk, y_inv, l))
            .collect(),
    });
    Ok(CredentialOffer {
        z: c.0 * (y_inv * root.sk.levels[0]),
        y: y_g1,
        y_hat: G2::generator() * y,
        orphan: y_g1 * root.sk.x1,
        commitments: vec![c.0],
        openings: vec![o.0],
        attributes: vec![attrs.clone()],
        update_key,
        bound: if bound <= 1 { NO_DELEGATION } else { bound },
    })
}

/// Delegation from `delegator` to the requesting holder, extending the
/// credential with `extension` at the next level. `new_bound` is the
/// delegatee's bound; [`NO_DELEGATION`] ends the chain.
pub fn issue_cred<R: RngCore + CryptoRng + ?Sized>(
    params: &DacParams,
    delegator: &Credential,
    session: &mut IssuerSession,
    request: &IssueRequest,
    extension: &AttributeSet,
    new_bound: usize,
    rng: &mut R,
) -> Result<CredentialOffer, DacError> {
    let depth = delegator.depth();
    if depth + 1 > params.eta {
        return Err(DacError::DepthExceeded(depth + 1));
    }
    if !delegator.can_delegate() {
        return Err(DacError::DelegationForbidden {
            bound: delegator.bound(),
            depth,
        });
    }
    if new_bound > delegator.bound() {
        return Err(DacError::BoundExceeded {
            requested: new_bound,
            held: delegator.bound(),
        });
    }
    if new_bound != NO_DELEGATION && new_bound <= depth + 1 {
        return Err(DacError::InvalidBound {
            requested: new_bound,
            depth: depth + 1,
        });
    }
    session.accept(request)?;
    let mu = random_nonzero(rng);
    let psi = random_nonzero(rng);
    let moved = delegator.change_rep(&params.root, mu, psi, Scalar::from(0u64));
    let ext = moved.change_rel(params, extension, rng)?;
    let update_key = ext
        .update_key
        .as_ref()
        .and_then(|uk| uk.truncate(depth + 1, new_bound));
    Ok(CredentialOffer {
        z: ext.sig.z,
        y: ext.sig.y,
        y_hat: ext.sig.y_hat,
        orphan: ext.sig.t - params.root.x0 * ext.nym_secret,
        commitments: ext.commitments,
        openings: ext.openings,
        attributes: ext.attributes,
        update_key,
        bound: new_bound,
    })
}

/// Holder side: binds the offer to `nym`, checks it, and re-randomizes it
/// so the issuer cannot recognize later uses.
pub fn receive_offer<R: RngCore + CryptoRng + ?Sized>(
    params: &DacParams,
    keys: &UserKeys,
    nym: &Pseudonym,
    offer: &CredentialOffer,
    rng: &mut R,
) -> Result<Credential, DacError> {
    let depth = offer.commitments.len();
    if depth == 0 || depth > params.eta {
        return Err(DacError::DepthExceeded(depth));
    }
    if offer.openings.len() != depth || offer.attributes.len() != depth {
        return Err(WireError::field("credential offer", "level count mismatch").into());
    }
    let secret = nym.secret(keys);
    let sig = Signature {
        z: offer.z,
        y: offer.y,
        y_hat: offer.y_hat,
        t: offer.orphan + params.root.x0 * secret,
    };
    if !verify_signature(&params.root, &nym.nym, &offer.commitments, &sig) {
        return Err(DacError::BadSignature);
    }
    for (i, ((c, o), a)) in offer
        .commitments
        .iter()
        .zip(&offer.openings)
        .zip(&offer.attributes)
        .enumerate()
    {
        if !sc_open(&params.sc, &SetCommitment(*c), a, &Opening(*o)) {
            return Err(DacError::BadOpening(i + 1));
        }
    }
    check_update_key(params, &sig, depth, offer.bound, offer.update_key.as_ref(), rng)?;
    let cred = Credential {
        sig,
        commitments: offer.commitments.clone(),
        openings: offer.openings.clone(),
        attributes: offer.attributes.clone(),
        update_key: offer.update_key.clone(),
        bound: offer.bound,
        nym: nym.nym,
        nym_secret: secret,
    };
    let mu = random_nonzero(rng);
    let psi = random_nonzero(rng);
    Ok(cred.change_rep(&params.root, mu, psi, Scalar::from(0u64)))
}

/// Each level key must satisfy `e(uk[j], Ŷ) = e(g1^{alpha^j}, X̂_level)`;
/// checked with one random linear combination per level.
fn check_update_key<R: RngCore + CryptoRng + ?Sized>(
    params: &DacParams,
    sig: &Signature,
    depth: usize,
    bound: usize,
    uk: Option<&UpdateKey>,
    rng: &mut R,
) -> Result<(), DacError> {
    let bad = |why: &str| Err(WireError::field("update key", why).into());
    let Some(uk) = uk else {
        return if bound == NO_DELEGATION || bound <= depth {
            Ok(())
        } else {
            bad("missing for a delegatable bound")
        };
    };
    if bound > params.eta || uk.first_level != depth + 1 || uk.keys.len() != bound - depth {
        return bad("levels do not match the bound");
    }
    let basis = params.sc.g1_basis();
    for (i, lvl) in uk.keys.iter().enumerate() {
        if lvl.len() != basis.len() {
            return bad("wrong basis length");
        }
        let weights: Vec<Scalar> = (0..lvl.len()).map(|_| random_nonzero(rng)).collect();
        let lhs: G1 = lvl.iter().zip(&weights).map(|(p, w)| *p * w).sum();
        let rhs: G1 = basis.iter().zip(&weights).map(|(p, w)| *p * w).sum();
        let level_key = params.root.levels[uk.first_level + i - 1];
        if !crate::group::pairing_product_is_one(&[lhs, -rhs], &[sig.y_hat, level_key]) {
            return bad("does not match the signature");
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::tests::{device_attrs, issue_root, setup};
    use super::super::{dac_keygen, dac_setup, nym_gen};
    use super::*;
    use crate::setcommit::{Attribute, AttributeRole};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn location(x: &str) -> AttributeSet {
        AttributeSet::new(vec![
            Attribute::new(AttributeRole::Location, x),
            Attribute::new(AttributeRole::Timestamp, "1000"),
        ])
        .unwrap()
    }

    fn delegate(
        params: &DacParams,
        from: &Credential,
        to: &UserKeys,
        ext: &AttributeSet,
        bound: usize,
        rng: &mut ChaCha20Rng,
    ) -> Result<Credential, DacError> {
        let mut session = IssuerSession::new();
        let ch = session.challenge(rng);
        let nym = nym_gen(to, rng);
        let req = issue_request(to, &nym, &ch, rng);
        let offer = issue_cred(params, from, &mut session, &req, ext, bound, rng)?;
        receive_offer(params, to, &nym, &offer, rng)
    }

    #[test]
    fn root_issuance_and_replay() {
        let (p, root) = setup();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let keys = dac_keygen(&mut rng);
        let mut session = IssuerSession::new();
        let ch = session.challenge(&mut rng);
        let nym = nym_gen(&keys, &mut rng);
        let req = issue_request(&keys, &nym, &ch, &mut rng);
        let attrs = device_attrs("dev");
        let offer = create_cred(&p, &root, &mut session, &req, &attrs, 2, &mut rng).unwrap();
        let cred = receive_offer(&p, &keys, &nym, &offer, &mut rng).unwrap();
        assert!(cred.verify(&p.root));
        assert!(cred.can_delegate());
        assert_eq!(
            create_cred(&p, &root, &mut session, &req, &attrs, 2, &mut rng),
            Err(DacError::Replay)
        );
        // A request for a nonce never handed out.
        let mut forged = req;
        forged.nonce[0] ^= 1;
        assert_eq!(
            create_cred(&p, &root, &mut session, &forged, &attrs, 2, &mut rng),
            Err(DacError::Replay)
        );
        assert_eq!(CredentialOffer::from_wire(&offer.to_wire()).unwrap(), offer);
        assert_eq!(IssueRequest::from_wire(&req.to_wire()).unwrap(), req);
    }

    #[test]
    fn pok_bound_to_nonce() {
        let (p, root) = setup();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let keys = dac_keygen(&mut rng);
        let other = dac_keygen(&mut rng);
        let mut session = IssuerSession::new();
        let ch = session.challenge(&mut rng);
        let nym = nym_gen(&keys, &mut rng);
        let mut req = issue_request(&other, &nym, &ch, &mut rng);
        req.nym = nym.nym;
        assert_eq!(
            create_cred(&p, &root, &mut session, &req, &device_attrs("d"), 2, &mut rng),
            Err(DacError::ProofOfKnowledge)
        );
    }

    #[test]
    fn bound_one_forbids_delegation() {
        let (p, root) = setup();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let keys = dac_keygen(&mut rng);
        let cred = issue_root(&p, &root, &keys, &device_attrs("d"), 1, &mut rng);
        assert!(!cred.can_delegate());
        let other = dac_keygen(&mut rng);
        assert!(matches!(
            delegate(&p, &cred, &other, &location("x"), 0, &mut rng),
            Err(DacError::DelegationForbidden { .. })
        ));
    }

    #[test]
    fn delegation_to_terminal_credential() {
        let (p, root) = setup();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let nd = dac_keygen(&mut rng);
        let client = dac_keygen(&mut rng);
        let nd_cred = issue_root(&p, &root, &nd, &device_attrs("nd"), 2, &mut rng);
        let del = delegate(&p, &nd_cred, &client, &location("1,2"), NO_DELEGATION, &mut rng).unwrap();
        assert!(del.verify(&p.root));
        assert_eq!(del.depth(), 2);
        assert_eq!(del.bound(), NO_DELEGATION);
        assert!(!del.can_delegate());
        let third = dac_keygen(&mut rng);
        assert!(matches!(
            delegate(&p, &del, &third, &location("3,4"), 0, &mut rng),
            Err(DacError::DepthExceeded(3))
        ));
    }

    #[test]
    fn tampered_offer_rejected() {
        let (p, root) = setup();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let keys = dac_keygen(&mut rng);
        let mut session = IssuerSession::new();
        let ch = session.challenge(&mut rng);
        let nym = nym_gen(&keys, &mut rng);
        let req = issue_request(&keys, &nym, &ch, &mut rng);
        let offer = create_cred(&p, &root, &mut session, &req, &device_attrs("d"), 2, &mut rng).unwrap();

        let mut bad = offer.clone();
        bad.attributes[0] = device_attrs("other");
        assert_eq!(receive_offer(&p, &keys, &nym, &bad, &mut rng), Err(DacError::BadOpening(1)));

        let mut bad = offer.clone();
        bad.orphan += G1::generator();
        assert_eq!(receive_offer(&p, &keys, &nym, &bad, &mut rng), Err(DacError::BadSignature));

        let mut bad = offer.clone();
        bad.update_key.as_mut().unwrap().keys[0][3] += G1::generator();
        assert!(matches!(receive_offer(&p, &keys, &nym, &bad, &mut rng), Err(DacError::Wire(_))));

        // Claiming a larger bound than the keys support.
        let mut bad = offer;
        bad.bound = 3;
        assert!(receive_offer(&p, &keys, &nym, &bad, &mut rng).is_err());
    }

    /// Walks every chain of bounds for small depths: a delegatee's bound never
    /// exceeds its delegator's, and asking for more always fails.
    #[test]
    fn delegation_monotonicity_exhaustive() {
        for eta in [2usize, 3] {
            let (p, root) = dac_setup(100, 4, eta, b"mono").unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(eta as u64);
            for root_bound in 0..=eta {
                let holder = dac_keygen(&mut rng);
                let cred = issue_root(&p, &root, &holder, &device_attrs("r"), root_bound, &mut rng);
                assert!(cred.bound() <= root_bound);
                walk(&p, &cred, &mut rng);
            }
        }

        fn walk(p: &DacParams, cred: &Credential, rng: &mut ChaCha20Rng) {
            assert!(cred.verify(&p.root));
            let next = dac_keygen(rng);
            for req in 0..=p.eta + 1 {
                let res = delegate(p, cred, &next, &location(&format!("l{req}")), req, rng);
                match res {
                    Ok(child) => {
                        assert!(cred.can_delegate());
                        assert!(child.bound() <= cred.bound());
                        assert_eq!(child.depth(), cred.depth() + 1);
                        walk(p, &child, rng);
                    }
                    Err(_) => {
                        let allowed = cred.can_delegate()
                            && cred.depth() < p.eta
                            && req <= cred.bound()
                            && (req == 0 || req > cred.depth() + 1);
                        assert!(!allowed, "legitimate delegation refused: req {req}");
                    }
                }
            }
        }
    }
}
