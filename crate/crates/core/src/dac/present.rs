//! Credential presentations.

use ark_ff::{Field, Zero};
use rand::{CryptoRng, RngCore};

use super::schnorr::{SchnorrProof, SCHNORR_BYTES};
use super::{verify_signature, Credential, DacError, DacParams, Pseudonym, RootPublicKey, Signature, UserKeys, MAX_DEPTH};
use crate::group::{random_nonzero, Canonical, G1, G2};
use crate::setcommit::{
    aggregate_witnesses, sc_open_subset, verify_aggregate, AttributeSet, Opening, SetCommitError,
};
use crate::wire::{Reader, WireError, Writer};

const PROVE_DOMAIN: &[u8] = b"slap/dac/present";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Presentation {
    pub nym: G1,
    pub sig: Signature,
    pub commitments: Vec<G1>,
    /// One disclosed set per level, possibly empty.
    pub disclosed: Vec<AttributeSet>,
    /// Aggregate subset witness; absent when nothing is disclosed.
    pub witness: Option<G1>,
    pub proof: SchnorrProof,
}

impl Presentation {
    fn transcript(&self, context: &[u8]) -> Vec<u8> {
        let mut w = self.body();
        w.field(context);
        w.finish()
    }

    fn body(&self) -> Writer {
        let mut w = Writer::new();
        w.field(&self.nym.to_bytes())
            .field(&self.sig.z.to_bytes())
            .field(&self.sig.y.to_bytes())
            .field(&self.sig.t.to_bytes())
            .field(&self.sig.y_hat.to_bytes())
            .u64(self.commitments.len() as u64);
        for (c, d) in self.commitments.iter().zip(&self.disclosed) {
            w.field(&c.to_bytes()).field(&d.to_wire());
        }
        match &self.witness {
            Some(wit) => w.field(&wit.to_bytes()),
            None => w.field(&[]),
        };
        w
    }

    pub fn to_wire(&self) -> Vec<u8> {
        let mut w = self.body();
        w.field(&self.proof.to_bytes());
        w.finish()
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self, DacError> {
        let mut r = Reader::new(bytes);
        let nym = G1::from_bytes(r.field()?)?;
        let sig = Signature {
            z: G1::from_bytes(r.field()?)?,
            y: G1::from_bytes(r.field()?)?,
            t: G1::from_bytes(r.field()?)?,
            y_hat: G2::from_bytes(r.field()?)?,
        };
        let k = r.u64()? as usize;
        if k == 0 || k > MAX_DEPTH {
            return Err(DacError::DepthExceeded(k));
        }
        let mut commitments = Vec::with_capacity(k);
        let mut disclosed = Vec::with_capacity(k);
        for _ in 0..k {
            commitments.push(G1::from_bytes(r.field()?)?);
            disclosed.push(AttributeSet::from_wire(r.field()?)?);
        }
        let witness = match r.field()? {
            [] => None,
            b => Some(G1::from_bytes(b)?),
        };
        let proof = SchnorrProof::from_bytes(r.field()?)
            .ok_or_else(|| WireError::field("presentation proof", "malformed"))?;
        r.finish()?;
        Ok(Presentation {
            nym,
            sig,
            commitments,
            disclosed,
            witness,
            proof,
        })
    }

    /// Every group element in the presentation, encoded.
    pub fn group_element_encodings(&self) -> Vec<Vec<u8>> {
        let mut out = vec![
            self.nym.to_bytes(),
            self.sig.z.to_bytes(),
            self.sig.y.to_bytes(),
            self.sig.t.to_bytes(),
            self.sig.y_hat.to_bytes(),
        ];
        out.extend(self.commitments.iter().map(Canonical::to_bytes));
        out.extend(self.witness.iter().map(Canonical::to_bytes));
        out
    }

    pub fn disclosed_levels(&self) -> (Vec<G1>, Vec<&AttributeSet>) {
        self.commitments
            .iter()
            .zip(&self.disclosed)
            .filter(|(_, d)| !d.is_empty())
            .map(|(c, d)| (*c, d))
            .unzip()
    }
}

/// Proves possession of `cred` under the pseudonym `nym`, disclosing
/// `disclosed[i]` at level `i + 1`. Missing trailing levels disclose nothing.
pub fn cred_prove<R: RngCore + CryptoRng + ?Sized>(
    params: &DacParams,
    keys: &UserKeys,
    nym: &Pseudonym,
    cred: &Credential,
    disclosed: &[AttributeSet],
    context: &[u8],
    rng: &mut R,
) -> Result<Presentation, DacError> {
    let k = cred.depth();
    if disclosed.len() > k {
        return Err(DacError::DisclosureShape(disclosed.len(), k));
    }
    let mut disclosed = disclosed.to_vec();
    disclosed.resize(k, AttributeSet::empty());
    for (d, a) in disclosed.iter().zip(&cred.attributes) {
        if let Some(missing) = d.first_missing_from(a) {
            return Err(SetCommitError::SubsetViolation(missing.to_string()).into());
        }
    }

    // Pick chi so the moved pseudonym lands exactly on `nym`.
    let target = nym.secret(keys);
    let mu = random_nonzero(rng);
    let psi = random_nonzero(rng);
    let chi = target * psi.inverse().expect("non-zero") - cred.nym_secret;
    let moved = cred.change_rep(&params.root, mu, psi, chi);
    if moved.nym != nym.nym {
        return Err(DacError::NymMismatch);
    }

    let mut commits = Vec::new();
    let mut sets = Vec::new();
    let mut witnesses = Vec::new();
    for (i, d) in disclosed.iter().enumerate().filter(|(_, d)| !d.is_empty()) {
        witnesses.push(sc_open_subset(
            &params.sc,
            &moved.attributes[i],
            d,
            &Opening(moved.openings[i]),
        )?);
        commits.push(moved.commitments[i]);
        sets.push(d);
    }
    let witness = (!witnesses.is_empty()).then(|| aggregate_witnesses(&commits, &sets, &witnesses));

    let mut pres = Presentation {
        nym: moved.nym,
        sig: moved.sig,
        commitments: moved.commitments,
        disclosed,
        witness,
        proof: SchnorrProof {
            challenge: Default::default(),
            response: Default::default(),
        },
    };
    let transcript = pres.transcript(context);
    pres.proof = SchnorrProof::prove(PROVE_DOMAIN, &target, &pres.nym, &transcript, rng);
    Ok(pres)
}

/// Accepts iff the signature chains to `root`, the disclosed sets open
/// against the commitments, and the proof of the pseudonym secret is bound to
/// `context`.
pub fn cred_verify(
    params: &DacParams,
    root: &RootPublicKey,
    pres: &Presentation,
    context: &[u8],
) -> bool {
    let k = pres.commitments.len();
    if k == 0 || k > params.eta || pres.disclosed.len() != k {
        return false;
    }
    if !verify_signature(root, &pres.nym, &pres.commitments, &pres.sig) {
        return false;
    }
    let (commits, sets) = pres.disclosed_levels();
    match (&pres.witness, commits.is_empty()) {
        (None, true) => {}
        (Some(w), false) => {
            if w.is_zero() || !verify_aggregate(&params.sc, &commits, &sets, w) {
                return false;
            }
        }
        _ => return false,
    }
    pres.proof
        .verify(PROVE_DOMAIN, &pres.nym, &pres.transcript(context))
}

/// Encoded size of a presentation, without building one.
pub fn presentation_len(disclosed: &[AttributeSet], any_disclosed: bool) -> usize {
    use crate::group::{G1_BYTES, G2_BYTES};
    use crate::wire::framed_len;
    let mut fields = vec![G1_BYTES, G1_BYTES, G1_BYTES, G1_BYTES, G2_BYTES, 8];
    for d in disclosed {
        fields.push(G1_BYTES);
        fields.push(d.to_wire().len());
    }
    fields.push(if any_disclosed { G1_BYTES } else { 0 });
    fields.push(SCHNORR_BYTES);
    framed_len(&fields)
}
