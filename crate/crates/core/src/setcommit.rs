//! Set commitments over attribute sets with subset openings.
//!
//! A set `A` is committed as `C = g1^{rho * f_A(alpha)}` where
//! `f_A(X) = prod_{a in A} (X - a)` and `alpha` is the setup trapdoor.
//! A subset witness for `D ⊆ A` is `W = g1^{rho * f_{A\D}(alpha)}`, checked
//! by `e(W, g2^{f_D(alpha)}) = e(C, g2)`.

use std::collections::BTreeSet;
use std::fmt;

use ark_bn254::{G1Affine, G2Affine};
use ark_ec::{CurveGroup, PrimeGroup, VariableBaseMSM};
use ark_ff::{One, Zero};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::group::{
    hash_to_scalar, pairing_product_is_one, random_nonzero, Canonical, Scalar, G1, G2,
};
use crate::wire::{Reader, WireError, Writer};

/// Largest cardinality a setup may be asked for.
pub const MAX_CARDINALITY_CEILING: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SetCommitError {
    #[error("cardinality bound {0} must be between 1 and {MAX_CARDINALITY_CEILING}")]
    BadBound(usize),
    #[error("set of {size} attributes exceeds the cardinality bound {max}")]
    Oversize { size: usize, max: usize },
    #[error("disclosed attribute `{0}` is not in the committed set")]
    SubsetViolation(String),
    #[error("duplicate attribute `{0}`")]
    Duplicate(String),
    #[error("attribute set evaluates to zero at the trapdoor")]
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttributeRole {
    DeviceId,
    DeviceType,
    Location,
    Timestamp,
    Other,
}

impl AttributeRole {
    fn tag(self) -> &'static [u8] {
        match self {
            AttributeRole::DeviceId => b"slap/attr/device-id",
            AttributeRole::DeviceType => b"slap/attr/device-type",
            AttributeRole::Location => b"slap/attr/location",
            AttributeRole::Timestamp => b"slap/attr/timestamp",
            AttributeRole::Other => b"slap/attr/other",
        }
    }

    fn code(self) -> u8 {
        match self {
            AttributeRole::DeviceId => 1,
            AttributeRole::DeviceType => 2,
            AttributeRole::Location => 3,
            AttributeRole::Timestamp => 4,
            AttributeRole::Other => 5,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => AttributeRole::DeviceId,
            2 => AttributeRole::DeviceType,
            3 => AttributeRole::Location,
            4 => AttributeRole::Timestamp,
            5 => AttributeRole::Other,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Attribute {
    pub role: AttributeRole,
    pub value: String,
}

impl Attribute {
    pub fn new(role: AttributeRole, value: impl Into<String>) -> Self {
        Self {
            role,
            value: value.into(),
        }
    }

    /// The role tag is the hash domain, so equal strings under different
    /// roles never collide.
    pub fn scalar(&self) -> Scalar {
        hash_to_scalar(self.role.tag(), self.value.as_bytes())
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}={}", self.role, self.value)
    }
}

/// Ordered attribute list with no duplicate hashed values.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct AttributeSet {
    attrs: Vec<Attribute>,
}

impl AttributeSet {
    pub fn new(attrs: Vec<Attribute>) -> Result<Self, SetCommitError> {
        let mut seen = BTreeSet::new();
        for a in &attrs {
            if !seen.insert(a.scalar().to_bytes()) {
                return Err(SetCommitError::Duplicate(a.to_string()));
            }
        }
        Ok(Self { attrs })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Attribute> {
        self.attrs.iter()
    }

    pub fn get(&self, role: AttributeRole) -> Option<&str> {
        self.attrs
            .iter()
            .find(|a| a.role == role)
            .map(|a| a.value.as_str())
    }

    pub fn scalars(&self) -> Vec<Scalar> {
        self.attrs.iter().map(Attribute::scalar).collect()
    }

    pub fn contains(&self, a: &Attribute) -> bool {
        let s = a.scalar();
        self.attrs.iter().any(|x| x.scalar() == s)
    }

    /// First element of `self` missing from `other`, if any.
    pub fn first_missing_from(&self, other: &AttributeSet) -> Option<&Attribute> {
        self.attrs.iter().find(|a| !other.contains(a))
    }

    pub fn is_subset_of(&self, other: &AttributeSet) -> bool {
        self.first_missing_from(other).is_none()
    }

    /// `self \ other`, preserving order.
    pub fn difference(&self, other: &AttributeSet) -> AttributeSet {
        AttributeSet {
            attrs: self
                .attrs
                .iter()
                .filter(|a| !other.contains(a))
                .cloned()
                .collect(),
        }
    }

    pub fn union(sets: &[&AttributeSet]) -> AttributeSet {
        let mut out: Vec<Attribute> = Vec::new();
        for s in sets {
            for a in s.iter() {
                if !out.iter().any(|x| x.scalar() == a.scalar()) {
                    out.push(a.clone());
                }
            }
        }
        AttributeSet { attrs: out }
    }

    pub fn to_wire(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.attrs.len() as u64);
        for a in &self.attrs {
            w.field(&[a.role.code()]).field(a.value.as_bytes());
        }
        w.finish()
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let n = r.u64()? as usize;
        let mut attrs = Vec::with_capacity(n.min(MAX_CARDINALITY_CEILING));
        for _ in 0..n {
            let code = r.field()?;
            let role = match code {
                [c] => AttributeRole::from_code(*c),
                _ => None,
            }
            .ok_or_else(|| WireError::field("attribute role", "unknown role code"))?;
            let value = std::str::from_utf8(r.field()?)
                .map_err(|e| WireError::field("attribute value", e))?;
            attrs.push(Attribute::new(role, value));
        }
        r.finish()?;
        AttributeSet::new(attrs).map_err(|e| WireError::field("attribute set", e))
    }
}

impl FromIterator<Attribute> for AttributeSet {
    /// Panics on duplicates; use [`AttributeSet::new`] for fallible input.
    fn from_iter<I: IntoIterator<Item = Attribute>>(iter: I) -> Self {
        AttributeSet::new(iter.into_iter().collect()).expect("duplicate attribute")
    }
}

/// Powers of the trapdoor in both source groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetCommitParams {
    max_cardinality: usize,
    g1_powers: Vec<G1Affine>,
    g2_powers: Vec<G2Affine>,
}

/// Setup trapdoor. Only [`sc_setup_with_trapdoor`] hands it out, for
/// oracle-style tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trapdoor(Scalar);

impl Trapdoor {
    pub fn value(&self) -> Scalar {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SetCommitment(pub G1);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Opening(pub Scalar);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubsetWitness(pub G1);

pub fn sc_setup(t: usize, seed: &[u8]) -> Result<SetCommitParams, SetCommitError> {
    sc_setup_with_trapdoor(t, seed).map(|(p, _)| p)
}

pub fn sc_setup_with_trapdoor(
    t: usize,
    seed: &[u8],
) -> Result<(SetCommitParams, Trapdoor), SetCommitError> {
    if t == 0 || t > MAX_CARDINALITY_CEILING {
        return Err(SetCommitError::BadBound(t));
    }
    let alpha = hash_to_scalar(b"slap/setcommit/trapdoor", seed);
    let g1 = G1::generator();
    let g2 = G2::generator();
    let mut pow = Scalar::one();
    let mut p1 = Vec::with_capacity(t + 1);
    let mut p2 = Vec::with_capacity(t + 1);
    // Degree-t polynomials need t+1 coefficients.
    for _ in 0..=t {
        p1.push(g1 * pow);
        p2.push(g2 * pow);
        pow *= alpha;
    }
    let params = SetCommitParams {
        max_cardinality: t,
        g1_powers: G1::normalize_batch(&p1),
        g2_powers: G2::normalize_batch(&p2),
    };
    Ok((params, Trapdoor(alpha)))
}

/// Coefficients (low degree first) of `prod (X - r)`.
pub fn poly_from_roots(roots: &[Scalar]) -> Vec<Scalar> {
    let mut coeffs = vec![Scalar::one()];
    for r in roots {
        let mut next = vec![Scalar::zero(); coeffs.len() + 1];
        for (i, c) in coeffs.iter().enumerate() {
            next[i + 1] += c;
            next[i] -= *r * c;
        }
        coeffs = next;
    }
    coeffs
}

impl SetCommitParams {
    pub fn max_cardinality(&self) -> usize {
        self.max_cardinality
    }

    pub fn g1_basis(&self) -> &[G1Affine] {
        &self.g1_powers
    }

    pub fn g2_basis(&self) -> &[G2Affine] {
        &self.g2_powers
    }

    fn check_size(&self, set: &AttributeSet) -> Result<(), SetCommitError> {
        if set.len() > self.max_cardinality {
            return Err(SetCommitError::Oversize {
                size: set.len(),
                max: self.max_cardinality,
            });
        }
        Ok(())
    }

    /// `g1^{f(alpha)}` for the monic polynomial with the given roots.
    pub fn eval_g1(&self, roots: &[Scalar]) -> G1 {
        let c = poly_from_roots(roots);
        G1::msm(&self.g1_powers[..c.len()], &c).expect("basis and coefficient lengths match")
    }

    pub fn eval_g2(&self, roots: &[Scalar]) -> G2 {
        let c = poly_from_roots(roots);
        G2::msm(&self.g2_powers[..c.len()], &c).expect("basis and coefficient lengths match")
    }
}

pub fn sc_commit<R: RngCore + CryptoRng + ?Sized>(
    params: &SetCommitParams,
    set: &AttributeSet,
    rng: &mut R,
) -> Result<(SetCommitment, Opening), SetCommitError> {
    params.check_size(set)?;
    let base = params.eval_g1(&set.scalars());
    if base.is_zero() {
        return Err(SetCommitError::Degenerate);
    }
    let rho = random_nonzero(rng);
    Ok((SetCommitment(base * rho), Opening(rho)))
}

/// Full opening check.
pub fn sc_open(
    params: &SetCommitParams,
    commitment: &SetCommitment,
    set: &AttributeSet,
    opening: &Opening,
) -> bool {
    set.len() <= params.max_cardinality
        && params.eval_g1(&set.scalars()) * opening.0 == commitment.0
}

pub fn sc_open_subset(
    params: &SetCommitParams,
    set: &AttributeSet,
    disclosed: &AttributeSet,
    opening: &Opening,
) -> Result<SubsetWitness, SetCommitError> {
    params.check_size(set)?;
    if let Some(a) = disclosed.first_missing_from(set) {
        return Err(SetCommitError::SubsetViolation(a.to_string()));
    }
    let rest = set.difference(disclosed);
    Ok(SubsetWitness(params.eval_g1(&rest.scalars()) * opening.0))
}

pub fn sc_verify_subset(
    params: &SetCommitParams,
    commitment: &SetCommitment,
    disclosed: &AttributeSet,
    witness: &SubsetWitness,
) -> bool {
    if disclosed.len() > params.max_cardinality || witness.0.is_zero() {
        return false;
    }
    let g2 = G2::generator();
    let disclosed_g2 = params.eval_g2(&disclosed.scalars());
    pairing_product_is_one(&[witness.0, -commitment.0], &[disclosed_g2, g2])
}

fn aggregation_weights(commitments: &[G1], disclosed: &[&AttributeSet]) -> Vec<Scalar> {
    let mut transcript = Vec::new();
    for (c, d) in commitments.iter().zip(disclosed) {
        transcript.extend_from_slice(&c.to_bytes());
        transcript.extend_from_slice(&d.to_wire());
    }
    (0..commitments.len())
        .map(|j| {
            let mut msg = transcript.clone();
            msg.extend_from_slice(&(j as u64).to_be_bytes());
            hash_to_scalar(b"slap/setcommit/aggregate", &msg)
        })
        .collect()
}

/// Folds per-commitment subset witnesses into one group element.
pub fn aggregate_witnesses(
    commitments: &[G1],
    disclosed: &[&AttributeSet],
    witnesses: &[SubsetWitness],
) -> G1 {
    aggregation_weights(commitments, disclosed)
        .iter()
        .zip(witnesses)
        .map(|(t, w)| w.0 * t)
        .sum()
}

/// Checks `e(W, g2^{f_S}) = prod_j e(C_j^{t_j}, g2^{f_{S \ D_j}})` with
/// `S` the union of the disclosed sets.
pub fn verify_aggregate(
    params: &SetCommitParams,
    commitments: &[G1],
    disclosed: &[&AttributeSet],
    aggregate: &G1,
) -> bool {
    if commitments.len() != disclosed.len() || commitments.is_empty() || aggregate.is_zero() {
        return false;
    }
    let union = AttributeSet::union(disclosed);
    if union.len() > params.max_cardinality {
        return false;
    }
    let weights = aggregation_weights(commitments, disclosed);
    let mut lhs = vec![*aggregate];
    let mut rhs = vec![params.eval_g2(&union.scalars())];
    for ((c, d), t) in commitments.iter().zip(disclosed).zip(&weights) {
        lhs.push(-(*c * t));
        rhs.push(params.eval_g2(&union.difference(d).scalars()));
    }
    pairing_product_is_one(&lhs, &rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn attr(i: usize) -> Attribute {
        Attribute::new(AttributeRole::Other, format!("attr-{i}"))
    }

    fn set(ix: &[usize]) -> AttributeSet {
        ix.iter().map(|&i| attr(i)).collect()
    }

    #[test]
    fn setup_shape_and_determinism() {
        let p = sc_setup(10, b"seed").unwrap();
        assert_eq!(p.g1_basis().len(), 11);
        assert_eq!(p.g2_basis().len(), 11);
        assert_eq!(p.g1_basis()[0], G1::generator().into_affine());
        assert_eq!(p, sc_setup(10, b"seed").unwrap());
        assert_ne!(p, sc_setup(10, b"other").unwrap());
        assert_eq!(sc_setup(0, b"s"), Err(SetCommitError::BadBound(0)));
        assert!(sc_setup(MAX_CARDINALITY_CEILING + 1, b"s").is_err());
    }

    #[test]
    fn basis_elements_distinct() {
        let p = sc_setup(10, b"seed").unwrap();
        let g1: BTreeSet<Vec<u8>> = p.g1_basis().iter().map(|a| G1::from(*a).to_bytes()).collect();
        let g2: BTreeSet<Vec<u8>> = p.g2_basis().iter().map(|a| G2::from(*a).to_bytes()).collect();
        assert_eq!(g1.len(), 11);
        assert_eq!(g2.len(), 11);
    }

    #[test]
    fn commitment_matches_polynomial_oracle() {
        let (p, td) = sc_setup_with_trapdoor(5, b"oracle").unwrap();
        let a = set(&[1, 2, 3]);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (c, o) = sc_commit(&p, &a, &mut rng).unwrap();
        // Evaluate prod (alpha - a_i) directly as a field element.
        let alpha = td.value();
        let f: Scalar = a.scalars().iter().map(|ai| alpha - ai).product();
        assert_eq!(c.0, G1::generator() * (f * o.0));
        // And the expanded polynomial agrees with the product form.
        let coeffs = poly_from_roots(&a.scalars());
        let horner = coeffs.iter().rev().fold(Scalar::zero(), |acc, c| acc * alpha + c);
        assert_eq!(horner, f);
        assert_eq!(coeffs.len(), 4);
    }

    #[test]
    fn commit_open_and_hiding() {
        let p = sc_setup(4, b"s").unwrap();
        let a = set(&[1, 2]);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let (c1, o1) = sc_commit(&p, &a, &mut rng).unwrap();
        let (c2, _) = sc_commit(&p, &a, &mut rng).unwrap();
        assert!(sc_open(&p, &c1, &a, &o1));
        assert_ne!(c1, c2);
        assert!(matches!(
            sc_commit(&p, &set(&[1, 2, 3, 4, 5]), &mut rng),
            Err(SetCommitError::Oversize { size: 5, max: 4 })
        ));
    }

    #[test]
    fn subset_edge_cases() {
        let p = sc_setup(4, b"s").unwrap();
        let a = set(&[1, 2, 3]);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let (c, o) = sc_commit(&p, &a, &mut rng).unwrap();

        let w = sc_open_subset(&p, &a, &a, &o).unwrap();
        assert!(sc_verify_subset(&p, &c, &a, &w));

        // Empty disclosure: the witness is the commitment itself.
        let w = sc_open_subset(&p, &a, &AttributeSet::empty(), &o).unwrap();
        assert_eq!(w.0, c.0);
        assert!(sc_verify_subset(&p, &c, &AttributeSet::empty(), &w));

        assert!(matches!(
            sc_open_subset(&p, &a, &set(&[1, 9]), &o),
            Err(SetCommitError::SubsetViolation(_))
        ));

        // Witness for D checked against a commitment to a disjoint set.
        let other = set(&[7, 8]);
        let (c_other, _) = sc_commit(&p, &other, &mut rng).unwrap();
        let w = sc_open_subset(&p, &a, &set(&[1]), &o).unwrap();
        assert!(!sc_verify_subset(&p, &c_other, &set(&[1]), &w));

        // Mutated witness.
        let bad = SubsetWitness(w.0 + G1::generator());
        assert!(!sc_verify_subset(&p, &c, &set(&[1]), &bad));
    }

    #[test]
    fn duplicates_rejected() {
        assert!(matches!(
            AttributeSet::new(vec![attr(1), attr(1)]),
            Err(SetCommitError::Duplicate(_))
        ));
        // Same string under different roles is not a duplicate.
        let s = AttributeSet::new(vec![
            Attribute::new(AttributeRole::Location, "x"),
            Attribute::new(AttributeRole::DeviceId, "x"),
        ]);
        assert!(s.is_ok());
    }

    /// Every D ⊆ A verifies; every D ⊄ A is refused by the opener, and a
    /// witness for D ∩ A never verifies for D itself. Exhaustive for |A| ≤ 4.
    #[test]
    fn subset_soundness_exhaustive() {
        let p = sc_setup(6, b"exhaustive").unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let universe: Vec<usize> = (0..6).collect();
        for size in 0..=4usize {
            let a_ix: Vec<usize> = universe[..size].to_vec();
            let a = set(&a_ix);
            let (c, o) = sc_commit(&p, &a, &mut rng).unwrap();
            for mask in 0u32..(1 << 6) {
                let d_ix: Vec<usize> = universe.iter().copied().filter(|i| mask >> i & 1 == 1).collect();
                let d = set(&d_ix);
                let inside = d_ix.iter().all(|i| a_ix.contains(i));
                match sc_open_subset(&p, &a, &d, &o) {
                    Ok(w) => {
                        assert!(inside);
                        assert!(sc_verify_subset(&p, &c, &d, &w));
                    }
                    Err(SetCommitError::SubsetViolation(_)) => {
                        assert!(!inside);
                        let honest: Vec<usize> = d_ix.iter().copied().filter(|i| a_ix.contains(i)).collect();
                        let w = sc_open_subset(&p, &a, &set(&honest), &o).unwrap();
                        assert!(!sc_verify_subset(&p, &c, &d, &w));
                    }
                    Err(e) => panic!("unexpected {e}"),
                }
            }
        }
    }

    #[test]
    fn binding_smoke() {
        let p = sc_setup(4, b"bind").unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let a = set(&[1, 2]);
        let (c, _) = sc_commit(&p, &a, &mut rng).unwrap();
        for i in 0..200 {
            let other = set(&[i + 10, i + 11]);
            let o = Opening(random_nonzero(&mut rng));
            assert!(!sc_open(&p, &c, &other, &o));
        }
    }

    #[test]
    fn aggregate_two_levels() {
        let p = sc_setup(6, b"agg").unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let a1 = set(&[1, 2, 3]);
        let a2 = set(&[4, 5]);
        let (c1, o1) = sc_commit(&p, &a1, &mut rng).unwrap();
        let (c2, o2) = sc_commit(&p, &a2, &mut rng).unwrap();
        let d1 = set(&[2]);
        let d2 = set(&[4, 5]);
        let w1 = sc_open_subset(&p, &a1, &d1, &o1).unwrap();
        let w2 = sc_open_subset(&p, &a2, &d2, &o2).unwrap();
        let cs = [c1.0, c2.0];
        let agg = aggregate_witnesses(&cs, &[&d1, &d2], &[w1, w2]);
        assert!(verify_aggregate(&p, &cs, &[&d1, &d2], &agg));
        // Swapping disclosed sets between levels fails.
        assert!(!verify_aggregate(&p, &cs, &[&d2, &d1], &agg));
        // Claiming an extra attribute fails.
        let d1x = set(&[2, 9]);
        assert!(!verify_aggregate(&p, &cs, &[&d1x, &d2], &agg));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn open_subset_completeness(size in 0usize..=5, mask in any::<u8>(), seed in any::<u64>()) {
            let p = sc_setup(5, b"prop").unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let a_ix: Vec<usize> = (0..size).map(|i| i + (seed as usize % 100)).collect();
            let a = set(&a_ix);
            let d_ix: Vec<usize> = a_ix.iter().enumerate().filter(|(j, _)| mask >> j & 1 == 1).map(|(_, &i)| i).collect();
            let d = set(&d_ix);
            let (c, o) = sc_commit(&p, &a, &mut rng).unwrap();
            let w = sc_open_subset(&p, &a, &d, &o).unwrap();
            prop_assert!(sc_verify_subset(&p, &c, &d, &w));
        }

        #[test]
        fn attribute_set_wire_roundtrip(vals in proptest::collection::btree_set("[a-z0-9 ,.]{0,12}", 0..6)) {
            let s: AttributeSet = vals.into_iter().map(|v| Attribute::new(AttributeRole::Location, v)).collect();
            prop_assert_eq!(AttributeSet::from_wire(&s.to_wire()).unwrap(), s);
        }
    }
}
