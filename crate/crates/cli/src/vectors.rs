//! Deterministic test vectors, one JSON file per module, byte strings in hex.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_bigint_dig::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use slap_core::dac::{cred_prove, cred_verify, Presentation};
use slap_core::dbp::{aka_derive, DbpConfig, DbpSession, Role};
use slap_core::group::{hash_to_g1, hash_to_scalar, Canonical};
use slap_core::gsig::{gs_keygen, gs_setup, gs_sign, gs_verify, message_scalar, DEPLOYMENT_MESSAGE_LEN};
use slap_core::setcommit::{sc_commit, sc_open, sc_open_subset, sc_setup, sc_verify_subset, Attribute, AttributeRole, AttributeSet};
use slap_core::tlp::{puzzle_from_parts, puzzle_gen, puzzle_solve, solution_verify, PuzzleRegistry, TOY_MODULUS_BITS};

use crate::fixture::{world, ALICE};
use crate::CliError;

const SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorModule {
    Tlp,
    Gsig,
    SetCommit,
    Dac,
    Dbp,
}

impl VectorModule {
    pub const ALL: [VectorModule; 5] = [
        VectorModule::Tlp,
        VectorModule::Gsig,
        VectorModule::SetCommit,
        VectorModule::Dac,
        VectorModule::Dbp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VectorModule::Tlp => "tlp",
            VectorModule::Gsig => "gsig",
            VectorModule::SetCommit => "setcommit",
            VectorModule::Dac => "dac",
            VectorModule::Dbp => "dbp",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.json", self.name())
    }
}

impl fmt::Display for VectorModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VectorModule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VectorModule::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown vector module `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorFile {
    pub module: String,
    pub vectors: Vec<BTreeMap<String, Value>>,
}

fn internal(e: impl fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn big_hex(v: &BigUint) -> String {
    hex::encode(v.to_bytes_be())
}

fn bits(v: &[u8]) -> String {
    v.iter().map(|b| char::from(b'0' + b)).collect()
}

fn entry(pairs: Value) -> BTreeMap<String, Value> {
    match pairs {
        Value::Object(m) => m.into_iter().collect(),
        _ => unreachable!("vector entries are objects"),
    }
}

fn tlp() -> Result<Vec<BTreeMap<String, Value>>, CliError> {
    let registry = PuzzleRegistry::new();
    let keys = puzzle_from_parts(11u32.into(), 23u32.into(), 27u32.into(), 5, &registry).map_err(internal)?;
    let phi = BigUint::from(10u32 * 22);
    let r = BigUint::from(2u32).modpow(&BigUint::from(5u32), &phi);
    let m = BigUint::from(2u32);
    let (sol, trace) = puzzle_solve(&m, &keys.public).map_err(internal)?;
    let toy = entry(json!({
        "name": "toy",
        "p": 11, "q": 23, "d": 27, "kappa": 5,
        "n": keys.public.n.to_string(),
        "e": keys.e.to_string(),
        "r": r.to_string(),
        "z": keys.public.z.to_string(),
        "e_tilde": keys.public.e_tilde().to_string(),
        "m": m.to_string(),
        "c": sol.c.to_string(),
        "squarings": trace.squarings,
        "verify": solution_verify(&keys.secret, &sol),
    }));

    let mut rng = ChaCha20Rng::seed_from_u64(SEED);
    let keys = puzzle_gen(TOY_MODULUS_BITS, 1_000, &registry, &mut rng).map_err(internal)?;
    let m = BigUint::from(0xc0ffee_u32);
    let (sol, _) = puzzle_solve(&m, &keys.public).map_err(internal)?;
    let seeded = entry(json!({
        "name": "seeded-512",
        "kappa": keys.public.kappa,
        "n": big_hex(&keys.public.n),
        "z": big_hex(&keys.public.z),
        "d": big_hex(&keys.secret.d),
        "public_wire": hex::encode(keys.public.to_wire()),
        "m": big_hex(&m),
        "c": big_hex(&sol.c),
        "verify": solution_verify(&keys.secret, &sol),
    }));
    Ok(vec![toy, seeded])
}

fn gsig() -> Result<Vec<BTreeMap<String, Value>>, CliError> {
    let params = gs_setup(DEPLOYMENT_MESSAGE_LEN, b"slap/vectors/gsig").map_err(internal)?;
    let mut rng = ChaCha20Rng::seed_from_u64(SEED);
    let keys = gs_keygen(&mut rng);
    let labels = ["lx", "ly", "ts", "nym", "cred", "region"];
    let m: Vec<_> = labels
        .iter()
        .map(|l| message_scalar(l, format!("vector-{l}").as_bytes()))
        .collect();
    let sig = gs_sign(&params, &keys.sk, &m, &mut rng).map_err(internal)?;
    let mut tampered = m.clone();
    tampered[2] = message_scalar("ts", b"vector-ts+1");
    Ok(vec![entry(json!({
        "name": "roundtrip",
        "setup_seed": hex::encode(b"slap/vectors/gsig"),
        "group_key": hex::encode(keys.gk.0.to_bytes()),
        "message": m.iter().map(|s| hex::encode(s.to_bytes())).collect::<Vec<_>>(),
        "signature": hex::encode(sig.to_bytes()),
        "verify": gs_verify(&params, &keys.gk, &m, &sig),
        "verify_tampered": gs_verify(&params, &keys.gk, &tampered, &sig),
    }))])
}

fn setcommit() -> Result<Vec<BTreeMap<String, Value>>, CliError> {
    let params = sc_setup(8, b"slap/vectors/setcommit").map_err(internal)?;
    let mut rng = ChaCha20Rng::seed_from_u64(SEED);
    let set = AttributeSet::new(vec![
        Attribute::new(AttributeRole::DeviceId, "sn-0001"),
        Attribute::new(AttributeRole::DeviceType, "mobile"),
        Attribute::new(AttributeRole::Location, "550.0,500.0"),
        Attribute::new(AttributeRole::Timestamp, "1700000000"),
    ])
    .map_err(internal)?;
    let disclosed = AttributeSet::new(vec![Attribute::new(AttributeRole::DeviceType, "mobile")]).map_err(internal)?;
    let (c, o) = sc_commit(&params, &set, &mut rng).map_err(internal)?;
    let w = sc_open_subset(&params, &set, &disclosed, &o).map_err(internal)?;
    let wrong = AttributeSet::new(vec![Attribute::new(AttributeRole::DeviceType, "laptop")]).map_err(internal)?;
    Ok(vec![entry(json!({
        "name": "subset-opening",
        "max_cardinality": 8,
        "set": hex::encode(set.to_wire()),
        "disclosed": hex::encode(disclosed.to_wire()),
        "commitment": hex::encode(c.0.to_bytes()),
        "opening": hex::encode(o.0.to_bytes()),
        "witness": hex::encode(w.0.to_bytes()),
        "open": sc_open(&params, &c, &set, &o),
        "verify_subset": sc_verify_subset(&params, &c, &disclosed, &w),
        "verify_wrong_subset": sc_verify_subset(&params, &c, &wrong, &w),
    }))])
}

fn dac() -> Result<Vec<BTreeMap<String, Value>>, CliError> {
    let d = world(SEED, TOY_MODULUS_BITS)?;
    let mut rng = ChaCha20Rng::seed_from_u64(SEED);
    let h = &d.holders[ALICE];
    let cred = h.credential.as_ref().ok_or_else(|| internal("alice is unregistered"))?;
    let nym = h.fresh_nym(&mut rng);
    let ctx = b"slap/vectors/dac";
    let p = cred_prove(&d.public.dac, &h.keys, &nym, cred, &[h.class_disclosure()], ctx, &mut rng).map_err(internal)?;
    let wire = p.to_wire();
    let back = Presentation::from_wire(&wire).map_err(internal)?;
    Ok(vec![entry(json!({
        "name": "presentation",
        "world_seed": SEED,
        "context": hex::encode(ctx),
        "credential_core": hex::encode(cred.core_bytes()),
        "presentation": hex::encode(wire),
        "verify": cred_verify(&d.public.dac, &d.public.dac.root, &back, ctx),
        "verify_other_context": cred_verify(&d.public.dac, &d.public.dac.root, &back, b"other"),
    }))])
}

fn dbp() -> Result<Vec<BTreeMap<String, Value>>, CliError> {
    let g = hash_to_g1(b"slap/vectors/dbp", b"base");
    let (sk_v, sk_p) = (
        hash_to_scalar(b"slap/vectors/dbp", b"verifier"),
        hash_to_scalar(b"slap/vectors/dbp", b"prover"),
    );
    let (pk_v, pk_p) = (g * sk_v, g * sk_p);
    let nonce = b"vector-nonce";
    let n = 8;
    let ss_v = aka_derive(&sk_v, &pk_v, &pk_p, nonce, Role::Verifier, n).map_err(internal)?;
    let ss_p = aka_derive(&sk_p, &pk_p, &pk_v, nonce, Role::Prover, n).map_err(internal)?;
    let s = DbpSession::new(ss_v.clone(), DbpConfig::new(n, 50.0), 7).map_err(internal)?;
    let a0: Vec<u8> = (0..n).map(|i| s.expected(i, 0)).collect();
    let a1: Vec<u8> = (0..n).map(|i| s.expected(i, 1)).collect();
    Ok(vec![entry(json!({
        "name": "aka-and-responses",
        "rounds": n,
        "pk_verifier": hex::encode(pk_v.to_bytes()),
        "pk_prover": hex::encode(pk_p.to_bytes()),
        "nonce": hex::encode(nonce),
        "session_bits": bits(&ss_v),
        "keys_agree": ss_v == ss_p,
        "pad_seed": 7,
        "pad": bits(s.pad()),
        "responses_challenge_0": bits(&a0),
        "responses_challenge_1": bits(&a1),
    }))])
}

pub fn generate(module: VectorModule) -> Result<VectorFile, CliError> {
    let vectors = match module {
        VectorModule::Tlp => tlp()?,
        VectorModule::Gsig => gsig()?,
        VectorModule::SetCommit => setcommit()?,
        VectorModule::Dac => dac()?,
        VectorModule::Dbp => dbp()?,
    };
    Ok(VectorFile {
        module: module.name().to_string(),
        vectors,
    })
}

/// Pretty JSON exactly as written to disk.
pub fn render(file: &VectorFile) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(file).map_err(internal)? + "\n")
}

/// Writes the vector files for `modules` under `out`; returns the paths.
pub fn write_vectors(modules: &[VectorModule], out: &Path) -> Result<Vec<std::path::PathBuf>, CliError> {
    std::fs::create_dir_all(out)?;
    let mut paths = Vec::new();
    for &m in modules {
        let path = out.join(m.file_name());
        std::fs::write(&path, render(&generate(m)?)?)?;
        paths.push(path);
    }
    Ok(paths)
}
