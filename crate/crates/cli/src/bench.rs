//! Wall-clock costs per protocol phase and per primitive.
//!
//! Reference figures were measured on different hardware. They are printed
//! for shape comparison only.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use slap_core::dac::{cred_prove, cred_verify, CREDENTIAL_CORE_BYTES};
use slap_core::dbp::{aka_derive, Role};
use slap_core::group::random_nonzero;
use slap_core::gsig::{gs_keygen, gs_sign, gs_verify, message_scalar};
use slap_core::protocol::{verify_location_proof, PolEvidence, QueryRequest};
use slap_core::tlp::{puzzle_gen, puzzle_solve, solution_verify, PuzzleRegistry};

use crate::fixture::{usage_report, world, ALICE, AP, BAND, ND, PSD, RURAL};
use crate::stats::{linear_fit, mad, median, LinearFit};
use crate::CliError;

/// Verifications timed per solve repetition.
const VERIFY_OVERSAMPLE: usize = 10;

pub const MIN_REPS: usize = 10;
pub const REFERENCE_NOTE: &str = "reference-hardware-only";

/// Difficulty levels with reference solver timings.
pub const TLP_LADDER: [u64; 4] = [1_000, 15_000, 50_000, 100_000];
/// Reference solve times for [`TLP_LADDER`], in ms.
pub const TLP_LADDER_REFERENCE_MS: [f64; 4] = [3.9, 56.31, 194.0, 784.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchPhase {
    PolAp,
    PolNd,
    Query,
    Notify,
    Primitives,
}

impl BenchPhase {
    pub const ALL: [BenchPhase; 5] = [
        BenchPhase::PolAp,
        BenchPhase::PolNd,
        BenchPhase::Query,
        BenchPhase::Notify,
        BenchPhase::Primitives,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchPhase::PolAp => "pol_ap",
            BenchPhase::PolNd => "pol_nd",
            BenchPhase::Query => "query",
            BenchPhase::Notify => "notify",
            BenchPhase::Primitives => "primitives",
        }
    }

    /// Reference client and server costs in ms.
    fn reference(self) -> Option<(f64, f64)> {
        match self {
            BenchPhase::PolAp => Some((20.17, 61.26)),
            BenchPhase::PolNd => Some((31.75, 78.05)),
            BenchPhase::Query => Some((17.22, 61.39)),
            BenchPhase::Notify => Some((17.22, 59.01)),
            BenchPhase::Primitives => None,
        }
    }
}

impl fmt::Display for BenchPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchPhase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.replace('-', "_");
        BenchPhase::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown bench phase `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpStat {
    pub name: String,
    pub samples: usize,
    pub median_ms: f64,
    pub mad_ms: f64,
    pub reference_ms: Option<f64>,
}

impl OpStat {
    fn from_ns(name: &str, ns: &[f64], reference_ms: Option<f64>) -> Self {
        let ms: Vec<f64> = ns.iter().map(|x| x / 1e6).collect();
        OpStat {
            name: name.to_string(),
            samples: ms.len(),
            median_ms: median(&ms),
            mad_ms: mad(&ms),
            reference_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderReport {
    pub kappas: Vec<u64>,
    pub solve_median_ms: Vec<f64>,
    pub verify_median_us: Vec<f64>,
    /// Squarings counted by the solver at each level.
    pub squarings: Vec<u64>,
    pub fit: LinearFit,
    /// Largest over smallest median verification time.
    pub verify_ratio: f64,
    pub reference_ms: Vec<Option<f64>>,
}

impl LadderReport {
    pub fn linear(&self) -> bool {
        self.fit.r2 >= 0.95
    }

    pub fn verify_flat(&self) -> bool {
        self.verify_ratio < 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub phase: String,
    pub reps: usize,
    pub ops: Vec<OpStat>,
    pub ladder: Option<LadderReport>,
    pub checks: BTreeMap<String, bool>,
    pub reference_note: &'static str,
}

impl BenchReport {
    pub fn passed(&self) -> bool {
        self.checks.values().all(|&ok| ok)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "bench {} ({} reps; reference figures are {REFERENCE_NOTE})", self.phase, self.reps);
        for op in &self.ops {
            let _ = writeln!(
                s,
                "  {:<28} median {:>10.3} ms  mad {:>8.3} ms  reference {}",
                op.name,
                op.median_ms,
                op.mad_ms,
                op.reference_ms.map_or("-".into(), |r| format!("{r} ms")),
            );
        }
        if let Some(l) = &self.ladder {
            for i in 0..l.kappas.len() {
                let _ = writeln!(
                    s,
                    "  tlp kappa {:>7}: solve {:>9.3} ms  verify {:>8.1} us  reference {}",
                    l.kappas[i],
                    l.solve_median_ms[i],
                    l.verify_median_us[i],
                    l.reference_ms[i].map_or("-".into(), |r| format!("{r} ms"))
                );
            }
            let _ = writeln!(s, "  linear fit r2 {:.4}, verify ratio {:.3}", l.fit.r2, l.verify_ratio);
        }
        for (k, ok) in &self.checks {
            let _ = writeln!(s, "  check {k}: {}", if *ok { "ok" } else { "FAIL" });
        }
        s
    }
}

fn internal(e: impl fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed().as_nanos() as f64)
}

/// Solve and verification times over the difficulty ladder, `reps` each.
pub fn tlp_ladder(kappas: &[u64], bits: usize, reps: usize, seed: u64) -> Result<LadderReport, CliError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let registry = PuzzleRegistry::new();
    let m = num_bigint_dig::BigUint::from(2u32);
    let mut keys = Vec::new();
    for &kappa in kappas {
        keys.push(puzzle_gen(bits, kappa, &registry, &mut rng).map_err(internal)?);
    }
    // Levels take turns so drift in machine load is shared between them.
    let mut s = vec![Vec::new(); keys.len()];
    let mut last = vec![None; keys.len()];
    for _ in 0..reps {
        for (i, k) in keys.iter().enumerate() {
            let (r, ns) = timed(|| puzzle_solve(&m, &k.public));
            s[i].push(ns);
            last[i] = Some(r.map_err(internal)?);
        }
    }
    let solve: Vec<f64> = s.iter().map(|x| median(x) / 1e6).collect();
    let mut squarings = Vec::new();
    let mut solved = Vec::new();
    for (k, l) in keys.into_iter().zip(last) {
        let (sol, trace) = l.ok_or_else(|| internal("no repetitions"))?;
        squarings.push(trace.squarings);
        solved.push((k, sol));
    }
    // Verification is cheap and noisy, so it is oversampled.
    let mut v = vec![Vec::new(); solved.len()];
    for _ in 0..reps * VERIFY_OVERSAMPLE {
        for (i, (keys, sol)) in solved.iter().enumerate() {
            let (ok, ns) = timed(|| solution_verify(&keys.secret, sol));
            if !ok {
                return Err(internal(format!("solution at kappa {} did not verify", keys.public.kappa)));
            }
            v[i].push(ns);
        }
    }
    let verify: Vec<f64> = v.iter().map(|x| median(x) / 1e3).collect();
    let xs: Vec<f64> = kappas.iter().map(|&k| k as f64).collect();
    let fit = linear_fit(&xs, &solve);
    let lo = verify.iter().copied().fold(f64::MAX, f64::min);
    let hi = verify.iter().copied().fold(f64::MIN, f64::max);
    let reference_ms = kappas
        .iter()
        .map(|k| {
            TLP_LADDER
                .iter()
                .position(|l| l == k)
                .map(|i| TLP_LADDER_REFERENCE_MS[i])
        })
        .collect();
    Ok(LadderReport {
        kappas: kappas.to_vec(),
        solve_median_ms: solve,
        verify_median_us: verify,
        squarings,
        fit,
        verify_ratio: hi / lo,
        reference_ms,
    })
}

/// Runs one bench phase `reps` times against the fixture deployment.
pub fn run_bench(phase: BenchPhase, reps: usize, seed: u64, tlp_bits: usize) -> Result<BenchReport, CliError> {
    if reps < MIN_REPS {
        return Err(CliError::Config(format!("bench needs at least {MIN_REPS} reps, got {reps}")));
    }
    let mut d = world(seed, tlp_bits)?;
    let mut checks = BTreeMap::new();
    let mut ladder = None;
    let reference = phase.reference();
    let (mut client, mut server, mut total) = (Vec::<f64>::new(), Vec::<f64>::new(), Vec::<f64>::new());
    let mut extra: Vec<(&str, Vec<f64>, Option<f64>)> = Vec::new();

    match phase {
        BenchPhase::PolAp => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let signer = gs_keygen(&mut rng);
            let (mut check, mut sign) = (Vec::new(), Vec::new());
            for _ in 0..reps {
                let mut s = d.begin_session(ALICE);
                let (r, ns) = timed(|| d.pol_ap(ALICE, AP, &mut s));
                r.map_err(internal)?;
                total.push(ns);
                let Some(PolEvidence::Ap(phi)) = &s.evidence else {
                    return Err(internal("missing proof of location"));
                };
                let (ok, ns) = timed(|| verify_location_proof(&d.public, phi));
                if !ok {
                    return Err(internal("location proof did not verify"));
                }
                check.push(ns);
                let msg = phi.scalars();
                let (_, ns) = timed(|| gs_sign(&d.public.gs, &signer.sk, &msg, &mut rng));
                sign.push(ns);
            }
            extra.push(("client: location proof check", check, None));
            extra.push(("ap: group sign", sign, None));
            checks.insert("completed".into(), true);
        }
        BenchPhase::PolNd => {
            for _ in 0..reps {
                let mut s = d.begin_session(RURAL);
                let (r, ns) = timed(|| d.pol_nd(RURAL, ND, &mut s));
                r.map_err(internal)?;
                total.push(ns);
            }
            checks.insert("completed".into(), true);
        }
        BenchPhase::Query => {
            let mut s = d.begin_session(ALICE);
            d.pol_ap(ALICE, AP, &mut s).map_err(internal)?;
            let evidence = s.evidence.clone().ok_or_else(|| internal("missing proof of location"))?;
            let query = slap_core::store::Query {
                lx: s.lx,
                ly: s.ly,
                ts: s.ts,
                freq: BAND,
            };
            let name = d.servers[PSD].spec.name.clone();
            let ctx = QueryRequest::context(&name, &query, &evidence);
            let disclosure = s.disclosure(&d.holders[ALICE]);
            for _ in 0..reps {
                let (p, ns) = timed(|| d.present(ALICE, &s, &disclosure, &ctx));
                client.push(ns);
                let req = QueryRequest {
                    query,
                    evidence: evidence.clone(),
                    presentation: p.map_err(internal)?,
                };
                let (r, ns) = timed(|| d.submit_query(ALICE, PSD, &req));
                r.map_err(internal)?;
                server.push(ns);
            }
            checks.insert("completed".into(), true);
        }
        BenchPhase::Notify => {
            let payload = usage_report();
            for _ in 0..reps {
                let mut s = d.begin_session(ALICE);
                d.pol_ap(ALICE, AP, &mut s).map_err(internal)?;
                d.query(ALICE, PSD, &mut s, BAND, PSD).map_err(internal)?;
                let (r, ns) = timed(|| d.notify(ALICE, &s, &payload));
                let out = r.map_err(internal)?;
                total.push(ns);
                server.push(out.server_cost.total_ns as f64);
                client.push(ns - out.server_cost.total_ns as f64);
            }
            checks.insert("completed".into(), true);
        }
        BenchPhase::Primitives => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let keys = gs_keygen(&mut rng);
            let msg: Vec<_> = (0..slap_core::gsig::DEPLOYMENT_MESSAGE_LEN)
                .map(|i| message_scalar("bench", &[i as u8]))
                .collect();
            let (mut sign, mut verify, mut aka, mut prove, mut cverify) =
                (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
            let h = &d.holders[ALICE];
            let cred = h.credential.clone().ok_or_else(|| internal("alice is unregistered"))?;
            let nym = h.fresh_nym(&mut rng);
            let disclosure = [h.class_disclosure()];
            let (sk_a, sk_b) = (random_nonzero(&mut rng), random_nonzero(&mut rng));
            let g = slap_core::group::hash_to_g1(b"slap/bench", b"generator");
            let (pk_a, pk_b) = (g * sk_a, g * sk_b);
            for _ in 0..reps {
                let (sig, ns) = timed(|| gs_sign(&d.public.gs, &keys.sk, &msg, &mut rng));
                let sig = sig.map_err(internal)?;
                sign.push(ns);
                let (ok, ns) = timed(|| gs_verify(&d.public.gs, &keys.gk, &msg, &sig));
                verify.push(ns);
                if !ok {
                    return Err(internal("group signature did not verify"));
                }
                let (r, ns) = timed(|| aka_derive(&sk_a, &pk_a, &pk_b, b"bench", Role::Verifier, 16));
                r.map_err(internal)?;
                aka.push(ns);
                let (p, ns) = timed(|| cred_prove(&d.public.dac, &h.keys, &nym, &cred, &disclosure, b"bench", &mut rng));
                let p = p.map_err(internal)?;
                prove.push(ns);
                let (ok, ns) = timed(|| cred_verify(&d.public.dac, &d.public.dac.root, &p, b"bench"));
                cverify.push(ns);
                if !ok {
                    return Err(internal("presentation did not verify"));
                }
            }
            extra.push(("gs sign", sign, Some(2.26)));
            extra.push(("gs verify", verify, Some(3.17)));
            extra.push(("aka derive", aka, Some(0.612)));
            extra.push(("credential prove", prove, None));
            extra.push(("credential verify", cverify, None));
            let l = tlp_ladder(&TLP_LADDER, d.config.tlp_bits, reps, seed)?;
            extra.push((
                "tlp verify",
                l.verify_median_us.iter().map(|us| us * 1e3).collect(),
                Some(0.797),
            ));
            checks.insert("tlp solve linear in kappa (r2 >= 0.95)".into(), l.linear());
            checks.insert("tlp verify flat across ladder (< 2x)".into(), l.verify_flat());
            checks.insert(
                format!("credential core is 224 bytes ({} measured)", cred.core_bytes().len()),
                cred.core_bytes().len() == 224 && CREDENTIAL_CORE_BYTES == 224,
            );
            ladder = Some(l);
        }
    }

    let mut ops = Vec::new();
    if !client.is_empty() {
        ops.push(OpStat::from_ns("client", &client, reference.map(|r| r.0)));
    }
    if !server.is_empty() {
        ops.push(OpStat::from_ns("server", &server, reference.map(|r| r.1)));
    }
    if !total.is_empty() {
        let sum = reference.map(|(c, s)| c + s);
        ops.push(OpStat::from_ns("end-to-end", &total, sum));
    }
    for (name, ns, r) in extra {
        ops.push(OpStat::from_ns(name, &ns, r));
    }
    Ok(BenchReport {
        phase: phase.name().to_string(),
        reps,
        ops,
        ladder,
        checks,
        reference_note: REFERENCE_NOTE,
    })
}
