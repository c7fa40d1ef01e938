//! Scenario execution.

use std::collections::BTreeMap;
use std::path::Path;

use slap_core::dac::CREDENTIAL_CORE_BYTES;
use slap_core::protocol::{Deployment, ProtocolError, SessionOutcome};
use slap_core::simnet::{trace_digest, Interposition, LinkPattern};

use crate::accounting::{table_rows, tally};
use crate::report::{PhaseReport, RunReport, SessionReport, TableComparison, Verdict};
use crate::scenario::Scenario;
use crate::CliError;

/// Modulus width of the reference table's accounting.
const TABLE_MODULUS_BYTES: usize = 256;

fn session_report(client: &str, server: &str, target: &str, r: &Result<SessionOutcome, ProtocolError>) -> SessionReport {
    let mut s = SessionReport {
        client: client.to_string(),
        server: server.to_string(),
        target: target.to_string(),
        verdict: Verdict::Reject,
        error: None,
        path: None,
        witness: None,
        delta_m: None,
        dbp_rounds_passed: None,
        kappa: None,
        squarings: None,
        stored: false,
        token: None,
    };
    match r {
        Ok(o) => {
            s.verdict = Verdict::Accept;
            s.path = Some(o.pol.path.name().to_string());
            s.witness = Some(o.pol.witness.clone());
            s.delta_m = o.pol.delta_m;
            s.dbp_rounds_passed = o.pol.dbp_rounds_passed;
            s.kappa = Some(o.query.kappa);
            s.squarings = Some(o.notify.squarings);
            s.stored = o.notify.stored.is_some();
            s.token = o.notify.token.clone();
        }
        Err(e) => s.error = Some(e.to_string()),
    }
    s
}

/// Runs every session of `scenario`. Protocol rejections are recorded in the
/// report; configuration problems are errors.
pub fn run_scenario(scenario: &Scenario, seed: Option<u64>, tlp_bits: Option<usize>) -> Result<(RunReport, Deployment), CliError> {
    let mut s = scenario.clone();
    if let Some(bits) = tlp_bits {
        s.deployment.tlp_bits = bits;
    }
    let mut d = s.build(seed).map_err(|e| CliError::Config(e.to_string()))?;
    let tap = d.net.interpose(LinkPattern::default(), Interposition::Pass);
    d.register_all().map_err(|e| match e {
        ProtocolError::Config(m) => CliError::Config(m),
        e => CliError::Rejected(format!("registration: {e}")),
    })?;

    let mut sessions = Vec::new();
    for sess in &s.sessions {
        let payload = s.payload(sess);
        let (client, server, target) = (sess.client.get_ref(), sess.server.get_ref(), sess.target());
        let mut r = d.run_session(client, server, target, *sess.freq.get_ref(), &payload);
        if let Err(ProtocolError::Config(m)) = &r {
            return Err(CliError::Config(m.clone()));
        }
        if let (Ok(o), Some(via)) = (&r, sess.via) {
            if o.pol.path != via.phase() {
                r = Err(ProtocolError::Config(format!(
                    "expected a proof of location via {}, got {}",
                    via.phase().name(),
                    o.pol.path.name()
                )));
            }
        }
        sessions.push(session_report(client, server, target, &r));
    }

    let dbp_rounds = d.config.dbp_rounds;
    let recomputed = tally(d.net.captured(tap), dbp_rounds).map_err(|e| CliError::Internal(e.to_string()))?;
    let mut phases = Vec::new();
    let mut crypto_ns = BTreeMap::new();
    for (phase, st) in d.stats() {
        let canon = recomputed.get(phase).cloned().unwrap_or_default();
        phases.push(PhaseReport {
            phase: phase.name().to_string(),
            runs: st.runs,
            messages: st.messages,
            bytes: st.bytes,
            canonical_bytes: canon.bytes,
            reconciled: canon.bytes == st.bytes && canon.messages == st.messages,
            sim_ns: st.sim_ns,
            by_kind: canon.by_kind,
        });
        crypto_ns.insert(phase.name().to_string(), st.crypto_ns);
    }
    let table = table_rows(slap_core::dac::DEPLOYMENT_DEPTH, TABLE_MODULUS_BYTES)
        .into_iter()
        .map(|row| {
            let measured = phases
                .iter()
                .find(|p| p.phase == row.phase && p.runs > 0)
                .map(|p| p.bytes / p.runs);
            TableComparison {
                row,
                measured_bytes: measured,
            }
        })
        .collect();
    let report = RunReport {
        scenario: s.id.clone(),
        seed: d.config.seed,
        tlp_bits: d.config.tlp_bits,
        sessions,
        phases,
        table,
        credential_core_bytes: CREDENTIAL_CORE_BYTES,
        trace_digest: trace_digest(d.net.trace()),
        messages: d.net.trace().len(),
        crypto_ns,
    };
    Ok((report, d))
}

/// Writes the report, summary and message trace under `out`.
pub fn write_run(out: &Path, report: &RunReport, d: &Deployment) -> std::io::Result<()> {
    crate::report::write_json(out, "report.json", report)?;
    std::fs::write(out.join("summary.txt"), report.summary())?;
    std::fs::write(out.join("trace.ndjson"), d.net.trace_ndjson())
}
