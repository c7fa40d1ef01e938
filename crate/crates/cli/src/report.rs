//! Report types shared by the subcommands, with JSON and table output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::accounting::TableRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionReport {
    pub client: String,
    pub server: String,
    pub target: String,
    pub verdict: Verdict,
    pub error: Option<String>,
    pub path: Option<String>,
    pub witness: Option<String>,
    pub delta_m: Option<f64>,
    pub dbp_rounds_passed: Option<usize>,
    pub kappa: Option<u64>,
    pub squarings: Option<u64>,
    pub stored: bool,
    pub token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseReport {
    pub phase: String,
    pub runs: u64,
    pub messages: u64,
    /// Bytes on the simulated wire.
    pub bytes: u64,
    /// Bytes recomputed from the message layouts.
    pub canonical_bytes: u64,
    pub reconciled: bool,
    pub sim_ns: u64,
    pub by_kind: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableComparison {
    #[serde(flatten)]
    pub row: TableRow,
    /// Our bytes per run of the phase, all messages included.
    pub measured_bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub tlp_bits: usize,
    pub sessions: Vec<SessionReport>,
    pub phases: Vec<PhaseReport>,
    pub table: Vec<TableComparison>,
    pub credential_core_bytes: usize,
    pub trace_digest: String,
    pub messages: usize,
    /// Wall-clock crypto time per phase. Not deterministic.
    pub crypto_ns: BTreeMap<String, u64>,
}

impl RunReport {
    pub fn all_accepted(&self) -> bool {
        self.sessions.iter().all(|s| s.verdict == Verdict::Accept)
    }

    pub fn reconciled(&self) -> bool {
        self.phases.iter().all(|p| p.reconciled)
    }

    /// The report with wall-clock fields cleared.
    pub fn deterministic(&self) -> RunReport {
        RunReport {
            crypto_ns: BTreeMap::new(),
            ..self.clone()
        }
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario {} (seed {}, {}-bit puzzles)", self.scenario, self.seed, self.tlp_bits);
        for x in &self.sessions {
            let _ = writeln!(
                s,
                "  {} -> {} / {}: {:?}{}{}",
                x.client,
                x.server,
                x.target,
                x.verdict,
                x.path.as_ref().map(|p| format!(" via {p}")).unwrap_or_default(),
                x.error.as_ref().map(|e| format!(" ({e})")).unwrap_or_default(),
            );
        }
        let _ = writeln!(
            s,
            "  {:<13} {:>5} {:>8} {:>10} {:>10} {:>12} {:>10}",
            "phase", "runs", "msgs", "bytes", "canonical", "sim", "crypto"
        );
        for p in &self.phases {
            let crypto = self.crypto_ns.get(&p.phase).copied().unwrap_or(0);
            let _ = writeln!(
                s,
                "  {:<13} {:>5} {:>8} {:>10} {:>10} {:>9.3} ms {:>7.2} ms{}",
                p.phase,
                p.runs,
                p.messages,
                p.bytes,
                p.canonical_bytes,
                p.sim_ns as f64 / 1e6,
                crypto as f64 / 1e6,
                if p.reconciled { "" } else { "  MISMATCH" }
            );
        }
        let _ = writeln!(s, "  communication per phase (reference totals are informational):");
        for t in &self.table {
            let _ = writeln!(
                s,
                "  {:<8} formula {:>5} B   reference {:>5} B   measured {}",
                t.row.phase,
                t.row.analytic_bytes,
                t.row.printed_bytes,
                t.measured_bytes.map_or("-".into(), |b| format!("{b} B")),
            );
        }
        let _ = writeln!(s, "  credential core {} B, trace digest {}", self.credential_core_bytes, self.trace_digest);
        s
    }
}

/// Writes `value` as pretty JSON to `dir/name`, creating `dir`.
pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    std::fs::write(dir.join(name), text + "\n")
}
