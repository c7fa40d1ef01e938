//! Scenario files: entities, positions and the sessions to run.
//!
//! ```toml
//! version = 1
//! id = "honest_ap_query"
//!
//! [deployment]          # any DeploymentConfig field
//! threat = "low"
//!
//! [[holder]]
//! name = "alice"
//! x = 520.0
//! y = 500.0
//! device_id = "sn-0001"
//! device_class = "mobile"
//!
//! [[ap]]
//! name = "ap-1"
//! x = 500.0
//! y = 500.0
//! region = "region-1"
//!
//! [[server]]
//! name = "psd"
//! mode = "psd"
//!
//! [[session]]
//! client = "alice"
//! server = "psd"
//! freq = 3560
//! via = "ap"            # optional: the expected witness path
//! report = { available = false, incumbent_class = 0, max_eirp_cdbm = 3000 }
//! ```

use std::collections::HashSet;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use slap_core::protocol::{
    ApSpec, Deployment, DeploymentConfig, HolderSpec, Phase, ServerMode, ServerSpec, UsageReport,
};
use toml::Spanned;

/// Scenario schema version understood by this build.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{file}:{line}: {message}")]
pub struct ScenarioError {
    pub file: String,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Via {
    Ap,
    Nd,
}

impl Via {
    pub fn phase(self) -> Phase {
        match self {
            Via::Ap => Phase::PolAp,
            Via::Nd => Phase::PolNd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSpec {
    pub available: bool,
    pub incumbent_class: u8,
    pub max_eirp_cdbm: i16,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSpec {
    pub client: Spanned<String>,
    pub server: Spanned<String>,
    /// Server that receives the notification; defaults to `server`.
    #[serde(default)]
    pub target: Option<Spanned<String>>,
    pub freq: Spanned<u16>,
    #[serde(default)]
    pub via: Option<Via>,
    /// Usage report for a PSD target.
    #[serde(default)]
    pub report: Option<Spanned<ReportSpec>>,
    /// Service request for a CRN target.
    #[serde(default)]
    pub payload: Option<Spanned<String>>,
}

impl SessionSpec {
    pub fn target(&self) -> &str {
        self.target.as_ref().unwrap_or(&self.server).get_ref()
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: Spanned<u32>,
    pub id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub deployment: DeploymentConfig,
    #[serde(default, rename = "holder")]
    pub holders: Vec<Spanned<HolderSpec>>,
    #[serde(default, rename = "ap")]
    pub aps: Vec<Spanned<ApSpec>>,
    #[serde(default, rename = "server")]
    pub servers: Vec<Spanned<ServerSpec>>,
    #[serde(default, rename = "session")]
    pub sessions: Vec<SessionSpec>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError {
            file: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        Scenario::parse(&text, &path.display().to_string())
    }

    /// Parses and validates; diagnostics carry 1-based line numbers.
    pub fn parse(text: &str, file: &str) -> Result<Self, ScenarioError> {
        let err = |span: Option<Range<usize>>, message: String| ScenarioError {
            file: file.to_string(),
            line: span.map_or(0, |s| line_of(text, s.start)),
            message,
        };
        let s: Scenario = toml::from_str(text).map_err(|e| err(e.span(), e.message().to_string()))?;

        if *s.version.get_ref() != SCHEMA_VERSION {
            return Err(err(
                Some(s.version.span()),
                format!("unsupported schema version {}, expected {SCHEMA_VERSION}", s.version.get_ref()),
            ));
        }
        let mut names = HashSet::new();
        let all = s
            .holders
            .iter()
            .map(|h| (h.get_ref().name.as_str(), h.span()))
            .chain(s.aps.iter().map(|a| (a.get_ref().name.as_str(), a.span())))
            .chain(s.servers.iter().map(|v| (v.get_ref().name.as_str(), v.span())));
        for (name, span) in all {
            if !names.insert(name) {
                return Err(err(Some(span), format!("duplicate entity name `{name}`")));
            }
        }
        for a in &s.aps {
            if !s.deployment.regions.contains(&a.get_ref().region) {
                return Err(err(Some(a.span()), format!("unknown region `{}`", a.get_ref().region)));
            }
        }
        let holder = |n: &Spanned<String>| {
            s.holders
                .iter()
                .any(|h| h.get_ref().name == *n.get_ref())
                .then_some(())
                .ok_or_else(|| err(Some(n.span()), format!("unknown holder `{}`", n.get_ref())))
        };
        let server = |n: &Spanned<String>| {
            s.servers
                .iter()
                .find(|v| v.get_ref().name == *n.get_ref())
                .map(|v| v.get_ref().mode)
                .ok_or_else(|| err(Some(n.span()), format!("unknown server `{}`", n.get_ref())))
        };
        for sess in &s.sessions {
            holder(&sess.client)?;
            if server(&sess.server)? != ServerMode::Psd {
                return Err(err(Some(sess.server.span()), "queries go to a PSD".into()));
            }
            let target = sess.target.as_ref().unwrap_or(&sess.server);
            match server(target)? {
                ServerMode::Psd => {
                    if sess.report.is_none() {
                        return Err(err(Some(target.span()), "a PSD target needs a `report`".into()));
                    }
                }
                ServerMode::Crn => match &sess.payload {
                    None => return Err(err(Some(target.span()), "a CRN target needs a `payload`".into())),
                    Some(p) if p.get_ref().len() >= slap_core::protocol::MAX_PAYLOAD_BYTES => {
                        return Err(err(Some(p.span()), "payload must be shorter than 256 bytes".into()));
                    }
                    Some(_) => {}
                },
            }
            if !s.deployment.store.bands.contains(sess.freq.get_ref()) {
                return Err(err(Some(sess.freq.span()), format!("band {} is not in the store", sess.freq.get_ref())));
            }
        }
        Ok(s)
    }

    /// The deployment with every entity placed. Holders are not yet
    /// registered, so callers can observe registration traffic.
    pub fn build(&self, seed: Option<u64>) -> Result<Deployment, slap_core::protocol::ProtocolError> {
        let mut cfg = self.deployment.clone();
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        let mut d = Deployment::new(cfg)?;
        for h in &self.holders {
            d.add_holder(h.get_ref().clone())?;
        }
        for a in &self.aps {
            d.add_ap(a.get_ref().clone())?;
        }
        for v in &self.servers {
            d.add_server(v.get_ref().clone())?;
        }
        Ok(d)
    }

    /// Notification payload for a session.
    pub fn payload(&self, sess: &SessionSpec) -> Vec<u8> {
        match (&sess.report, &sess.payload) {
            (Some(r), _) => {
                let r = r.get_ref();
                UsageReport {
                    available: r.available,
                    incumbent_class: r.incumbent_class,
                    max_eirp_cdbm: r.max_eirp_cdbm,
                }
                .to_bytes()
            }
            (None, Some(p)) => p.get_ref().as_bytes().to_vec(),
            (None, None) => Vec::new(),
        }
    }
}

/// The scenarios shipped with the tool.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "honest_ap_query" => Some(include_str!("../scenarios/honest_ap_query.toml")),
        "rural_nd_query" => Some(include_str!("../scenarios/rural_nd_query.toml")),
        _ => None,
    }
}

pub const BUNDLED: &[&str] = &["honest_ap_query", "rural_nd_query"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_parse() {
        for name in BUNDLED {
            let s = Scenario::parse(bundled(name).unwrap(), name).unwrap();
            assert_eq!(s.id, *name);
            assert!(!s.sessions.is_empty());
        }
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let text = "version = 1\nid = \"x\"\n\n[[holder]]\nname = \"a\"\nx = oops\n";
        let e = Scenario::parse(text, "bad.toml").unwrap_err();
        assert_eq!(e.line, 6, "{e}");
        assert!(e.to_string().starts_with("bad.toml:6:"));
    }

    #[test]
    fn unknown_field_is_located() {
        let text = "version = 1\nid = \"x\"\n[[server]]\nname = \"psd\"\nmode = \"psd\"\ncolour = 3\n";
        let e = Scenario::parse(text, "f").unwrap_err();
        assert!(e.message.contains("colour"), "{e}");
        assert!(e.line >= 3, "{e}");
    }

    #[test]
    fn semantic_errors_point_at_the_reference() {
        let text = r#"version = 1
id = "x"
[[holder]]
name = "a"
x = 1.0
y = 1.0
device_id = "d"
device_class = "iot"
[[server]]
name = "psd"
mode = "psd"
[[session]]
client = "a"
server = "psd"
freq = 3560
report = { available = true, incumbent_class = 0, max_eirp_cdbm = 0 }
[[session]]
client = "b"
server = "psd"
freq = 3560
report = { available = true, incumbent_class = 0, max_eirp_cdbm = 0 }
"#;
        let e = Scenario::parse(text, "f").unwrap_err();
        assert_eq!(e.line, 18, "{e}");
        assert!(e.message.contains("unknown holder `b`"));
    }

    #[test]
    fn version_and_duplicates_checked() {
        let e = Scenario::parse("version = 2\nid = \"x\"\n", "f").unwrap_err();
        assert_eq!(e.line, 1);
        let text = "version = 1\nid = \"x\"\n[[server]]\nname = \"s\"\nmode = \"psd\"\n[[server]]\nname = \"s\"\nmode = \"crn\"\n";
        let e = Scenario::parse(text, "f").unwrap_err();
        assert!(e.message.contains("duplicate"));
        // The second `[[server]]` header.
        assert_eq!(e.line, 6);
    }
}
