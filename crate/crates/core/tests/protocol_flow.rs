//! End-to-end flows over the simulated network, from registration to
//! notification, using only the public core API.

use slap_core::protocol::{
    ApSpec, Deployment, DeploymentConfig, HolderSpec, Phase, PolEvidence, ProtocolError, ServerMode, ServerSpec,
    UsageReport,
};
use slap_core::tlp::ThreatLevel;

const BAND: u16 = 3560;

fn holder(name: &str, x: f64, y: f64, class: &str) -> HolderSpec {
    HolderSpec {
        name: name.into(),
        x,
        y,
        device_id: format!("{name}-id"),
        device_class: class.into(),
        radio_range_m: 300.0,
    }
}

fn server(name: &str, mode: ServerMode) -> ServerSpec {
    ServerSpec {
        name: name.into(),
        x: 0.0,
        y: 0.0,
        mode,
    }
}

fn deployment(seed: u64) -> Deployment {
    let mut d = Deployment::new(DeploymentConfig {
        seed,
        threat: ThreatLevel::None,
        ..Default::default()
    })
    .unwrap();
    d.add_ap(ApSpec {
        name: "ap".into(),
        x: 500.0,
        y: 500.0,
        region: "region-1".into(),
        coverage_m: 200.0,
        margin_m: 10.0,
        radio_range_m: 300.0,
        env: Default::default(),
    })
    .unwrap();
    d.add_holder(holder("near", 540.0, 500.0, "mobile")).unwrap();
    d.add_holder(holder("far", 1500.0, 1500.0, "iot")).unwrap();
    d.add_holder(holder("helper", 1530.0, 1500.0, "laptop")).unwrap();
    d.add_server(server("psd", ServerMode::Psd)).unwrap();
    d.add_server(server("crn", ServerMode::Crn)).unwrap();
    d.register_all().unwrap();
    d
}

fn report() -> Vec<u8> {
    UsageReport {
        available: true,
        incumbent_class: 1,
        max_eirp_cdbm: 3000,
    }
    .to_bytes()
}

#[test]
fn ap_path_stores_the_usage_report() {
    let mut d = deployment(1);
    let out = d.run_session("near", "psd", "psd", BAND, &report()).unwrap();
    assert_eq!(out.pol.path, Phase::PolAp);
    // Estimated distance to the AP, 40 m here.
    let delta = out.pol.delta_m.unwrap();
    assert!((delta - 40.0).abs() < 1.0, "delta {delta}");
    assert!(out.notify.stored.is_some());
    assert!(out.notify.token.is_none());
    assert!(out.notify.squarings >= out.query.kappa);
}

#[test]
fn nd_path_delegates_a_location_credential() {
    let mut d = deployment(2);
    let far = d.holder("far").unwrap();
    assert_eq!(d.nearest_ap(far), None);
    let out = d.run_session("far", "psd", "psd", BAND, &report()).unwrap();
    assert_eq!(out.pol.path, Phase::PolNd);
    assert_eq!(out.pol.witness, "helper");
    assert_eq!(out.pol.dbp_rounds_passed, Some(d.config.dbp_rounds));
}

#[test]
fn crn_target_grants_a_token() {
    let mut d = deployment(3);
    let out = d.run_session("near", "psd", "crn", BAND, &report()).unwrap();
    assert!(out.notify.token.is_some());
    assert!(out.notify.stored.is_none());
}

#[test]
fn every_phase_is_accounted() {
    let mut d = deployment(4);
    d.run_session("near", "psd", "psd", BAND, &report()).unwrap();
    d.run_session("far", "psd", "psd", BAND, &report()).unwrap();
    let stats = d.stats();
    for phase in [Phase::PolAp, Phase::PolNd, Phase::Query, Phase::Notify] {
        let s = &stats[&phase];
        assert!(s.runs >= 1 && s.messages >= 2 && s.bytes > 0, "{phase:?}: {s:?}");
    }
    let logged: u64 = d.messages().iter().map(|m| m.trace.size as u64).sum();
    let total: u64 = stats.values().map(|s| s.bytes).sum();
    assert_eq!(logged, total);
}

#[test]
fn puzzles_are_single_use() {
    let mut d = deployment(5);
    let h = d.holder("near").unwrap();
    let psd = d.server("psd").unwrap();
    let mut s = d.begin_session(h);
    d.acquire_pol(h, &mut s).unwrap();
    d.query(h, psd, &mut s, BAND, psd).unwrap();
    d.notify(h, &s, &report()).unwrap();
    let again = d.notify(h, &s, &report()).unwrap_err();
    assert!(matches!(again, ProtocolError::UnknownPuzzle), "{again}");
}

#[test]
fn a_stale_proof_of_location_is_refused() {
    let mut d = deployment(6);
    let h = d.holder("near").unwrap();
    let psd = d.server("psd").unwrap();
    let mut s = d.begin_session(h);
    d.acquire_pol(h, &mut s).unwrap();
    d.net.advance_by((d.config.freshness_s + 1) * 1_000_000_000);
    let e = d.query(h, psd, &mut s, BAND, psd).unwrap_err();
    assert!(matches!(e, ProtocolError::Stale { .. }), "{e}");
}

#[test]
fn evidence_from_one_session_does_not_carry_to_another_pseudonym() {
    let mut d = deployment(7);
    let h = d.holder("near").unwrap();
    let psd = d.server("psd").unwrap();
    let mut first = d.begin_session(h);
    d.acquire_pol(h, &mut first).unwrap();
    let mut second = d.begin_session(h);
    second.lx = first.lx;
    second.ly = first.ly;
    second.ts = first.ts;
    second.evidence = first.evidence.clone();
    assert!(matches!(second.evidence, Some(PolEvidence::Ap(_))));
    assert!(d.query(h, psd, &mut second, BAND, psd).is_err());
}

#[test]
fn oversized_payloads_are_rejected_before_any_crypto() {
    let mut d = deployment(8);
    let e = d.run_session("near", "psd", "psd", BAND, &[0u8; 300]).unwrap_err();
    assert!(matches!(e, ProtocolError::PayloadTooLong(300)), "{e}");
}

#[test]
fn same_seed_same_transcript() {
    let run = |seed| {
        let mut d = deployment(seed);
        d.run_session("near", "psd", "psd", BAND, &report()).unwrap();
        d.run_session("far", "psd", "psd", BAND, &report()).unwrap();
        d.messages()
            .iter()
            .map(|m| (m.trace.kind.clone(), m.trace.size, m.trace.time_ns))
            .collect::<Vec<_>>()
    };
    assert_eq!(run(9), run(9));
}
