//! The fixed deployment shared by the attack suite and the benchmarks.

use slap_core::protocol::{
    ApSpec, Deployment, DeploymentConfig, HolderSpec, ProtocolError, ServerMode, ServerSpec, StoreConfig,
    UsageReport,
};
use slap_core::tlp::ThreatLevel;

use crate::CliError;

pub const BAND: u16 = 3560;

pub const ALICE: usize = 0;
pub const MALLORY: usize = 1;
/// Out of AP range, with `ND` 20 m away.
pub const RURAL: usize = 2;
pub const ND: usize = 3;
pub const AP: usize = 0;
pub const PSD: usize = 0;

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

fn internal(e: ProtocolError) -> CliError {
    CliError::Internal(e.to_string())
}

/// One AP at (500, 500) with `alice` 50 m east of it and `mallory` nearby,
/// a rural client and its neighbour far from any AP, and a PSD. Everyone is
/// registered; puzzles are at the policy floor on `tlp_bits`-bit moduli.
pub fn world(seed: u64, tlp_bits: usize) -> Result<Deployment, CliError> {
    let mut d = Deployment::new(DeploymentConfig {
        seed,
        tlp_bits,
        threat: ThreatLevel::None,
        store: StoreConfig {
            windows: 4,
            ..Default::default()
        },
        ..Default::default()
    })
    .map_err(internal)?;
    d.add_ap(ApSpec {
        name: "ap-1".into(),
        x: 500.0,
        y: 500.0,
        region: "region-1".into(),
        coverage_m: 200.0,
        margin_m: 10.0,
        radio_range_m: 300.0,
        env: Default::default(),
    })
    .map_err(internal)?;
    for spec in [
        holder("alice", 550.0, 500.0, "mobile"),
        holder("mallory", 560.0, 520.0, "mobile"),
        holder("rural", 1500.0, 1500.0, "iot"),
        holder("nd", 1520.0, 1500.0, "laptop"),
    ] {
        d.add_holder(spec).map_err(internal)?;
    }
    d.add_server(ServerSpec {
        name: "psd".into(),
        x: 0.0,
        y: 0.0,
        mode: ServerMode::Psd,
    })
    .map_err(internal)?;
    d.register_all().map_err(internal)?;
    Ok(d)
}

pub fn usage_report() -> Vec<u8> {
    UsageReport {
        available: false,
        incumbent_class: 2,
        max_eirp_cdbm: 2300,
    }
    .to_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_match_the_layout() {
        let d = world(1, slap_core::tlp::TOY_MODULUS_BITS).unwrap();
        assert_eq!(d.holder("alice").unwrap(), ALICE);
        assert_eq!(d.holder("mallory").unwrap(), MALLORY);
        assert_eq!(d.holder("rural").unwrap(), RURAL);
        assert_eq!(d.holder("nd").unwrap(), ND);
        assert_eq!(d.nearest_ap(ALICE), Some(AP));
        assert_eq!(d.nearest_ap(RURAL), None);
        assert_eq!(d.nearest_nd(RURAL), Some(ND));
    }
}
