//! Distance estimation at the access point from RSS and round-trip time.
//!
//! Synthetic log-distance path-loss model: received power at distance `d` is
//! `P_tx − PL(d0) − 10·γ·log10(d / d0)` plus Normal(0, σ) shadowing.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::simnet::{Position, C_LIGHT};

pub const MIN_PATH_LOSS_EXPONENT: f64 = 1.6;
pub const MAX_PATH_LOSS_EXPONENT: f64 = 6.0;
pub const MIN_BEACON_WINDOW_NS: u64 = 100_000_000;
pub const MAX_BEACON_WINDOW_NS: u64 = 500_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RangingError {
    #[error("invalid environment parameter: {0}")]
    InvalidEnv(String),
    #[error("round-trip time {rtt_ns} ns is below twice the processing delay {t_proc_ns} ns")]
    RttTooShort { rtt_ns: u64, t_proc_ns: u64 },
    #[error("ranging inconsistency: RTT says {d_rtt:.1} m, RSS says {d_rss:.1} m")]
    Inconsistency { d_rtt: f64, d_rss: f64 },
    #[error("beacon window {0} ns outside [100, 500] ms")]
    BeaconWindow(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvParams {
    pub gamma: f64,
    pub d0_m: f64,
    /// Received power at `d0`, expressed as a loss relative to `P_tx` (dB).
    pub pl_d0_db: f64,
    pub p_tx_dbm: f64,
    pub sigma_db: f64,
    pub t_proc_ns: u64,
    pub epsilon_cross_m: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams {
            gamma: 2.0,
            d0_m: 1.0,
            pl_d0_db: 40.0,
            p_tx_dbm: 20.0,
            sigma_db: 0.0,
            t_proc_ns: 1_000,
            epsilon_cross_m: 60.0,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<(), RangingError> {
        if !(MIN_PATH_LOSS_EXPONENT..=MAX_PATH_LOSS_EXPONENT).contains(&self.gamma) {
            return Err(RangingError::InvalidEnv(format!("gamma {} outside [1.6, 6]", self.gamma)));
        }
        if !(self.d0_m > 0.0) {
            return Err(RangingError::InvalidEnv(format!("d0 {} must be positive", self.d0_m)));
        }
        if !(self.epsilon_cross_m > 0.0) {
            return Err(RangingError::InvalidEnv(format!(
                "cross-check tolerance {} must be positive",
                self.epsilon_cross_m
            )));
        }
        if !(self.sigma_db >= 0.0) {
            return Err(RangingError::InvalidEnv(format!("sigma {} must be non-negative", self.sigma_db)));
        }
        Ok(())
    }

    /// Mean received power at `d` meters (no shadowing).
    pub fn mean_rss(&self, d: f64) -> f64 {
        let d = d.max(self.d0_m);
        self.p_tx_dbm - self.pl_d0_db - 10.0 * self.gamma * (d / self.d0_m).log10()
    }

    pub fn distance_from_rss(&self, rss_dbm: f64) -> f64 {
        self.d0_m * 10f64.powf((self.p_tx_dbm - self.pl_d0_db - rss_dbm) / (10.0 * self.gamma))
    }

    pub fn distance_from_rtt(&self, rtt_ns: u64) -> Result<f64, RangingError> {
        let floor = 2 * self.t_proc_ns;
        if rtt_ns < floor {
            return Err(RangingError::RttTooShort {
                rtt_ns,
                t_proc_ns: self.t_proc_ns,
            });
        }
        Ok((rtt_ns - floor) as f64 * 1e-9 * C_LIGHT / 2.0)
    }
}

/// Returns Δ, the RTT distance, when RSS and RTT agree within `ε_cross`.
pub fn prox_verify(rss_dbm: f64, rtt_ns: u64, env: &EnvParams) -> Result<f64, RangingError> {
    env.validate()?;
    let d_rtt = env.distance_from_rtt(rtt_ns)?;
    let d_rss = env.distance_from_rss(rss_dbm);
    if (d_rtt - d_rss).abs() > env.epsilon_cross_m {
        return Err(RangingError::Inconsistency { d_rtt, d_rss });
    }
    Ok(d_rtt)
}

/// Closed-disc test: the boundary counts as covered.
pub fn in_coverage(delta_m: f64, claimed: Position, ap: Position, margin_m: f64) -> bool {
    claimed.distance(&ap) <= delta_m + margin_m
}

/// RSS observed at the AP for a transmitter at `distance_m`.
pub fn synth_rss<R: Rng + ?Sized>(env: &EnvParams, distance_m: f64, rng: &mut R) -> f64 {
    let mean = env.mean_rss(distance_m);
    if env.sigma_db == 0.0 {
        return mean;
    }
    let shadow = Normal::new(0.0, env.sigma_db).expect("sigma validated non-negative");
    mean + shadow.sample(rng)
}

/// Rotating beacon the client must echo, so a proof request is tied to a
/// recent broadcast.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeaconSchedule {
    secret: [u8; 32],
    window_ns: u64,
}

impl BeaconSchedule {
    pub fn new(secret: [u8; 32], window_ns: u64) -> Result<Self, RangingError> {
        if !(MIN_BEACON_WINDOW_NS..=MAX_BEACON_WINDOW_NS).contains(&window_ns) {
            return Err(RangingError::BeaconWindow(window_ns));
        }
        Ok(BeaconSchedule { secret, window_ns })
    }

    pub fn window_ns(&self) -> u64 {
        self.window_ns
    }

    pub fn epoch(&self, now_ns: u64) -> u64 {
        now_ns / self.window_ns
    }

    pub fn token_for_epoch(&self, epoch: u64) -> [u8; 16] {
        let mut h = Sha256::new();
        h.update(b"slap/ranging/beacon");
        h.update(self.secret);
        h.update(epoch.to_be_bytes());
        let mut out = [0u8; 16];
        out.copy_from_slice(&h.finalize()[..16]);
        out
    }

    pub fn token(&self, now_ns: u64) -> [u8; 16] {
        self.token_for_epoch(self.epoch(now_ns))
    }

    /// Accepts the current epoch's token or the one just before it.
    pub fn is_fresh(&self, token: &[u8; 16], now_ns: u64) -> bool {
        let e = self.epoch(now_ns);
        *token == self.token_for_epoch(e) || (e > 0 && *token == self.token_for_epoch(e - 1))
    }
}
