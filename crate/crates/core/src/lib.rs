//! Anonymous, location-verified, DoS-resistant spectrum access.

pub mod dac;
pub mod dbp;
pub mod group;
pub mod gsig;
pub mod protocol;
pub mod ranging;
pub mod setcommit;
pub mod simnet;
pub mod store;
pub mod tlp;
pub mod wire;
