//! Simulation library for a two-node heralded spin-photon network.

pub mod analysis;
pub mod cavity;
pub mod config;
pub mod photonlink;
pub mod protocol;
pub mod qcore;
pub mod runner;
pub mod spinphoton;
