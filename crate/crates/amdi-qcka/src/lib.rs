//! Key-rate engine, pairing simulator and parameter optimizer for asynchronous
//! measurement-device-independent quantum conference key agreement.

pub mod model;
pub mod optics;
pub mod stats;
pub mod fock_oracle;
pub mod pairing;
pub mod sift;
pub mod decoy;
pub mod keyrate;
pub mod optimize;
pub mod mermin;
pub mod validation;
pub mod cli;
