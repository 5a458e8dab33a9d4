//! Network-slice orchestration for shared industrial edge infrastructure.
//!
//! Tenants submit [`model::SliceBlueprint`]s; the [`orchestrator`] admits,
//! places, instantiates, reconfigures and terminates slices on an emulated
//! multi-site infrastructure ([`emu`]), while [`federation`] governs which
//! data may cross between slices. [`bench`] reproduces the slice
//! instantiation response-time experiment and runs end-to-end scenarios.

pub mod api;
pub mod bench;
pub mod emu;
pub mod error;
pub mod federation;
pub mod model;
pub mod orchestrator;

#[cfg(feature = "oracle")]
pub mod oracle;

pub use error::{Error, Result};
