//! Deterministic discrete-event simulator of 802.11 DCF and 802.11e EDCF
//! medium access, with waypoint mobility and base-station roaming.
//!
//! The usual entry points are [`scenario::load_scenario`] to obtain a
//! [`Scenario`], [`engine::run_scenario`] to execute it, and the helpers in
//! [`output`] to turn the result into summary records and CSV tables.

pub mod engine;
pub mod error;
pub mod mac;
pub mod metrics;
pub mod mobility;
pub mod oracle;
pub mod output;
pub mod phy;
pub mod scenario;
pub mod sim;
pub mod time;
pub mod traffic;

pub use engine::{run_scenario, RunOptions, RunOutput};
pub use error::{Result, SimError};
pub use scenario::{load_scenario, Scenario};
pub use time::SimTime;
