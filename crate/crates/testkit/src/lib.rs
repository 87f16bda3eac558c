//! Independent reference implementations used as test oracles.
//!
//! Nothing here calls into the engine's update, storage or census code; the
//! engine crate is used only for its plain data types.

pub mod chains;
pub mod evasion;
pub mod history_oracle;
pub mod rational_ledger;
pub mod tracker_oracle;
pub mod triads;
