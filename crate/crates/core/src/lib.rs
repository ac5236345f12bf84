//! Slotted-access contention game with a manager that intervenes by
//! transmitting.
//!
//! The crate covers the base game, intervention rules, equilibrium
//! characterization and verification, the adaptive adjustment process,
//! target selection and models of what the manager can observe.

pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod game;
pub mod intervention;
pub mod observation;
pub mod region;
pub mod report;
pub mod search;
pub mod targets;

pub use error::{Error, Result};
pub use game::{GameSpec, PayoffProfile, StrategyProfile};
pub use intervention::InterventionRule;
pub use search::SearchBudget;
