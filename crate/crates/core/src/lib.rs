//! Stochastic matching-queue simulator for liver allocation policies.
//!
//! Recipients wait in a single queue, move between MELD bands, may be granted
//! a MELD exception, and leave by transplantation or by reneging when their
//! patience runs out. Donor organs arrive one at a time and are allocated by
//! EDF, ESDF or SCORE.

pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod model;
pub mod output;
pub mod policy;
pub mod rng;
pub mod survival;

pub use config::{parse_config, RunConfig};
pub use engine::{EngineConfig, Models, Simulation};
pub use error::{ModelError, PolicyError, SimError, SurvivalError};
pub use metrics::{run_scenarios, ScenarioResult, ScenarioSpec, Stratum};
pub use model::{ClassId, Indication, Item, MeldBand, RecipientClass};
pub use policy::PolicyKind;
