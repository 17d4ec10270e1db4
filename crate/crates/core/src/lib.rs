//! Energy-efficient control of multi-hop wirelessly-powered networks.
//!
//! An energy access point beams RF energy to battery-powered nodes, which
//! spend it relaying data streams over a node-exclusive link model. Each
//! slot the controller picks energy or data transfer, the beam, routes and
//! powers from queue and battery state alone.

pub mod channel;
pub mod config;
pub mod constants;
pub mod controller;
pub mod engine;
pub mod error;
pub mod oracle;
pub mod presets;
pub mod rate;
pub mod rng;
pub mod state;
pub mod topology;

pub use config::{ConfigFile, SchedulerBackend, SimConfig};
pub use constants::{derive_constants, DerivedConstants};
pub use controller::{eecw_step, ControlAction, SlotMode};
pub use engine::{run, run_config, run_with, sweep, RunSummary, Simulation, SlotRecord, SweepAxis, Trace};
pub use error::{Error, Result};
pub use oracle::{check_lemma2, Violation, ViolationKind};
pub use rate::RateModel;
pub use topology::{build_topology, Topology};
