//! Two-layer hazard analysis for discrete-event models of collaborative
//! systems.
//!
//! The formal layer composes extended finite automata, synthesizes the
//! maximal non-blocking supervisor with hazards as marked states, and
//! enumerates bounded event sequences reaching a hazard. The simulation
//! layer replays the proactive part of those sequences in a 2D kinematic
//! workcell and scores each run with a piecewise risk metric; random and
//! Monte Carlo tree search baselines explore the same simulator without
//! the formal model.

pub mod compose;
pub mod dsl;
pub mod efa;
pub mod error;
pub mod extract;
pub mod harness;
pub mod search;
pub mod sim;
pub mod synth;

pub use compose::{compose, flatten, flatten_with, ExplicitAutomaton, FlattenOptions};
pub use dsl::{parse_model, serialize_model, ModelSet};
pub use error::{Diagnostic, HazError, Result};
pub use synth::{check_nonblocking, coreachable_set, synthesize, synthesize_model, Supervisor};

/// Bundled model and scenario sources.
pub mod bundled {
    pub const INTRO_DES: &str = include_str!("../models/intro.des");
    pub const SCENARIO_A_DES: &str = include_str!("../models/scenario_a.des");
    pub const SCENARIO_A_SCN: &str = include_str!("../models/scenario_a.scn");
}
