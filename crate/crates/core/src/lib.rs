//! Tick-level engagement-process lab: environments whose agents choose *sets*
//! of interventions (possibly empty) at every tick while observation events
//! arrive on their own schedule, plus exact belief machinery for small
//! explicit models, tabular learners, evaluation tooling, and trace
//! rendering.

pub mod agents;
pub mod assistant;
pub mod belief;
pub mod deliberation;
pub mod ep;
pub mod episode;
pub mod experiments;
pub mod explicit;
pub mod metrics;
pub mod options;
pub mod patrol;
pub mod render;
pub mod rng;
