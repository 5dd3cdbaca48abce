//! Physical-channel interaction analysis for trigger-action smart-home apps.
//!
//! The crate models every device command as a hybrid automaton over one
//! physical channel, joins those models with the apps into one graph,
//! simulates the graph under activation schedules and checks MTL policies
//! on the resulting traces.

pub mod analysis;
pub mod calibration;
pub mod composition;
pub mod config;
pub mod mtl;
pub mod pem;
pub mod physics;
pub mod policy;
pub mod simulation;
