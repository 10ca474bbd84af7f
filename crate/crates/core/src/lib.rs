//! Active probabilistic reasoning workbench.
//!
//! One of several arms is biased towards RED; an agent samples arms under
//! random occlusion for a hidden number of rounds, then names the biased arm.
//! This crate holds the task environment, the normative observer, reference
//! agents, the mechanistic choice model and its fitter, behavioural metrics,
//! the chat-model protocol driver, persistence and the session manager used
//! by the web service.

pub mod agents;
pub mod bayes;
pub mod env;
pub mod fit;
pub mod fixtures;
pub mod llm;
pub mod metrics;
pub mod mech;
pub mod rng;
pub mod service;
pub mod store;
mod util;

pub use bayes::{BeliefState, LlrConstants};
pub use env::{ArmSet, Game, Outcome, TaskConfig, Trajectory};
pub use mech::{MechAgent, MechParams};
pub use metrics::{AgentReport, SuccessStats};
