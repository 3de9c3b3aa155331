//! Swarm coordination workbench.
//!
//! Homogeneous agents with visibility-limited sensing exchange fixed-size
//! messages with their neighbours. A single shared network maps each agent's
//! discretized local observation and aggregated message inflow to an action
//! distribution and a per-group message outflow. The network is trained by
//! supervised truncated backpropagation through the unrolled multi-step,
//! multi-agent graph, using centralized oracles as teachers.
//!
//! Module map:
//! - [`geometry`]: planar primitives, radial discretization, enclosing circles
//! - [`world`]: double-integrator simulation, connectivity, observations
//! - [`comm`]: message routing and per-group aggregation
//! - [`policy`]: oracles, hand-designed baselines, learned-policy adapter
//! - [`nn`]: the shared MLP, exact gradients, Adam, checkpoints
//! - [`trainer`]: windowed rollouts and backpropagation through time
//! - [`eval`]: trials, comparisons, communication analysis
//! - [`config`]: run configuration files

pub mod comm;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod nn;
pub mod par;
pub mod policy;
pub mod trainer;
pub mod world;

pub use error::{Error, Result};
pub use geometry::{Circle, Discretization, Vec2};
