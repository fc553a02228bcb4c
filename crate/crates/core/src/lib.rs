//! Instance-level driving world model.
//!
//! Scenes are sparse sets of agent and map anchors. A small attention decoder
//! forecasts the next frame autoregressively on top of a closed-form
//! kinematic projection, and the forecasts feed a motion predictor/planner
//! whose ego trajectories are checked and adjusted against oriented-box
//! collision geometry.

pub mod alignment;
pub mod dreamer;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod memory;
pub mod motion;
pub mod nn;
pub mod pipeline;
pub mod safety;
pub mod scene;
pub mod selection;
pub mod sim;

pub use error::{Error, Result};
pub use geometry::{normalize_heading, Heading, OrientedBox2D, Pose2, Vec2};
pub use scene::*;
