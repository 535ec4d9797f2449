//! Barrier-guided score-based diffusion planning for racing trajectories.
//!
//! A score network trained on expert trajectories (Frenet lateral offset and
//! relative yaw per track station) is sampled with a reverse-time SDE whose
//! drift is augmented by the gradient of an obstacle/nominal barrier. A warm
//! start re-noises the previous plan to a small diffusion time so replanning
//! needs only a handful of denoising steps.

pub mod barrier;
pub mod data;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod sampler;
pub mod schedule;
pub mod scorenet;

pub use error::{Error, Result};
