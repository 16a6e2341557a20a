//! Learned tracking penalties for layered trajectory generation.
//!
//! The crate implements a two-layer control stack for a unicycle and a
//! quadrotor: fixed low-layer tracking controllers, closed-loop rollout and
//! cost machinery, dataset generation (dynamically feasible references from
//! an iterative LQR solve and deliberately hard polynomial references),
//! a small from-scratch network that learns the closed-loop tracking cost of
//! a reference, and trajectory planners that use the learned cost as a
//! regularizer.

pub mod controllers;
pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod ilqr;
pub mod learner;
pub mod planner;
pub mod trajgen;

pub use error::{Error, Result};
