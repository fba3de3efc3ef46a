//! Hierarchical loco-manipulation control for a quadruped carrying a 1-DOF arm.
//!
//! The stack runs three layers each control tick:
//!
//! 1. [`planner`] plans the manipulated object's motion and the manipulation
//!    force over the horizon with a linear MPC on the object dynamics.
//! 2. [`pose`] turns each planned object state into a whole-body pose by
//!    solving a small NLP (CoM height, body attitude, arm angle, arm torque).
//! 3. [`mpc`] tracks the resulting reference with a single-rigid-body convex
//!    MPC whose input includes the planned manipulation force.
//!
//! [`sim`] closes the loop on a rigid-body plant and [`experiments`] packages
//! the comparison runs and weight sweeps used by the command-line runner.

pub mod config;
pub mod experiments;
pub mod model;
pub mod mpc;
pub mod planner;
pub mod pose;
pub mod sim;
pub mod solvers;
