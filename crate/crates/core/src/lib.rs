//! Impact-aware task-space quadratic-programming control.
//!
//! This crate implements a whole-body QP controller that predicts the state
//! jumps an intentional impact will cause one control step ahead, and adds
//! inequality constraints so the post-impact state stays feasible. A small
//! rigid-body simulator provides independent ground truth for the predictions.
//!
//! Module map:
//! - [`model`]: floating-base kinematic tree, mass matrix, bias forces,
//!   point Jacobians, centroidal momentum.
//! - [`impact`]: restitution map, impulse distribution least squares, and the
//!   whole-body jump predictors expressed over the QP decision variable.
//! - [`constraints`]: baseline and impact-aware constraint row builders.
//! - [`qp`]: task scalarization, problem assembly, dense active-set solver,
//!   and the per-step controller.
//! - [`sim`]: semi-implicit integration with bilateral contacts, impact
//!   detection/resolution, and the experiment state machine.
//! - [`cli`]: command-line entry points and CSV emission.

pub mod cli;
pub mod constraints;
pub mod impact;
pub mod model;
pub mod qp;
pub mod sim;

pub use model::{EndEffectorFrame, EndEffectorRole, RobotModel, RobotState};
