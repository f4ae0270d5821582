//! Simulation and control library for a parallel wire-driven monopedal
//! hopping robot.
//!
//! The robot is a floating body connected to a lightweight leg through a
//! roll/pitch gimbal and a slide joint; six wires wound by body-mounted
//! motors actuate all three joints. The library provides:
//!
//! - [`params`]: physical parameters, shared types and config validation
//! - [`geometry`]: wire lengths, the muscle Jacobian and workspace checks
//! - [`qp`]: least-norm tension distribution (computed muscle control)
//! - [`ekf`]: joint state estimation from wire lengths and velocities
//! - [`control`]: the hopping state machine (launch, hop, stop)
//! - [`sim`]: hybrid rigid-body dynamics with motor limits and ground contact
//! - [`harness`]: closed-loop experiment runner, trajectory logs and metrics
//! - [`plot`]: SVG plots of logged runs
//!
//! See the `examples/` directory for one runnable example per capability and
//! the `wirehop` binary for the command-line harness.

pub mod ekf;
pub mod geometry;
pub mod params;
pub mod qp;

pub use ekf::{EkfConfig, JointEkf, UpdateOutcome};
pub use geometry::{check_workspace, FeasibilityReport, GeometryModel, MuscleJacobian};
pub use params::{default_params, validate_params, JointState, RobotConfig, RobotParams, SimState, WireVector};
pub use qp::{kkt_residual, solve_tensions, QpStatus, TensionSolution};
