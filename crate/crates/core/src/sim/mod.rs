//! Closed-loop simulation: plant, contact schedule, scenario runner and
//! run reports.

pub mod gait;
pub mod report;
pub mod scenario;
pub mod world;

pub use gait::{gait_tick, raibert_target, stance_horizon, GaitPhase, SwingConfig, SwingTrajectory};
pub use report::{comparison_table, trace_header, RunMetrics, Trace, TraceRow, TRACE_COLUMNS};
pub use scenario::{run_scenario, run_scenario_with, ScenarioError, ScenarioRun};
pub use world::{step_physics, ArmCommand, DoorContact, FootMode, ObjectWorld, SimError, SimWorld};
