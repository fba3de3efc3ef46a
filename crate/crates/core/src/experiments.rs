//! Batch experiments: controller comparisons on one scenario and static
//! pose-weight sweeps. Independent runs go to worker threads, each with its
//! own controller stack; results come back in input order.

use std::fmt::Write as _;

use thiserror::Error;

use crate::config::ScenarioConfig;
use crate::model::Vec3;
use crate::planner::GripTarget;
use crate::pose::{default_pose_options, solve_pose, PoseDecision, PoseError, PoseTarget, PoseWeights};
use crate::sim::{run_scenario_with, trace_header, ScenarioError, ScenarioRun};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("compare requires >= 2 controller kinds, got {0}")]
    TooFewKinds(usize),
    #[error("unknown sweep key '{0}' (expected w_height, w_euler, w_roll, w_pitch, w_yaw, w_torque or w_reg_xy)")]
    UnknownSweepKey(String),
    #[error("sweep value list is empty")]
    EmptySweep,
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("sweep value {value}: {source}")]
    Pose { value: f64, source: PoseError },
}

/// Run the scenario once per controller kind listed in the config.
pub fn compare(cfg: &ScenarioConfig) -> Result<Vec<ScenarioRun>, ExperimentError> {
    let kinds = &cfg.compare_kinds;
    if kinds.len() < 2 {
        return Err(ExperimentError::TooFewKinds(kinds.len()));
    }
    let results: Vec<Result<ScenarioRun, ScenarioError>> = std::thread::scope(|s| {
        let handles: Vec<_> = kinds
            .iter()
            .map(|&k| s.spawn(move || run_scenario_with(cfg, k)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scenario worker panicked"))
            .collect()
    });
    results
        .into_iter()
        .map(|r| r.map_err(ExperimentError::from))
        .collect()
}

/// Traces of several runs stacked into one CSV with a leading controller
/// column.
pub fn joined_csv(runs: &[ScenarioRun]) -> String {
    let mut out = format!("controller,{}\n", trace_header().join(","));
    for run in runs {
        for row in &run.trace.rows {
            let vals: Vec<String> = row.values.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{},{}", run.metrics.controller, vals.join(","));
        }
    }
    out
}

/// One solved pose of a weight sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub pose: PoseDecision,
    pub torque: f64,
    pub cost: f64,
    pub violation: f64,
}

fn weights_for(base: &PoseWeights, key: &str, value: f64) -> Result<PoseWeights, ExperimentError> {
    let mut w = base.clone();
    match key {
        "w_height" => w.w_height = value,
        "w_euler" => w.w_euler = [value; 3],
        "w_roll" => w.w_euler[0] = value,
        "w_pitch" => w.w_euler[1] = value,
        "w_yaw" => w.w_euler[2] = value,
        "w_torque" => w.w_torque = value,
        "w_reg_xy" => w.w_reg_xy = value,
        other => return Err(ExperimentError::UnknownSweepKey(other.to_string())),
    }
    Ok(w)
}

/// Pose target of a sweep: the configured grip offset from the nominal CoM.
pub fn sweep_target(cfg: &ScenarioConfig) -> PoseTarget {
    let com = Vec3::new(cfg.initial_xy[0], cfg.initial_xy[1], cfg.nominal_height);
    PoseTarget {
        grip: GripTarget {
            position: com + Vec3::from(cfg.sweep.grip),
            roll: None,
        },
        force: Vec3::from(cfg.sweep.force),
        ref_height: cfg.nominal_height,
        anchor_xy: cfg.initial_xy,
        door: None,
    }
}

/// Solve the static pose once per swept weight value.
pub fn sweep(cfg: &ScenarioConfig) -> Result<Vec<SweepPoint>, ExperimentError> {
    let sw = &cfg.sweep;
    if sw.values.is_empty() {
        return Err(ExperimentError::EmptySweep);
    }
    let weights = sw
        .values
        .iter()
        .map(|&v| weights_for(&cfg.pose, &sw.key, v))
        .collect::<Result<Vec<_>, _>>()?;
    let target = sweep_target(cfg);
    let guess = PoseDecision::new(
        Vec3::new(cfg.initial_xy[0], cfg.initial_xy[1], cfg.nominal_height),
        Vec3::zeros(),
        cfg.initial_arm,
    );
    let opts = default_pose_options();
    let model = &cfg.robot;
    std::thread::scope(|s| {
        let handles: Vec<_> = weights
            .iter()
            .zip(&sw.values)
            .map(|(w, &value)| {
                let (target, opts) = (&target, &opts);
                s.spawn(move || {
                    solve_pose(target, w, model, &guess, opts)
                        .map(|sol| SweepPoint {
                            value,
                            torque: sol.pose.torque(model),
                            pose: sol.pose,
                            cost: sol.cost,
                            violation: sol.violation,
                        })
                        .map_err(|source| ExperimentError::Pose { value, source })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    })
}

/// Header of the sweep CSV.
pub const SWEEP_HEADER: &str = "value,px,py,pz,roll,pitch,yaw,q_arm,torque,cost,violation";

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for p in points {
        let d = &p.pose;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            p.value,
            d.pos.x,
            d.pos.y,
            d.pos.z,
            d.euler.x,
            d.euler.y,
            d.euler.z,
            d.q_arm,
            p.torque,
            p.cost,
            p.violation
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::ControllerKind;

    #[test]
    fn compare_needs_two_kinds() {
        let cfg = ScenarioConfig {
            compare_kinds: vec![ControllerKind::Full],
            ..ScenarioConfig::default()
        };
        assert!(matches!(compare(&cfg), Err(ExperimentError::TooFewKinds(1))));
    }

    #[test]
    fn sweep_rejects_bad_input() {
        let mut cfg = ScenarioConfig::default();
        cfg.sweep.key = "w_bogus".into();
        assert!(matches!(sweep(&cfg), Err(ExperimentError::UnknownSweepKey(_))));
        cfg.sweep.key = "w_height".into();
        cfg.sweep.values.clear();
        assert!(matches!(sweep(&cfg), Err(ExperimentError::EmptySweep)));
    }

    #[test]
    fn sweep_rows_follow_values() {
        let cfg = ScenarioConfig::default();
        let pts = sweep(&cfg).unwrap();
        assert_eq!(pts.len(), cfg.sweep.values.len());
        let csv = sweep_csv(&pts);
        assert_eq!(csv.lines().count(), pts.len() + 1);
        for line in csv.lines() {
            assert_eq!(line.split(',').count(), SWEEP_HEADER.split(',').count());
        }
    }
}
