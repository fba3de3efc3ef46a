//! Scenario configuration: a TOML document with one section per component,
//! plus `key=value` overrides addressed by dotted keys.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DoorObject, GaitSchedule, LiftObject, ModelError, ObjectModel, RobotModel, TaskKind};
use crate::mpc::{ControllerKind, MpcConfig};
use crate::planner::{PlannerConfig, TaskCommand};
use crate::pose::PoseWeights;
use crate::sim::SwingConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid override '{0}': expected key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl From<ModelError> for ConfigError {
    fn from(e: ModelError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

/// Static pose sweep: solve one pose per weight value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// One of `w_height`, `w_euler`, `w_roll`, `w_pitch`, `w_yaw`,
    /// `w_torque`, `w_reg_xy`.
    pub key: String,
    pub values: Vec<f64>,
    /// Gripper target relative to the nominal CoM position [m].
    pub grip: [f64; 3],
    /// Force the gripper applies to the object [N].
    pub force: [f64; 3],
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            key: "w_height".into(),
            values: vec![1e3, 1e1, 1e-1],
            grip: [0.75, 0.0, 0.27],
            force: [0.0, 0.0, 80.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Simulated time [s].
    pub duration: f64,
    pub seed: u64,
    pub controller_kind: ControllerKind,
    /// Controllers run by the `compare` verb.
    pub compare_kinds: Vec<ControllerKind>,
    /// Reference CoM height [m].
    pub nominal_height: f64,
    /// CoM x-y at the start [m].
    pub initial_xy: [f64; 2],
    /// Arm angle at the start [rad].
    pub initial_arm: f64,
    /// Amplitude of the seeded random initial velocity perturbation [m/s, rad/s].
    pub initial_perturbation: f64,
    /// Feet placement relative to the hips, x and y [m].
    pub stance_offset: [f64; 2],
    /// Arm joint servo bandwidth [rad/s].
    pub arm_gain: f64,
    pub physics_dt: f64,
    /// Control loop rate [Hz].
    pub control_rate: f64,
    /// Commanded body velocity for the touchdown heuristic [m/s].
    pub velocity_cmd: [f64; 3],
    /// Absent means the robot just stands.
    pub task: Option<TaskCommand>,
    pub lift: LiftObject,
    pub door: DoorObject,
    pub gait: GaitSchedule,
    pub swing: SwingConfig,
    pub robot: RobotModel,
    pub pose: PoseWeights,
    pub mpc: MpcConfig,
    pub planner: PlannerConfig,
    pub sweep: SweepConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "stand".into(),
            duration: 5.0,
            seed: 0,
            controller_kind: ControllerKind::Full,
            compare_kinds: vec![ControllerKind::Full, ControllerKind::Baseline],
            nominal_height: 0.35,
            initial_xy: [0.0, 0.0],
            initial_arm: 0.0,
            initial_perturbation: 0.0,
            stance_offset: [0.0, 0.0],
            arm_gain: 60.0,
            physics_dt: 1e-3,
            control_rate: 30.0,
            velocity_cmd: [0.0; 3],
            task: None,
            lift: LiftObject::default(),
            door: DoorObject::default(),
            gait: GaitSchedule::stand(),
            swing: SwingConfig::default(),
            robot: RobotModel::default(),
            pose: PoseWeights::default(),
            mpc: MpcConfig::default(),
            planner: PlannerConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ScenarioConfig {
    /// Object model selected by the task, if any.
    pub fn object_model(&self) -> Option<ObjectModel> {
        self.task.as_ref().map(|t| match t.kind {
            TaskKind::Lift => ObjectModel::Lift(self.lift.clone()),
            TaskKind::DoorOpen => ObjectModel::Door(self.door.clone()),
        })
    }

    /// MPC configuration with the scenario's controller kind applied.
    pub fn mpc_config(&self, kind: ControllerKind) -> MpcConfig {
        MpcConfig {
            controller_kind: kind,
            ..self.mpc.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive");
        }
        if !(self.physics_dt > 0.0 && self.control_rate > 0.0) {
            return bad("physics_dt and control_rate must be positive");
        }
        if self.control_rate * self.physics_dt > 1.0 {
            return bad("control period must not be shorter than the physics step");
        }
        if !(self.nominal_height > 0.0) {
            return bad("nominal_height must be positive");
        }
        if !(self.arm_gain > 0.0) {
            return bad("arm_gain must be positive");
        }
        self.robot.validate()?;
        self.gait.validate()?;
        if let Some(obj) = self.object_model() {
            obj.validate()?;
        }
        if let Some(task) = &self.task {
            task.validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        self.mpc
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.pose
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }
}

/// Parse a TOML scenario and apply `key=value` overrides.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ScenarioConfig, ConfigError> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    for ov in overrides {
        apply_override(&mut table, ov)?;
    }
    let cfg: ScenarioConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text, overrides)
}

/// Set a dotted key in a TOML table. The value is read as a TOML literal and
/// falls back to a plain string, so `controller_kind=Baseline` works unquoted.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::Override(assignment.to_string()));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override(format!("{assignment}: '{p}' is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ScenarioConfig::default();
        let back = parse_config(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn sections_and_overrides() {
        let text = r#"
            name = "lift"
            duration = 3.0
            [task]
            kind = "Lift"
            target = 0.3
            duration = 2.0
            [lift]
            mass = 8.0
        "#;
        let cfg = parse_config(
            text,
            &[
                "controller_kind=Baseline".into(),
                "lift.mass=3".into(),
                "pose.w_euler=[1.0, 2.0, 3.0]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.controller_kind, ControllerKind::Baseline);
        assert_eq!(cfg.lift.mass, 3.0);
        assert_eq!(cfg.pose.w_euler, [1.0, 2.0, 3.0]);
        let task = cfg.task.unwrap();
        assert!(task.hold);
        assert_eq!(task.kind, TaskKind::Lift);
    }

    #[test]
    fn errors_are_reported() {
        assert!(matches!(parse_config("duration = -1.0", &[]), Err(ConfigError::Invalid(_))));
        assert!(matches!(parse_config("bogus = 1", &[]), Err(ConfigError::Parse(_))));
        assert!(matches!(parse_config("", &["novalue".into()]), Err(ConfigError::Override(_))));
        assert!(matches!(parse_config("", &["controller_kind=Nope".into()]), Err(ConfigError::Parse(_))));
        let err = load_config(Path::new("/nonexistent/x.toml"), &[]).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.toml"));
    }
}
