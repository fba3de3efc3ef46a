//! Whole-body pose optimization.
//!
//! For every horizon step of a manipulation plan, find the CoM position,
//! body orientation, arm angle and manipulation force that put the gripper on
//! the planned grip point while trading off CoM height, body orientation and
//! arm torque:
//!
//! ```text
//! min  Q_p (p_z - p_z_ref)^2 + |euler|^2_Q + Q_tau tau^2 + w_xy |p_xy - anchor|^2
//! s.t. hip heights in leg reach, euler and arm limits,
//!      gripper at grip target (and roll for handle turning),
//!      manipulation force equal to the planned force,
//!      door-frame clearance (door tasks)
//! ```

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    arm_fk, arm_torque, hip_height, omega_from_euler_rates, DoorObject, RobotModel, RobotState,
    Vec3, NUM_LEGS,
};
use crate::planner::{GripTarget, ManipulationPlan};
use crate::solvers::{NlpError, NlpOptions, NlpProblem, SolveStatus, SqpSolver};

/// Number of pose decision variables.
pub const POSE_DIM: usize = 10;

/// Feasibility tolerance used to accept a pose.
pub const POSE_FEAS_TOL: f64 = 1e-5;

/// One whole-body pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseDecision {
    pub pos: Vec3,
    pub euler: Vec3,
    pub q_arm: f64,
    pub manip_force: Vec3,
}

impl PoseDecision {
    pub fn new(pos: Vec3, euler: Vec3, q_arm: f64) -> Self {
        Self {
            pos,
            euler,
            q_arm,
            manip_force: Vec3::zeros(),
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut x = DVector::zeros(POSE_DIM);
        x.fixed_rows_mut::<3>(0).copy_from(&self.pos);
        x.fixed_rows_mut::<3>(3).copy_from(&self.euler);
        x[6] = self.q_arm;
        x.fixed_rows_mut::<3>(7).copy_from(&self.manip_force);
        x
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        Self {
            pos: x.fixed_rows::<3>(0).into_owned(),
            euler: x.fixed_rows::<3>(3).into_owned(),
            q_arm: x[6],
            manip_force: x.fixed_rows::<3>(7).into_owned(),
        }
    }

    pub fn gripper(&self, model: &RobotModel) -> Vec3 {
        arm_fk(&self.pos, &self.euler, self.q_arm, model).position
    }

    pub fn torque(&self, model: &RobotModel) -> f64 {
        arm_torque(&self.euler, self.q_arm, &self.manip_force, model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseWeights {
    pub w_height: f64,
    pub w_euler: [f64; 3],
    pub w_torque: f64,
    pub w_reg_xy: f64,
}

impl Default for PoseWeights {
    fn default() -> Self {
        Self {
            w_height: 100.0,
            w_euler: [100.0, 100.0, 100.0],
            w_torque: 1e-3,
            w_reg_xy: 1e-2,
        }
    }
}

impl PoseWeights {
    pub fn validate(&self) -> Result<(), PoseError> {
        let all = [
            self.w_height,
            self.w_euler[0],
            self.w_euler[1],
            self.w_euler[2],
            self.w_torque,
            self.w_reg_xy,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(PoseError::InvalidWeights("weights must be finite and non-negative"));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(PoseError::InvalidWeights("at least one weight must be positive"));
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            w_height: s * self.w_height,
            w_euler: self.w_euler.map(|w| s * w),
            w_torque: s * self.w_torque,
            w_reg_xy: s * self.w_reg_xy,
        }
    }
}

/// Everything one pose solve needs besides weights and the robot model.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTarget {
    pub grip: GripTarget,
    pub force: Vec3,
    pub ref_height: f64,
    /// CoM x-y the regularizer pulls toward (usually the current pose).
    pub anchor_xy: [f64; 2],
    pub door: Option<DoorObject>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintFamily {
    HipHeight,
    Orientation,
    ArmLimits,
    EndEffector,
    ForceCoupling,
    DoorClearance,
}

impl std::fmt::Display for ConstraintFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::HipHeight => "hip height band",
            Self::Orientation => "orientation limits",
            Self::ArmLimits => "arm joint limits",
            Self::EndEffector => "target out of reach",
            Self::ForceCoupling => "manipulation force coupling",
            Self::DoorClearance => "door-frame clearance",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PoseError {
    #[error("invalid pose weights: {0}")]
    InvalidWeights(&'static str),
    #[error("pose infeasible: {family} violated by {violation:.3e}")]
    Infeasible {
        family: ConstraintFamily,
        violation: f64,
    },
    #[error(transparent)]
    Solver(#[from] NlpError),
}

/// Signed horizontal distance between the body's bounding circle and the
/// door-frame half-plane `x >= frame_x`. Negative means penetration.
pub fn door_clearance_constraint(pose: &PoseDecision, door: &DoorObject) -> f64 {
    (door.frame_x - pose.pos.x) - door.body_radius
}

/// The pose NLP for one horizon step.
pub struct PoseProblem<'a> {
    pub target: &'a PoseTarget,
    pub weights: &'a PoseWeights,
    pub model: &'a RobotModel,
}

impl PoseProblem<'_> {
    fn num_ee_rows(&self) -> usize {
        if self.target.grip.roll.is_some() {
            4
        } else {
            3
        }
    }

    /// Largest violation per constraint family at `x`.
    pub fn violations(&self, x: &DVector<f64>) -> Vec<(ConstraintFamily, f64)> {
        let pose = PoseDecision::from_vector(x);
        let m = self.model;
        let reach = m.leg_reach;
        let hip = (0..NUM_LEGS)
            .map(|i| {
                let h = hip_height(&pose.pos, &pose.euler, i, m).unwrap_or(f64::NAN);
                (reach.min - h).max(h - reach.max).max(0.0)
            })
            .fold(0.0, f64::max);
        let euler = (0..3)
            .map(|i| {
                let b = m.euler_limits[i];
                (b.min - pose.euler[i]).max(pose.euler[i] - b.max).max(0.0)
            })
            .fold(0.0, f64::max);
        let arm = (m.arm_limits.min - pose.q_arm)
            .max(pose.q_arm - m.arm_limits.max)
            .max(0.0);
        let eq = self.eq_constraints(x);
        let ee = eq
            .rows(0, 3)
            .iter()
            .chain(eq.rows(6, eq.len() - 6).iter())
            .fold(0.0f64, |a, v| a.max(v.abs()));
        let force = eq.rows(3, 3).amax();
        let mut out = vec![
            (ConstraintFamily::HipHeight, hip),
            (ConstraintFamily::Orientation, euler),
            (ConstraintFamily::ArmLimits, arm),
            (ConstraintFamily::EndEffector, ee),
            (ConstraintFamily::ForceCoupling, force),
        ];
        if let Some(door) = &self.target.door {
            let c = door_clearance_constraint(&pose, door);
            out.push((ConstraintFamily::DoorClearance, (door.clearance_margin - c).max(0.0)));
        }
        out
    }
}

impl NlpProblem for PoseProblem<'_> {
    fn dim(&self) -> usize {
        POSE_DIM
    }

    fn cost(&self, x: &DVector<f64>) -> f64 {
        let pose = PoseDecision::from_vector(x);
        let w = self.weights;
        let dz = pose.pos.z - self.target.ref_height;
        let dx = pose.pos.x - self.target.anchor_xy[0];
        let dy = pose.pos.y - self.target.anchor_xy[1];
        let tau = pose.torque(self.model);
        w.w_height * dz * dz
            + (0..3).map(|i| w.w_euler[i] * pose.euler[i].powi(2)).sum::<f64>()
            + w.w_torque * tau * tau
            + w.w_reg_xy * (dx * dx + dy * dy)
    }

    fn num_eq(&self) -> usize {
        3 + self.num_ee_rows()
    }

    fn eq_constraints(&self, x: &DVector<f64>) -> DVector<f64> {
        let pose = PoseDecision::from_vector(x);
        let ee = arm_fk(&pose.pos, &pose.euler, pose.q_arm, self.model);
        let mut c = DVector::zeros(self.num_eq());
        c.fixed_rows_mut::<3>(0)
            .copy_from(&(ee.position - self.target.grip.position));
        c.fixed_rows_mut::<3>(3)
            .copy_from(&(pose.manip_force - self.target.force));
        if let Some(roll) = self.target.grip.roll {
            c[6] = ee.roll - roll;
        }
        c
    }

    fn num_ineq(&self) -> usize {
        NUM_LEGS + usize::from(self.target.door.is_some())
    }

    fn ineq_constraints(&self, x: &DVector<f64>) -> DVector<f64> {
        let pose = PoseDecision::from_vector(x);
        let mut h = DVector::zeros(self.num_ineq());
        for i in 0..NUM_LEGS {
            h[i] = hip_height(&pose.pos, &pose.euler, i, self.model).unwrap_or(f64::NAN);
        }
        if let Some(door) = &self.target.door {
            h[NUM_LEGS] = door_clearance_constraint(&pose, door);
        }
        h
    }

    fn ineq_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.num_ineq();
        let mut lo = DVector::from_element(n, self.model.leg_reach.min);
        let mut hi = DVector::from_element(n, self.model.leg_reach.max);
        if let Some(door) = &self.target.door {
            lo[NUM_LEGS] = door.clearance_margin;
            hi[NUM_LEGS] = f64::INFINITY;
        }
        (lo, hi)
    }

    fn var_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let mut lo = DVector::from_element(POSE_DIM, f64::NEG_INFINITY);
        let mut hi = DVector::from_element(POSE_DIM, f64::INFINITY);
        for i in 0..3 {
            lo[3 + i] = self.model.euler_limits[i].min;
            hi[3 + i] = self.model.euler_limits[i].max;
        }
        lo[6] = self.model.arm_limits.min;
        hi[6] = self.model.arm_limits.max;
        (lo, hi)
    }
}

/// Result of one pose solve.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSolution {
    pub pose: PoseDecision,
    pub cost: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Largest constraint violation at the returned pose.
    pub violation: f64,
}

pub fn default_pose_options() -> NlpOptions {
    NlpOptions {
        tol: 1e-8,
        feas_tol: 1e-9,
        max_iter: 200,
        ..NlpOptions::default()
    }
}

/// Solve one pose NLP with a fresh SQP instance.
pub fn solve_pose(
    target: &PoseTarget,
    weights: &PoseWeights,
    model: &RobotModel,
    x0: &PoseDecision,
    opts: &NlpOptions,
) -> Result<PoseSolution, PoseError> {
    let mut sqp = SqpSolver::new(opts.clone());
    solve_pose_with(&mut sqp, target, weights, model, x0)
}

fn solve_pose_with(
    sqp: &mut SqpSolver,
    target: &PoseTarget,
    weights: &PoseWeights,
    model: &RobotModel,
    x0: &PoseDecision,
) -> Result<PoseSolution, PoseError> {
    weights.validate()?;
    let problem = PoseProblem {
        target,
        weights,
        model,
    };
    let rep = sqp.solve(&problem, &x0.to_vector())?;
    let worst = problem
        .violations(&rep.solution)
        .into_iter()
        .fold((ConstraintFamily::EndEffector, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    if rep.status == SolveStatus::Infeasible || worst.1 > POSE_FEAS_TOL {
        return Err(PoseError::Infeasible {
            family: worst.0,
            violation: worst.1,
        });
    }
    Ok(PoseSolution {
        pose: PoseDecision::from_vector(&rep.solution),
        cost: problem.cost(&rep.solution),
        status: rep.status,
        iterations: rep.iterations,
        violation: worst.1,
    })
}

/// Whole-body reference over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub states: Vec<RobotState>,
    pub poses: Vec<PoseDecision>,
}

#[derive(Debug, Error, PartialEq)]
#[error("pose optimization failed at horizon step {step}: {source}")]
pub struct ReferenceError {
    pub step: usize,
    pub source: PoseError,
}

/// Stateful pose optimizer: keeps the SQP curvature and the last trajectory
/// as warm starts for the next control tick.
#[derive(Debug, Clone)]
pub struct PoseOptimizer {
    pub model: RobotModel,
    pub weights: PoseWeights,
    pub door: Option<DoorObject>,
    sqp: SqpSolver,
    previous: Option<Vec<PoseDecision>>,
}

impl PoseOptimizer {
    pub fn new(model: RobotModel, weights: PoseWeights, door: Option<DoorObject>) -> Self {
        Self {
            model,
            weights,
            door,
            sqp: SqpSolver::new(default_pose_options()),
            previous: None,
        }
    }

    pub fn with_options(mut self, opts: NlpOptions) -> Self {
        self.sqp = SqpSolver::new(opts);
        self
    }

    pub fn solve(&mut self, target: &PoseTarget, x0: &PoseDecision) -> Result<PoseSolution, PoseError> {
        solve_pose_with(&mut self.sqp, target, &self.weights, &self.model, x0)
    }

    /// Solve one pose per plan step and assemble robot state references with
    /// finite-difference rates. `q_arm` is the current arm angle, used as the
    /// warm start on the first call; `anchor_xy` is the CoM x-y the
    /// regularizer pulls toward.
    pub fn build_reference_trajectory(
        &mut self,
        plan: &ManipulationPlan,
        current: &RobotState,
        q_arm: f64,
        ref_height: f64,
        anchor_xy: [f64; 2],
    ) -> Result<ReferenceTrajectory, ReferenceError> {
        let n = plan.horizon();
        let dt = plan.horizon_dt;
        let mut poses = Vec::with_capacity(n + 1);
        let mut guess = match &self.previous {
            Some(prev) if prev.len() > 1 => prev[1],
            _ => PoseDecision::new(current.pos, current.euler, q_arm),
        };
        for k in 0..=n {
            let force = plan.force[k.min(n.saturating_sub(1))];
            let target = PoseTarget {
                grip: plan.grip[k],
                force,
                ref_height,
                anchor_xy,
                door: self.door.clone(),
            };
            guess.manip_force = force;
            let sol = self
                .solve(&target, &guess)
                .map_err(|source| ReferenceError { step: k, source })?;
            poses.push(sol.pose);
            guess = sol.pose;
        }
        self.previous = Some(poses.clone());
        Ok(ReferenceTrajectory {
            states: poses_to_states(&poses, dt, current.grav),
            poses,
        })
    }

    /// Forget warm starts.
    pub fn reset(&mut self) {
        self.previous = None;
        self.sqp.reset();
    }
}

/// Robot states along a pose sequence with forward-difference rates; the
/// last step repeats the previous rate.
pub fn poses_to_states(poses: &[PoseDecision], dt: f64, grav: f64) -> Vec<RobotState> {
    let n = poses.len();
    (0..n)
        .map(|k| {
            let (a, b) = if n < 2 {
                (0, 0)
            } else if k + 1 < n {
                (k, k + 1)
            } else {
                (k - 1, k)
            };
            let vel = (poses[b].pos - poses[a].pos) / dt;
            let rates = (poses[b].euler - poses[a].euler) / dt;
            RobotState {
                euler: poses[k].euler,
                pos: poses[k].pos,
                omega: omega_from_euler_rates(&poses[k].euler, &rates),
                vel,
                grav,
            }
        })
        .collect()
}
