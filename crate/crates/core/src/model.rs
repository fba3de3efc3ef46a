//! Robot and object parameterization, rotations, and arm/hip kinematics.
//!
//! Orientation is always ZYX Euler angles stored as `(roll, pitch, yaw)`,
//! with `R = Rz(yaw) * Ry(pitch) * Rx(roll)` mapping body to world.

use nalgebra::{Matrix3, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Number of entries in the MPC state vector.
pub const STATE_DIM: usize = 13;
/// Number of entries in the MPC input vector (four feet plus the gripper).
pub const INPUT_DIM: usize = 15;
pub const NUM_LEGS: usize = 4;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type InputVector = SVector<f64, INPUT_DIM>;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("hip index {0} out of range (expected 0..4)")]
    InvalidHip(usize),
    #[error("invalid robot model: {0}")]
    InvalidRobot(String),
    #[error("invalid object model: {0}")]
    InvalidObject(String),
    #[error("invalid gait: {0}")]
    InvalidGait(String),
}

/// The 13-entry single-rigid-body state: Euler angles, CoM position,
/// world angular velocity, CoM velocity and the gravity magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub euler: Vec3,
    pub pos: Vec3,
    pub omega: Vec3,
    pub vel: Vec3,
    pub grav: f64,
}

impl RobotState {
    pub fn at_rest(pos: Vec3, grav: f64) -> Self {
        Self {
            euler: Vec3::zeros(),
            pos,
            omega: Vec3::zeros(),
            vel: Vec3::zeros(),
            grav,
        }
    }

    pub fn to_vector(&self) -> StateVector {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.euler);
        x.fixed_rows_mut::<3>(3).copy_from(&self.pos);
        x.fixed_rows_mut::<3>(6).copy_from(&self.omega);
        x.fixed_rows_mut::<3>(9).copy_from(&self.vel);
        x[12] = self.grav;
        x
    }

    pub fn from_vector(x: &StateVector) -> Self {
        Self {
            euler: x.fixed_rows::<3>(0).into_owned(),
            pos: x.fixed_rows::<3>(3).into_owned(),
            omega: x.fixed_rows::<3>(6).into_owned(),
            vel: x.fixed_rows::<3>(9).into_owned(),
            grav: x[12],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }

    pub fn roll(&self) -> f64 {
        self.euler.x
    }

    pub fn pitch(&self) -> f64 {
        self.euler.y
    }

    pub fn yaw(&self) -> f64 {
        self.euler.z
    }
}

/// Four ground reaction forces and the manipulation force, all in world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    pub foot_force: [Vec3; NUM_LEGS],
    pub manip_force: Vec3,
}

impl Default for ControlInput {
    fn default() -> Self {
        Self {
            foot_force: [Vec3::zeros(); NUM_LEGS],
            manip_force: Vec3::zeros(),
        }
    }
}

impl ControlInput {
    pub fn to_vector(&self) -> InputVector {
        let mut u = InputVector::zeros();
        for (i, f) in self.foot_force.iter().enumerate() {
            u.fixed_rows_mut::<3>(3 * i).copy_from(f);
        }
        u.fixed_rows_mut::<3>(12).copy_from(&self.manip_force);
        u
    }

    pub fn from_vector(u: &InputVector) -> Self {
        let mut foot_force = [Vec3::zeros(); NUM_LEGS];
        for (i, f) in foot_force.iter_mut().enumerate() {
            *f = u.fixed_rows::<3>(3 * i).into_owned();
        }
        Self {
            foot_force,
            manip_force: u.fixed_rows::<3>(12).into_owned(),
        }
    }

    pub fn total_force(&self) -> Vec3 {
        self.foot_force.iter().sum::<Vec3>() + self.manip_force
    }
}

/// Closed interval used for joint, force and height limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Bounds {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }
}

/// Robot parameters. The arm is massless; its mass is folded into `mass`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotModel {
    pub mass: f64,
    /// Diagonal of the body-frame inertia tensor.
    pub inertia_diag: [f64; 3],
    /// CoM to hip, body frame. Order: front-left, front-right, rear-left, rear-right.
    pub hip_offset: [[f64; 3]; NUM_LEGS],
    pub arm_mount: [f64; 3],
    pub arm_length: f64,
    pub arm_limits: Bounds,
    pub mu: f64,
    pub fz_bounds: Bounds,
    pub leg_reach: Bounds,
    /// Per-axis (roll, pitch, yaw) bounds.
    pub euler_limits: [Bounds; 3],
    pub gravity: f64,
}

impl Default for RobotModel {
    fn default() -> Self {
        Self {
            mass: 16.5,
            inertia_diag: [0.17, 0.55, 0.58],
            hip_offset: [
                [0.24, 0.13, 0.0],
                [0.24, -0.13, 0.0],
                [-0.24, 0.13, 0.0],
                [-0.24, -0.13, 0.0],
            ],
            arm_mount: [0.2, 0.0, 0.05],
            arm_length: 0.6,
            arm_limits: Bounds::new(-0.6, 2.0),
            mu: 0.6,
            fz_bounds: Bounds::new(0.0, 350.0),
            leg_reach: Bounds::new(0.15, 0.45),
            euler_limits: [
                Bounds::new(-0.6, 0.6),
                Bounds::new(-0.6, 0.6),
                Bounds::new(-std::f64::consts::PI, std::f64::consts::PI),
            ],
            gravity: 9.81,
        }
    }
}

impl RobotModel {
    pub fn inertia_body(&self) -> Mat3 {
        Mat3::from_diagonal(&Vec3::from(self.inertia_diag))
    }

    pub fn hip(&self, i: usize) -> Result<Vec3, ModelError> {
        self.hip_offset
            .get(i)
            .map(|h| Vec3::from(*h))
            .ok_or(ModelError::InvalidHip(i))
    }

    pub fn mount(&self) -> Vec3 {
        Vec3::from(self.arm_mount)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidRobot(msg.to_string()));
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return bad("mass must be positive");
        }
        if self.inertia_diag.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return bad("inertia must be positive definite");
        }
        if !(self.mu > 0.0) {
            return bad("friction coefficient must be positive");
        }
        if !(self.leg_reach.min < self.leg_reach.max) {
            return bad("leg reach band is empty");
        }
        if !(self.arm_limits.min < self.arm_limits.max) {
            return bad("arm limits are empty");
        }
        if !(self.fz_bounds.min <= self.fz_bounds.max) {
            return bad("vertical force bounds are inconsistent");
        }
        if self.euler_limits.iter().any(|b| b.min > b.max) {
            return bad("euler limits are inconsistent");
        }
        if !(self.arm_length > 0.0) {
            return bad("arm length must be positive");
        }
        if !(self.gravity > 0.0) {
            return bad("gravity must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    Lift,
    DoorOpen,
}

/// A point mass held in the gripper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiftObject {
    pub mass: f64,
    /// Also plan horizontal velocities (for carrying while walking).
    pub planar: bool,
    /// Per-component magnitude limit on the planned force.
    pub force_limit: f64,
}

impl Default for LiftObject {
    fn default() -> Self {
        Self {
            mass: 3.0,
            planar: false,
            force_limit: 600.0,
        }
    }
}

/// A hinged door with a spring-loaded lever handle. The closed door lies in
/// the plane `x = frame_x`, hinged at `y = hinge_y`, and opens away from a
/// robot standing on the `x < frame_x` side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DoorObject {
    pub handle_inertia: f64,
    pub handle_damping: f64,
    pub handle_spring: f64,
    pub door_inertia: f64,
    pub door_damping: f64,
    pub door_friction: f64,
    pub frame_x: f64,
    pub hinge_y: f64,
    /// Hinge to handle pivot distance.
    pub handle_radius: f64,
    pub handle_height: f64,
    pub lever_length: f64,
    pub release_angle: f64,
    /// Time allotted to turning the handle.
    pub handle_duration: f64,
    pub force_limit: f64,
    pub body_radius: f64,
    pub clearance_margin: f64,
}

impl Default for DoorObject {
    fn default() -> Self {
        Self {
            handle_inertia: 0.01,
            handle_damping: 0.05,
            handle_spring: 2.0,
            door_inertia: 2.0,
            door_damping: 20.0,
            door_friction: 5.0,
            frame_x: 0.75,
            hinge_y: -0.55,
            handle_radius: 0.65,
            handle_height: 0.48,
            lever_length: 0.1,
            release_angle: 0.3,
            handle_duration: 1.0,
            force_limit: 200.0,
            body_radius: 0.35,
            clearance_margin: 0.05,
        }
    }
}

impl DoorObject {
    /// Lever pivot, world frame, closed door.
    pub fn pivot(&self) -> Vec3 {
        Vec3::new(self.frame_x, self.hinge_y + self.handle_radius, self.handle_height)
    }

    /// Lever tip (the grip point) at handle angle `phi`; positive turns downward.
    pub fn lever_tip(&self, phi: f64) -> Vec3 {
        self.pivot() + self.lever_length * Vec3::new(0.0, -phi.cos(), -phi.sin())
    }

    /// Unit direction of a force at the lever tip that turns the handle.
    pub fn lever_tangent(&self, phi: f64) -> Vec3 {
        Vec3::new(0.0, phi.sin(), -phi.cos())
    }

    /// The grip point once the handle is released, as a point on the door leaf.
    fn push_anchor(&self) -> (f64, f64) {
        let tip = self.lever_tip(self.release_angle);
        (tip.y - self.hinge_y, tip.z)
    }

    /// Distance from the hinge axis to the push point.
    pub fn push_radius(&self) -> f64 {
        self.push_anchor().0
    }

    /// Push point at door angle `theta`.
    pub fn push_point(&self, theta: f64) -> Vec3 {
        let (r, z) = self.push_anchor();
        Vec3::new(
            self.frame_x + r * theta.sin(),
            self.hinge_y + r * theta.cos(),
            z,
        )
    }

    /// Door-leaf unit normal pointing away from the robot.
    pub fn push_normal(&self, theta: f64) -> Vec3 {
        Vec3::new(theta.cos(), -theta.sin(), 0.0)
    }

    /// Door-leaf in-plane horizontal tangent (hinge towards free edge).
    pub fn leaf_tangent(&self, theta: f64) -> Vec3 {
        Vec3::new(theta.sin(), theta.cos(), 0.0)
    }
}

/// Parameters of the manipulated object.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectModel {
    Lift(LiftObject),
    Door(DoorObject),
}

impl ObjectModel {
    pub fn task_kind(&self) -> TaskKind {
        match self {
            ObjectModel::Lift(_) => TaskKind::Lift,
            ObjectModel::Door(_) => TaskKind::DoorOpen,
        }
    }

    /// Object states: lift is vertical velocity (optionally preceded by the
    /// planar velocities), door is (handle rate, door rate).
    pub fn state_dim(&self) -> usize {
        match self {
            ObjectModel::Lift(l) if l.planar => 3,
            ObjectModel::Lift(_) => 1,
            ObjectModel::Door(_) => 2,
        }
    }

    pub fn dynamics_diag(&self) -> Vec<f64> {
        match self {
            ObjectModel::Lift(l) => vec![l.mass; self.state_dim()],
            ObjectModel::Door(d) => vec![d.handle_inertia, d.door_inertia],
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.dynamics_diag().iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(ModelError::InvalidObject(
                "dynamics coefficients must be positive".into(),
            ));
        }
        if let ObjectModel::Door(d) = self {
            if d.handle_spring < 0.0 || d.door_damping < 0.0 || d.door_friction < 0.0 {
                return Err(ModelError::InvalidObject(
                    "door spring, damping and friction must be non-negative".into(),
                ));
            }
            if !(d.release_angle > 0.0 && d.handle_duration > 0.0) {
                return Err(ModelError::InvalidObject(
                    "handle release angle and duration must be positive".into(),
                ));
            }
            if !(d.lever_length > 0.0 && d.push_radius() > 0.0) {
                return Err(ModelError::InvalidObject("door geometry is degenerate".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GaitPattern {
    Stand,
    Trot,
}

/// Periodic contact schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitSchedule {
    pub pattern: GaitPattern,
    pub period: f64,
    pub duty: f64,
    pub phase_offsets: [f64; NUM_LEGS],
}

impl Default for GaitSchedule {
    fn default() -> Self {
        Self::stand()
    }
}

impl GaitSchedule {
    pub fn stand() -> Self {
        Self {
            pattern: GaitPattern::Stand,
            period: 0.5,
            duty: 1.0,
            phase_offsets: [0.0; NUM_LEGS],
        }
    }

    pub fn trot(period: f64) -> Self {
        Self {
            pattern: GaitPattern::Trot,
            period,
            duty: 0.5,
            phase_offsets: [0.0, 0.5, 0.5, 0.0],
        }
    }

    pub fn stance_time(&self) -> f64 {
        self.period * self.duty
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.duty > 0.0 && self.duty <= 1.0) {
            return Err(ModelError::InvalidGait("duty must lie in (0, 1]".into()));
        }
        if !(self.period > 0.0) {
            return Err(ModelError::InvalidGait("period must be positive".into()));
        }
        if self.phase_offsets.iter().any(|&p| !(0.0..1.0).contains(&p)) {
            return Err(ModelError::InvalidGait("phase offsets must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

pub fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Body-to-world rotation for ZYX Euler angles `(roll, pitch, yaw)`.
pub fn rot_zyx(euler: &Vec3) -> Mat3 {
    rot_z(euler.z) * rot_y(euler.y) * rot_x(euler.x)
}

/// Cross-product matrix: `skew(r) * v == r.cross(v)`.
pub fn skew(r: &Vec3) -> Mat3 {
    Mat3::new(0.0, -r.z, r.y, r.z, 0.0, -r.x, -r.y, r.x, 0.0)
}

pub fn world_inertia(model: &RobotModel, euler: &Vec3) -> Mat3 {
    let r = rot_zyx(euler);
    r * model.inertia_body() * r.transpose()
}

/// Maps world angular velocity to ZYX Euler-angle rates (exact).
///
/// Singular at `|pitch| = pi/2`.
pub fn euler_rates(euler: &Vec3, omega: &Vec3) -> Vec3 {
    let (sp, cp) = euler.y.sin_cos();
    let (sy, cy) = euler.z.sin_cos();
    let planar = cy * omega.x + sy * omega.y;
    let roll_rate = planar / cp;
    Vec3::new(roll_rate, -sy * omega.x + cy * omega.y, omega.z + sp * roll_rate)
}

/// Inverse of [`euler_rates`]: world angular velocity from Euler rates.
pub fn omega_from_euler_rates(euler: &Vec3, rates: &Vec3) -> Vec3 {
    let (sp, cp) = euler.y.sin_cos();
    let (sy, cy) = euler.z.sin_cos();
    Vec3::new(
        cy * cp * rates.x - sy * rates.y,
        sy * cp * rates.x + cy * rates.y,
        -sp * rates.x + rates.z,
    )
}

/// Arm link vector in the body frame; the link swings about the body y axis
/// and `q = 0` points straight ahead.
pub fn arm_link(q: f64, length: f64) -> Vec3 {
    Vec3::new(length * q.cos(), 0.0, length * q.sin())
}

/// End-effector pose of the 1-DOF arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EePose {
    pub position: Vec3,
    /// Link elevation above the world horizontal, in the sagittal plane
    /// (`q_arm - pitch`).
    pub elevation: f64,
    /// Gripper roll about the body x axis; equals body roll.
    pub roll: f64,
}

pub fn arm_fk(base_pos: &Vec3, euler: &Vec3, q_arm: f64, model: &RobotModel) -> EePose {
    let r = rot_zyx(euler);
    EePose {
        position: base_pos + r * (model.mount() + arm_link(q_arm, model.arm_length)),
        elevation: q_arm - euler.y,
        roll: euler.x,
    }
}

/// Vector from the CoM to the gripper in world coordinates.
pub fn gripper_lever(euler: &Vec3, q_arm: f64, model: &RobotModel) -> Vec3 {
    rot_zyx(euler) * (model.mount() + arm_link(q_arm, model.arm_length))
}

/// Derivative of the end-effector position with respect to the arm angle.
pub fn arm_jacobian(euler: &Vec3, q_arm: f64, model: &RobotModel) -> Vec3 {
    let l = model.arm_length;
    rot_zyx(euler) * Vec3::new(-l * q_arm.sin(), 0.0, l * q_arm.cos())
}

/// Joint torque needed to exert `force` at the gripper.
pub fn arm_torque(euler: &Vec3, q_arm: f64, force: &Vec3, model: &RobotModel) -> f64 {
    arm_jacobian(euler, q_arm, model).dot(force)
}

pub fn hip_height(
    pos: &Vec3,
    euler: &Vec3,
    hip_index: usize,
    model: &RobotModel,
) -> Result<f64, ModelError> {
    let hip = model.hip(hip_index)?;
    Ok(pos.z + (rot_zyx(euler) * hip).z)
}

/// World position of hip `i` projected onto the ground plane.
pub fn hip_ground_projection(pos: &Vec3, euler: &Vec3, i: usize, model: &RobotModel) -> Vec3 {
    let hip = pos + rot_zyx(euler) * model.hip(i).unwrap_or_else(|_| Vec3::zeros());
    Vec3::new(hip.x, hip.y, 0.0)
}

pub fn xy(v: &Vec3) -> Vector2<f64> {
    Vector2::new(v.x, v.y)
}
