//! Rigid-body plant: the robot body, a servoed massless arm, feet pinned as
//! kinematic contacts, and the manipulated object.
//!
//! A grasped lift object is a point mass rigidly held at the gripper, so its
//! interaction force follows from the coupled Newton-Euler equations of body
//! and object. Door forces are commanded by the controller and act on the
//! door as given; the robot receives the opposite force at the gripper.

use nalgebra::{Matrix3, Matrix6, Vector6};
use thiserror::Error;

use crate::model::{
    euler_rates, gripper_lever, rot_zyx, skew, world_inertia, ControlInput, DoorObject,
    RobotModel, RobotState, Vec3, NUM_LEGS,
};
use crate::planner::breakaway_sign;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FootMode {
    Stance,
    Swing,
}

/// Plant state of the manipulated object.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectWorld {
    None,
    /// Point mass held rigidly at the gripper.
    Lift { mass: f64, pos: Vec3, vel: Vec3 },
    Door {
        params: DoorObject,
        handle: f64,
        handle_rate: f64,
        angle: f64,
        rate: f64,
        latched: bool,
    },
}

/// Which part of the door the gripper is pushing on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DoorContact {
    Handle,
    Leaf,
}

/// Arm joint servo: a critically damped second-order tracker
/// `q'' = accel + 2 w (rate_ref - q') + w^2 (q_ref - q)` with bandwidth
/// `w = gain` and a quadratic reference
/// `q_ref(tau) = q0 + rate * tau + accel * tau^2 / 2`, where `tau` is the time
/// since the command was issued.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmCommand {
    pub q0: f64,
    pub rate: f64,
    pub accel: f64,
    pub issued_at: f64,
    pub gain: f64,
}

impl ArmCommand {
    pub fn hold(q: f64, gain: f64) -> Self {
        Self {
            q0: q,
            rate: 0.0,
            accel: 0.0,
            issued_at: 0.0,
            gain,
        }
    }

    pub fn reference(&self, t: f64) -> (f64, f64) {
        let tau = t - self.issued_at;
        (
            self.q0 + self.rate * tau + 0.5 * self.accel * tau * tau,
            self.rate + self.accel * tau,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimWorld {
    pub robot: RobotState,
    pub object: ObjectWorld,
    pub foot_pos: [Vec3; NUM_LEGS],
    pub foot_mode: [FootMode; NUM_LEGS],
    pub q_arm: f64,
    pub q_rate: f64,
    pub time: f64,
    pub arm_cmd: ArmCommand,
    /// Commanded door force magnitude and contact.
    pub door_cmd: (f64, DoorContact),
    /// Force the robot applied to the object during the last step.
    pub object_force: Vec3,
    /// Force the object applied to the robot during the last step.
    pub robot_reaction: Vec3,
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("non-finite {what} at t = {time:.4} s")]
    NonFinite { what: &'static str, time: f64 },
    #[error("coupled body/object dynamics are singular at t = {0:.4} s")]
    Singular(f64),
}

impl SimWorld {
    /// Robot at rest with feet under the hips (shifted by `stance_offset`).
    pub fn standing(model: &RobotModel, pos: Vec3, q_arm: f64, stance_offset: [f64; 2]) -> Self {
        let robot = RobotState::at_rest(pos, model.gravity);
        let foot_pos = std::array::from_fn(|i| {
            let h = model.hip(i).unwrap_or_else(|_| Vec3::zeros());
            Vec3::new(pos.x + h.x + stance_offset[0], pos.y + h.y + stance_offset[1], 0.0)
        });
        Self {
            robot,
            object: ObjectWorld::None,
            foot_pos,
            foot_mode: [FootMode::Stance; NUM_LEGS],
            q_arm,
            q_rate: 0.0,
            time: 0.0,
            arm_cmd: ArmCommand::hold(q_arm, 60.0),
            door_cmd: (0.0, DoorContact::Handle),
            object_force: Vec3::zeros(),
            robot_reaction: Vec3::zeros(),
        }
    }

    /// World gripper position.
    pub fn gripper(&self, model: &RobotModel) -> Vec3 {
        self.robot.pos + gripper_lever(&self.robot.euler, self.q_arm, model)
    }

    /// World gripper velocity.
    pub fn gripper_velocity(&self, model: &RobotModel) -> Vec3 {
        let r = gripper_lever(&self.robot.euler, self.q_arm, model);
        let l = model.arm_length;
        let db = Vec3::new(-l * self.q_arm.sin(), 0.0, l * self.q_arm.cos());
        self.robot.vel + self.robot.omega.cross(&r) + rot_zyx(&self.robot.euler) * db * self.q_rate
    }

    /// Attach a lift object of `mass` at the current gripper.
    pub fn grasp(&mut self, mass: f64, model: &RobotModel) {
        self.object = ObjectWorld::Lift {
            mass,
            pos: self.gripper(model),
            vel: self.gripper_velocity(model),
        };
    }

    /// Translational plus rotational kinetic energy and potential energy of
    /// the robot body.
    pub fn robot_energy(&self, model: &RobotModel) -> f64 {
        let r = &self.robot;
        let iw = world_inertia(model, &r.euler);
        0.5 * model.mass * r.vel.norm_squared()
            + 0.5 * r.omega.dot(&(iw * r.omega))
            + model.mass * r.grav * r.pos.z
    }
}

/// Advance the plant by `dt` under the foot forces in `u`. Swing feet carry no
/// force whatever `u` says; `u.manip_force` is ignored because the true
/// interaction force comes from the object model.
pub fn step_physics(
    world: &SimWorld,
    u: &ControlInput,
    dt: f64,
    model: &RobotModel,
) -> Result<SimWorld, SimError> {
    let mut next = world.clone();
    let x = &world.robot;
    let g = x.grav;
    let ez = Vec3::z();
    let iw = world_inertia(model, &x.euler);
    let omega = x.omega;

    // arm servo
    let (q_ref, rate_ref) = world.arm_cmd.reference(world.time);
    let wn = world.arm_cmd.gain;
    let q_acc = world.arm_cmd.accel
        + 2.0 * wn * (rate_ref - world.q_rate)
        + wn * wn * (q_ref - world.q_arm);
    let q_rate = world.q_rate + dt * q_acc;
    let q_arm = world.q_arm + dt * q_rate;

    let mut force = Vec3::zeros();
    let mut torque = -omega.cross(&(iw * omega));
    for i in 0..NUM_LEGS {
        if world.foot_mode[i] == FootMode::Stance {
            let f = u.foot_force[i];
            force += f;
            torque += (world.foot_pos[i] - x.pos).cross(&f);
        }
    }
    force -= model.mass * g * ez;

    let r = gripper_lever(&x.euler, world.q_arm, model);
    let rot = rot_zyx(&x.euler);
    let (acc, alpha, on_object) = match &world.object {
        ObjectWorld::Lift { mass, .. } => {
            let m_o = *mass;
            let l = model.arm_length;
            let (s, c) = world.q_arm.sin_cos();
            let db = rot * Vec3::new(-l * s, 0.0, l * c);
            let ddb = rot * Vec3::new(-l * c, 0.0, -l * s);
            // object acceleration = a - r x alpha + bias
            let bias = omega.cross(&omega.cross(&r))
                + 2.0 * omega.cross(&(db * q_rate))
                + ddb * (q_rate * q_rate)
                + db * q_acc
                + g * ez;
            let sr = skew(&r);
            let mut lhs = Matrix6::zeros();
            lhs.fixed_view_mut::<3, 3>(0, 0)
                .copy_from(&(Matrix3::identity() * (model.mass + m_o)));
            lhs.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-m_o * sr));
            lhs.fixed_view_mut::<3, 3>(3, 0).copy_from(&(m_o * sr));
            lhs.fixed_view_mut::<3, 3>(3, 3)
                .copy_from(&(iw - m_o * sr * sr));
            let mut rhs = Vector6::zeros();
            rhs.fixed_rows_mut::<3>(0).copy_from(&(force - m_o * bias));
            rhs.fixed_rows_mut::<3>(3)
                .copy_from(&(torque - m_o * sr * bias));
            let sol = lhs
                .lu()
                .solve(&rhs)
                .ok_or(SimError::Singular(world.time))?;
            let a: Vec3 = sol.fixed_rows::<3>(0).into_owned();
            let al: Vec3 = sol.fixed_rows::<3>(3).into_owned();
            let f_obj = m_o * (a - sr * al + bias);
            (a, al, f_obj)
        }
        ObjectWorld::Door {
            params,
            handle,
            angle,
            ..
        } => {
            let (mag, contact) = world.door_cmd;
            let f_obj = match contact {
                DoorContact::Handle => mag * params.lever_tangent(*handle),
                DoorContact::Leaf => mag * params.push_normal(*angle),
            };
            let a = (force - f_obj) / model.mass;
            let al = iw
                .try_inverse()
                .ok_or(SimError::Singular(world.time))?
                * (torque - r.cross(&f_obj));
            (a, al, f_obj)
        }
        ObjectWorld::None => {
            let a = force / model.mass;
            let al = iw
                .try_inverse()
                .ok_or(SimError::Singular(world.time))?
                * torque;
            (a, al, Vec3::zeros())
        }
    };

    let vel = x.vel + dt * acc;
    let pos = x.pos + dt * x.vel + 0.5 * dt * dt * acc;
    let omega_new = omega + dt * alpha;
    let euler = x.euler + dt * euler_rates(&x.euler, &omega_new);
    next.robot = RobotState {
        euler,
        pos,
        omega: omega_new,
        vel,
        grav: g,
    };
    next.q_arm = q_arm;
    next.q_rate = q_rate;
    next.time = world.time + dt;
    next.object_force = on_object;
    next.robot_reaction = -on_object;

    let ee = next.gripper(model);
    let ee_vel = next.gripper_velocity(model);
    match &mut next.object {
        ObjectWorld::None => {}
        ObjectWorld::Lift { pos, vel, .. } => {
            *pos = ee;
            *vel = ee_vel;
        }
        ObjectWorld::Door {
            params,
            handle,
            handle_rate,
            angle,
            rate,
            latched,
        } => {
            let (mag, contact) = world.door_cmd;
            let (tau_h, tau_d) = match contact {
                DoorContact::Handle => (mag * params.lever_length, 0.0),
                DoorContact::Leaf => (0.0, mag * params.push_radius()),
            };
            let h_acc = (tau_h - params.handle_damping * *handle_rate - params.handle_spring * *handle)
                / params.handle_inertia;
            *handle_rate += dt * h_acc;
            *handle += dt * *handle_rate;
            if *handle >= params.release_angle {
                *latched = false;
            }
            if !*latched {
                step_door_leaf(params, angle, rate, tau_d, dt);
            }
        }
    }

    if !next.robot.is_finite() || !next.q_arm.is_finite() {
        return Err(SimError::NonFinite {
            what: "robot state",
            time: next.time,
        });
    }
    Ok(next)
}

/// Door leaf with viscous damping and Coulomb friction that holds the leaf
/// at rest while the applied torque stays below the friction level.
fn step_door_leaf(p: &DoorObject, angle: &mut f64, rate: &mut f64, tau: f64, dt: f64) {
    if *rate == 0.0 && tau.abs() <= p.door_friction {
        return;
    }
    let dir = if *rate == 0.0 { breakaway_sign(tau) } else { rate.signum() };
    let acc = (tau - p.door_damping * *rate - p.door_friction * dir) / p.door_inertia;
    let new_rate = *rate + dt * acc;
    // friction cannot reverse the motion within a step
    *rate = if *rate != 0.0 && new_rate.signum() != rate.signum() {
        0.0
    } else {
        new_rate
    };
    *angle += dt * *rate;
}
