//! Object manipulation planner.
//!
//! A linear MPC over the manipulated object's first-order dynamics
//!
//! ```text
//! A_m * d/dt X_o = f_ext + f_gen
//! ```
//!
//! where `X_o` holds object velocities, `A_m` is diagonal and `f_gen` is the
//! generalized manipulation force. Object positions are integrated alongside
//! the MPC state and feed the grip targets handed to the pose optimizer.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DoorObject, LiftObject, ObjectModel, TaskKind, Vec3};
use crate::solvers::{QpProblem, QpSettings, QpSolver, SolveStatus, WarmStart};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("invalid task command: {0}")]
    InvalidCommand(String),
    #[error("task {task:?} does not match object model {object:?}")]
    TaskMismatch { task: TaskKind, object: TaskKind },
    #[error("object planning QP infeasible ({family})")]
    Infeasible { family: &'static str },
}

/// What the planner is asked to do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskCommand {
    pub kind: TaskKind,
    /// Lift height above the start [m] or final door angle [rad].
    pub target: f64,
    /// Time to complete the motion [s]. For doors this covers the push only.
    pub duration: f64,
    /// Keep regulating to the target once the duration has elapsed.
    #[serde(default = "default_hold")]
    pub hold: bool,
    /// Horizontal carry velocity for planar lift plans [m/s].
    #[serde(default)]
    pub carry_velocity: [f64; 2],
}

fn default_hold() -> bool {
    true
}

impl TaskCommand {
    pub fn lift(height: f64, duration: f64) -> Self {
        Self {
            kind: TaskKind::Lift,
            target: height,
            duration,
            hold: true,
            carry_velocity: [0.0; 2],
        }
    }

    pub fn door(angle: f64, duration: f64) -> Self {
        Self {
            kind: TaskKind::DoorOpen,
            target: angle,
            duration,
            hold: true,
            carry_velocity: [0.0; 2],
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(PlanError::InvalidCommand("duration must be positive".into()));
        }
        if !self.target.is_finite() {
            return Err(PlanError::InvalidCommand("target must be finite".into()));
        }
        Ok(())
    }
}

/// Trapezoidal velocity profile with equal acceleration and deceleration
/// phases, each a quarter of the duration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapezoidProfile {
    pub start: f64,
    pub target: f64,
    pub duration: f64,
}

const RAMP_FRACTION: f64 = 0.25;

impl TrapezoidProfile {
    pub fn new(start: f64, target: f64, duration: f64) -> Self {
        Self {
            start,
            target,
            duration,
        }
    }

    pub fn peak_velocity(&self) -> f64 {
        (self.target - self.start) / ((1.0 - RAMP_FRACTION) * self.duration)
    }

    pub fn acceleration(&self) -> f64 {
        self.peak_velocity() / (RAMP_FRACTION * self.duration)
    }

    /// Position and velocity at time `t` after the profile start.
    pub fn sample(&self, t: f64) -> (f64, f64) {
        let ramp = RAMP_FRACTION * self.duration;
        let vmax = self.peak_velocity();
        let acc = self.acceleration();
        if t <= 0.0 {
            (self.start, 0.0)
        } else if t < ramp {
            (self.start + 0.5 * acc * t * t, acc * t)
        } else if t <= self.duration - ramp {
            (self.start + 0.5 * acc * ramp * ramp + vmax * (t - ramp), vmax)
        } else if t < self.duration {
            let rem = self.duration - t;
            (self.target - 0.5 * acc * rem * rem, acc * rem)
        } else {
            (self.target, 0.0)
        }
    }
}

/// One reference sample: position and velocity of a scalar object coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefSample {
    pub pos: f64,
    pub vel: f64,
}

/// Reference for a scalar coordinate moving from `origin` by `cmd.target`,
/// sampled at `elapsed + k*dt` for `k = 0..=n`.
pub fn make_reference(
    cmd: &TaskCommand,
    origin: f64,
    elapsed: f64,
    dt: f64,
    n: usize,
) -> Vec<RefSample> {
    let profile = TrapezoidProfile::new(origin, origin + cmd.target, cmd.duration);
    (0..=n)
        .map(|k| {
            let (pos, vel) = profile.sample(elapsed + k as f64 * dt);
            RefSample { pos, vel }
        })
        .collect()
}

/// Linear object dynamics `inertia * dv/dt = -damping * v + force + f_gen`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectDynamics {
    pub inertia: DVector<f64>,
    pub damping: DVector<f64>,
    /// State-independent part of the external force.
    pub constant_force: DVector<f64>,
}

pub fn object_dynamics(model: &ObjectModel, gravity: f64) -> ObjectDynamics {
    let dim = model.state_dim();
    let inertia = DVector::from_vec(model.dynamics_diag());
    match model {
        ObjectModel::Lift(l) => {
            let mut f = DVector::zeros(dim);
            f[dim - 1] = -l.mass * gravity;
            ObjectDynamics {
                inertia,
                damping: DVector::zeros(dim),
                constant_force: f,
            }
        }
        ObjectModel::Door(d) => ObjectDynamics {
            inertia,
            damping: DVector::from_vec(vec![d.handle_damping, d.door_damping]),
            constant_force: DVector::zeros(2),
        },
    }
}

/// Sign used by the friction law; a door at rest breaks away in the opening
/// direction.
pub fn breakaway_sign(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// External torques on (handle, door): return spring and hinge friction.
pub fn door_external_force(door: &DoorObject, handle_angle: f64, door_rate: f64) -> [f64; 2] {
    [
        -door.handle_spring * handle_angle,
        -door.door_friction * breakaway_sign(door_rate),
    ]
}

/// Measured object coordinates and their rates. Lift: world height (or
/// world x, y, z when planar). Door: (handle angle, door angle).
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectState {
    pub position: DVector<f64>,
    pub velocity: DVector<f64>,
}

impl ObjectState {
    pub fn at_rest(position: DVector<f64>) -> Self {
        let n = position.len();
        Self {
            position,
            velocity: DVector::zeros(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subtask {
    Lift,
    HandleTurn,
    Push,
}

/// Where the gripper must be at one horizon step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GripTarget {
    pub position: Vec3,
    /// Required gripper roll (handle turning only).
    pub roll: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManipulationPlan {
    pub subtask: Subtask,
    pub horizon_dt: f64,
    /// Reference object velocities, `N+1` entries.
    pub obj_ref: Vec<DVector<f64>>,
    /// Planned object velocities, `N+1` entries starting at the measurement.
    pub states: Vec<DVector<f64>>,
    /// Planned object coordinates, `N+1` entries.
    pub positions: Vec<DVector<f64>>,
    /// Generalized manipulation force per step, `N` entries.
    pub generalized_force: Vec<DVector<f64>>,
    /// External force used by the prediction per step, `N` entries.
    pub external: Vec<DVector<f64>>,
    /// Force the robot applies to the object, world frame, `N` entries.
    pub force: Vec<Vec3>,
    pub grip: Vec<GripTarget>,
}

impl ManipulationPlan {
    pub fn horizon(&self) -> usize {
        self.force.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub w_track: f64,
    pub w_force: f64,
    /// Rate at which position drift is folded back into the velocity reference [1/s].
    pub position_gain: f64,
    /// Handle reference overshoots the release angle by this factor.
    pub handle_overshoot: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            w_track: 1e3,
            w_force: 1e-3,
            position_gain: 4.0,
            handle_overshoot: 1.2,
        }
    }
}

/// Stateful planner: remembers the task origin and the active door subtask.
#[derive(Debug, Clone)]
pub struct ObjectPlanner {
    pub config: PlannerConfig,
    model: ObjectModel,
    cmd: TaskCommand,
    gravity: f64,
    origin: DVector<f64>,
    /// Horizontal grip position of a vertical-only lift.
    grip_xy: [f64; 2],
    subtask: Subtask,
    phase_start: f64,
    push_origin: f64,
    qp: QpSolver,
    warm: Option<WarmStart>,
}

impl ObjectPlanner {
    /// `initial` is the object state when the task starts; `grip` is the
    /// world grip point at that time.
    pub fn new(
        model: ObjectModel,
        cmd: TaskCommand,
        initial: &ObjectState,
        grip: Vec3,
        gravity: f64,
        config: PlannerConfig,
    ) -> Result<Self, PlanError> {
        cmd.validate()?;
        if cmd.kind != model.task_kind() {
            return Err(PlanError::TaskMismatch {
                task: cmd.kind,
                object: model.task_kind(),
            });
        }
        model
            .validate()
            .map_err(|e| PlanError::InvalidCommand(e.to_string()))?;
        let subtask = match model {
            ObjectModel::Lift(_) => Subtask::Lift,
            ObjectModel::Door(_) => Subtask::HandleTurn,
        };
        Ok(Self {
            config,
            model,
            cmd,
            gravity,
            origin: initial.position.clone(),
            grip_xy: [grip.x, grip.y],
            subtask,
            phase_start: 0.0,
            push_origin: 0.0,
            qp: QpSolver::new(QpSettings {
                tol: 1e-9,
                ..QpSettings::default()
            }),
            warm: None,
        })
    }

    pub fn subtask(&self) -> Subtask {
        self.subtask
    }

    pub fn model(&self) -> &ObjectModel {
        &self.model
    }

    pub fn command(&self) -> &TaskCommand {
        &self.cmd
    }

    /// Plan `n` steps of length `dt` from the measured object state at task
    /// time `elapsed`.
    pub fn plan(
        &mut self,
        current: &ObjectState,
        elapsed: f64,
        dt: f64,
        n: usize,
    ) -> Result<ManipulationPlan, PlanError> {
        if let ObjectModel::Door(door) = &self.model {
            if self.subtask == Subtask::HandleTurn && current.position[0] >= door.release_angle {
                self.subtask = Subtask::Push;
                self.phase_start = elapsed;
                self.push_origin = current.position[1];
                self.warm = None;
            }
        }
        let setup = self.setup(current, elapsed, dt, n);
        let forces = self.solve(&setup, current, dt, n)?;
        Ok(self.assemble(setup, current, forces, dt, n))
    }

    fn reference(&self, current: &ObjectState, elapsed: f64, dt: f64, n: usize) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let dim = self.model.state_dim();
        let gain = self.config.position_gain;
        let mut vel = vec![DVector::zeros(dim); n + 1];
        let mut pos = vec![DVector::zeros(dim); n + 1];
        let mut track = |axis: usize, profile: TrapezoidProfile, t0: f64, active: bool| {
            let (p_now, _) = profile.sample(t0);
            let drift = if active { p_now - current.position[axis] } else { 0.0 };
            for k in 0..=n {
                let t = k as f64 * dt;
                let (p, v) = profile.sample(t0 + t);
                let decay = (-gain * t).exp();
                vel[k][axis] = v + gain * drift * decay;
                pos[k][axis] = p - drift * decay;
            }
        };
        match &self.model {
            ObjectModel::Lift(l) => {
                let z = self.model.state_dim() - 1;
                let finished = elapsed >= self.cmd.duration && !self.cmd.hold;
                let profile = TrapezoidProfile::new(
                    self.origin[z],
                    self.origin[z] + self.cmd.target,
                    self.cmd.duration,
                );
                track(z, profile, elapsed, !finished);
                if l.planar {
                    for axis in 0..2 {
                        let v = self.cmd.carry_velocity[axis];
                        for k in 0..=n {
                            vel[k][axis] = v;
                            pos[k][axis] = current.position[axis] + v * k as f64 * dt;
                        }
                    }
                }
            }
            ObjectModel::Door(door) => match self.subtask {
                Subtask::HandleTurn => {
                    let profile = TrapezoidProfile::new(
                        self.origin[0],
                        door.release_angle * self.config.handle_overshoot,
                        door.handle_duration,
                    );
                    track(0, profile, elapsed, true);
                    for k in 0..=n {
                        vel[k][1] = current.velocity[1];
                        pos[k][1] = current.position[1];
                    }
                }
                _ => {
                    let profile = TrapezoidProfile::new(
                        self.push_origin,
                        self.cmd.target,
                        self.cmd.duration,
                    );
                    let t0 = elapsed - self.phase_start;
                    let finished = t0 >= self.cmd.duration && !self.cmd.hold;
                    track(1, profile, t0, !finished);
                    for k in 0..=n {
                        vel[k][0] = current.velocity[0];
                        pos[k][0] = current.position[0];
                    }
                }
            },
        }
        (vel, pos)
    }

    fn setup(&self, current: &ObjectState, elapsed: f64, dt: f64, n: usize) -> Setup {
        let dyn_ = object_dynamics(&self.model, self.gravity);
        let dim = self.model.state_dim();
        let (vref, pref) = self.reference(current, elapsed, dt, n);
        // input map and active rows
        let (input_map, active, lower, upper): (DMatrix<f64>, Vec<bool>, f64, f64) = match &self.model {
            ObjectModel::Lift(LiftObject { force_limit, .. }) => (
                DMatrix::identity(dim, dim),
                vec![true; dim],
                -force_limit,
                *force_limit,
            ),
            ObjectModel::Door(door) => match self.subtask {
                Subtask::HandleTurn => (
                    DMatrix::from_column_slice(2, 1, &[door.lever_length, 0.0]),
                    vec![true, false],
                    0.0,
                    door.force_limit,
                ),
                _ => (
                    DMatrix::from_column_slice(2, 1, &[0.0, door.push_radius()]),
                    vec![false, true],
                    0.0,
                    door.force_limit,
                ),
            },
        };
        let external: Vec<DVector<f64>> = (0..n)
            .map(|k| match &self.model {
                ObjectModel::Lift(_) => dyn_.constant_force.clone(),
                ObjectModel::Door(door) => {
                    let rate = if k == 0 { current.velocity[1] } else { vref[k][1] };
                    let f = door_external_force(door, pref[k][0], rate);
                    DVector::from_vec(vec![f[0], f[1]])
                }
            })
            .collect();
        Setup {
            dynamics: dyn_,
            input_map,
            active,
            lower,
            upper,
            vref,
            external,
        }
    }

    fn solve(
        &mut self,
        s: &Setup,
        current: &ObjectState,
        dt: f64,
        n: usize,
    ) -> Result<Vec<DVector<f64>>, PlanError> {
        let dim = self.model.state_dim();
        let p = s.input_map.ncols();
        let nv = n * p;
        // v_{k+1} = a v_k + b u_k + c_k per active coordinate
        let a: Vec<f64> = (0..dim)
            .map(|i| {
                if s.active[i] {
                    1.0 - dt * s.dynamics.damping[i] / s.dynamics.inertia[i]
                } else {
                    1.0
                }
            })
            .collect();
        let b = DMatrix::from_fn(dim, p, |i, j| {
            if s.active[i] {
                dt * s.input_map[(i, j)] / s.dynamics.inertia[i]
            } else {
                0.0
            }
        });
        let c: Vec<DVector<f64>> = s
            .external
            .iter()
            .map(|f| {
                DVector::from_fn(dim, |i, _| {
                    if s.active[i] {
                        dt * f[i] / s.dynamics.inertia[i]
                    } else {
                        0.0
                    }
                })
            })
            .collect();

        // feed-forward force reproducing the reference exactly
        let pinv = s
            .input_map
            .clone()
            .pseudo_inverse(1e-12)
            .expect("input map pseudo-inverse");
        let uff: Vec<DVector<f64>> = (0..n)
            .map(|k| {
                let v_now = if k == 0 { &current.velocity } else { &s.vref[k] };
                let mut rhs = DVector::zeros(dim);
                for i in 0..dim {
                    if s.active[i] {
                        rhs[i] = s.dynamics.inertia[i] * (s.vref[k + 1][i] - v_now[i]) / dt
                            + s.dynamics.damping[i] * v_now[i]
                            - s.external[k][i];
                    }
                }
                &pinv * rhs
            })
            .collect();

        // condensed: v_k = a^k v0 + sum_j a^(k-1-j) (b u_j + c_j)
        let w = self.config.w_track;
        let r = self.config.w_force;
        let mut h = DMatrix::zeros(nv, nv);
        let mut g = DVector::zeros(nv);
        for i in 0..dim {
            if !s.active[i] {
                continue;
            }
            for k in 1..=n {
                let mut row = DVector::zeros(nv);
                let mut free = a[i].powi(k as i32) * current.velocity[i];
                for j in 0..k {
                    let pw = a[i].powi((k - 1 - j) as i32);
                    for col in 0..p {
                        row[j * p + col] = pw * b[(i, col)];
                    }
                    free += pw * c[j][i];
                }
                let err = free - s.vref[k][i];
                h += 2.0 * w * &row * row.transpose();
                g += 2.0 * w * err * &row;
            }
        }
        for k in 0..n {
            for col in 0..p {
                let idx = k * p + col;
                h[(idx, idx)] += 2.0 * r;
                g[idx] -= 2.0 * r * uff[k][col];
            }
        }
        let h = (&h + h.transpose()) * 0.5;
        let problem = QpProblem::new(h, g).with_inequalities(
            DMatrix::identity(nv, nv),
            DVector::from_element(nv, s.lower),
            DVector::from_element(nv, s.upper),
        );
        let rep = self
            .qp
            .solve(&problem, self.warm.as_ref())
            .map_err(|_| PlanError::Infeasible { family: "problem data" })?;
        if rep.status == SolveStatus::Infeasible {
            return Err(PlanError::Infeasible { family: "force bounds" });
        }
        self.warm = Some(WarmStart {
            x: rep.solution.clone(),
            y: rep.multipliers.clone(),
        });
        Ok((0..n)
            .map(|k| rep.solution.rows(k * p, p).into_owned())
            .collect())
    }

    fn assemble(
        &self,
        s: Setup,
        current: &ObjectState,
        inputs: Vec<DVector<f64>>,
        dt: f64,
        n: usize,
    ) -> ManipulationPlan {
        let dim = self.model.state_dim();
        let mut states = vec![current.velocity.clone()];
        let mut positions = vec![current.position.clone()];
        let mut generalized = Vec::with_capacity(n);
        for k in 0..n {
            let gen = &s.input_map * &inputs[k];
            let v = &states[k];
            let mut next = v.clone();
            for i in 0..dim {
                if s.active[i] {
                    next[i] = v[i]
                        + dt * (-s.dynamics.damping[i] * v[i] + s.external[k][i] + gen[i])
                            / s.dynamics.inertia[i];
                }
            }
            let pos = &positions[k] + dt * &next;
            generalized.push(gen);
            states.push(next);
            positions.push(pos);
        }
        let force: Vec<Vec3> = (0..n)
            .map(|k| self.world_force(&inputs[k], &positions[k]))
            .collect();
        let grip = positions.iter().map(|p| self.grip_target(p)).collect();
        ManipulationPlan {
            subtask: self.subtask,
            horizon_dt: dt,
            obj_ref: s.vref,
            states,
            positions,
            generalized_force: generalized,
            external: s.external,
            force,
            grip,
        }
    }

    fn world_force(&self, u: &DVector<f64>, pos: &DVector<f64>) -> Vec3 {
        match &self.model {
            ObjectModel::Lift(l) if l.planar => Vec3::new(u[0], u[1], u[2]),
            ObjectModel::Lift(_) => Vec3::new(0.0, 0.0, u[0]),
            ObjectModel::Door(door) => match self.subtask {
                Subtask::HandleTurn => u[0] * door.lever_tangent(pos[0]),
                _ => u[0] * door.push_normal(pos[1]),
            },
        }
    }

    fn grip_target(&self, pos: &DVector<f64>) -> GripTarget {
        match &self.model {
            ObjectModel::Lift(l) if l.planar => GripTarget {
                position: Vec3::new(pos[0], pos[1], pos[2]),
                roll: None,
            },
            ObjectModel::Lift(_) => GripTarget {
                position: Vec3::new(self.grip_xy[0], self.grip_xy[1], pos[0]),
                roll: None,
            },
            ObjectModel::Door(door) => match self.subtask {
                Subtask::HandleTurn => GripTarget {
                    position: door.lever_tip(pos[0]),
                    roll: Some(pos[0]),
                },
                _ => GripTarget {
                    position: door.push_point(pos[1]),
                    roll: None,
                },
            },
        }
    }
}

struct Setup {
    dynamics: ObjectDynamics,
    input_map: DMatrix<f64>,
    active: Vec<bool>,
    lower: f64,
    upper: f64,
    vref: Vec<DVector<f64>>,
    external: Vec<DVector<f64>>,
}
