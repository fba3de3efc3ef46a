//! Closed-loop scenario engine: object planner, pose optimizer and MPC at
//! the control rate, physics at the physics rate with zero-order-hold forces.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::gait::{gait_tick, raibert_target, stance_horizon, SwingTrajectory};
use super::report::{RunMetrics, Trace, TraceRow};
use super::world::{step_physics, ArmCommand, DoorContact, FootMode, ObjectWorld, SimWorld};
use crate::config::{ConfigError, ScenarioConfig};
use crate::model::{
    hip_ground_projection, ControlInput, DoorObject, ObjectModel, RobotModel, RobotState, Vec3,
    NUM_LEGS,
};
use crate::mpc::{friction_pyramid, ControllerKind, FrictionPyramid, LocoMpc, MpcRequest};
use crate::planner::{GripTarget, ManipulationPlan, ObjectPlanner, ObjectState, PlanError, Subtask};
use crate::pose::{door_clearance_constraint, PoseDecision, PoseError, PoseOptimizer, PoseTarget};

/// Absolute roll or pitch beyond which the robot counts as tipped over [rad].
const TIP_OVER_ANGLE: f64 = 1.4;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot set up the task: {0}")]
    Plan(#[from] PlanError),
    #[error("no feasible initial pose: {0}")]
    InitialPose(#[from] PoseError),
}

/// Result of one scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub metrics: RunMetrics,
    pub trace: Trace,
}

struct Swing {
    traj: SwingTrajectory,
    start: f64,
    duration: f64,
}

/// Everything that persists between control ticks.
struct Controller {
    kind: ControllerKind,
    planner: Option<ObjectPlanner>,
    pose: PoseOptimizer,
    mpc: LocoMpc,
    pyramid: FrictionPyramid,
    /// Last usable reference, reused when a layer fails.
    last_ref: Option<(Vec<RobotState>, Vec<PoseDecision>)>,
    last_fm: Vec<Vec3>,
    last_u: ControlInput,
    nominal: RobotState,
    hold_q: f64,
    /// CoM x-y the pose regularizer pulls toward: the starting position.
    anchor: [f64; 2],
}

struct TickOutput {
    u: ControlInput,
    reference: Vec<RobotState>,
    degraded: bool,
    subtask: f64,
}

fn subtask_code(s: Option<Subtask>) -> f64 {
    match s {
        None => 0.0,
        Some(Subtask::Lift) => 1.0,
        Some(Subtask::HandleTurn) => 2.0,
        Some(Subtask::Push) => 3.0,
    }
}

/// Object state as the planner sees it.
fn measure_object(world: &SimWorld, model: &ObjectModel) -> ObjectState {
    match (&world.object, model) {
        (ObjectWorld::Lift { pos, vel, .. }, ObjectModel::Lift(l)) if l.planar => ObjectState {
            position: DVector::from_column_slice(pos.as_slice()),
            velocity: DVector::from_column_slice(vel.as_slice()),
        },
        (ObjectWorld::Lift { pos, vel, .. }, _) => ObjectState {
            position: DVector::from_element(1, pos.z),
            velocity: DVector::from_element(1, vel.z),
        },
        (
            ObjectWorld::Door {
                handle,
                handle_rate,
                angle,
                rate,
                ..
            },
            _,
        ) => ObjectState {
            position: DVector::from_vec(vec![*handle, *angle]),
            velocity: DVector::from_vec(vec![*handle_rate, *rate]),
        },
        (ObjectWorld::None, m) => ObjectState::at_rest(DVector::zeros(m.state_dim())),
    }
}

fn object_columns(world: &SimWorld) -> ([f64; 3], [f64; 3]) {
    match &world.object {
        ObjectWorld::None => ([0.0; 3], [0.0; 3]),
        ObjectWorld::Lift { pos, vel, .. } => ([pos.x, pos.y, pos.z], [vel.x, vel.y, vel.z]),
        ObjectWorld::Door {
            handle,
            handle_rate,
            angle,
            rate,
            ..
        } => ([*handle, *angle, 0.0], [*handle_rate, *rate, 0.0]),
    }
}

fn lerp_state(a: &RobotState, b: &RobotState, s: f64) -> RobotState {
    RobotState::from_vector(&(a.to_vector() * (1.0 - s) + b.to_vector() * s))
}

/// Place the robot at the optimal pose for the task's initial grip.
fn initial_world(cfg: &ScenarioConfig, model: &RobotModel) -> Result<SimWorld, ScenarioError> {
    let start = Vec3::new(cfg.initial_xy[0], cfg.initial_xy[1], cfg.nominal_height);
    let mut world = SimWorld::standing(model, start, cfg.initial_arm, cfg.stance_offset);
    let Some(object) = cfg.object_model() else {
        world.arm_cmd = ArmCommand::hold(cfg.initial_arm, cfg.arm_gain);
        return Ok(world);
    };
    let g = model.gravity;
    let (grip, force, door) = match &object {
        ObjectModel::Lift(l) => (
            GripTarget {
                position: world.gripper(model),
                roll: None,
            },
            Vec3::new(0.0, 0.0, l.mass * g),
            None,
        ),
        ObjectModel::Door(d) => (
            GripTarget {
                position: d.lever_tip(0.0),
                roll: Some(0.0),
            },
            Vec3::zeros(),
            Some(d.clone()),
        ),
    };
    let target = PoseTarget {
        grip,
        force,
        ref_height: cfg.nominal_height,
        anchor_xy: cfg.initial_xy,
        door,
    };
    let mut opt = PoseOptimizer::new(model.clone(), cfg.pose.clone(), target.door.clone());
    let guess = PoseDecision::new(start, Vec3::zeros(), cfg.initial_arm);
    let sol = opt.solve(&target, &guess)?;
    let mut world = SimWorld::standing(model, sol.pose.pos, sol.pose.q_arm, cfg.stance_offset);
    world.robot.euler = sol.pose.euler;
    world.arm_cmd = ArmCommand::hold(sol.pose.q_arm, cfg.arm_gain);
    match object {
        ObjectModel::Lift(l) => world.grasp(l.mass, model),
        ObjectModel::Door(d) => {
            world.object = ObjectWorld::Door {
                params: d,
                handle: 0.0,
                handle_rate: 0.0,
                angle: 0.0,
                rate: 0.0,
                latched: true,
            }
        }
    }
    Ok(world)
}

/// Quadratic arm reference with the rate and curvature of three consecutive
/// pose angles, starting from the measured angle `q_now`. The grip targets are
/// planned from the measured object, so the pose angles carry the intended
/// motion while their absolute value assumes the reference body pose.
fn arm_command(poses: &[PoseDecision], q_now: f64, dt: f64, t: f64, gain: f64) -> ArmCommand {
    let q = |k: usize| poses[k.min(poses.len() - 1)].q_arm;
    let (p0, p1, p2) = (q(0), q(1), q(2));
    ArmCommand {
        q0: q_now,
        rate: (-3.0 * p0 + 4.0 * p1 - p2) / (2.0 * dt),
        accel: (p0 - 2.0 * p1 + p2) / (dt * dt),
        issued_at: t,
        gain,
    }
}

impl Controller {
    fn tick(
        &mut self,
        world: &mut SimWorld,
        cfg: &ScenarioConfig,
        model: &RobotModel,
        touchdown: &[Vec3; NUM_LEGS],
        metrics: &mut RunMetrics,
    ) -> TickOutput {
        let n = self.mpc.config.horizon_n;
        let dt = self.mpc.config.dt();
        let t = world.time;
        let mut degraded = false;
        let mut plan: Option<ManipulationPlan> = None;

        if let Some(planner) = &mut self.planner {
            let obj = measure_object(world, planner.model());
            match planner.plan(&obj, t, dt, n) {
                Ok(p) => plan = Some(p),
                Err(_) => degraded = true,
            }
        }

        if let Some(p) = &plan {
            match self
                .pose
                .build_reference_trajectory(p, &world.robot, world.q_arm, cfg.nominal_height, self.anchor)
            {
                Ok(r) => self.last_ref = Some((r.states, r.poses)),
                Err(_) => degraded = true,
            }
            self.last_fm = match self.kind {
                ControllerKind::Full => p.force.iter().map(|f| -f).collect(),
                ControllerKind::Baseline => vec![Vec3::zeros(); n],
                ControllerKind::FixedForce => {
                    let fixed = match self.planner.as_ref().map(|pl| pl.model()) {
                        Some(ObjectModel::Lift(l)) => Vec3::new(0.0, 0.0, -l.mass * model.gravity),
                        _ => -p.force[0],
                    };
                    vec![fixed; n]
                }
            };
            self.record_door(p, metrics);
        }

        let reference = match &self.last_ref {
            Some((states, poses)) if self.planner.is_some() => {
                world.arm_cmd = arm_command(poses, world.q_arm, dt, t, cfg.arm_gain);
                if let Some(door) = &self.pose.door {
                    for pose in poses {
                        let c = door_clearance_constraint(pose, door);
                        metrics.min_clearance = Some(metrics.min_clearance.map_or(c, |m| m.min(c)));
                    }
                }
                states.clone()
            }
            _ => {
                world.arm_cmd = ArmCommand::hold(self.hold_q, cfg.arm_gain);
                vec![self.nominal; n + 1]
            }
        };
        if self.last_fm.len() != n {
            self.last_fm = vec![Vec3::zeros(); n];
        }

        if let Some(p) = &plan {
            let mag = p.force[0].norm();
            let contact = match p.subtask {
                Subtask::Push => DoorContact::Leaf,
                _ => DoorContact::Handle,
            };
            world.door_cmd = (mag, contact);
        }

        let stance = stance_horizon(&cfg.gait, t, dt, n);
        let req = MpcRequest {
            x0: &world.robot,
            x_ref: &reference,
            stance: &stance,
            foot_pos: *touchdown,
            grip_pos: world.gripper(model),
            f_m_des: &self.last_fm,
        };
        match self.mpc.solve(&req) {
            Ok(sol) => {
                degraded |= sol.degraded;
                self.last_u = sol.inputs[0];
            }
            Err(_) => degraded = true,
        }
        for i in 0..NUM_LEGS {
            if world.foot_mode[i] == FootMode::Stance
                && !self.pyramid.contains(&self.last_u.foot_force[i], 1e-6)
            {
                metrics.pyramid_violations += 1;
            }
        }
        TickOutput {
            u: self.last_u,
            reference,
            degraded,
            subtask: subtask_code(self.planner.as_ref().map(|p| p.subtask())),
        }
    }

    fn record_door(&self, plan: &ManipulationPlan, metrics: &mut RunMetrics) {
        let Some(ObjectModel::Door(door)) = self.planner.as_ref().map(|p| p.model()) else {
            return;
        };
        if plan.subtask != Subtask::Push {
            return;
        }
        for (k, f) in plan.force.iter().enumerate() {
            let theta = plan.positions[k][1];
            let r = push_tangential(door, theta, f);
            metrics.max_push_tangential = Some(metrics.max_push_tangential.map_or(r, |m| m.max(r)));
        }
    }
}

/// Force component not along the door-leaf normal, relative to the force
/// magnitude; zero for a zero force.
fn push_tangential(door: &DoorObject, theta: f64, f: &Vec3) -> f64 {
    let norm = f.norm();
    if norm == 0.0 {
        return 0.0;
    }
    f.dot(&door.leaf_tangent(theta)).abs().max(f.z.abs()) / norm
}

/// Run the scenario with the configured controller.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun, ScenarioError> {
    run_scenario_with(cfg, cfg.controller_kind)
}

/// Run the scenario with an explicit controller kind.
pub fn run_scenario_with(
    cfg: &ScenarioConfig,
    kind: ControllerKind,
) -> Result<ScenarioRun, ScenarioError> {
    cfg.validate()?;
    let model = cfg.robot.clone();
    let mut world = initial_world(cfg, &model)?;
    if cfg.initial_perturbation > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let a = cfg.initial_perturbation;
        for i in 0..3 {
            world.robot.vel[i] += rng.gen_range(-a..=a);
            world.robot.omega[i] += rng.gen_range(-a..=a);
        }
    }

    let object = cfg.object_model();
    let planner = match (&cfg.task, &object) {
        (Some(task), Some(obj)) => {
            let initial = ObjectState::at_rest(measure_object(&world, obj).position);
            Some(ObjectPlanner::new(
                obj.clone(),
                task.clone(),
                &initial,
                world.gripper(&model),
                model.gravity,
                cfg.planner.clone(),
            )?)
        }
        _ => None,
    };
    let door = match &object {
        Some(ObjectModel::Door(d)) => Some(d.clone()),
        _ => None,
    };
    let door_target = cfg.task.as_ref().map_or(0.0, |t| t.target);
    let mut ctl = Controller {
        kind,
        planner,
        pose: PoseOptimizer::new(model.clone(), cfg.pose.clone(), door.clone()),
        mpc: LocoMpc::new(cfg.mpc_config(kind), model.clone()),
        pyramid: friction_pyramid(model.mu, model.fz_bounds),
        last_ref: None,
        last_fm: Vec::new(),
        last_u: ControlInput::default(),
        nominal: RobotState::at_rest(
            Vec3::new(world.robot.pos.x, world.robot.pos.y, cfg.nominal_height),
            model.gravity,
        ),
        hold_q: world.q_arm,
        anchor: [world.robot.pos.x, world.robot.pos.y],
    };

    let mut metrics = RunMetrics::new(&cfg.name, kind, cfg.seed);
    let mut trace = Trace::default();
    let steps = (cfg.duration / cfg.physics_dt).round() as usize;
    let ctrl_dt = ctl.mpc.config.dt();
    let mut last_tick: Option<u64> = None;
    let mut tick_time = 0.0;
    let mut reference = vec![ctl.nominal; 2];
    let mut u = ControlInput::default();
    let mut swings: [Option<Swing>; NUM_LEGS] = Default::default();
    let mut touchdown = world.foot_pos;
    let mut prev_stance = [true; NUM_LEGS];
    let (mut sum_h, mut sum_p) = (0.0, 0.0);
    let half_height = 0.5 * cfg.nominal_height;

    for s in 0..steps {
        let t = world.time;
        update_feet(&mut world, cfg, &model, t, &mut prev_stance, &mut swings, &mut touchdown);

        let tick = (s as f64 * cfg.physics_dt * cfg.control_rate + 1e-9).floor() as u64;
        if last_tick != Some(tick) {
            last_tick = Some(tick);
            let out = ctl.tick(&mut world, cfg, &model, &touchdown, &mut metrics);
            u = out.u;
            reference = out.reference;
            tick_time = t;
            metrics.ticks += 1;
            metrics.degraded_ticks += usize::from(out.degraded);
            let r0 = &reference[0];
            sum_h += (world.robot.pos.z - r0.pos.z).powi(2);
            sum_p += (world.robot.pitch() - r0.pitch()).powi(2);
            trace.rows.push(trace_row(&world, r0, &u, out.degraded, out.subtask));
            if metrics.handle_release_time.is_none() && out.subtask == subtask_code(Some(Subtask::Push)) {
                metrics.handle_release_time = Some(t);
            }
        }

        match step_physics(&world, &u, cfg.physics_dt, &model) {
            Ok(next) => world = next,
            Err(e) => {
                metrics.aborted = Some(e.to_string());
                break;
            }
        }

        let r = lerp_state(&reference[0], &reference[1], ((world.time - tick_time) / ctrl_dt).min(1.0));
        let x = &world.robot;
        metrics.max_pitch = metrics.max_pitch.max(x.pitch().abs());
        metrics.max_height_error = metrics.max_height_error.max((x.pos.z - r.pos.z).abs());
        if let ObjectWorld::Lift { pos, .. } = &world.object {
            metrics.max_grasp_error = metrics.max_grasp_error.max((pos - world.gripper(&model)).norm());
        }
        if let ObjectWorld::Door { angle, .. } = &world.object {
            if metrics.door_80_time.is_none() && *angle >= 0.8 * door_target {
                metrics.door_80_time = Some(world.time);
            }
        }
        if x.pos.z < half_height {
            metrics.fell = true;
            break;
        }
        if x.pitch().abs() > TIP_OVER_ANGLE || x.roll().abs() > TIP_OVER_ANGLE {
            metrics.aborted = Some(format!("tipped over at t = {:.4} s", world.time));
            break;
        }
    }

    if metrics.aborted.is_some() {
        metrics.fell = true;
    }
    if metrics.fell {
        metrics.max_height_error = metrics.max_height_error.max(half_height);
    }
    let ticks = metrics.ticks.max(1) as f64;
    metrics.com_height_rmse = (sum_h / ticks).sqrt();
    metrics.pitch_rmse = (sum_p / ticks).sqrt();
    metrics.sim_time = world.time;
    let (obj, _) = object_columns(&world);
    metrics.final_object = obj;
    if let ObjectWorld::Door { angle, .. } = &world.object {
        metrics.final_door_angle = Some(*angle);
    }
    Ok(ScenarioRun { metrics, trace })
}

/// Advance foot contact modes and swing trajectories to time `t`.
fn update_feet(
    world: &mut SimWorld,
    cfg: &ScenarioConfig,
    model: &RobotModel,
    t: f64,
    prev_stance: &mut [bool; NUM_LEGS],
    swings: &mut [Option<Swing>; NUM_LEGS],
    touchdown: &mut [Vec3; NUM_LEGS],
) {
    let phase = gait_tick(&cfg.gait, t);
    let swing_time = cfg.gait.period * (1.0 - cfg.gait.duty);
    let vel_cmd = Vec3::from(cfg.velocity_cmd);
    for i in 0..NUM_LEGS {
        match (prev_stance[i], phase.stance[i]) {
            (true, false) => {
                let x = &world.robot;
                let hip = hip_ground_projection(&x.pos, &x.euler, i, model) + x.vel * swing_time;
                let mut target = raibert_target(&hip, &x.vel, &vel_cmd, cfg.gait.stance_time(), cfg.swing.k_v);
                target.x += cfg.stance_offset[0];
                target.y += cfg.stance_offset[1];
                touchdown[i] = target;
                swings[i] = Some(Swing {
                    traj: SwingTrajectory {
                        start: world.foot_pos[i],
                        end: target,
                        height: cfg.swing.height,
                    },
                    start: t,
                    duration: swing_time,
                });
                world.foot_mode[i] = FootMode::Swing;
            }
            (false, true) => {
                let mut p = touchdown[i];
                p.z = 0.0;
                world.foot_pos[i] = p;
                world.foot_mode[i] = FootMode::Stance;
                swings[i] = None;
            }
            _ => {}
        }
        if let Some(sw) = &swings[i] {
            world.foot_pos[i] = sw.traj.sample((t - sw.start) / sw.duration);
        } else {
            touchdown[i] = world.foot_pos[i];
        }
        prev_stance[i] = phase.stance[i];
    }
}

fn trace_row(world: &SimWorld, r: &RobotState, u: &ControlInput, degraded: bool, subtask: f64) -> TraceRow {
    let mut v = Vec::with_capacity(super::report::TRACE_COLUMNS);
    v.push(world.time);
    v.extend(world.robot.to_vector().iter());
    v.extend(r.to_vector().iter());
    v.extend(u.to_vector().iter());
    v.push(world.q_arm);
    let (obj, objv) = object_columns(world);
    v.extend(obj);
    v.extend(objv);
    v.extend(world.object_force.iter());
    v.extend(world.foot_mode.iter().map(|m| f64::from(u8::from(*m == FootMode::Stance))));
    v.push(f64::from(u8::from(degraded)));
    v.push(subtask);
    TraceRow { values: v }
}
