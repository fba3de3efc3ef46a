//! Whole-body loco-manipulation MPC on the single-rigid-body model.
//!
//! The continuous model `x' = A x + B u` is linearized once per solve at the
//! current yaw and contact geometry, discretized with a second-order series
//! and condensed into a QP over the free stance-foot forces. Swing-foot forces
//! and the manipulation force are fixed inputs, so the zero-force and
//! force-pinning equalities hold exactly rather than to solver tolerance.

use nalgebra::{DMatrix, DVector, SMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    rot_z, skew, world_inertia, Bounds, ControlInput, InputVector, RobotModel, RobotState,
    StateVector, Vec3, INPUT_DIM, NUM_LEGS, STATE_DIM,
};
use crate::solvers::{QpProblem, QpSettings, QpSolver, SolveStatus, WarmStart};

pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputMatrix = SMatrix<f64, STATE_DIM, INPUT_DIM>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerKind {
    #[default]
    /// Manipulation force pinned to the planner's per-step force.
    Full,
    /// No manipulation force in the prediction model.
    Baseline,
    /// Manipulation force pinned to the static object weight.
    FixedForce,
}

impl std::str::FromStr for ControllerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Self::Full),
            "baseline" => Ok(Self::Baseline),
            "fixedforce" | "fixed_force" | "fixed-force" => Ok(Self::FixedForce),
            _ => Err(format!("unknown controller kind '{s}'")),
        }
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Full => "Full",
            Self::Baseline => "Baseline",
            Self::FixedForce => "FixedForce",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon_n: usize,
    pub horizon_t: f64,
    pub state_weights: [f64; STATE_DIM],
    pub input_weights: [f64; INPUT_DIM],
    /// Set by the scenario, not read from the `[mpc]` config section.
    #[serde(skip)]
    pub controller_kind: ControllerKind,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon_n: 10,
            horizon_t: 0.5,
            state_weights: [
                400.0, 400.0, 100.0, 400.0, 400.0, 800.0, 1.0, 1.0, 1.0, 10.0, 10.0, 20.0, 0.0,
            ],
            input_weights: [1e-4; INPUT_DIM],
            controller_kind: ControllerKind::Full,
            qp_tol: 1e-6,
            qp_max_iter: 4000,
        }
    }
}

impl MpcConfig {
    pub fn dt(&self) -> f64 {
        self.horizon_t / self.horizon_n as f64
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        if self.horizon_n == 0 {
            return Err(MpcError::InvalidInput("horizon_n must be at least 1".into()));
        }
        if !(self.horizon_t > 0.0 && self.horizon_t.is_finite()) {
            return Err(MpcError::InvalidInput("horizon_t must be positive".into()));
        }
        let weights = self.state_weights.iter().chain(&self.input_weights);
        if weights.clone().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(MpcError::InvalidInput("weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MpcError {
    #[error("invalid MPC input: {0}")]
    InvalidInput(String),
    #[error("world inertia is singular")]
    SingularInertia,
    #[error("MPC QP infeasible ({family})")]
    Infeasible { family: &'static str },
}

/// Continuous-time single-rigid-body model around the current yaw.
pub fn build_state_space(
    yaw: f64,
    foot_pos: &[Vec3; NUM_LEGS],
    grip_pos: &Vec3,
    com: &Vec3,
    model: &RobotModel,
    euler: &Vec3,
) -> Result<(StateMatrix, InputMatrix), MpcError> {
    let iw_inv = world_inertia(model, euler)
        .try_inverse()
        .ok_or(MpcError::SingularInertia)?;
    let mut a = StateMatrix::zeros();
    a.fixed_view_mut::<3, 3>(0, 6)
        .copy_from(&rot_z(yaw).transpose());
    a.fixed_view_mut::<3, 3>(3, 9)
        .copy_from(&nalgebra::Matrix3::identity());
    a[(11, 12)] = -1.0;

    let mut b = InputMatrix::zeros();
    let lin = nalgebra::Matrix3::identity() / model.mass;
    let points = foot_pos.iter().chain(std::iter::once(grip_pos));
    for (i, p) in points.enumerate() {
        let r = p - com;
        b.fixed_view_mut::<3, 3>(6, 3 * i)
            .copy_from(&(iw_inv * skew(&r)));
        b.fixed_view_mut::<3, 3>(9, 3 * i).copy_from(&lin);
    }
    Ok((a, b))
}

/// Second-order series discretization:
/// `A_d = I + A dt + A^2 dt^2/2`, `B_d = (I dt + A dt^2/2) B`.
pub fn discretize(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let ad = &id + a * dt + a * a * (dt * dt / 2.0);
    let bd = (&id * dt + a * (dt * dt / 2.0)) * b;
    (ad, bd)
}

fn discretize_fixed(a: &StateMatrix, b: &InputMatrix, dt: f64) -> (StateMatrix, InputMatrix) {
    let id = StateMatrix::identity();
    let ad = id + a * dt + a * a * (dt * dt / 2.0);
    let bd = (id * dt + a * (dt * dt / 2.0)) * b;
    (ad, bd)
}

/// Linearized friction pyramid on one foot force: `lower <= C f <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrictionPyramid {
    pub c: SMatrix<f64, 5, 3>,
    pub lower: [f64; 5],
    pub upper: [f64; 5],
}

impl FrictionPyramid {
    /// Per-row violation (positive when violated).
    pub fn violations(&self, f: &Vec3) -> [f64; 5] {
        let v = self.c * f;
        std::array::from_fn(|i| (self.lower[i] - v[i]).max(v[i] - self.upper[i]))
    }

    pub fn contains(&self, f: &Vec3, tol: f64) -> bool {
        self.violations(f).iter().all(|v| *v <= tol)
    }
}

pub fn friction_pyramid(mu: f64, fz_bounds: Bounds) -> FrictionPyramid {
    let inf = f64::INFINITY;
    #[rustfmt::skip]
    let c = SMatrix::<f64, 5, 3>::new(
        1.0, 0.0, -mu,
        1.0, 0.0, mu,
        0.0, 1.0, -mu,
        0.0, 1.0, mu,
        0.0, 0.0, 1.0,
    );
    FrictionPyramid {
        c,
        lower: [-inf, 0.0, -inf, 0.0, fz_bounds.min],
        upper: [0.0, inf, 0.0, inf, fz_bounds.max],
    }
}

/// Inputs to one MPC solve.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcRequest<'a> {
    pub x0: &'a RobotState,
    /// Reference states for steps `0..=N`.
    pub x_ref: &'a [RobotState],
    /// Stance flags per horizon step.
    pub stance: &'a [[bool; NUM_LEGS]],
    pub foot_pos: [Vec3; NUM_LEGS],
    pub grip_pos: Vec3,
    /// Force the object exerts on the robot, per horizon step.
    pub f_m_des: &'a [Vec3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub inputs: Vec<ControlInput>,
    pub predicted: Vec<RobotState>,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Set when the QP hit its iteration limit; the inputs are still usable.
    pub degraded: bool,
}

/// MPC instance with a reusable QP workspace and warm start.
#[derive(Debug, Clone)]
pub struct LocoMpc {
    pub config: MpcConfig,
    pub model: RobotModel,
    qp: QpSolver,
    warm: Option<WarmStart>,
}

impl LocoMpc {
    pub fn new(config: MpcConfig, model: RobotModel) -> Self {
        let qp = QpSolver::new(QpSettings {
            tol: config.qp_tol,
            max_iter: config.qp_max_iter,
            ..QpSettings::default()
        });
        Self {
            config,
            model,
            qp,
            warm: None,
        }
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    pub fn solve(&mut self, req: &MpcRequest) -> Result<MpcSolution, MpcError> {
        self.config.validate()?;
        let n = self.config.horizon_n;
        if req.x_ref.len() != n + 1 || req.stance.len() != n || req.f_m_des.len() != n {
            return Err(MpcError::InvalidInput(format!(
                "expected {} references, {n} stance rows and {n} manipulation forces; got {}, {}, {}",
                n + 1,
                req.x_ref.len(),
                req.stance.len(),
                req.f_m_des.len()
            )));
        }
        if !req.x0.is_finite() {
            return Err(MpcError::InvalidInput("initial state is not finite".into()));
        }
        let dt = self.config.dt();
        let (a, b) = build_state_space(
            req.x0.yaw(),
            &req.foot_pos,
            &req.grip_pos,
            &req.x0.pos,
            &self.model,
            &req.x0.euler,
        )?;
        let (ad, bd) = discretize_fixed(&a, &b, dt);

        // fixed inputs and free-column layout per step
        let kind = self.config.controller_kind;
        let mut fixed = vec![InputVector::zeros(); n];
        let mut free: Vec<Vec<usize>> = Vec::with_capacity(n);
        for k in 0..n {
            if kind != ControllerKind::Baseline {
                fixed[k].fixed_rows_mut::<3>(12).copy_from(&req.f_m_des[k]);
            }
            free.push(
                (0..NUM_LEGS)
                    .filter(|&i| req.stance[k][i])
                    .flat_map(|i| 3 * i..3 * i + 3)
                    .collect(),
            );
        }
        let offsets: Vec<usize> = free
            .iter()
            .scan(0, |acc, f| {
                let o = *acc;
                *acc += f.len();
                Some(o)
            })
            .collect();
        let nv: usize = free.iter().map(Vec::len).sum();

        // powers of A_d and the free response
        let mut apow = vec![StateMatrix::identity()];
        for k in 1..=n {
            apow.push(ad * apow[k - 1]);
        }
        let x0 = req.x0.to_vector();
        let mut drift = vec![x0];
        for k in 0..n {
            drift.push(ad * drift[k] + bd * fixed[k]);
        }

        // S maps free forces to stacked predicted states x_1..x_N
        let mut s = DMatrix::zeros(STATE_DIM * n, nv);
        for k in 1..=n {
            for j in 0..k {
                let m = apow[k - 1 - j] * bd;
                for (c, &col) in free[j].iter().enumerate() {
                    s.view_mut((STATE_DIM * (k - 1), offsets[j] + c), (STATE_DIM, 1))
                        .copy_from(&m.column(col));
                }
            }
        }
        let q = &self.config.state_weights;
        let mut qs = s.clone();
        let mut err = DVector::zeros(STATE_DIM * n);
        for k in 1..=n {
            let e: StateVector = drift[k] - req.x_ref[k].to_vector();
            for r in 0..STATE_DIM {
                let row = STATE_DIM * (k - 1) + r;
                qs.row_mut(row).scale_mut(q[r]);
                err[row] = q[r] * e[r];
            }
        }
        let mut h = 2.0 * s.transpose() * &qs;
        let g = 2.0 * s.transpose() * err;
        for k in 0..n {
            for (c, &col) in free[k].iter().enumerate() {
                h[(offsets[k] + c, offsets[k] + c)] += 2.0 * self.config.input_weights[col];
            }
        }
        let h = (&h + h.transpose()) * 0.5;

        // friction pyramids on every free foot
        let pyr = friction_pyramid(self.model.mu, self.model.fz_bounds);
        let feet = nv / 3;
        let mut c = DMatrix::zeros(5 * feet, nv);
        let mut lo = DVector::zeros(5 * feet);
        let mut hi = DVector::zeros(5 * feet);
        for f in 0..feet {
            c.view_mut((5 * f, 3 * f), (5, 3)).copy_from(&pyr.c);
            for r in 0..5 {
                lo[5 * f + r] = pyr.lower[r];
                hi[5 * f + r] = pyr.upper[r];
            }
        }
        let problem = QpProblem::new(h, g).with_inequalities(c, lo, hi);
        let warm = self
            .warm
            .as_ref()
            .filter(|w| w.x.len() == nv && w.y.len() == 5 * feet);
        let rep = self
            .qp
            .solve(&problem, warm)
            .map_err(|e| MpcError::InvalidInput(e.to_string()))?;
        if rep.status == SolveStatus::Infeasible {
            self.warm = None;
            return Err(MpcError::Infeasible {
                family: "friction pyramid",
            });
        }
        self.warm = Some(WarmStart {
            x: rep.solution.clone(),
            y: rep.multipliers.clone(),
        });

        let mut inputs = Vec::with_capacity(n);
        let mut predicted = vec![*req.x0];
        let mut x = x0;
        for k in 0..n {
            let mut u = fixed[k];
            for (c, &col) in free[k].iter().enumerate() {
                u[col] = rep.solution[offsets[k] + c];
            }
            x = ad * x + bd * u;
            inputs.push(ControlInput::from_vector(&u));
            predicted.push(RobotState::from_vector(&x));
        }
        Ok(MpcSolution {
            inputs,
            predicted,
            status: rep.status,
            iterations: rep.iterations,
            degraded: rep.status == SolveStatus::MaxIter,
        })
    }
}

/// One-shot solve with a fresh MPC instance.
pub fn solve_mpc(
    req: &MpcRequest,
    cfg: &MpcConfig,
    model: &RobotModel,
) -> Result<MpcSolution, MpcError> {
    LocoMpc::new(cfg.clone(), model.clone()).solve(req)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::rot_zyx;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const G: f64 = 9.81;

    fn stance_feet(model: &RobotModel, com: &Vec3) -> [Vec3; 4] {
        std::array::from_fn(|i| {
            let h = model.hip(i).unwrap();
            Vec3::new(com.x + h.x, com.y + h.y, 0.0)
        })
    }

    fn random_vec(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
        Vec3::new(rng.gen_range(-s..s), rng.gen_range(-s..s), rng.gen_range(-s..s))
    }

    #[test]
    fn state_space_examples() {
        let m = RobotModel::default();
        let com = Vec3::new(0.0, 0.0, 0.35);
        let (a, _) = build_state_space(0.0, &stance_feet(&m, &com), &com, &com, &m, &Vec3::zeros()).unwrap();
        assert_eq!(a.fixed_view::<3, 3>(0, 6).into_owned(), nalgebra::Matrix3::identity());
        let (_, b) = build_state_space(0.4, &[com; 4], &com, &com, &m, &Vec3::zeros()).unwrap();
        assert!(b.fixed_view::<3, 12>(6, 0).amax() == 0.0);
    }

    #[test]
    fn state_space_matches_direct_dynamics() {
        let m = RobotModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let euler = Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-3.0..3.0));
            let com = random_vec(&mut rng, 1.0);
            let feet: [Vec3; 4] = std::array::from_fn(|_| random_vec(&mut rng, 1.0));
            let grip = random_vec(&mut rng, 1.0);
            let (a, b) = build_state_space(euler.z, &feet, &grip, &com, &m, &euler).unwrap();
            let x = RobotState {
                euler,
                pos: com,
                omega: random_vec(&mut rng, 2.0),
                vel: random_vec(&mut rng, 2.0),
                grav: G,
            };
            let forces: Vec<Vec3> = (0..5).map(|_| random_vec(&mut rng, 100.0)).collect();
            let mut u = InputVector::zeros();
            for (i, f) in forces.iter().enumerate() {
                u.fixed_rows_mut::<3>(3 * i).copy_from(f);
            }
            let xdot = a * x.to_vector() + b * u;
            // direct evaluation: yaw-only Euler kinematics, Newton-Euler
            let (sy, cy) = euler.z.sin_cos();
            let w = x.omega;
            let rates = Vec3::new(cy * w.x + sy * w.y, -sy * w.x + cy * w.y, w.z);
            let iw = rot_zyx(&euler) * m.inertia_body() * rot_zyx(&euler).transpose();
            let points: Vec<Vec3> = feet.iter().copied().chain(std::iter::once(grip)).collect();
            let torque: Vec3 = points.iter().zip(&forces).map(|(p, f)| (p - com).cross(f)).sum();
            let wdot = iw.lu().solve(&torque).unwrap();
            let total: Vec3 = forces.iter().sum();
            let vdot = total / m.mass - Vec3::new(0.0, 0.0, G);
            let expect = [rates, x.vel, wdot, vdot];
            for (blk, e) in expect.iter().enumerate() {
                let got = xdot.fixed_rows::<3>(3 * blk).into_owned();
                assert!((got - e).norm() <= 1e-9 * (1.0 + e.norm()));
            }
            assert_eq!(xdot[12], 0.0);
        }
    }

    #[test]
    fn discretization_examples() {
        let (ad, bd) = discretize(&DMatrix::zeros(3, 3), &DMatrix::zeros(3, 2), 0.05);
        assert_eq!(ad, DMatrix::identity(3, 3));
        assert_eq!(bd, DMatrix::zeros(3, 2));
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let (ad, _) = discretize(&a, &DMatrix::zeros(2, 1), 0.05);
        assert_eq!(ad, DMatrix::from_row_slice(2, 2, &[1.0, 0.05, 0.0, 1.0]));
    }

    /// Matrix exponential by scaling and squaring a Taylor series.
    fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = m.nrows();
        let norm = m.norm();
        let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
        let scaled = m / 2f64.powi(s);
        let mut term = DMatrix::identity(n, n);
        let mut sum = DMatrix::identity(n, n);
        for k in 1..30 {
            term = &term * &scaled / k as f64;
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn discretization_matches_exponential_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..30 {
            let n = rng.gen_range(2..8);
            let mut a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            for i in 0..n {
                a[(i, i)] -= 2.0;
            }
            let dt = 0.05;
            let (ad, _) = discretize(&a, &DMatrix::zeros(n, 1), dt);
            let adt = &a * dt;
            let na = adt.norm();
            let bound = na.powi(3) / 6.0 * na.exp();
            assert!((ad - expm(&adt)).norm() <= bound);
        }
    }

    #[test]
    fn pyramid_examples() {
        let p = friction_pyramid(0.5, Bounds { min: 0.0, max: 350.0 });
        assert!(p.contains(&Vec3::new(0.0, 0.0, 100.0), 0.0));
        let v = p.violations(&Vec3::new(60.0, 0.0, 100.0));
        assert_relative_eq!(v[0], 10.0, epsilon = 1e-12);
        let edge = Vec3::new(50.0, -50.0, 100.0);
        let v = p.violations(&edge);
        assert!(p.contains(&edge, 0.0));
        assert_eq!(v[0], 0.0);
        assert_eq!(v[3], 0.0);
    }

    fn standing(model: &RobotModel, n: usize) -> (RobotState, Vec<RobotState>, Vec<[bool; 4]>, [Vec3; 4]) {
        let x0 = RobotState::at_rest(Vec3::new(0.0, 0.0, 0.35), G);
        let feet = stance_feet(model, &x0.pos);
        (x0, vec![x0; n + 1], vec![[true; 4]; n], feet)
    }

    #[test]
    fn equilibrium_is_symmetric() {
        let m = RobotModel::default();
        let cfg = MpcConfig::default();
        let (x0, xr, st, feet) = standing(&m, 10);
        let fm = vec![Vec3::zeros(); 10];
        let req = MpcRequest { x0: &x0, x_ref: &xr, stance: &st, foot_pos: feet, grip_pos: x0.pos, f_m_des: &fm };
        let sol = solve_mpc(&req, &cfg, &m).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let each = m.mass * G / 4.0;
        assert!((each - 40.47).abs() < 0.01);
        for f in &sol.inputs[0].foot_force {
            assert!((f.z - each).abs() <= 0.01 * each);
            assert!(f.x.abs() < 0.01 * each && f.y.abs() < 0.01 * each);
        }
    }

    #[test]
    fn payload_shifts_load_forward() {
        let m = RobotModel::default();
        let cfg = MpcConfig::default();
        let (x0, xr, st, feet) = standing(&m, 10);
        let weight = Vec3::new(0.0, 0.0, -8.0 * G);
        let fm = vec![weight; 10];
        let grip = x0.pos + Vec3::new(0.6, 0.0, 0.0);
        let req = MpcRequest { x0: &x0, x_ref: &xr, stance: &st, foot_pos: feet, grip_pos: grip, f_m_des: &fm };
        let sol = solve_mpc(&req, &cfg, &m).unwrap();
        // static 2x2 system: F + R = W, 0.24 F - 0.24 R = 0.6 * 78.48
        let total = m.mass * G + 8.0 * G;
        let moment = 0.6 * 8.0 * G;
        let front = (total + moment / 0.24) / 2.0;
        let rear = total - front;
        let u = &sol.inputs[0];
        let got_front = u.foot_force[0].z + u.foot_force[1].z;
        let got_rear = u.foot_force[2].z + u.foot_force[3].z;
        assert!((got_front - front).abs() <= 0.01 * front, "{got_front} vs {front}");
        assert!((got_rear - rear).abs() <= 0.01 * total, "{got_rear} vs {rear}");
        assert_eq!(u.manip_force, weight);
    }

    fn trot_request_parts(n: usize) -> Vec<[bool; 4]> {
        (0..n)
            .map(|k| if (k / 3) % 2 == 0 { [true, false, false, true] } else { [false, true, true, false] })
            .collect()
    }

    #[test]
    fn invariants_hold_under_trot_and_payload() {
        let m = RobotModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in [ControllerKind::Full, ControllerKind::FixedForce, ControllerKind::Baseline] {
            let cfg = MpcConfig { controller_kind: kind, ..MpcConfig::default() };
            let mut mpc = LocoMpc::new(cfg.clone(), m.clone());
            for _ in 0..5 {
                let (mut x0, _, _, feet) = standing(&m, 10);
                x0.vel = random_vec(&mut rng, 0.2);
                x0.euler = random_vec(&mut rng, 0.05);
                let mut target = x0;
                target.pos.z += 0.02;
                target.vel = Vec3::zeros();
                target.euler = Vec3::zeros();
                let xr = vec![target; 11];
                let st = trot_request_parts(10);
                let fm: Vec<Vec3> = (0..10).map(|_| Vec3::new(0.0, 0.0, -rng.gen_range(0.0..50.0))).collect();
                let grip = x0.pos + Vec3::new(0.7, 0.0, 0.0);
                let req = MpcRequest { x0: &x0, x_ref: &xr, stance: &st, foot_pos: feet, grip_pos: grip, f_m_des: &fm };
                let sol = mpc.solve(&req).unwrap();
                let (a, b) = build_state_space(x0.yaw(), &feet, &grip, &x0.pos, &m, &x0.euler).unwrap();
                let (ad, bd) = discretize_fixed(&a, &b, cfg.dt());
                let pyr = friction_pyramid(m.mu, m.fz_bounds);
                for k in 0..10 {
                    let u = &sol.inputs[k];
                    for i in 0..4 {
                        if st[k][i] {
                            assert!(pyr.contains(&u.foot_force[i], 1e-6), "{:?}", pyr.violations(&u.foot_force[i]));
                        } else {
                            assert_eq!(u.foot_force[i], Vec3::zeros());
                        }
                    }
                    match kind {
                        ControllerKind::Baseline => assert_eq!(u.manip_force, Vec3::zeros()),
                        _ => assert_eq!(u.manip_force, fm[k]),
                    }
                    let next = ad * sol.predicted[k].to_vector() + bd * u.to_vector();
                    assert!((next - sol.predicted[k + 1].to_vector()).amax() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn baseline_equals_full_without_manipulation_force() {
        let m = RobotModel::default();
        let (mut x0, _, _, feet) = standing(&m, 10);
        x0.vel.x = 0.1;
        let mut target = x0;
        target.pos.z = 0.37;
        let xr = vec![target; 11];
        let st = vec![[true; 4]; 10];
        let fm = vec![Vec3::zeros(); 10];
        let req = MpcRequest { x0: &x0, x_ref: &xr, stance: &st, foot_pos: feet, grip_pos: x0.pos, f_m_des: &fm };
        let full = solve_mpc(&req, &MpcConfig::default(), &m).unwrap();
        let base_cfg = MpcConfig { controller_kind: ControllerKind::Baseline, ..MpcConfig::default() };
        let base = solve_mpc(&req, &base_cfg, &m).unwrap();
        for (a, b) in full.inputs.iter().zip(&base.inputs) {
            assert!((a.to_vector() - b.to_vector()).amax() <= 1e-6);
        }
    }

    #[test]
    fn malformed_requests_are_rejected() {
        let m = RobotModel::default();
        let (x0, xr, st, feet) = standing(&m, 10);
        let fm = vec![Vec3::zeros(); 9];
        let req = MpcRequest { x0: &x0, x_ref: &xr, stance: &st, foot_pos: feet, grip_pos: x0.pos, f_m_des: &fm };
        assert!(matches!(solve_mpc(&req, &MpcConfig::default(), &m), Err(MpcError::InvalidInput(_))));
        let bad = MpcConfig { horizon_n: 0, ..MpcConfig::default() };
        assert!(bad.validate().is_err());
        assert_eq!("fixedforce".parse::<ControllerKind>().unwrap(), ControllerKind::FixedForce);
        assert!("nope".parse::<ControllerKind>().is_err());
    }

    #[test]
    fn force_cap_holds_under_excess_load() {
        let m = RobotModel::default();
        let (x0, xr, _, feet) = standing(&m, 10);
        // a single stance foot cannot carry more than its force cap
        let st = vec![[true, false, false, false]; 10];
        let fm = vec![Vec3::new(0.0, 0.0, -5000.0); 10];
        let req = MpcRequest { x0: &x0, x_ref: &xr, stance: &st, foot_pos: feet, grip_pos: x0.pos, f_m_des: &fm };
        let sol = solve_mpc(&req, &MpcConfig::default(), &m).unwrap();
        assert!(sol.inputs.iter().all(|u| u.foot_force[0].z <= m.fz_bounds.max + 1e-6));
    }
}
