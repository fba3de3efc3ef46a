//! Dense convex QP solver based on operator splitting (ADMM).
//!
//! Solves
//!
//! ```text
//! minimize    1/2 x' H x + g' x
//! subject to  E x = b
//!             l <= C x <= u
//! ```
//!
//! The equality and inequality rows are stacked into a single two-sided
//! constraint block. Iterates run on a Ruiz-equilibrated copy of the problem
//! with over-relaxation and residual-balanced penalty updates. Whenever the
//! iterates are close, the active set they suggest is polished by solving the
//! reduced KKT system directly; a polished point is accepted only if it is a
//! genuine KKT point (feasible, stationary, sign-consistent multipliers).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("hessian is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),
    #[error("inequality row {0} has lower bound above upper bound")]
    InvertedBounds(usize),
    #[error("non-finite problem data")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_lower: DVector<f64>,
    pub ineq_upper: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem; add rows with [`Self::with_equalities`] and
    /// [`Self::with_inequalities`].
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self {
            hessian,
            linear,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_lower: DVector::zeros(0),
            ineq_upper: DVector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, matrix: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        self.eq_matrix = matrix;
        self.eq_rhs = rhs;
        self
    }

    pub fn with_inequalities(
        mut self,
        matrix: DMatrix<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Self {
        self.ineq_matrix = matrix;
        self.ineq_lower = lower;
        self.ineq_upper = upper;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn num_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_lower.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.num_vars();
        let dim = |what: &str| Err(QpError::Dimension(what.to_string()));
        if self.hessian.shape() != (n, n) {
            return dim("hessian must be n x n");
        }
        if self.eq_matrix.ncols() != n || self.eq_matrix.nrows() != self.eq_rhs.len() {
            return dim("equality block");
        }
        if self.ineq_matrix.ncols() != n
            || self.ineq_matrix.nrows() != self.ineq_lower.len()
            || self.ineq_lower.len() != self.ineq_upper.len()
        {
            return dim("inequality block");
        }
        let finite = self.hessian.iter().all(|v| v.is_finite())
            && self.linear.iter().all(|v| v.is_finite())
            && self.eq_matrix.iter().all(|v| v.is_finite())
            && self.eq_rhs.iter().all(|v| v.is_finite())
            && self.ineq_matrix.iter().all(|v| v.is_finite())
            && self.ineq_lower.iter().all(|v| !v.is_nan())
            && self.ineq_upper.iter().all(|v| !v.is_nan());
        if !finite {
            return Err(QpError::NonFinite);
        }
        let asym = (&self.hessian - self.hessian.transpose()).amax();
        if asym > 1e-10 * self.hessian.amax().max(1.0) {
            return Err(QpError::Asymmetric(asym));
        }
        for i in 0..self.num_ineq() {
            if self.ineq_lower[i] > self.ineq_upper[i] {
                return Err(QpError::InvertedBounds(i));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: DVector<f64>,
    /// Constraint multipliers: equality rows first, then inequality rows.
    /// Positive on active upper bounds, negative on active lower bounds.
    pub multipliers: DVector<f64>,
    pub status: SolveStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub objective: f64,
    pub polished: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation factor in (0, 2).
    pub alpha: f64,
    pub adaptive_rho_interval: usize,
    pub scaling_iters: usize,
    pub polish: bool,
    pub infeasibility_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 4000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho_interval: 25,
            scaling_iters: 10,
            polish: true,
            infeasibility_tol: 1e-7,
        }
    }
}

/// Primal/dual starting point carried across solves.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_SCALE: f64 = 1e3;
const NORM_CLIP: (f64, f64) = (1e-4, 1e4);

/// Reusable solver; holds only settings, so one instance per thread.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    pub settings: QpSettings,
}

/// Solve with default settings at the given tolerance and iteration budget.
pub fn solve_qp(p: &QpProblem, tol: f64, max_iter: usize) -> Result<SolveReport, QpError> {
    let mut solver = QpSolver::new(QpSettings {
        tol,
        max_iter,
        ..QpSettings::default()
    });
    solver.solve(p, None)
}

struct Scaled {
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn clip_norm(v: f64) -> f64 {
    if v < NORM_CLIP.0 {
        1.0
    } else {
        v.min(NORM_CLIP.1)
    }
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self { settings }
    }

    pub fn solve(
        &mut self,
        p: &QpProblem,
        warm: Option<&WarmStart>,
    ) -> Result<SolveReport, QpError> {
        p.validate()?;
        let n = p.num_vars();
        let (a, l, u) = stack_constraints(p);
        let m = a.nrows();
        if m == 0 {
            return Ok(self.solve_unconstrained(p));
        }
        let s = self.scale(&p.hessian, &p.linear, &a, &l, &u);
        let set = &self.settings;

        let is_eq: Vec<bool> = (0..m).map(|i| l[i] == u[i]).collect();
        let is_free: Vec<bool> = (0..m)
            .map(|i| l[i] == f64::NEG_INFINITY && u[i] == f64::INFINITY)
            .collect();
        let mut rho = set.rho;
        let rho_vec = |rho: f64| -> DVector<f64> {
            DVector::from_iterator(
                m,
                (0..m).map(|i| {
                    if is_free[i] {
                        RHO_MIN
                    } else if is_eq[i] {
                        RHO_EQ_SCALE * rho
                    } else {
                        rho
                    }
                }),
            )
        };
        let mut rv = rho_vec(rho);
        let mut chol = factor(&s.p, &s.a, &rv, set.sigma);

        // warm start is given in original units
        let mut x = DVector::zeros(n);
        let mut y = DVector::zeros(m);
        if let Some(w) = warm {
            if w.x.len() == n {
                x = w.x.component_div(&s.d);
            }
            if w.y.len() == m {
                y = w.y.component_div(&s.e) * s.c;
            }
        }
        let mut z = project(&(&s.a * &x), &s.l, &s.u);

        let mut best: Option<SolveReport> = None;
        let mut iterations = 0;
        let mut status = SolveStatus::MaxIter;
        for k in 1..=set.max_iter {
            iterations = k;
            let y_prev = y.clone();
            let rhs = set.sigma * &x - &s.q + s.a.transpose() * (rv.component_mul(&z) - &y);
            let x_tilde = chol.solve(&rhs);
            let z_tilde = &s.a * &x_tilde;
            x = set.alpha * &x_tilde + (1.0 - set.alpha) * &x;
            let z_relaxed = set.alpha * &z_tilde + (1.0 - set.alpha) * &z;
            let z_next = project(&(&z_relaxed + y.component_div(&rv)), &s.l, &s.u);
            y += rv.component_mul(&(&z_relaxed - &z_next));
            z = z_next;

            let check = k % 5 == 0 || k == set.max_iter;
            if !check {
                continue;
            }
            let res = residuals(&s, &x, &y, &z);
            if res.primal <= res.eps_primal(set.tol) && res.dual <= res.eps_dual(set.tol) {
                status = SolveStatus::Optimal;
                break;
            }
            if self.certifies_infeasible(&s, &l, &u, &(&y - &y_prev)) {
                status = SolveStatus::Infeasible;
                break;
            }
            if k % set.adaptive_rho_interval == 0 {
                if set.polish && res.primal < 1e-2 * res.eps_scale_primal().max(1.0) {
                    if let Some(rep) = self.polish(p, &a, &l, &u, &s, &y, &z, k) {
                        best = Some(rep);
                        break;
                    }
                }
                let ratio = (res.primal / res.eps_scale_primal().max(1e-12))
                    / (res.dual / res.eps_scale_dual().max(1e-12)).max(1e-30);
                let new_rho = (rho * ratio.sqrt()).clamp(RHO_MIN, RHO_MAX);
                if new_rho > 5.0 * rho || new_rho < 0.2 * rho {
                    rho = new_rho;
                    rv = rho_vec(rho);
                    chol = factor(&s.p, &s.a, &rv, set.sigma);
                }
            }
        }
        if let Some(rep) = best {
            return Ok(rep);
        }
        if status != SolveStatus::Infeasible && set.polish {
            if let Some(rep) = self.polish(p, &a, &l, &u, &s, &y, &z, iterations) {
                return Ok(rep);
            }
        }
        let x_out = x.component_mul(&s.d);
        let y_out = y.component_mul(&s.e) / s.c;
        let res = residuals(&s, &x, &y, &z);
        Ok(SolveReport {
            objective: p.objective(&x_out),
            solution: x_out,
            multipliers: y_out,
            status,
            primal_residual: res.primal,
            dual_residual: res.dual,
            iterations,
            polished: false,
        })
    }

    fn solve_unconstrained(&self, p: &QpProblem) -> SolveReport {
        let n = p.num_vars();
        let rhs = -&p.linear;
        let x = match p.hessian.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => {
                let reg = &p.hessian + DMatrix::identity(n, n) * self.settings.sigma;
                reg.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(n))
            }
        };
        let dual = inf_norm(&(&p.hessian * &x + &p.linear));
        let scale = inf_norm(&(&p.hessian * &x)).max(inf_norm(&p.linear));
        let status = if dual <= self.settings.tol * (1.0 + scale) {
            SolveStatus::Optimal
        } else {
            SolveStatus::MaxIter
        };
        SolveReport {
            objective: p.objective(&x),
            solution: x,
            multipliers: DVector::zeros(0),
            status,
            primal_residual: 0.0,
            dual_residual: dual,
            iterations: 1,
            polished: false,
        }
    }

    /// Ruiz equilibration of the KKT matrix plus a cost scaling.
    fn scale(
        &self,
        p: &DMatrix<f64>,
        q: &DVector<f64>,
        a: &DMatrix<f64>,
        l: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Scaled {
        let n = p.nrows();
        let m = a.nrows();
        let mut ps = p.clone();
        let mut qs = q.clone();
        let mut as_ = a.clone();
        let mut d = DVector::from_element(n, 1.0);
        let mut e = DVector::from_element(m, 1.0);
        let mut c = 1.0;
        for _ in 0..self.settings.scaling_iters {
            let dt = DVector::from_iterator(
                n,
                (0..n).map(|j| {
                    let col = ps.column(j).amax().max(as_.column(j).amax());
                    1.0 / clip_norm(col).sqrt()
                }),
            );
            let et = DVector::from_iterator(
                m,
                (0..m).map(|i| 1.0 / clip_norm(as_.row(i).amax()).sqrt()),
            );
            for j in 0..n {
                for i in 0..n {
                    ps[(i, j)] *= dt[i] * dt[j];
                }
                for i in 0..m {
                    as_[(i, j)] *= et[i] * dt[j];
                }
            }
            qs.component_mul_assign(&dt);
            d.component_mul_assign(&dt);
            e.component_mul_assign(&et);

            let mean_col = (0..n).map(|j| ps.column(j).amax()).sum::<f64>() / n as f64;
            let gamma = 1.0 / clip_norm(mean_col.max(inf_norm(&qs)));
            ps *= gamma;
            qs *= gamma;
            c *= gamma;
        }
        Scaled {
            p: ps,
            q: qs,
            a: as_,
            l: l.component_mul(&e),
            u: u.component_mul(&e),
            d,
            e,
            c,
        }
    }

    fn certifies_infeasible(
        &self,
        s: &Scaled,
        l: &DVector<f64>,
        u: &DVector<f64>,
        dy_scaled: &DVector<f64>,
    ) -> bool {
        let dy = dy_scaled.component_mul(&s.e);
        let norm = inf_norm(&dy);
        if norm < 1e-14 {
            return false;
        }
        let eps = self.settings.infeasibility_tol * norm;
        let at_dy = (s.a.transpose() * dy_scaled).component_div(&s.d);
        if inf_norm(&at_dy) > eps {
            return false;
        }
        let mut support = 0.0;
        for i in 0..dy.len() {
            if dy[i] > 0.0 {
                if u[i] == f64::INFINITY {
                    return false;
                }
                support += u[i] * dy[i];
            } else if dy[i] < 0.0 {
                if l[i] == f64::NEG_INFINITY {
                    return false;
                }
                support += l[i] * dy[i];
            }
        }
        support < -eps
    }

    /// Solve the equality-constrained QP on the active set suggested by the
    /// iterates. Returns a report only for a verified KKT point.
    #[allow(clippy::too_many_arguments)]
    fn polish(
        &self,
        p: &QpProblem,
        a: &DMatrix<f64>,
        l: &DVector<f64>,
        u: &DVector<f64>,
        s: &Scaled,
        ys: &DVector<f64>,
        zs: &DVector<f64>,
        iterations: usize,
    ) -> Option<SolveReport> {
        let n = p.num_vars();
        let m = a.nrows();
        let y = ys.component_mul(&s.e) / s.c;
        let z = zs.component_div(&s.e);
        // +1 upper active, -1 lower active, 2 equality
        let mut active: Vec<(usize, i8)> = Vec::new();
        for i in 0..m {
            if l[i] == u[i] {
                active.push((i, 2));
            } else if z[i] - l[i] < -y[i] {
                active.push((i, -1));
            } else if u[i] - z[i] < y[i] {
                active.push((i, 1));
            }
        }
        let na = active.len();
        let delta = 1e-10;
        let dim = n + na;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.hessian);
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, n).copy_from(&(-&p.linear));
        for (r, &(i, side)) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = a[(i, j)];
                kkt[(j, n + r)] = a[(i, j)];
            }
            rhs[n + r] = if side < 0 { l[i] } else { u[i] };
        }
        let mut reg = kkt.clone();
        for i in 0..n {
            reg[(i, i)] += delta;
        }
        for i in n..dim {
            reg[(i, i)] -= delta;
        }
        let lu = reg.lu();
        let mut sol = lu.solve(&rhs)?;
        for _ in 0..5 {
            let r = &rhs - &kkt * &sol;
            if inf_norm(&r) < 1e-14 {
                break;
            }
            sol += lu.solve(&r)?;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let x = sol.rows(0, n).into_owned();
        let mut yp = DVector::zeros(m);
        for (r, &(i, _)) in active.iter().enumerate() {
            yp[i] = sol[n + r];
        }
        let ax = a * &x;
        let zp = project(&ax, l, u);
        let primal = inf_norm(&(&ax - &zp));
        let px = &p.hessian * &x;
        let aty = a.transpose() * &yp;
        let dual = inf_norm(&(&px + &p.linear + &aty));
        let tol = self.settings.tol;
        let eps_primal = tol + tol * inf_norm(&ax).max(inf_norm(&zp));
        let eps_dual = tol + tol * inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&p.linear));
        let sign_tol = eps_dual;
        let signs_ok = active.iter().all(|&(i, side)| match side {
            1 => yp[i] >= -sign_tol,
            -1 => yp[i] <= sign_tol,
            _ => true,
        });
        if primal <= eps_primal && dual <= eps_dual && signs_ok {
            Some(SolveReport {
                objective: p.objective(&x),
                solution: x,
                multipliers: yp,
                status: SolveStatus::Optimal,
                primal_residual: primal,
                dual_residual: dual,
                iterations,
                polished: true,
            })
        } else {
            None
        }
    }
}

fn stack_constraints(p: &QpProblem) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let n = p.num_vars();
    let me = p.num_eq();
    let mi = p.num_ineq();
    let mut a = DMatrix::zeros(me + mi, n);
    a.rows_mut(0, me).copy_from(&p.eq_matrix);
    a.rows_mut(me, mi).copy_from(&p.ineq_matrix);
    let mut l = DVector::zeros(me + mi);
    let mut u = DVector::zeros(me + mi);
    l.rows_mut(0, me).copy_from(&p.eq_rhs);
    u.rows_mut(0, me).copy_from(&p.eq_rhs);
    l.rows_mut(me, mi).copy_from(&p.ineq_lower);
    u.rows_mut(me, mi).copy_from(&p.ineq_upper);
    (a, l, u)
}

fn project(v: &DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(v.len(), (0..v.len()).map(|i| v[i].clamp(l[i], u[i])))
}

/// Cholesky factor of `P + sigma I + A' diag(rho) A`.
fn factor(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    rho: &DVector<f64>,
    sigma: f64,
) -> nalgebra::linalg::Cholesky<f64, nalgebra::Dyn> {
    let n = p.nrows();
    let mut scaled_a = a.clone();
    for (i, mut row) in scaled_a.row_iter_mut().enumerate() {
        row *= rho[i];
    }
    let mut k = p + a.transpose() * scaled_a;
    for i in 0..n {
        k[(i, i)] += sigma;
    }
    // symmetrize against round-off before factoring
    let k = (&k + k.transpose()) * 0.5;
    k.cholesky().expect("P + sigma I + A' R A is positive definite")
}

struct Residuals {
    primal: f64,
    dual: f64,
    ax: f64,
    z: f64,
    px: f64,
    aty: f64,
    q: f64,
}

impl Residuals {
    fn eps_scale_primal(&self) -> f64 {
        self.ax.max(self.z)
    }

    fn eps_scale_dual(&self) -> f64 {
        self.px.max(self.aty).max(self.q)
    }

    fn eps_primal(&self, tol: f64) -> f64 {
        tol + tol * self.eps_scale_primal()
    }

    fn eps_dual(&self, tol: f64) -> f64 {
        tol + tol * self.eps_scale_dual()
    }
}

/// Residuals in original (unscaled) units.
fn residuals(s: &Scaled, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>) -> Residuals {
    let ax = &s.a * x;
    let px = &s.p * x;
    let aty = s.a.transpose() * y;
    let unscale_row = |v: &DVector<f64>| v.component_div(&s.e);
    let unscale_col = |v: &DVector<f64>| v.component_div(&s.d) / s.c;
    Residuals {
        primal: inf_norm(&unscale_row(&(&ax - z))),
        dual: inf_norm(&unscale_col(&(&px + &s.q + &aty))),
        ax: inf_norm(&unscale_row(&ax)),
        z: inf_norm(&unscale_row(z)),
        px: inf_norm(&unscale_col(&px)),
        aty: inf_norm(&unscale_col(&aty)),
        q: inf_norm(&unscale_col(&s.q)),
    }
}
