//! Small dense SQP for smooth nonlinear programs.
//!
//! Each iteration solves a QP model with a damped-BFGS Hessian of the
//! Lagrangian, then backtracks on an l1 merit function. Full steps rejected by
//! the merit test get one second-order correction on the equality rows.
//! Derivatives default to central finite differences.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::qp::{QpError, QpProblem, QpSettings, QpSolver, SolveReport, SolveStatus, WarmStart};

#[derive(Debug, Error, PartialEq)]
pub enum NlpError {
    #[error("initial point has {got} entries, problem has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite value while evaluating the problem at the initial point")]
    NonFinite,
    #[error("qp subproblem rejected: {0}")]
    Qp(#[from] QpError),
}

/// A nonlinear program
///
/// ```text
/// minimize f(x)  s.t.  c(x) = 0,  lower <= h(x) <= upper,  lb <= x <= ub
/// ```
pub trait NlpProblem {
    fn dim(&self) -> usize;
    fn cost(&self, x: &DVector<f64>) -> f64;

    /// Analytic cost gradient, if available.
    fn cost_gradient(&self, _x: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }

    fn num_eq(&self) -> usize {
        0
    }

    fn eq_constraints(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }

    fn num_ineq(&self) -> usize {
        0
    }

    fn ineq_constraints(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }

    fn ineq_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        (DVector::zeros(0), DVector::zeros(0))
    }

    fn var_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.dim();
        (
            DVector::from_element(n, f64::NEG_INFINITY),
            DVector::from_element(n, f64::INFINITY),
        )
    }
}

type ScalarFn<'a> = Box<dyn Fn(&DVector<f64>) -> f64 + 'a>;
type VectorFn<'a> = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + 'a>;

/// Closure-backed [`NlpProblem`].
pub struct FnNlp<'a> {
    n: usize,
    cost: ScalarFn<'a>,
    eq: Option<(usize, VectorFn<'a>)>,
    ineq: Option<(VectorFn<'a>, DVector<f64>, DVector<f64>)>,
    bounds: (DVector<f64>, DVector<f64>),
}

impl<'a> FnNlp<'a> {
    pub fn new(n: usize, cost: impl Fn(&DVector<f64>) -> f64 + 'a) -> Self {
        Self {
            n,
            cost: Box::new(cost),
            eq: None,
            ineq: None,
            bounds: (
                DVector::from_element(n, f64::NEG_INFINITY),
                DVector::from_element(n, f64::INFINITY),
            ),
        }
    }

    pub fn equalities(mut self, m: usize, c: impl Fn(&DVector<f64>) -> DVector<f64> + 'a) -> Self {
        self.eq = Some((m, Box::new(c)));
        self
    }

    pub fn inequalities(
        mut self,
        h: impl Fn(&DVector<f64>) -> DVector<f64> + 'a,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Self {
        self.ineq = Some((Box::new(h), lower, upper));
        self
    }

    pub fn bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.bounds = (lower, upper);
        self
    }
}

impl NlpProblem for FnNlp<'_> {
    fn dim(&self) -> usize {
        self.n
    }

    fn cost(&self, x: &DVector<f64>) -> f64 {
        (self.cost)(x)
    }

    fn num_eq(&self) -> usize {
        self.eq.as_ref().map_or(0, |(m, _)| *m)
    }

    fn eq_constraints(&self, x: &DVector<f64>) -> DVector<f64> {
        self.eq.as_ref().map_or_else(|| DVector::zeros(0), |(_, c)| c(x))
    }

    fn num_ineq(&self) -> usize {
        self.ineq.as_ref().map_or(0, |(_, l, _)| l.len())
    }

    fn ineq_constraints(&self, x: &DVector<f64>) -> DVector<f64> {
        self.ineq.as_ref().map_or_else(|| DVector::zeros(0), |(h, _, _)| h(x))
    }

    fn ineq_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        self.ineq.as_ref().map_or_else(
            || (DVector::zeros(0), DVector::zeros(0)),
            |(_, l, u)| (l.clone(), u.clone()),
        )
    }

    fn var_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        self.bounds.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpOptions {
    /// Stationarity tolerance (scaled by `1 + |grad f|`).
    pub tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
    /// Relative finite-difference step: `h_i = fd_step * max(1, |x_i|)`.
    pub fd_step: f64,
    pub qp: QpSettings,
}

impl Default for NlpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            feas_tol: 1e-6,
            max_iter: 100,
            fd_step: 1e-6,
            qp: QpSettings {
                tol: 1e-9,
                ..QpSettings::default()
            },
        }
    }
}

/// Central-difference gradient with step `h_i = step * max(1, |x_i|)`.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, step: f64) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let h = step * x[i].abs().max(1.0);
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central-difference Jacobian of a vector function with `m` outputs.
pub fn fd_jacobian(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
    m: usize,
    step: f64,
) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(m, x.len());
    if m == 0 {
        return jac;
    }
    let mut xp = x.clone();
    for i in 0..x.len() {
        let h = step * x[i].abs().max(1.0);
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        jac.set_column(i, &((fp - fm) / (2.0 * h)));
    }
    jac
}

struct Linearization {
    f: f64,
    grad: DVector<f64>,
    c: DVector<f64>,
    jc: DMatrix<f64>,
    h: DVector<f64>,
    jh: DMatrix<f64>,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// l1 and l-infinity constraint violation.
fn violation(
    c: &DVector<f64>,
    h: &DVector<f64>,
    hl: &DVector<f64>,
    hu: &DVector<f64>,
) -> (f64, f64) {
    let mut l1 = 0.0;
    let mut linf = 0.0f64;
    for v in c.iter() {
        l1 += v.abs();
        linf = linf.max(v.abs());
    }
    for i in 0..h.len() {
        let v = (hl[i] - h[i]).max(h[i] - hu[i]).max(0.0);
        l1 += v;
        linf = linf.max(v);
    }
    (l1, linf)
}

/// SQP driver. Keeps its QP solver and the last Hessian approximation so
/// consecutive warm-started solves reuse curvature information.
#[derive(Debug, Clone, Default)]
pub struct SqpSolver {
    pub options: NlpOptions,
    hessian: Option<DMatrix<f64>>,
}

/// Solve with a fresh solver.
pub fn solve_nlp(
    problem: &dyn NlpProblem,
    x0: &DVector<f64>,
    opts: &NlpOptions,
) -> Result<SolveReport, NlpError> {
    SqpSolver::new(opts.clone()).solve(problem, x0)
}

impl SqpSolver {
    pub fn new(options: NlpOptions) -> Self {
        Self {
            options,
            hessian: None,
        }
    }

    /// Drop any remembered curvature.
    pub fn reset(&mut self) {
        self.hessian = None;
    }

    fn linearize(&self, p: &dyn NlpProblem, x: &DVector<f64>) -> Linearization {
        let step = self.options.fd_step;
        let grad = p
            .cost_gradient(x)
            .unwrap_or_else(|| fd_gradient(|v| p.cost(v), x, step));
        Linearization {
            f: p.cost(x),
            grad,
            c: p.eq_constraints(x),
            jc: fd_jacobian(|v| p.eq_constraints(v), x, p.num_eq(), step),
            h: p.ineq_constraints(x),
            jh: fd_jacobian(|v| p.ineq_constraints(v), x, p.num_ineq(), step),
        }
    }

    pub fn solve(
        &mut self,
        p: &dyn NlpProblem,
        x0: &DVector<f64>,
    ) -> Result<SolveReport, NlpError> {
        let n = p.dim();
        if x0.len() != n {
            return Err(NlpError::Dimension {
                expected: n,
                got: x0.len(),
            });
        }
        let opts = self.options.clone();
        let (lb, ub) = p.var_bounds();
        let (hl, hu) = p.ineq_bounds();
        let me = p.num_eq();
        let mi = p.num_ineq();
        let boxed: Vec<usize> = (0..n)
            .filter(|&i| lb[i].is_finite() || ub[i].is_finite())
            .collect();

        let mut x = DVector::from_iterator(n, (0..n).map(|i| x0[i].clamp(lb[i], ub[i])));
        let mut lin = self.linearize(p, &x);
        if !lin.f.is_finite() || lin.grad.iter().any(|v| !v.is_finite()) {
            return Err(NlpError::NonFinite);
        }
        let mut b = match &self.hessian {
            Some(h) if h.nrows() == n => h.clone(),
            _ => DMatrix::identity(n, n),
        };
        let mut penalty = 1.0;
        let mut qp = QpSolver::new(opts.qp.clone());
        let mut warm: Option<WarmStart> = None;
        let mut lambda = DVector::zeros(me + mi + boxed.len());
        let mut status = SolveStatus::MaxIter;
        let mut stationarity = f64::INFINITY;
        let mut iterations = 0;
        let mut stalled = 0;

        for k in 0..opts.max_iter {
            iterations = k + 1;
            let (_, viol_inf) = violation(&lin.c, &lin.h, &hl, &hu);

            // QP model in the step d
            let mut ineq = DMatrix::zeros(mi + boxed.len(), n);
            ineq.rows_mut(0, mi).copy_from(&lin.jh);
            let mut lo = DVector::zeros(mi + boxed.len());
            let mut hi = DVector::zeros(mi + boxed.len());
            for i in 0..mi {
                lo[i] = hl[i] - lin.h[i];
                hi[i] = hu[i] - lin.h[i];
            }
            for (r, &j) in boxed.iter().enumerate() {
                ineq[(mi + r, j)] = 1.0;
                lo[mi + r] = lb[j] - x[j];
                hi[mi + r] = ub[j] - x[j];
            }
            let model = QpProblem::new(b.clone(), lin.grad.clone())
                .with_equalities(lin.jc.clone(), -&lin.c)
                .with_inequalities(ineq, lo, hi);
            let mut rep = qp.solve(&model, warm.as_ref())?;
            if rep.status == SolveStatus::Infeasible {
                rep = self.elastic_step(&model, &mut qp)?;
                let d = &rep.solution;
                let predicted = violation(&(&lin.c + &lin.jc * d), &(&lin.h + &lin.jh * d), &hl, &hu).1;
                if rep.status == SolveStatus::Infeasible || predicted >= viol_inf * (1.0 - 1e-6) {
                    status = SolveStatus::Infeasible;
                    break;
                }
            }
            let d = rep.solution.clone();
            lambda = rep.multipliers.clone();
            warm = Some(WarmStart {
                x: d.clone(),
                y: rep.multipliers.clone(),
            });

            let grad_lag = self.lagrangian_gradient(&lin, &lambda, &boxed, me, mi);
            stationarity = inf_norm(&grad_lag);
            let stat_scale = 1.0 + inf_norm(&lin.grad);
            let small_step = inf_norm(&d) <= 1e-10 * (1.0 + inf_norm(&x));
            if viol_inf <= opts.feas_tol && (stationarity <= opts.tol * stat_scale || small_step) {
                status = SolveStatus::Optimal;
                break;
            }

            let lam_max = inf_norm(&lambda);
            if penalty < 1.1 * lam_max {
                penalty = 1.5 * lam_max + 1e-3;
            }
            let merit = |f: f64, c: &DVector<f64>, h: &DVector<f64>, nu: f64| {
                f + nu * violation(c, h, &hl, &hu).0
            };
            let (viol1, _) = violation(&lin.c, &lin.h, &hl, &hu);
            let mut slope = lin.grad.dot(&d) - penalty * viol1;
            if slope > 0.0 {
                // not a descent direction for the current penalty
                penalty = (lin.grad.dot(&d) / viol1.max(1e-12)) * 2.0 + penalty;
                slope = lin.grad.dot(&d) - penalty * viol1;
            }
            let phi0 = merit(lin.f, &lin.c, &lin.h, penalty);

            let mut alpha = 1.0;
            let mut accepted: Option<DVector<f64>> = None;
            for trial in 0..40 {
                let xt = &x + alpha * &d;
                let ft = p.cost(&xt);
                let ct = p.eq_constraints(&xt);
                let ht = p.ineq_constraints(&xt);
                let phi = merit(ft, &ct, &ht, penalty);
                if phi.is_finite() && phi <= phi0 + 1e-4 * alpha * slope.min(0.0) {
                    accepted = Some(xt);
                    break;
                }
                if trial == 0 && me > 0 {
                    if let Some(xs) = self.second_order_correction(&lin, &xt, &ct, &lb, &ub) {
                        let fs = p.cost(&xs);
                        let phis = merit(fs, &p.eq_constraints(&xs), &p.ineq_constraints(&xs), penalty);
                        if phis.is_finite() && phis <= phi0 + 1e-4 * slope.min(0.0) {
                            accepted = Some(xs);
                            break;
                        }
                    }
                }
                alpha *= 0.5;
            }
            let x_new = match accepted {
                Some(v) => {
                    stalled = 0;
                    v
                }
                None => {
                    stalled += 1;
                    if stalled > 2 {
                        break;
                    }
                    b = DMatrix::identity(n, n);
                    continue;
                }
            };

            let lin_new = self.linearize(p, &x_new);
            let s = &x_new - &x;
            let y = self.lagrangian_gradient(&lin_new, &lambda, &boxed, me, mi)
                - self.lagrangian_gradient(&lin, &lambda, &boxed, me, mi);
            damped_bfgs_update(&mut b, &s, &y);
            x = x_new;
            lin = lin_new;
        }

        self.hessian = Some(b);
        let (_, viol_inf) = violation(&lin.c, &lin.h, &hl, &hu);
        if status == SolveStatus::Optimal && viol_inf > opts.feas_tol {
            status = SolveStatus::MaxIter;
        }
        Ok(SolveReport {
            objective: lin.f,
            solution: x,
            multipliers: lambda,
            status,
            primal_residual: viol_inf,
            dual_residual: stationarity,
            iterations,
            polished: false,
        })
    }

    fn lagrangian_gradient(
        &self,
        lin: &Linearization,
        lambda: &DVector<f64>,
        boxed: &[usize],
        me: usize,
        mi: usize,
    ) -> DVector<f64> {
        let mut g = lin.grad.clone();
        if me > 0 {
            g += lin.jc.transpose() * lambda.rows(0, me);
        }
        if mi > 0 {
            g += lin.jh.transpose() * lambda.rows(me, mi);
        }
        for (r, &j) in boxed.iter().enumerate() {
            g[j] += lambda[me + mi + r];
        }
        g
    }

    /// Relaxed QP with quadratically penalized slacks on every general
    /// constraint row; used when the linearization is inconsistent.
    fn elastic_step(&self, model: &QpProblem, qp: &mut QpSolver) -> Result<SolveReport, QpError> {
        let n = model.num_vars();
        let me = model.num_eq();
        let mi = model.num_ineq();
        // slacks only on the linearized nonlinear rows; box rows stay hard
        let ns = me + mi;
        let weight = 1e6 * (1.0 + inf_norm(&model.linear));
        let mut h = DMatrix::zeros(n + ns, n + ns);
        h.view_mut((0, 0), (n, n)).copy_from(&model.hessian);
        for i in n..n + ns {
            h[(i, i)] = weight;
        }
        let mut g = DVector::zeros(n + ns);
        g.rows_mut(0, n).copy_from(&model.linear);
        let mut e = DMatrix::zeros(me, n + ns);
        e.view_mut((0, 0), (me, n)).copy_from(&model.eq_matrix);
        for i in 0..me {
            e[(i, n + i)] = -1.0;
        }
        let mut c = DMatrix::zeros(mi, n + ns);
        c.view_mut((0, 0), (mi, n)).copy_from(&model.ineq_matrix);
        for i in 0..mi {
            let is_box = model.ineq_matrix.row(i).iter().filter(|v| **v != 0.0).count() == 1
                && model.ineq_matrix.row(i).iter().any(|v| *v == 1.0);
            if !is_box {
                c[(i, n + me + i)] = -1.0;
            }
        }
        let relaxed = QpProblem::new(h, g)
            .with_equalities(e, model.eq_rhs.clone())
            .with_inequalities(c, model.ineq_lower.clone(), model.ineq_upper.clone());
        let rep = qp.solve(&relaxed, None)?;
        let mut multipliers = DVector::zeros(me + mi);
        multipliers.copy_from(&rep.multipliers);
        Ok(SolveReport {
            solution: rep.solution.rows(0, n).into_owned(),
            multipliers,
            ..rep
        })
    }

    /// Minimum-norm correction pulling the equality rows back onto the
    /// constraint manifold after a trial step.
    fn second_order_correction(
        &self,
        lin: &Linearization,
        xt: &DVector<f64>,
        ct: &DVector<f64>,
        lb: &DVector<f64>,
        ub: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        let jjt = &lin.jc * lin.jc.transpose();
        let w = jjt.lu().solve(ct)?;
        let corr = -(lin.jc.transpose() * w);
        let xs = xt + corr;
        let n = xs.len();
        Some(DVector::from_iterator(n, (0..n).map(|i| xs[i].clamp(lb[i], ub[i]))))
    }
}

/// Powell-damped BFGS update; keeps `b` positive definite.
fn damped_bfgs_update(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let ss = s.dot(s);
    if ss < 1e-30 {
        return;
    }
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if sbs <= 1e-30 {
        return;
    }
    let sy = s.dot(y);
    let r = if sy >= 0.2 * sbs {
        y.clone()
    } else {
        let theta = 0.8 * sbs / (sbs - sy);
        theta * y + (1.0 - theta) * &bs
    };
    let sr = s.dot(&r);
    if sr <= 1e-30 {
        return;
    }
    *b += &r * r.transpose() / sr - &bs * bs.transpose() / sbs;
    let sym = (&*b + b.transpose()) * 0.5;
    *b = sym;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn equality_pins_solution() {
        let p = FnNlp::new(1, |x| (x[0] - 3.0).powi(2)).equalities(1, |x| dv(&[x[0] - 1.0]));
        let r = solve_nlp(&p, &dv(&[0.0]), &NlpOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert_relative_eq!(r.solution[0], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &DVector<f64>| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let p = FnNlp::new(2, f);
        let opts = NlpOptions {
            tol: 1e-10,
            max_iter: 500,
            ..Default::default()
        };
        let r = solve_nlp(&p, &dv(&[-1.2, 1.0]), &opts).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.solution[0] - 1.0).abs() < 1e-4, "{}", r.solution);
        assert!((r.solution[1] - 1.0).abs() < 1e-4, "{}", r.solution);
        // verify stationarity with an analytic gradient
        let (a, b) = (r.solution[0], r.solution[1]);
        let grad = dv(&[-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]);
        assert!(grad.norm() < 1e-4);
    }

    #[test]
    fn symmetric_active_inequality() {
        let p = FnNlp::new(2, |x| x[0] * x[0] + x[1] * x[1]).inequalities(
            |x| dv(&[x[0] + x[1]]),
            dv(&[1.0]),
            dv(&[f64::INFINITY]),
        );
        let r = solve_nlp(&p, &dv(&[2.0, -1.0]), &NlpOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert_relative_eq!(r.solution, dv(&[0.5, 0.5]), epsilon = 1e-6);
    }

    #[test]
    fn nonlinear_equality_on_circle() {
        // min x + y on the unit circle -> (-1/sqrt2, -1/sqrt2)
        let p = FnNlp::new(2, |x| x[0] + x[1])
            .equalities(1, |x| dv(&[x[0] * x[0] + x[1] * x[1] - 1.0]));
        let r = solve_nlp(&p, &dv(&[1.0, 0.2]), &NlpOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        let s = -std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(r.solution, dv(&[s, s]), epsilon = 1e-5);
    }

    #[test]
    fn box_bounds_respected() {
        let p = FnNlp::new(2, |x| (x[0] - 2.0).powi(2) + (x[1] + 3.0).powi(2))
            .bounds(dv(&[-1.0, -1.0]), dv(&[1.0, 1.0]));
        let r = solve_nlp(&p, &dv(&[0.0, 0.0]), &NlpOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert_relative_eq!(r.solution, dv(&[1.0, -1.0]), epsilon = 1e-7);
    }

    #[test]
    fn inconsistent_constraints_are_infeasible() {
        let p = FnNlp::new(1, |x| x[0] * x[0])
            .equalities(1, |x| dv(&[x[0] * x[0] + 1.0]));
        let r = solve_nlp(&p, &dv(&[0.5]), &NlpOptions::default()).unwrap();
        assert_ne!(r.status, SolveStatus::Optimal);
    }

    #[test]
    fn inconsistent_linear_rows_are_infeasible() {
        let p = FnNlp::new(1, |x| x[0] * x[0]).inequalities(
            |x| dv(&[x[0], x[0]]),
            dv(&[1.0, f64::NEG_INFINITY]),
            dv(&[f64::INFINITY, -1.0]),
        );
        let r = solve_nlp(&p, &dv(&[0.0]), &NlpOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn rejects_wrong_start_dimension() {
        let p = FnNlp::new(2, |x| x.norm_squared());
        assert_eq!(
            solve_nlp(&p, &dv(&[0.0]), &NlpOptions::default()),
            Err(NlpError::Dimension { expected: 2, got: 1 })
        );
    }

    #[test]
    fn fd_gradient_of_quadratic() {
        let g = fd_gradient(|x| 3.0 * x[0] * x[0] + x[0] * x[1], &dv(&[1.0, 2.0]), 1e-6);
        assert_relative_eq!(g, dv(&[8.0, 1.0]), epsilon = 1e-7);
    }
}
