//! Self-contained optimization back ends: a dense ADMM QP solver and an SQP
//! layer built on top of it.

pub mod nlp;
pub mod qp;

pub use nlp::{fd_gradient, fd_jacobian, solve_nlp, FnNlp, NlpError, NlpOptions, NlpProblem, SqpSolver};
pub use qp::{solve_qp, QpError, QpProblem, QpSettings, QpSolver, SolveReport, SolveStatus, WarmStart};
