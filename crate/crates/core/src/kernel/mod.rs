//! Structured internal convex solvers backing the penalty subproblems:
//! a dense QCQP barrier method and a box-chain projected barrier for the
//! per-waveguide placement problem.

pub mod box_chain;
pub mod linalg;
pub mod qcqp;

pub use box_chain::{solve_box_chain, BoxChainProblem, BoxChainSolution, SqrtTerm, Term1D};
pub use qcqp::{solve_qcqp, ArrowPattern, QcqpProblem, QcqpSolution, QuadForm, Tolerance};
