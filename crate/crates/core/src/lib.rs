//! Constructive solutions of the Fuller differential inclusion.
//!
//! The crate provides an exact switching simulator for the Fuller feedback
//! field, a quasi-Lyapunov certificate built from a family of parabolas, a
//! finite-depth cone partition of the extended state space, and a generic
//! patchy ε-solution engine with a convergence harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod geometry;
pub mod lyapunov;
pub mod partition;
pub mod report;
pub mod solver;
