//! Inversion of discrete-choice demand systems.
//!
//! Given observed inside-good shares `σ*`, find mean utilities `x` with
//! `σ(x) = σ*`. Because consumer surplus `U` is convex with gradient `σ`,
//! the solution minimizes `U(x) − x'σ*`, and any trust-region method for
//! smooth convex problems applies even where the share Jacobian is singular.
//!
//! The crate ships two demand models ([`logit::LogitMarket`] and
//! [`purechar::PureCharMarket`]), three inversion algorithms in [`solvers`],
//! and a replication harness in [`harness`].

// `!(a > b)` is written on purpose throughout so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod envelope;
pub mod error;
pub mod harness;
pub mod io;
pub mod logit;
pub mod model;
pub mod normal;
pub mod par;
pub mod purechar;
pub mod rng;
pub mod solvers;

pub use error::{Error, Result};
pub use io::AnyModel;

pub use logit::{make_logit_instance, LogitMarket};
pub use model::{
    convex_objective, finite_difference_gradient, DemandModel, MeanUtility, ModelEvaluation, Objective, ShareVector,
};
pub use purechar::{make_purechar_instance, PureCharMarket};
pub use solvers::{invert, InversionResult, Method, SolverConfig};
