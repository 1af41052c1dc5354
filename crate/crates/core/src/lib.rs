//! Reliance-aware autonomous decision aid.
//!
//! The crate models a human operator choosing between two gambles with an
//! aid that suggests an option each trial. The operator's reliance on the aid
//! follows decision-field-theory dynamics driven by the aid's capability and
//! by whether the suggestion agrees with the operator's own pick. The aid
//! keeps its own copy of those dynamics (the indicator model), refits it with
//! approximate Bayesian computation, and uses it to decide between suggesting
//! the optimal option and suggesting what it predicts the operator will pick.
//!
//! Module map:
//!
//! - [`game`]: gambles, games, outcome sampling, context vectors, trial CSV.
//! - [`reliance`]: preference/belief dynamics, threshold rule, priors,
//!   synthetic initial-selection policy.
//! - [`capability`]: exact capability of the better option and its oracle.
//! - [`predictor`]: next-selection predictors and the external bridge.
//! - [`indicator`]: indicator model and ABC rejection sampling.
//! - [`ada`]: the interaction loop, Monte Carlo populations, comparisons.
//! - [`session`] / [`service`]: live human sessions over HTTP.
//! - [`cli`]: the `reliance-aid` command line.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ada;
pub mod capability;
pub mod cli;
pub mod config;
pub mod game;
pub mod indicator;
pub mod predictor;
pub mod reliance;
pub mod rng;
pub mod service;
pub mod session;

mod choice;

pub use choice::{Agreement, Choice};
