//! Exact asymptotic mean-squared error of Q-learning and Double Q-learning
//! with linear function approximation on finite MDPs, together with the
//! environments and Monte-Carlo simulator used to check it.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod amse;
pub mod env;
pub mod error;
pub mod linalg;
pub mod lsa;
pub mod lyapunov;
pub mod mdp;
pub mod oracle;
pub mod pipeline;
pub mod sim;
pub mod solver;
pub mod suites;

pub use amse::{amse_report, solve_covariances, AmseChecks, AmseReport, CovarianceSolution};
pub use error::{ErgodicityFailure, Error, Result};
pub use lsa::LsaModel;
pub use mdp::{BehaviorPolicy, FeatureMap, TabularMdp};
pub use pipeline::{random_model, AnalyzedModel, RandomModelSpec};
