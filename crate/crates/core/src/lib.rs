//! Predictor feedback for nonlinear systems with an uncertain input delay,
//! the backstepping transformation of the delayed input, and residual-based
//! verification of the transformed closed-loop system.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backstepping;
pub mod cli;
pub mod config;
pub mod error;
pub mod history;
pub mod kernels;
pub mod plant;
pub mod predictor;
pub mod profile;
pub mod report;
pub mod residual;
pub mod sim;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/transport.md")]
    mod transport {}
    #[doc = include_str!("../../../book/src/predictor.md")]
    mod predictor {}
    #[doc = include_str!("../../../book/src/backstepping.md")]
    mod backstepping {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
