//! Rare-event reliability estimation for real-time controllers.
//!
//! A controller is seen through a [`oracle::ReliabilityOracle`] that says
//! whether it succeeds at a state. [`chain`] draws chains of perturbed states,
//! [`estimator`] estimates the probability that every element of a chain fails
//! by subset simulation, and [`diagnostics`] checks the random-walk levels
//! against honest samples. [`config`] reads the TOML experiment format and
//! [`report`] writes the results.
//!
//! The user guide lives in `book/`; its code blocks run as doctests of this
//! crate.

// Range checks are written `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod config;
pub mod controllers;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod oracle;
pub mod report;
pub mod rng;
pub mod space;
pub mod systems;

pub use error::{Error, Result};

// Pull the guide in so `cargo test --doc` compiles and runs its snippets.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/library.md")]
    mod library {}
    #[doc = include_str!("../../../book/src/oracles.md")]
    mod oracles {}
    #[doc = include_str!("../../../book/src/reports.md")]
    mod reports {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
}
