//! Clocked impulse exchange: the RTT sawtooth between two free-running
//! clocks, a tick-level simulator, estimators, a passive and active
//! adversary, and secret-bit accounting.

// `!(x > 0.0)` is used on purpose: NaN must fail these checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod config;
pub mod epoch;
pub mod error;
pub mod estimate;
mod kernel;
pub mod secrecy;
pub mod signal;
pub mod sim;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/adversary.md")]
    mod adversary {}
    #[doc = include_str!("../../../book/src/budget.md")]
    mod budget {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
