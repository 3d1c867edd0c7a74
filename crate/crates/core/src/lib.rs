//! Robust and adaptive fluence optimization on a one-dimensional phantom.
//!
//! The crate covers the geometry and dose model ([`phantom`]), geometric
//! error scenarios and estimators ([`uncertainty`]), quadratic dose
//! objectives and quality criteria ([`objective`]), nominal and CVaR robust
//! optimization ([`solver`]), the three replanning strategies
//! ([`strategies`]) and a population treatment simulator ([`simulator`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod objective;
pub mod phantom;
pub mod simulator;
pub mod solver;
pub mod strategies;
pub mod uncertainty;

pub use error::{Error, Result};
