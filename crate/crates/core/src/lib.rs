//! Random signal temporal logic (RSTL).
//!
//! Formulas over Bernoulli event predicates are grounded over a discrete
//! horizon, evaluated under Monte-Carlo, conditional-independence, and
//! mutually-exclusive semantics, and used as objectives for
//! maximum-a-posteriori control synthesis by gradient ascent.

pub mod autodiff;
pub mod formula;
pub mod fields;
pub mod dynamics;
pub mod rng;
pub mod approx;
pub mod mc;
pub mod synth;
pub mod scenario;
