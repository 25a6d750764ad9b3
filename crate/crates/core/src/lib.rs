//! Numerical certification of strict strong local optimality for
//! bang-bang-singular extremals of control-affine Mayer problems.
//!
//! The pipeline runs bottom-up: [`fieldalg`] and [`cotangent`] provide the
//! bracket calculus, [`extremal`] shoots the reference extremal and checks the
//! pointwise conditions, [`secondvar`] decides coercivity of the extended second
//! variation and [`overmax`] builds the overmaximized flow used as numerical
//! evidence. [`problems`] holds the benchmarks and the TOML problem format.

pub mod cotangent;
pub mod error;
pub mod extremal;
pub mod fieldalg;
pub mod overmax;
pub mod problems;
pub mod secondvar;

pub use error::{Error, Result};
