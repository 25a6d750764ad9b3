//! Reference bang-bang-singular extremal: problem data, indirect shooting and
//! the pointwise necessary and regularity conditions.

mod conditions;
mod export;
mod problem;
mod reference;
mod shooting;

pub use conditions::{
    check_conditions, CheckRecord, ConditionConfig, ConditionReport, Verdict, BANG_MAXIMALITY,
    SGLC, SINGULAR_MAXIMALITY, SINGULAR_SIGNS, SWITCH_TAU1, SWITCH_TAU2,
};
pub use export::write_extremal_csv;
pub(crate) use export::{fmt as csv_number, io_err};
pub use problem::{ControlAffineProblem, Cost, Edge};
pub use reference::{
    integrate_reference, ArcField, ArcKind, BBSExtremal, ExtremalSample, ReferenceOptions,
};
pub use shooting::{shoot_bbs, ShootingGuess, ShootingOptions, ShootingResiduals, ShootingResult};
