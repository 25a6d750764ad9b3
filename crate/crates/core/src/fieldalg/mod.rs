//! Vector fields on ℝⁿ: polynomial algebra, Lie brackets, flows and transport.

mod field;
mod flow;
pub mod integrate;
mod polynomial;

pub use field::{fd_jacobian, fd_step, fd_step2, FieldKind, SmoothField};
pub use flow::{
    flow, flow_differential, flow_trajectory, inverse_differential, lie_bracket,
    lie_bracket_with_step, transport_vector, FlowSegment, TimeField, Transport,
};
pub(crate) use flow::integrate_adjoint_matrix;
pub use integrate::{OdeOptions, Solution, Tolerances};
pub use polynomial::Polynomial;
