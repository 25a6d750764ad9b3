use nalgebra::DVector;

use crate::extremal::{ControlAffineProblem, Cost, Edge, ShootingGuess};
use crate::fieldalg::{Polynomial, SmoothField};

/// `(x2, −x1 + x2(1 − x1²) + s, (x1² + x2²)/2)`.
fn vdp_field(s: f64) -> SmoothField {
    let x1 = Polynomial::variable(3, 0);
    let x2 = Polynomial::variable(3, 1);
    let one = Polynomial::constant(3, 1.0);
    let damping = &x2 * &(&one - &x1.pow(2));
    let c2 = &(&damping - &x1) + &Polynomial::constant(3, s);
    let c3 = (&x1.pow(2) + &x2.pow(2)).scale(0.5);
    SmoothField::polynomial(vec![x2, c2, c3]).expect("three components in three variables")
}

/// Controlled Van der Pol oscillator with running cost `∫(x1² + x2²)/2`, in
/// Mayer form on ℝ³ with control `u ∈ [−1, 1]`.
///
/// Vertex 1 is `u = −1` (playing both `h1` and `h3`), vertex 2 is `u = +1`.
pub fn vanderpol_problem() -> (ControlAffineProblem, ShootingGuess) {
    let h_minus = vdp_field(-1.0);
    let h_plus = vdp_field(1.0);
    let prob = ControlAffineProblem::new(
        "vanderpol",
        vec![h_minus, h_plus],
        Cost::polynomial(Polynomial::variable(3, 2)),
        DVector::from_vec(vec![0.0, 1.0, 0.0]),
        4.0,
        Edge { h1: 0, h2: 1, h3: 0 },
    )
    .expect("van der pol data is consistent");
    let guess = ShootingGuess {
        x_final: vec![0.5, 0.0, 2.0],
        tau1: 1.37,
        tau2: 2.46,
    };
    (prob, guess)
}

/// `u_sing(x) = 2 x1 − x2 (1 − x1²)`, the scalar control that keeps the
/// trajectory on the singular surface.
pub fn vanderpol_u_sing(x: &[f64]) -> f64 {
    2.0 * x[0] - x[1] * (1.0 - x[0] * x[0])
}
