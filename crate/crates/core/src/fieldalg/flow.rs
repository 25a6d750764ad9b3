use nalgebra::{DMatrix, DVector};

use super::field::SmoothField;
use super::integrate::{integrate, OdeOptions, Solution, Tolerances};
use crate::error::{check_dim, Result};

/// A possibly time-dependent vector field.
pub trait TimeField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]);
    fn jacobian(&self, t: f64, x: &[f64]) -> DMatrix<f64>;
}

impl TimeField for SmoothField {
    fn dim(&self) -> usize {
        SmoothField::dim(self)
    }

    fn eval_into(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        SmoothField::eval_into(self, x, out)
    }

    fn jacobian(&self, _t: f64, x: &[f64]) -> DMatrix<f64> {
        SmoothField::jacobian(self, x)
    }
}

#[derive(Clone, Copy)]
pub struct FlowSegment<'a> {
    pub field: &'a dyn TimeField,
    pub t_start: f64,
    pub t_end: f64,
    pub tol: Tolerances,
}

impl<'a> FlowSegment<'a> {
    pub fn new(field: &'a dyn TimeField, t_start: f64, t_end: f64) -> Self {
        Self {
            field,
            t_start,
            t_end,
            tol: Tolerances::default(),
        }
    }

    pub fn with_tol(mut self, tol: Tolerances) -> Self {
        self.tol = tol;
        self
    }

    pub fn reversed(&self) -> Self {
        Self {
            t_start: self.t_end,
            t_end: self.t_start,
            ..*self
        }
    }
}

/// `[f, g](x) = Dg(x) f(x) − Df(x) g(x)`.
pub fn lie_bracket(f: &SmoothField, g: &SmoothField, x: &[f64]) -> Result<DVector<f64>> {
    lie_bracket_with_step(f, g, x).map(|(v, _)| v)
}

/// Like [`lie_bracket`], also returning the largest finite-difference step
/// used for either Jacobian (`None` when both are exact).
pub fn lie_bracket_with_step(
    f: &SmoothField,
    g: &SmoothField,
    x: &[f64],
) -> Result<(DVector<f64>, Option<f64>)> {
    check_dim("lie bracket", f.dim(), g.dim())?;
    check_dim("lie bracket point", f.dim(), x.len())?;
    let v = g.jacobian(x) * f.eval(x) - f.jacobian(x) * g.eval(x);
    let step = match (f.jacobian_fd_step(x), g.jacobian_fd_step(x)) {
        (None, None) => None,
        (a, b) => Some(a.unwrap_or(0.0).max(b.unwrap_or(0.0))),
    };
    Ok((v, step))
}

pub fn flow(seg: &FlowSegment<'_>, x: &[f64]) -> Result<DVector<f64>> {
    let sol = flow_trajectory(seg, x, false)?;
    Ok(DVector::from_column_slice(sol.final_state()))
}

pub fn flow_trajectory(seg: &FlowSegment<'_>, x: &[f64], dense: bool) -> Result<Solution> {
    check_dim("flow start point", seg.field.dim(), x.len())?;
    let opts = OdeOptions {
        keep_dense: dense,
        ..OdeOptions::with_tol(seg.tol)
    };
    let f = seg.field;
    integrate(|t, y, dy| f.eval_into(t, y, dy), seg.t_start, x, seg.t_end, &opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    /// `v` at the start point is carried to the end point by the differential of the flow.
    Pushforward,
    /// `v` at the end point is pulled back to the start point by the inverse differential.
    InversePushforward,
}

/// Transports a tangent vector along the flow of `seg` started at `x`.
///
/// The inverse direction integrates the adjoint variational equation
/// `Q̇ = −Q·Df` with `Q(t_start) = I`, whose value at `t_end` is the inverse of
/// the flow differential.
pub fn transport_vector(
    seg: &FlowSegment<'_>,
    x: &[f64],
    v: &[f64],
    direction: Transport,
) -> Result<DVector<f64>> {
    let n = seg.field.dim();
    check_dim("transport start point", n, x.len())?;
    check_dim("transported vector", n, v.len())?;
    match direction {
        Transport::Pushforward => {
            let mut y0 = x.to_vec();
            y0.extend_from_slice(v);
            let sol = integrate_variational(seg, &y0, 1, false)?;
            Ok(DVector::from_column_slice(&sol.final_state()[n..]))
        }
        Transport::InversePushforward => {
            let q = inverse_differential(seg, x)?;
            Ok(q * DVector::from_column_slice(v))
        }
    }
}

/// Differential of the flow map at `x` (n×n), columns integrated together.
pub fn flow_differential(seg: &FlowSegment<'_>, x: &[f64]) -> Result<DMatrix<f64>> {
    let n = seg.field.dim();
    check_dim("flow differential point", n, x.len())?;
    let mut y0 = x.to_vec();
    y0.extend(DMatrix::<f64>::identity(n, n).iter());
    let sol = integrate_variational(seg, &y0, n, false)?;
    Ok(DMatrix::from_column_slice(n, n, &sol.final_state()[n..]))
}

/// Inverse of the flow differential via the adjoint variational equation.
pub fn inverse_differential(seg: &FlowSegment<'_>, x: &[f64]) -> Result<DMatrix<f64>> {
    let n = seg.field.dim();
    check_dim("flow differential point", n, x.len())?;
    let sol = integrate_adjoint_matrix(seg, x, false)?;
    Ok(DMatrix::from_row_slice(n, n, &sol.final_state()[n..]))
}

/// State and `Q` with `Q̇ = −Q·Df`, `Q(t_start) = I`; `Q` is stored row-major
/// after the state so that each row is one covector.
pub(crate) fn integrate_adjoint_matrix(seg: &FlowSegment<'_>, x: &[f64], dense: bool) -> Result<Solution> {
    let n = seg.field.dim();
    let f = seg.field;
    let mut y0 = x.to_vec();
    y0.extend(DMatrix::<f64>::identity(n, n).iter());
    let opts = OdeOptions {
        keep_dense: dense,
        ..OdeOptions::with_tol(seg.tol)
    };
    integrate(
        |t, y, dy| {
            f.eval_into(t, &y[..n], &mut dy[..n]);
            let a = f.jacobian(t, &y[..n]);
            for r in 0..n {
                for c in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        s += y[n + r * n + k] * a[(k, c)];
                    }
                    dy[n + r * n + c] = -s;
                }
            }
        },
        seg.t_start,
        &y0,
        seg.t_end,
        &opts,
    )
}

/// Integrates the state together with `m` variational columns (column-major).
pub(crate) fn integrate_variational(
    seg: &FlowSegment<'_>,
    y0: &[f64],
    m: usize,
    dense: bool,
) -> Result<Solution> {
    let n = seg.field.dim();
    let f = seg.field;
    let opts = OdeOptions {
        keep_dense: dense,
        ..OdeOptions::with_tol(seg.tol)
    };
    integrate(
        |t, y, dy| {
            f.eval_into(t, &y[..n], &mut dy[..n]);
            let a = f.jacobian(t, &y[..n]);
            for c in 0..m {
                let col = &y[n + c * n..n + (c + 1) * n];
                for r in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        s += a[(r, k)] * col[k];
                    }
                    dy[n + c * n + r] = s;
                }
            }
        },
        seg.t_start,
        y0,
        seg.t_end,
        &opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_duration_is_identity() {
        let f = SmoothField::constant(&[0.0, -2.0, 0.0]);
        let seg = FlowSegment::new(&f, 1.0, 1.0);
        let x = [0.3, 0.1, -4.0];
        assert_eq!(flow(&seg, &x).unwrap().as_slice(), &x);
        let v = transport_vector(&seg, &x, &[1.0, 2.0, 3.0], Transport::InversePushforward).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn constant_field_moves_linearly() {
        let f = SmoothField::constant(&[0.0, -2.0, 0.0]);
        let seg = FlowSegment::new(&f, 0.0, 0.75);
        let y = flow(&seg, &[1.0, 1.0, 1.0]).unwrap();
        assert!((y[1] - (1.0 - 1.5)).abs() < 1e-14);
    }

    #[test]
    fn mismatched_point_rejected() {
        let f = SmoothField::constant(&[0.0, 1.0]);
        let seg = FlowSegment::new(&f, 0.0, 1.0);
        assert!(flow(&seg, &[0.0]).is_err());
    }
}
