use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::extremal::{BBSExtremal, ControlAffineProblem, Cost};
use crate::fieldalg::{flow, flow_differential, FlowSegment, SmoothField, Tolerances};

/// Below this `|L_{f1} c|` the cost is treated as invariant along `f1`.
pub const INVARIANCE_TOL: f64 = 1e-10;
const NEARBY_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostCase {
    /// `L_{f1} c ≡ 0` near `x̂_f`; then `c̃ = c`.
    F1Invariant,
    /// `L²_{f1} c(x̂_f) > 0`; `c̃` is `c` restricted to `{L_{f1} c = 0}` and
    /// extended constant along the integral lines of `f1`.
    F1Transverse,
}

/// The modified terminal cost `c̃` near `x̂_f`.
#[derive(Debug, Clone)]
pub struct ModifiedCost {
    case: CostCase,
    cost: Cost,
    f1: SmoothField,
    x_ref: DVector<f64>,
    tol: Tolerances,
}

impl ModifiedCost {
    pub fn case(&self) -> CostCase {
        self.case
    }

    pub fn reference_point(&self) -> &DVector<f64> {
        &self.x_ref
    }

    /// The original cost `c`.
    pub fn original(&self) -> &Cost {
        &self.cost
    }

    /// `(z, r)` with `x = exp(r f1)(z)` and `L_{f1} c(z) = 0`.
    pub fn projection(&self, x: &[f64]) -> Result<(DVector<f64>, f64)> {
        let mut r = 0.0;
        let mut z = DVector::from_column_slice(x);
        for _ in 0..50 {
            let phi = self.cost.lie_derivative(&self.f1, z.as_slice());
            let scale = 1.0 + self.cost.gradient(z.as_slice()).norm() * self.f1.eval(z.as_slice()).norm();
            if phi.abs() <= 1e-14 * scale {
                return Ok((z, r));
            }
            let dphi = -self.cost.second_lie_derivative(&self.f1, z.as_slice());
            if dphi == 0.0 || !dphi.is_finite() {
                break;
            }
            r -= phi / dphi;
            z = self.flow_f1(x, -r)?;
        }
        let phi = self.cost.lie_derivative(&self.f1, z.as_slice());
        if phi.abs() <= 1e-10 {
            return Ok((z, r));
        }
        Err(Error::Solver {
            what: "modified cost projection",
            detail: format!("Newton in r did not converge at x = {:?} (residual {phi:e})", x),
        })
    }

    fn flow_f1(&self, x: &[f64], time: f64) -> Result<DVector<f64>> {
        if time == 0.0 {
            return Ok(DVector::from_column_slice(x));
        }
        flow(&FlowSegment::new(&self.f1, 0.0, time).with_tol(self.tol), x)
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        match self.case {
            CostCase::F1Invariant => Ok(self.cost.value(x)),
            CostCase::F1Transverse => {
                let (z, _) = self.projection(x)?;
                Ok(self.cost.value(z.as_slice()))
            }
        }
    }

    /// `∇c̃(x) = ∇c(z)·D exp(−r f1)(x)`; the `∇r` term drops because
    /// `L_{f1} c(z) = 0`.
    pub fn gradient(&self, x: &[f64]) -> Result<DVector<f64>> {
        match self.case {
            CostCase::F1Invariant => Ok(self.cost.gradient(x)),
            CostCase::F1Transverse => {
                let (z, r) = self.projection(x)?;
                let gz = self.cost.gradient(z.as_slice());
                if r == 0.0 {
                    return Ok(gz);
                }
                let d = flow_differential(&FlowSegment::new(&self.f1, 0.0, -r).with_tol(self.tol), x)?;
                Ok(d.transpose() * gz)
            }
        }
    }

    /// Exact in the invariant case, central differences of the gradient otherwise.
    pub fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        match self.case {
            CostCase::F1Invariant => Ok(self.cost.hessian(x)),
            CostCase::F1Transverse => {
                let n = x.len();
                let mut h = DMatrix::zeros(n, n);
                let mut y = x.to_vec();
                for j in 0..n {
                    let step = 1e-5 * (1.0 + x[j].abs());
                    y[j] = x[j] + step;
                    let gp = self.gradient(&y)?;
                    y[j] = x[j] - step;
                    let gm = self.gradient(&y)?;
                    y[j] = x[j];
                    h.set_column(j, &((gp - gm) / (2.0 * step)));
                }
                Ok((&h + h.transpose()) * 0.5)
            }
        }
    }
}

/// Builds `c̃` for the extremal's final point, detecting which of the two
/// admissible cases applies.
pub fn build_ctilde(prob: &ControlAffineProblem, ext: &BBSExtremal) -> Result<ModifiedCost> {
    build_ctilde_at(&prob.cost, &ext.calculus().f1, ext.x_final())
}

/// `c̃` for a cost and drift direction `f1` around `x_ref`. The invariant
/// case needs `|L_{f1} c| ≤ INVARIANCE_TOL` at `x_ref` and at 20 nearby points.
pub fn build_ctilde_at(cost: &Cost, f1: &SmoothField, x_ref: &DVector<f64>) -> Result<ModifiedCost> {
    let tol = Tolerances::new(1e-13, 1e-14);
    let radius = 1e-3 * (1.0 + x_ref.norm());
    let mut rng = ChaCha8Rng::seed_from_u64(0x0c71_1de0);
    let mut worst: f64 = cost.lie_derivative(f1, x_ref.as_slice()).abs();
    for _ in 0..NEARBY_SAMPLES {
        let y: Vec<f64> = x_ref.iter().map(|v| v + radius * rng.random_range(-1.0..1.0)).collect();
        worst = worst.max(cost.lie_derivative(f1, &y).abs());
    }
    let case = if worst <= INVARIANCE_TOL {
        CostCase::F1Invariant
    } else {
        let second = cost.second_lie_derivative(f1, x_ref.as_slice());
        if !(second > 0.0) {
            return Err(Error::SecondLieDerivativeNotPositive { value: second });
        }
        CostCase::F1Transverse
    };
    Ok(ModifiedCost {
        case,
        cost: cost.clone(),
        f1: f1.clone(),
        x_ref: x_ref.clone(),
        tol,
    })
}
