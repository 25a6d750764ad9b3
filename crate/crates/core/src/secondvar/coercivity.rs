use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::ctilde::{CostCase, ModifiedCost};
use super::lq::{integrate_lq_columns, LQData};
use crate::error::{Error, Result};
use crate::fieldalg::{Solution, Tolerances};

/// Fundamental solution of the LQ Hamiltonian system with `(μ, ζ)(T) = (0, e_i)`.
#[derive(Debug, Clone)]
pub struct LQFlow {
    pub times: Vec<f64>,
    /// μ-block: column `i` is `μ(t)` for `ζ(T) = e_i`.
    pub mu: Vec<DMatrix<f64>>,
    /// ζ-block, the identity at `T`.
    pub zeta: Vec<DMatrix<f64>>,
    sol: Solution,
    n: usize,
}

impl LQFlow {
    /// `(μ-block, ζ-block)` at any `t` in `[τ2, T]` from the dense output.
    pub fn blocks_at(&self, t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        split_blocks(&self.sol.eval(t), self.n)
    }
}

fn split_blocks(y: &[f64], n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut mu = DMatrix::zeros(n, n);
    let mut zeta = DMatrix::zeros(n, n);
    for c in 0..n {
        for i in 0..n {
            mu[(i, c)] = y[c * 2 * n + i];
            zeta[(i, c)] = y[c * 2 * n + n + i];
        }
    }
    (mu, zeta)
}

fn lq_tol() -> Tolerances {
    Tolerances::new(1e-12, 1e-14)
}

/// Integrates the LQ Hamiltonian system backward from `T` for the `n`
/// initial conditions spanning the transversality subspace.
pub fn lq_hamiltonian_flow(lq: &LQData) -> Result<LQFlow> {
    let n = lq.dim();
    let mut y0 = vec![0.0; 2 * n * n];
    for c in 0..n {
        y0[c * 2 * n + n + c] = 1.0;
    }
    let sol = integrate_lq_columns(lq, &y0, n, lq_tol())?;
    let mut mu = Vec::with_capacity(lq.times.len());
    let mut zeta = Vec::with_capacity(lq.times.len());
    for &t in &lq.times {
        let (m, z) = if t == lq.t_end() {
            (DMatrix::zeros(n, n), DMatrix::identity(n, n))
        } else {
            split_blocks(&sol.eval(t), n)
        };
        mu.push(m);
        zeta.push(z);
    }
    Ok(LQFlow {
        times: lq.times.clone(),
        mu,
        zeta,
        sol,
        n,
    })
}

/// Full `2n × 2n` transition matrix of the LQ flow from `T` to `t`, acting on
/// `(μ, ζ)` stacked with `μ` first.
pub fn lq_transition_matrix(lq: &LQData, t: f64) -> Result<DMatrix<f64>> {
    let n = lq.dim();
    let m = 2 * n;
    let mut y0 = vec![0.0; m * m];
    for c in 0..m {
        y0[c * m + c] = 1.0;
    }
    if t >= lq.t_end() {
        return Ok(DMatrix::identity(m, m));
    }
    let clipped = t.max(lq.t_start());
    let sol = crate::fieldalg::integrate::integrate(
        |s, y, dy| lq_rhs(lq, s, y, dy, m),
        lq.t_end(),
        &y0,
        clipped,
        &crate::fieldalg::OdeOptions::with_tol(lq_tol()),
    )?;
    Ok(DMatrix::from_column_slice(m, m, sol.final_state()))
}

fn lq_rhs(lq: &LQData, t: f64, y: &[f64], dy: &mut [f64], cols: usize) {
    let n = lq.dim();
    let mut buf = vec![0.0; 1 + 2 * n];
    lq.eval_into(t, &mut buf);
    let (b, a) = buf[1..].split_at(n);
    for c in 0..cols {
        let col = &y[c * 2 * n..(c + 1) * 2 * n];
        let s: f64 = (0..n).map(|i| col[i] * b[i] - col[n + i] * a[i]).sum();
        let w = -s / buf[0];
        for i in 0..n {
            dy[c * 2 * n + i] = w * a[i];
            dy[c * 2 * n + n + i] = w * b[i];
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    pub intervals: usize,
    pub min_eigenvalue: f64,
    pub coercive: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoercivityReport {
    /// Smallest singular value of the ζ-block over the grid.
    pub conjugate_min_singular_value: f64,
    pub conjugate_worst_time: f64,
    pub conjugate_pass: bool,
    /// `H12 − L²_k(−c̃) + ⟨μ(τ2), k⟩`, or `None` when `k = 0`.
    pub boundary_value: Option<f64>,
    pub boundary_pass: bool,
    pub margin: f64,
    pub cost_case: Option<CostCase>,
    pub oracle: Option<OracleResult>,
    pub pass: bool,
    pub notes: Vec<String>,
}

impl CoercivityReport {
    /// Signed distance from the decision boundary of the Hamiltonian test.
    pub fn hamiltonian_margin(&self) -> f64 {
        let conj = self.conjugate_min_singular_value - self.margin;
        match self.boundary_value {
            Some(b) if self.conjugate_pass => conj.min(b - self.margin),
            _ => conj,
        }
    }
}

/// Default coercivity margin `1e-7 · max R`.
pub fn default_margin(lq: &LQData) -> f64 {
    1e-7 * lq.r_scale()
}

/// Conjugate-point test on the ζ-block plus, when `k ≠ 0`, the boundary
/// inequality at `τ2`. A [`ModifiedCost`] only exists when the cost case is
/// admissible, so passing one records the case in the report.
pub fn coercivity_test(
    lq: &LQData,
    flow: &LQFlow,
    mc: Option<&ModifiedCost>,
    margin: Option<f64>,
) -> Result<CoercivityReport> {
    let margin = margin.unwrap_or_else(|| default_margin(lq));
    if !(margin >= 0.0) {
        return Err(Error::Config(format!("coercivity margin must be non-negative, got {margin}")));
    }
    let mut notes = Vec::new();
    let (mut smin, mut worst) = (f64::INFINITY, lq.t_end());
    for (t, z) in flow.times.iter().zip(&flow.zeta) {
        let s = min_singular_value(z);
        if s < smin {
            smin = s;
            worst = *t;
        }
    }
    // a determinant sign change between nodes is a conjugate point the grid missed
    for i in 0..flow.times.len() - 1 {
        if det_sign(&flow.zeta[i]) != det_sign(&flow.zeta[i + 1]) {
            let t = bisect_sign_change(flow, flow.times[i], flow.times[i + 1]);
            notes.push(format!("ζ-block determinant changes sign near t = {t:.6}"));
            if smin > 0.0 {
                smin = 0.0;
                worst = t;
            }
        }
    }
    let conjugate_pass = smin > margin;

    let (boundary_value, boundary_pass) = if lq.k_is_zero() {
        notes.push("k = 0: boundary inequality skipped".into());
        (None, true)
    } else {
        let z0 = &flow.zeta[0];
        if min_singular_value(z0) <= margin {
            notes.push("ζ-block singular at τ2; boundary inequality not evaluated".into());
            (None, false)
        } else {
            let dx = z0
                .clone()
                .lu()
                .solve(&lq.k)
                .ok_or_else(|| Error::Solver {
                    what: "boundary inequality",
                    detail: "ζ-block at τ2 not invertible".into(),
                })?;
            let mu0 = &flow.mu[0] * dx;
            let value = lq.h12 - lq.second_derivative_along_k() + mu0.dot(&lq.k);
            (Some(value), value > margin)
        }
    };
    if mc.is_none() {
        notes.push("no modified cost supplied; cost case not checked".into());
    }
    let pass = conjugate_pass && boundary_pass;
    Ok(CoercivityReport {
        conjugate_min_singular_value: smin,
        conjugate_worst_time: worst,
        conjugate_pass,
        boundary_value,
        boundary_pass,
        margin,
        cost_case: mc.map(|m| m.case()),
        oracle: None,
        pass,
        notes,
    })
}

/// Boundary value `γ[k]² + ⟨μ(τ2), k⟩` for an explicit normalization covector.
pub fn boundary_value_with_omega(lq: &LQData, flow: &LQFlow, omega: &DVector<f64>) -> Option<f64> {
    if lq.k_is_zero() {
        return None;
    }
    let dx = flow.zeta[0].clone().lu().solve(&lq.k)?;
    let mu0 = &flow.mu[0] * dx;
    Some(lq.gamma(omega, &lq.k) + mu0.dot(&lq.k))
}

fn det_sign(m: &DMatrix<f64>) -> f64 {
    // sign only, so no underflow concerns
    m.clone().lu().determinant().signum()
}

fn bisect_sign_change(flow: &LQFlow, mut a: f64, mut b: f64) -> f64 {
    let sa = det_sign(&flow.blocks_at(a).1);
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        if det_sign(&flow.blocks_at(m).1) == sa {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

pub(crate) fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().fold(f64::INFINITY, |a, &b| a.min(b))
}
