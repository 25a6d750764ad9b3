use nalgebra::{DMatrix, DVector};

use super::coercivity::OracleResult;
use super::lq::LQData;
use crate::error::{Error, Result};

// 6-point Gauss-Legendre on [0, 1]
const GAUSS_X: [f64; 6] = [
    0.033765242898423975,
    0.16939530676686776,
    0.38069040695840156,
    0.6193095930415985,
    0.8306046932331322,
    0.966234757101576,
];
const GAUSS_W: [f64; 6] = [
    0.08566224618958517,
    0.1803807865240693,
    0.23395696728634552,
    0.23395696728634552,
    0.1803807865240693,
    0.08566224618958517,
];

/// Per-interval integrals of the LQ data.
struct IntervalData {
    /// `∫ R`
    rho: f64,
    /// `∫ ġ`
    db: DVector<f64>,
    /// `∫ a`
    da: DVector<f64>,
    /// `∫ a(t)·∫_{t_j}^t ġ`
    c: f64,
}

fn interval_data(lq: &LQData, t0: f64, t1: f64) -> IntervalData {
    let n = lq.dim();
    let h = t1 - t0;
    let mut rho = 0.0;
    let mut db = DVector::zeros(n);
    let mut da = DVector::zeros(n);
    let mut c = 0.0;
    for (&xq, &wq) in GAUSS_X.iter().zip(&GAUSS_W) {
        let s = t0 + xq * h;
        let (r, b, a) = lq.eval(s);
        rho += wq * h * r;
        db += &b * (wq * h);
        da += &a * (wq * h);
        // β(s) = ∫_{t0}^s ġ by a nested rule
        let mut beta = DVector::zeros(n);
        for (&xi, &wi) in GAUSS_X.iter().zip(&GAUSS_W) {
            let (_, bi, _) = lq.eval(t0 + xi * (s - t0));
            beta += bi * (wi * (s - t0));
        }
        c += wq * h * a.dot(&beta);
    }
    IntervalData { rho, db, da, c }
}

/// Symmetric matrix of the discretized form in the variables
/// `(ε0 |k|, √h w_1, …, √h w_N)`; `ε0` is present only when `k ≠ 0`.
pub fn oracle_matrix(lq: &LQData, intervals: usize) -> Result<DMatrix<f64>> {
    if intervals < 8 {
        return Err(Error::Config(format!("oracle needs at least 8 intervals, got {intervals}")));
    }
    let (t0, t1) = (lq.t_start(), lq.t_end());
    let h = (t1 - t0) / intervals as f64;
    let data: Vec<IntervalData> = (0..intervals)
        .map(|j| interval_data(lq, t0 + j as f64 * h, t0 + (j + 1) as f64 * h))
        .collect();
    let with_eps = !lq.k_is_zero();
    let off = usize::from(with_eps);
    let dim = intervals + off;
    let mut m = DMatrix::zeros(dim, dim);
    let sw = 1.0 / h.sqrt();
    for j in 0..intervals {
        m[(off + j, off + j)] = (0.5 * data[j].rho - data[j].c) * sw * sw;
        for i in 0..j {
            let v = -0.5 * data[j].da.dot(&data[i].db) * sw * sw;
            m[(off + i, off + j)] = v;
            m[(off + j, off + i)] = v;
        }
    }
    if with_eps {
        let kn = lq.k.norm();
        let se = 1.0 / kn;
        let omega = lq.omega().expect("k is nonzero");
        m[(0, 0)] = 0.5 * lq.gamma(&omega, &lq.k) * se * se;
        for j in 0..intervals {
            let v = -0.5 * data[j].da.dot(&lq.k) * se * sw;
            m[(0, 1 + j)] = v;
            m[(1 + j, 0)] = v;
        }
    }
    Ok(m)
}

/// Brute-force coercivity check: piecewise-constant `w` on `N` equal
/// subintervals, smallest eigenvalue of the resulting quadratic form.
pub fn coercivity_oracle(lq: &LQData, intervals: usize) -> Result<OracleResult> {
    let m = oracle_matrix(lq, intervals)?;
    let min_eigenvalue = m.symmetric_eigenvalues().iter().fold(f64::INFINITY, |a, &b| a.min(b));
    Ok(OracleResult {
        intervals,
        min_eigenvalue,
        coercive: min_eigenvalue > 1e-9 * lq.r_scale().max(1.0),
    })
}

/// Value of the discretized form at `v` (same variables as [`oracle_matrix`])
/// by direct time stepping of `ζ` and the running cost.
pub fn oracle_form_value(lq: &LQData, intervals: usize, v: &[f64]) -> Result<f64> {
    let with_eps = !lq.k_is_zero();
    let off = usize::from(with_eps);
    if v.len() != intervals + off {
        return Err(Error::DimensionMismatch {
            context: "oracle variables",
            expected: intervals + off,
            found: v.len(),
        });
    }
    let n = lq.dim();
    let (t0, t1) = (lq.t_start(), lq.t_end());
    let h = (t1 - t0) / intervals as f64;
    let mut zeta = DVector::zeros(n);
    let mut total = 0.0;
    if with_eps {
        let eps = v[0] / lq.k.norm();
        zeta = &lq.k * eps;
        let omega = lq.omega().expect("k is nonzero");
        total += 0.5 * lq.gamma(&omega, &zeta);
    }
    let sub = 64;
    let dt = h / sub as f64;
    for j in 0..intervals {
        let w = v[off + j] / h.sqrt();
        // RK4 on (ζ, J) with w frozen
        let f = |t: f64, z: &DVector<f64>| {
            let (r, b, a) = lq.eval(t);
            (&b * w, 0.5 * (r * w * w - 2.0 * w * a.dot(z)))
        };
        for s in 0..sub {
            let t = t0 + j as f64 * h + s as f64 * dt;
            let (k1z, k1j) = f(t, &zeta);
            let (k2z, k2j) = f(t + dt / 2.0, &(&zeta + &k1z * (dt / 2.0)));
            let (k3z, k3j) = f(t + dt / 2.0, &(&zeta + &k2z * (dt / 2.0)));
            let (k4z, k4j) = f(t + dt, &(&zeta + &k3z * dt));
            zeta += (k1z + k2z * 2.0 + k3z * 2.0 + k4z) * (dt / 6.0);
            total += (k1j + 2.0 * k2j + 2.0 * k3j + k4j) * dt / 6.0;
        }
    }
    Ok(total)
}
