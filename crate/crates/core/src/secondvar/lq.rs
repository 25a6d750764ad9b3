use nalgebra::DVector;
use rayon::prelude::*;

use super::ctilde::ModifiedCost;
use crate::cotangent::{adjoint_rhs, CotangentPoint};
use crate::error::{Error, Result};
use crate::extremal::{ArcKind, BBSExtremal, ControlAffineProblem};
use crate::fieldalg::integrate::integrate;
use crate::fieldalg::{integrate_adjoint_matrix, FlowSegment, OdeOptions, Solution, TimeField, Tolerances};

/// Natural cubic spline through several channels sampled on a common grid.
#[derive(Debug, Clone)]
pub(crate) struct Spline {
    t: Vec<f64>,
    /// `y[i]` holds every channel at node `i`
    y: Vec<Vec<f64>>,
    m: Vec<Vec<f64>>,
}

impl Spline {
    pub(crate) fn new(t: Vec<f64>, y: Vec<Vec<f64>>) -> Self {
        let n = t.len();
        let c = y.first().map(Vec::len).unwrap_or(0);
        let mut m = vec![vec![0.0; c]; n];
        if n >= 3 {
            // tridiagonal solve for the second derivatives, one channel at a time
            for ch in 0..c {
                let mut diag = vec![0.0; n];
                let mut rhs = vec![0.0; n];
                let mut upper = vec![0.0; n];
                diag[0] = 1.0;
                diag[n - 1] = 1.0;
                for i in 1..n - 1 {
                    let h0 = t[i] - t[i - 1];
                    let h1 = t[i + 1] - t[i];
                    let lower = h0 / 6.0;
                    diag[i] = (h0 + h1) / 3.0;
                    upper[i] = h1 / 6.0;
                    rhs[i] = (y[i + 1][ch] - y[i][ch]) / h1 - (y[i][ch] - y[i - 1][ch]) / h0;
                    let w = lower / diag[i - 1];
                    diag[i] -= w * upper[i - 1];
                    rhs[i] -= w * rhs[i - 1];
                }
                let mut sol = vec![0.0; n];
                for i in (1..n - 1).rev() {
                    sol[i] = (rhs[i] - upper[i] * sol[i + 1]) / diag[i];
                }
                for i in 0..n {
                    m[i][ch] = sol[i];
                }
            }
        }
        Self { t, y, m }
    }

    pub(crate) fn eval_into(&self, s: f64, out: &mut [f64]) {
        let n = self.t.len();
        if n == 1 {
            out.copy_from_slice(&self.y[0]);
            return;
        }
        let s = s.clamp(self.t[0], self.t[n - 1]);
        let i = match self.t.partition_point(|&v| v <= s) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        };
        let h = self.t[i + 1] - self.t[i];
        let a = (self.t[i + 1] - s) / h;
        let b = 1.0 - a;
        let c2 = (a * a * a - a) * h * h / 6.0;
        let d2 = (b * b * b - b) * h * h / 6.0;
        for (ch, o) in out.iter_mut().enumerate() {
            *o = a * self.y[i][ch] + b * self.y[i + 1][ch] + c2 * self.m[i][ch] + d2 * self.m[i + 1][ch];
        }
    }
}

/// The extended second variation on `[τ2, T]` as a singular LQ problem,
/// stored in the `(−c̃)` convention:
///
/// `J = ½ γ[ζ(τ2)]² + ½ ∫ (R w² − 2 w a_t·ζ) dt`, `ζ̇ = w ġ_t`,
/// `ζ(τ2) ∈ ℝ k`, `ζ(T) = δx`, with `a_t·ζ = L_ζ L_{ġ_t}(−c̃)(x̂_f)` and
/// `γ[ζ]² = H12 (ω·ζ)² − (ω·ζ)(d L_k(−c̃)·ζ)` for any `ω` with `⟨ω, k⟩ = 1`.
#[derive(Debug, Clone)]
pub struct LQData {
    pub times: Vec<f64>,
    pub r: Vec<f64>,
    pub gdot: Vec<DVector<f64>>,
    pub crossform: Vec<DVector<f64>>,
    pub k: DVector<f64>,
    pub h12: f64,
    /// `d(L_k(−c̃))(x̂_f)`; its value on `k` is `L²_k(−c̃)(x̂_f)`.
    pub k_covector: DVector<f64>,
    spline: Spline,
}

/// `|k|` at or below this counts as `k = 0`.
pub const K_ZERO_TOL: f64 = 1e-10;

impl LQData {
    pub fn new(
        times: Vec<f64>,
        r: Vec<f64>,
        gdot: Vec<DVector<f64>>,
        crossform: Vec<DVector<f64>>,
        k: DVector<f64>,
        h12: f64,
        k_covector: DVector<f64>,
    ) -> Result<Self> {
        let m = times.len();
        let n = k.len();
        if m < 2 {
            return Err(Error::Config("LQ grid needs at least two nodes".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("LQ grid must be strictly increasing".into()));
        }
        for (what, len) in [("R", r.len()), ("gdot", gdot.len()), ("crossform", crossform.len())] {
            if len != m {
                return Err(Error::DimensionMismatch {
                    context: what_static(what),
                    expected: m,
                    found: len,
                });
            }
        }
        if gdot.iter().chain(crossform.iter()).any(|v| v.len() != n) || k_covector.len() != n {
            return Err(Error::DimensionMismatch {
                context: "LQ vector data",
                expected: n,
                found: gdot.iter().map(|v| v.len()).find(|&l| l != n).unwrap_or(k_covector.len()),
            });
        }
        if let Some((i, &v)) = r.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(Error::Solver {
                what: "LQ data",
                detail: format!("R(t) = {v:e} is not positive at t = {}", times[i]),
            });
        }
        let rows = (0..m)
            .map(|i| {
                let mut row = Vec::with_capacity(1 + 2 * n);
                row.push(r[i]);
                row.extend(gdot[i].iter());
                row.extend(crossform[i].iter());
                row
            })
            .collect();
        let spline = Spline::new(times.clone(), rows);
        Ok(Self {
            times,
            r,
            gdot,
            crossform,
            k,
            h12,
            k_covector,
            spline,
        })
    }

    pub fn dim(&self) -> usize {
        self.k.len()
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// `(R, ġ, a)` at time `t` by cubic-spline interpolation.
    pub fn eval(&self, t: f64) -> (f64, DVector<f64>, DVector<f64>) {
        let n = self.dim();
        let mut buf = vec![0.0; 1 + 2 * n];
        self.spline.eval_into(t, &mut buf);
        (
            buf[0],
            DVector::from_column_slice(&buf[1..1 + n]),
            DVector::from_column_slice(&buf[1 + n..]),
        )
    }

    pub(crate) fn eval_into(&self, t: f64, buf: &mut [f64]) {
        self.spline.eval_into(t, buf);
    }

    pub fn k_is_zero(&self) -> bool {
        self.k.norm() <= K_ZERO_TOL
    }

    /// `ω = k / |k|²`, or `None` when `k = 0`.
    pub fn omega(&self) -> Option<DVector<f64>> {
        (!self.k_is_zero()).then(|| &self.k / self.k.norm_squared())
    }

    /// `L²_k(−c̃)(x̂_f)`.
    pub fn second_derivative_along_k(&self) -> f64 {
        self.k_covector.dot(&self.k)
    }

    /// `γ[ζ]²` for a given normalization covector `ω`.
    pub fn gamma(&self, omega: &DVector<f64>, zeta: &DVector<f64>) -> f64 {
        let w = omega.dot(zeta);
        self.h12 * w * w - w * self.k_covector.dot(zeta)
    }

    pub fn r_scale(&self) -> f64 {
        self.r.iter().fold(0.0, |a: f64, &b| a.max(b.abs()))
    }

    /// Same data with the cross term multiplied by `factor`.
    pub fn with_crossform_scaled(&self, factor: f64) -> Self {
        let crossform = self.crossform.iter().map(|a| a * factor).collect();
        Self::new(
            self.times.clone(),
            self.r.clone(),
            self.gdot.clone(),
            crossform,
            self.k.clone(),
            self.h12,
            self.k_covector.clone(),
        )
        .expect("scaling the cross term keeps the data valid")
    }
}

fn what_static(what: &str) -> &'static str {
    match what {
        "R" => "LQ data R",
        "gdot" => "LQ data gdot",
        _ => "LQ data crossform",
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqOptions {
    /// Grid intervals on `[τ2, T]`.
    pub intervals: usize,
    pub tol: Tolerances,
    /// Central-difference step for the cross term, relative to `1 + |x̂_f|`.
    pub fd_step: f64,
}

impl Default for LqOptions {
    fn default() -> Self {
        Self {
            intervals: 400,
            tol: Tolerances::new(1e-12, 1e-13),
            fd_step: 1e-5,
        }
    }
}

/// Assembles the LQ data from the extremal: `ġ_t`, `k` and `R` from the
/// adjoint transport `Q(t) = D(Ŝ_t⁻¹)`, the cross term by central
/// differences of `y ↦ H23(F̂_t(y, −∇c̃(y)))`.
pub fn assemble_lq(
    prob: &ControlAffineProblem,
    ext: &BBSExtremal,
    mc: &ModifiedCost,
    opts: &LqOptions,
) -> Result<LQData> {
    let _ = prob;
    let n = ext.dim();
    let calc = ext.calculus();
    let (tau1, tau2, t_end) = (ext.tau1, ext.tau2, ext.horizon);
    if opts.intervals < 2 {
        return Err(Error::Config("LQ grid needs at least two intervals".into()));
    }
    let xf = ext.x_final().clone();
    let times: Vec<f64> = (0..=opts.intervals)
        .map(|i| tau2 + (t_end - tau2) * i as f64 / opts.intervals as f64)
        .collect();

    // Q on the singular arc and then across the bang-2 arc to τ1
    let sing = ext.arc_field(ArcKind::Singular);
    let q_sing = integrate_adjoint_matrix(
        &FlowSegment::new(&sing, t_end, tau2).with_tol(opts.tol),
        xf.as_slice(),
        true,
    )
    .map_err(|e| transport_context(e, "singular arc"))?;
    let bang2 = ext.arc_field(ArcKind::Bang2);
    let q_tau1 = integrate_adjoint_matrix(
        &FlowSegment::new(&bang2, tau2, tau1).with_tol(opts.tol),
        &q_sing.final_state()[..n],
        false,
    );
    // restarting resets Q to I; compose with Q(τ2)
    let q_tau2 = row_major(n, &q_sing.final_state()[n..]);
    let q_tau1 = q_tau2 * row_major(n, &q_tau1.map_err(|e| transport_context(e, "bang-2 arc"))?.final_state()[n..]);

    let mut r = Vec::with_capacity(times.len());
    let mut gdot = Vec::with_capacity(times.len());
    let mut buf = vec![0.0; n + n * n];
    for &t in &times {
        q_sing.eval_into(t, &mut buf);
        let q = row_major(n, &buf[n..]);
        let l = ext.lambda_on(ArcKind::Singular, t);
        gdot.push(q * calc.h23.eval(l.x.as_slice()));
        r.push(calc.l_value(&l));
    }
    let l1 = &ext.l1;
    let k = q_tau1 * (calc.h1.eval(l1.x.as_slice()) - calc.h2.eval(l1.x.as_slice()));
    let h12 = l1.p.dot(&calc.h12.eval(l1.x.as_slice()));

    // perturbed cotangent bundle flowed backward together
    let step = opts.fd_step * (1.0 + xf.norm());
    let mut bundle = Vec::with_capacity(2 * n * 2 * n);
    for i in 0..n {
        for sign in [1.0, -1.0] {
            let mut y = xf.clone();
            y[i] += sign * step;
            let p = -mc.gradient(y.as_slice())?;
            bundle.extend(y.iter());
            bundle.extend(p.iter());
        }
    }
    let m = 2 * n;
    fn bundle_rhs<'f>(field: &'f dyn TimeField, m: usize) -> impl Fn(f64, &[f64], &mut [f64]) + 'f {
        let w = 2 * field.dim();
        move |t, y, dy| {
            for j in 0..m {
                adjoint_rhs(field, t, &y[j * w..(j + 1) * w], &mut dy[j * w..(j + 1) * w]);
            }
        }
    }
    let odeopts = OdeOptions::with_tol(opts.tol);
    let sol_sing = integrate(bundle_rhs(&sing, m), t_end, &bundle, tau2, &odeopts)
        .map_err(|e| transport_context(e, "cross-term bundle"))?;
    let sol_bang = integrate(
        bundle_rhs(&bang2, m),
        tau2,
        sol_sing.final_state(),
        tau1,
        &OdeOptions {
            keep_dense: false,
            ..odeopts
        },
    )
    .map_err(|e| transport_context(e, "cross-term bundle"))?;

    let crossform = times
        .par_iter()
        .map(|&t| {
            let mut y = vec![0.0; m * 2 * n];
            sol_sing.eval_into(t, &mut y);
            central(&y, n, step, |l| calc.h23_value(l))
        })
        .collect();
    let k_covector = central(sol_bang.final_state(), n, step, |l| {
        l.p.dot(&(calc.h1.eval(l.x.as_slice()) - calc.h2.eval(l.x.as_slice())))
    });
    LQData::new(times, r, gdot, crossform, k, h12, k_covector)
}

fn central(y: &[f64], n: usize, step: f64, f: impl Fn(&CotangentPoint) -> f64) -> DVector<f64> {
    DVector::from_fn(n, |i, _| {
        let a = 2 * i;
        let lp = CotangentPoint::from_packed(&y[a * 2 * n..(a + 1) * 2 * n]);
        let lm = CotangentPoint::from_packed(&y[(a + 1) * 2 * n..(a + 2) * 2 * n]);
        (f(&lp) - f(&lm)) / (2.0 * step)
    })
}

fn row_major(n: usize, s: &[f64]) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_row_slice(n, n, s)
}

fn transport_context(e: Error, what: &str) -> Error {
    match e {
        Error::Integration { time, reason } => Error::Integration {
            time,
            reason: format!("LQ transport along {what}: {reason}"),
        },
        other => other,
    }
}

/// Integrates `(μ, ζ)` columns of the LQ Hamiltonian system from `T` down to
/// `τ2`; `y0` holds `m` columns of length `2n` (μ first).
pub(crate) fn integrate_lq_columns(lq: &LQData, y0: &[f64], m: usize, tol: Tolerances) -> Result<Solution> {
    let n = lq.dim();
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let mut buf = vec![0.0; 1 + 2 * n];
        lq.eval_into(t, &mut buf);
        let rr = buf[0];
        let b = &buf[1..1 + n];
        let a = &buf[1 + n..];
        for c in 0..m {
            let col = &y[c * 2 * n..(c + 1) * 2 * n];
            let (mu, zeta) = col.split_at(n);
            let s: f64 = mu.iter().zip(b).map(|(u, v)| u * v).sum::<f64>()
                - zeta.iter().zip(a).map(|(u, v)| u * v).sum::<f64>();
            let w = -s / rr;
            let d = &mut dy[c * 2 * n..(c + 1) * 2 * n];
            for i in 0..n {
                d[i] = w * a[i];
                d[n + i] = w * b[i];
            }
        }
    };
    integrate(rhs, lq.t_end(), y0, lq.t_start(), &OdeOptions::with_tol(tol))
}
