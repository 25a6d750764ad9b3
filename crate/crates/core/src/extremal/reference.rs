use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::problem::ControlAffineProblem;
use crate::cotangent::{adjoint_rhs, CotangentPoint, CotangentTrajectory, EdgeCalculus};
use crate::error::{check_dim, Error, Result};
use crate::fieldalg::integrate::{integrate, integrate_with_events, EventFn, OdeOptions, Tolerances};
use crate::fieldalg::TimeField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArcKind {
    /// `[0, τ1)`, field `h1`.
    Bang1,
    /// `[τ1, τ2)`, field `h2`.
    Bang2,
    /// `[τ2, T]`, field `h2 + υ̂(t) f1`.
    Singular,
}

#[derive(Debug, Clone)]
pub struct ReferenceOptions {
    pub tol: Tolerances,
    pub samples_per_arc: usize,
    /// `u_S` closer than this to 0 or 1 is recorded as a saturation warning.
    pub control_margin: f64,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self {
            tol: Tolerances::default(),
            samples_per_arc: 400,
            control_margin: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExtremalSample {
    pub t: f64,
    pub arc: ArcKind,
    pub x: DVector<f64>,
    pub p: DVector<f64>,
    /// Singular control `υ̂(t)`, present on the singular arc.
    pub upsilon: Option<f64>,
}

impl ExtremalSample {
    pub fn point(&self) -> CotangentPoint {
        CotangentPoint {
            x: self.x.clone(),
            p: self.p.clone(),
        }
    }
}

/// A bang-bang-singular extremal: `h1` on `[0, τ1)`, `h2` on `[τ1, τ2)` and the
/// singular feedback on `[τ2, T]`, integrated backward from `ℓ_T`.
#[derive(Debug, Clone)]
pub struct BBSExtremal {
    pub tau1: f64,
    pub tau2: f64,
    pub horizon: f64,
    pub l0: CotangentPoint,
    pub l1: CotangentPoint,
    pub l2: CotangentPoint,
    pub l_t: CotangentPoint,
    pub samples: Vec<ExtremalSample>,
    pub diagnostics: Vec<String>,
    calc: EdgeCalculus,
    bang1: CotangentTrajectory,
    bang2: CotangentTrajectory,
    singular: CotangentTrajectory,
    tol: Tolerances,
}

impl BBSExtremal {
    pub fn calculus(&self) -> &EdgeCalculus {
        &self.calc
    }

    pub fn dim(&self) -> usize {
        self.l_t.dim()
    }

    pub fn tolerances(&self) -> Tolerances {
        self.tol
    }

    pub fn x_final(&self) -> &DVector<f64> {
        &self.l_t.x
    }

    /// Arc owning time `t` (switching times belong to the later arc).
    pub fn arc_at(&self, t: f64) -> ArcKind {
        if t >= self.tau2 {
            ArcKind::Singular
        } else if t >= self.tau1 {
            ArcKind::Bang2
        } else {
            ArcKind::Bang1
        }
    }

    pub fn arc_interval(&self, arc: ArcKind) -> (f64, f64) {
        match arc {
            ArcKind::Bang1 => (0.0, self.tau1),
            ArcKind::Bang2 => (self.tau1, self.tau2),
            ArcKind::Singular => (self.tau2, self.horizon),
        }
    }

    pub fn arc_trajectory(&self, arc: ArcKind) -> &CotangentTrajectory {
        match arc {
            ArcKind::Bang1 => &self.bang1,
            ArcKind::Bang2 => &self.bang2,
            ArcKind::Singular => &self.singular,
        }
    }

    /// `λ̂(t)` from the dense output of the owning arc.
    pub fn lambda(&self, t: f64) -> CotangentPoint {
        self.arc_trajectory(self.arc_at(t)).at(t)
    }

    /// `λ̂(t)` evaluated on a specific arc (useful exactly at switching times).
    pub fn lambda_on(&self, arc: ArcKind, t: f64) -> CotangentPoint {
        self.arc_trajectory(arc).at(t)
    }

    /// `υ̂(t) = u_S(λ̂(t))` on the singular arc.
    pub fn upsilon(&self, t: f64) -> f64 {
        let l = self.lambda_on(ArcKind::Singular, t.clamp(self.tau2, self.horizon));
        feedback(&self.calc, &l)
    }

    pub fn singular_samples(&self) -> impl Iterator<Item = &ExtremalSample> {
        self.samples.iter().filter(|s| s.arc == ArcKind::Singular)
    }

    /// The reference field restricted to one arc, for piecewise integration.
    pub fn arc_field(&self, arc: ArcKind) -> ArcField<'_> {
        ArcField { ext: self, arc }
    }

    /// Reference arcs in time order as `(arc, t_start, t_end)`.
    pub fn arcs(&self) -> [(ArcKind, f64, f64); 3] {
        [
            (ArcKind::Bang1, 0.0, self.tau1),
            (ArcKind::Bang2, self.tau1, self.tau2),
            (ArcKind::Singular, self.tau2, self.horizon),
        ]
    }
}

/// `f̂_t` on a single arc.
pub struct ArcField<'a> {
    ext: &'a BBSExtremal,
    arc: ArcKind,
}

impl TimeField for ArcField<'_> {
    fn dim(&self) -> usize {
        self.ext.dim()
    }

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let c = &self.ext.calc;
        match self.arc {
            ArcKind::Bang1 => c.h1.eval_into(x, out),
            ArcKind::Bang2 => c.h2.eval_into(x, out),
            ArcKind::Singular => {
                let u = self.ext.upsilon(t);
                c.h2.eval_into(x, out);
                let f = c.f1.eval(x);
                for (o, v) in out.iter_mut().zip(f.iter()) {
                    *o += u * v;
                }
            }
        }
    }

    fn jacobian(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let c = &self.ext.calc;
        match self.arc {
            ArcKind::Bang1 => c.h1.jacobian(x),
            ArcKind::Bang2 => c.h2.jacobian(x),
            ArcKind::Singular => c.h2.jacobian(x) + c.f1.jacobian(x) * self.ext.upsilon(t),
        }
    }
}

fn feedback(calc: &EdgeCalculus, l: &CotangentPoint) -> f64 {
    let x = l.x.as_slice();
    l.p.dot(&calc.h232.eval(x)) / l.p.dot(&calc.l.eval(x))
}

/// `ẋ = h2 + u f1`, `ṗ = −p(Dh2 + u Df1)` with `u = u_S(x, p)` frozen in the
/// differentiation.
pub(crate) fn singular_rhs(calc: &EdgeCalculus, y: &[f64], dy: &mut [f64]) {
    let n = y.len() / 2;
    let (x, p) = y.split_at(n);
    let mut num = 0.0;
    let mut den = 0.0;
    let h232 = calc.h232.eval(x);
    let lv = calc.l.eval(x);
    for i in 0..n {
        num += p[i] * h232[i];
        den += p[i] * lv[i];
    }
    let u = num / den;
    let h2 = calc.h2.eval(x);
    let f1 = calc.f1.eval(x);
    for i in 0..n {
        dy[i] = h2[i] + u * f1[i];
    }
    let a = calc.h2.jacobian(x) + calc.f1.jacobian(x) * u;
    for j in 0..n {
        let mut s = 0.0;
        for i in 0..n {
            s += p[i] * a[(i, j)];
        }
        dy[n + j] = -s;
    }
}

pub(crate) fn check_switching_order(tau1: f64, tau2: f64, horizon: f64) -> Result<()> {
    if 0.0 < tau1 && tau1 < tau2 && tau2 <= horizon && tau1.is_finite() && tau2.is_finite() {
        Ok(())
    } else {
        Err(Error::SwitchingOrder { tau1, tau2, horizon })
    }
}

/// Backward-integrated arcs without sampling; the shooting residual only needs these.
pub(crate) struct RawArcs {
    pub singular: CotangentTrajectory,
    pub bang2: CotangentTrajectory,
    pub bang1: CotangentTrajectory,
}

pub(crate) fn integrate_arcs(
    calc: &EdgeCalculus,
    l_t: &CotangentPoint,
    tau1: f64,
    tau2: f64,
    horizon: f64,
    tol: Tolerances,
    dense: bool,
) -> Result<RawArcs> {
    let opts = OdeOptions {
        keep_dense: dense,
        ..OdeOptions::with_tol(tol)
    };
    let y_t = l_t.packed();
    let n = l_t.dim();
    let l_fn = |_t: f64, y: &[f64]| {
        let lv = calc.l.eval(&y[..n]);
        y[n..].iter().zip(lv.iter()).map(|(a, b)| a * b).sum::<f64>()
    };
    let l_start = l_fn(horizon, &y_t);
    if l_start == 0.0 || !l_start.is_finite() {
        return Err(Error::SglcDegenerate { time: horizon });
    }
    let events: Vec<EventFn> = vec![Box::new(l_fn)];
    let (sing, hit) = integrate_with_events(
        |_t, y, dy| singular_rhs(calc, y, dy),
        horizon,
        &y_t,
        tau2,
        &opts,
        &events,
    )?;
    if let Some(h) = hit {
        return Err(Error::SglcDegenerate { time: h.t });
    }
    let h2 = &calc.h2;
    let bang2 = integrate(
        |t, y, dy| adjoint_rhs(h2, t, y, dy),
        tau2,
        sing.final_state(),
        tau1,
        &opts,
    )?;
    let h1 = &calc.h1;
    let bang1 = integrate(
        |t, y, dy| adjoint_rhs(h1, t, y, dy),
        tau1,
        bang2.final_state(),
        0.0,
        &opts,
    )?;
    Ok(RawArcs {
        singular: CotangentTrajectory::from_solution(sing),
        bang2: CotangentTrajectory::from_solution(bang2),
        bang1: CotangentTrajectory::from_solution(bang1),
    })
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n <= 1 || a == b {
        return vec![a];
    }
    (0..n)
        .map(|i| {
            if i == n - 1 {
                b
            } else {
                a + (b - a) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Integrates the extremal backward from `ℓ_T` through the singular arc,
/// the `h2` arc and the `h1` arc, and samples it.
pub fn integrate_reference(
    prob: &ControlAffineProblem,
    l_t: &CotangentPoint,
    tau1: f64,
    tau2: f64,
    opts: &ReferenceOptions,
) -> Result<BBSExtremal> {
    check_dim("terminal cotangent point", prob.dim(), l_t.dim())?;
    check_switching_order(tau1, tau2, prob.horizon)?;
    let calc = prob.edge_calculus()?;
    let arcs = integrate_arcs(&calc, l_t, tau1, tau2, prob.horizon, opts.tol, true)?;

    let mut ext = BBSExtremal {
        tau1,
        tau2,
        horizon: prob.horizon,
        l0: arcs.bang1.end(),
        l1: arcs.bang2.end(),
        l2: arcs.singular.end(),
        l_t: l_t.clone(),
        samples: Vec::new(),
        diagnostics: Vec::new(),
        calc,
        bang1: arcs.bang1,
        bang2: arcs.bang2,
        singular: arcs.singular,
        tol: opts.tol,
    };

    let per = opts.samples_per_arc.max(2);
    let mut samples = Vec::with_capacity(3 * per);
    let mut saturated: Option<(f64, f64)> = None;
    for (arc, a, b) in ext.arcs() {
        let mut ts = linspace(a, b, per);
        if arc != ArcKind::Singular && ts.len() > 1 {
            ts.pop();
        }
        if arc != ArcKind::Singular && a == b {
            continue;
        }
        for t in ts {
            let l = ext.lambda_on(arc, t);
            let upsilon = (arc == ArcKind::Singular).then(|| feedback(&ext.calc, &l));
            if let Some(u) = upsilon {
                let out = u < opts.control_margin || u > 1.0 - opts.control_margin;
                if out && saturated.is_none() {
                    saturated = Some((t, u));
                }
            }
            samples.push(ExtremalSample {
                t,
                arc,
                x: l.x,
                p: l.p,
                upsilon,
            });
        }
    }
    if let Some((t, u)) = saturated {
        ext.diagnostics.push(format!(
            "control saturation: u_S = {u:.6e} at t = {t:.6} leaves [{m}, 1 - {m}]",
            m = opts.control_margin
        ));
    }
    ext.samples = samples;
    Ok(ext)
}
