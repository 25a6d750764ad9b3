use nalgebra::DVector;
use serde::Serialize;

use crate::cotangent::{adjoint_rhs, CotangentPoint};
use crate::error::{Error, Result};
use crate::extremal::{ArcKind, BBSExtremal};
use crate::fieldalg::integrate::{integrate, integrate_with_events, EventFn};
use crate::fieldalg::{OdeOptions, SmoothField, Solution, Tolerances};
use crate::secondvar::ModifiedCost;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OvermaxOptions {
    pub tol: Tolerances,
    /// Relative residual accepted by the θ Newton iteration.
    pub newton_tol: f64,
    /// Base step of the finite-difference symplectic gradient of `H̃2`.
    pub fd_step: f64,
}

impl Default for OvermaxOptions {
    fn default() -> Self {
        Self {
            tol: Tolerances::new(1e-11, 1e-13),
            newton_tol: 1e-14,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    /// `H̃2 + υ̂(t) F1` on `[τ̂2, T]`.
    Singular,
    /// `H̃2` on `[τ2(ℓ̃), τ̂2]` when `H23(ℓ̃) < 0`.
    Correction,
    Bang2,
    Bang1,
}

/// θ-solve, `H̃2` and the branch flow around a reference extremal.
pub struct OvermaxMachinery<'a> {
    pub ext: &'a BBSExtremal,
    pub mc: &'a ModifiedCost,
    pub opts: OvermaxOptions,
    f1_const: Option<DVector<f64>>,
}

/// One backward run of the overmaximized flow from a point at `T`.
#[derive(Debug, Clone)]
pub struct OvermaxTrajectory {
    pub tau2: f64,
    pub tau1: f64,
    /// `H23(ℓ̃)` with `ℓ̃ = 𝓗_{τ̂2}(ℓ)`.
    pub h23_at_tau2: f64,
    tau2_hat: f64,
    singular: Solution,
    correction: Option<Solution>,
    bang2: Solution,
    bang1: Solution,
}

impl OvermaxTrajectory {
    pub fn branch_at(&self, t: f64) -> Branch {
        if t >= self.tau2_hat {
            Branch::Singular
        } else if t >= self.tau2 {
            Branch::Correction
        } else if t >= self.tau1 {
            Branch::Bang2
        } else {
            Branch::Bang1
        }
    }

    /// `𝓗_t(ℓ)` and its branch.
    pub fn at(&self, t: f64) -> (CotangentPoint, Branch) {
        let b = self.branch_at(t);
        let sol = match b {
            Branch::Singular => &self.singular,
            Branch::Correction => self.correction.as_ref().expect("correction branch present"),
            Branch::Bang2 => &self.bang2,
            Branch::Bang1 => &self.bang1,
        };
        (CotangentPoint::from_packed(&sol.eval(t)), b)
    }
}

fn solver_err(what: &'static str, detail: String) -> Error {
    Error::Solver { what, detail }
}

impl<'a> OvermaxMachinery<'a> {
    pub fn new(ext: &'a BBSExtremal, mc: &'a ModifiedCost, opts: OvermaxOptions) -> Result<Self> {
        opts.tol.validate()?;
        let f1 = &ext.calculus().f1;
        let f1_const = f1
            .components()
            .filter(|c| c.iter().all(|p| p.degree() == 0))
            .map(|_| f1.eval(&vec![0.0; f1.dim()]));
        Ok(Self {
            ext,
            mc,
            opts,
            f1_const,
        })
    }

    fn f1(&self) -> &SmoothField {
        &self.ext.calculus().f1
    }

    /// `exp(θ F⃗1)(ℓ)`: `ẋ = f1(x)`, `ṗ = −p·Df1(x)` for time `θ`.
    pub fn exp_f1(&self, l: &CotangentPoint, theta: f64) -> Result<CotangentPoint> {
        if theta == 0.0 {
            return Ok(l.clone());
        }
        if let Some(v) = &self.f1_const {
            return Ok(CotangentPoint {
                x: &l.x + v * theta,
                p: l.p.clone(),
            });
        }
        let f1 = self.f1();
        let sol = integrate(
            |t, y, dy| adjoint_rhs(f1, t, y, dy),
            0.0,
            &l.packed(),
            theta,
            &OdeOptions {
                keep_dense: false,
                ..OdeOptions::with_tol(self.opts.tol.scaled(1e-2))
            },
        )?;
        Ok(CotangentPoint::from_packed(sol.final_state()))
    }

    /// θ with `H23(exp(θ F⃗1)(ℓ)) = 0`, by Newton with derivative `L`.
    pub fn solve_theta(&self, l: &CotangentPoint) -> Result<f64> {
        let calc = self.ext.calculus();
        let scale = 1.0 + l.p.norm() * (1.0 + calc.h23.eval(l.x.as_slice()).norm());
        if calc.h23_value(l) == 0.0 {
            return Ok(0.0);
        }
        let mut theta = 0.0;
        for _ in 0..40 {
            let lt = self.exp_f1(l, theta)?;
            let h = calc.h23_value(&lt);
            if h.abs() <= self.opts.newton_tol * scale {
                return Ok(theta);
            }
            let d = calc.l_value(&lt);
            if !(d.abs() > 0.0) {
                break;
            }
            let step = h / d;
            theta -= step;
            if step.abs() <= 1e-15 * (1.0 + theta.abs()) {
                return Ok(theta);
            }
        }
        Err(solver_err(
            "theta",
            format!("Newton did not converge; point outside the singular neighbourhood (|x| = {:.3e})", l.x.norm()),
        ))
    }

    /// `H̃2(ℓ) = H2(exp(θ(ℓ) F⃗1)(ℓ))`.
    pub fn h2_tilde(&self, l: &CotangentPoint) -> Result<f64> {
        let theta = self.solve_theta(l)?;
        let lt = self.exp_f1(l, theta)?;
        Ok(lt.p.dot(&self.ext.calculus().h2.eval(lt.x.as_slice())))
    }

    /// Hamiltonian vector field of `H̃2` by central differences with one
    /// Richardson extrapolation; packed as `(ẋ, ṗ)`.
    pub fn h2_tilde_field(&self, y: &[f64]) -> Result<Vec<f64>> {
        let n = y.len() / 2;
        let mut grad = vec![0.0; 2 * n];
        let mut z = y.to_vec();
        let eval = |z: &[f64]| self.h2_tilde(&CotangentPoint::from_packed(z));
        for i in 0..2 * n {
            let h = self.opts.fd_step * (1.0 + y[i].abs());
            let mut d = [0.0; 2];
            for (k, hk) in [h, 0.5 * h].into_iter().enumerate() {
                z[i] = y[i] + hk;
                let fp = eval(&z)?;
                z[i] = y[i] - hk;
                let fm = eval(&z)?;
                z[i] = y[i];
                d[k] = (fp - fm) / (2.0 * hk);
            }
            grad[i] = (4.0 * d[1] - d[0]) / 3.0;
        }
        let mut out = vec![0.0; 2 * n];
        for i in 0..n {
            out[i] = grad[n + i];
            out[n + i] = -grad[i];
        }
        Ok(out)
    }

    fn f1_field_into(&self, y: &[f64], out: &mut [f64]) {
        adjoint_rhs(self.f1(), 0.0, y, out);
    }

    fn ode_opts(&self, dense: bool) -> OdeOptions {
        OdeOptions {
            keep_dense: dense,
            ..OdeOptions::with_tol(self.opts.tol)
        }
    }

    /// Integrates a fallible right-hand side, surfacing the first failure.
    fn integrate_fallible<F>(
        &self,
        rhs: F,
        t0: f64,
        y0: &[f64],
        t1: f64,
        events: &[EventFn<'_>],
        context: &'static str,
    ) -> Result<(Solution, Option<crate::fieldalg::integrate::EventHit>)>
    where
        F: Fn(f64, &[f64]) -> Result<Vec<f64>>,
    {
        let failure = std::cell::RefCell::new(None::<Error>);
        let res = integrate_with_events(
            |t, y, dy| match rhs(t, y) {
                Ok(v) => dy.copy_from_slice(&v),
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    dy.iter_mut().for_each(|d| *d = f64::NAN);
                }
            },
            t0,
            y0,
            t1,
            &self.ode_opts(true),
            events,
        );
        // a failed trial step is retried with a smaller one; report the
        // solver failure only if the integration as a whole gave up
        if res.is_ok() {
            return res;
        }
        if let Some(e) = failure.into_inner() {
            return Err(match e {
                Error::Solver { detail, .. } => solver_err(context, detail),
                other => other,
            });
        }
        res.map_err(|e| match e {
            Error::Integration { time, reason } => Error::Integration {
                time,
                reason: format!("{context}: {reason}"),
            },
            other => other,
        })
    }

    /// `H⃗_t = H⃗̃2 + υ̂(t) F⃗1`.
    pub fn singular_field(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let mut v = self.h2_tilde_field(y)?;
        let mut f = vec![0.0; y.len()];
        self.f1_field_into(y, &mut f);
        let u = self.ext.upsilon(t);
        for (a, b) in v.iter_mut().zip(f) {
            *a += u * b;
        }
        Ok(v)
    }

    /// Runs the flow backward from `ℓ` at time `T` down to 0 through every branch.
    pub fn trajectory(&self, l: &CotangentPoint) -> Result<OvermaxTrajectory> {
        let ext = self.ext;
        let calc = ext.calculus();
        let (tau1_hat, tau2_hat, t_end) = (ext.tau1, ext.tau2, ext.horizon);
        let (singular, _) = self.integrate_fallible(
            |t, y| self.singular_field(t, y),
            t_end,
            &l.packed(),
            tau2_hat,
            &[],
            "overmax singular branch",
        )?;
        let l_tilde = CotangentPoint::from_packed(singular.final_state());
        let h23 = calc.h23_value(&l_tilde);
        let window = 0.5 * (tau2_hat - tau1_hat);

        let (tau2, correction, l2) = if h23 >= 0.0 {
            (tau2_hat, None, l_tilde)
        } else {
            let ev: Vec<EventFn<'_>> =
                vec![Box::new(|_t, y: &[f64]| calc.h23_value(&CotangentPoint::from_packed(y)))];
            let (sol, hit) = self.integrate_fallible(
                |_t, y| self.h2_tilde_field(y),
                tau2_hat,
                &l_tilde.packed(),
                tau2_hat - window,
                &ev,
                "overmax correction branch",
            )?;
            let hit = hit.ok_or_else(|| {
                solver_err("t2", format!("H23 has no zero on [{:.6}, {tau2_hat:.6}]", tau2_hat - window))
            })?;
            (hit.t, Some(sol), CotangentPoint::from_packed(&hit.y))
        };

        // bang-2 without events down to the middle, then look for H2 = H1
        let mid = (0.5 * (tau1_hat + tau2_hat)).min(tau2);
        let h2 = &calc.h2;
        let pre = integrate(|t, y, dy| adjoint_rhs(h2, t, y, dy), tau2, &l2.packed(), mid, &self.ode_opts(true))?;
        let switch: Vec<EventFn<'_>> = vec![Box::new(|_t, y: &[f64]| {
            let l = CotangentPoint::from_packed(y);
            l.p.dot(&(calc.h2.eval(l.x.as_slice()) - calc.h1.eval(l.x.as_slice())))
        })];
        let (post, hit) = integrate_with_events(
            |t, y, dy| adjoint_rhs(h2, t, y, dy),
            mid,
            pre.final_state(),
            0.0,
            &self.ode_opts(true),
            &switch,
        )?;
        let hit = hit.ok_or_else(|| solver_err("tau1", "H2 − H1 has no zero on the bang-2 branch".into()))?;
        let bang2 = Solution::concat(pre, post);
        let h1 = &calc.h1;
        let bang1 = integrate(|t, y, dy| adjoint_rhs(h1, t, y, dy), hit.t, &hit.y, 0.0, &self.ode_opts(true))?;
        Ok(OvermaxTrajectory {
            tau2,
            tau1: hit.t,
            h23_at_tau2: h23,
            tau2_hat,
            singular,
            correction,
            bang2,
            bang1,
        })
    }

    /// The two one-sided continuations at `τ̂1`: the bang-2 flow carried to
    /// `τ̂1` without switching, and the bang-1 flow from `τ1(ℓ̃)` to `τ̂1`.
    pub fn one_sided_at_tau1(&self, traj: &OvermaxTrajectory) -> Result<(CotangentPoint, CotangentPoint)> {
        let calc = self.ext.calculus();
        let tau1_hat = self.ext.tau1;
        let at_tau2 = if traj.tau2 < traj.tau2_hat {
            CotangentPoint::from_packed(traj.correction.as_ref().expect("correction").final_state())
        } else {
            CotangentPoint::from_packed(traj.singular.final_state())
        };
        let h2 = &calc.h2;
        let via2 = integrate(
            |t, y, dy| adjoint_rhs(h2, t, y, dy),
            traj.tau2,
            &at_tau2.packed(),
            tau1_hat,
            &self.ode_opts(false),
        )?;
        let (l1, _) = traj.at(traj.tau1);
        let h1 = &calc.h1;
        let via1 = if traj.tau1 == tau1_hat {
            l1.packed()
        } else {
            integrate(|t, y, dy| adjoint_rhs(h1, t, y, dy), traj.tau1, &l1.packed(), tau1_hat, &self.ode_opts(false))?
                .final_state()
                .to_vec()
        };
        Ok((
            CotangentPoint::from_packed(via2.final_state()),
            CotangentPoint::from_packed(&via1),
        ))
    }

    /// `ℓ = (x, −∇c̃(x))`, a point of the Lagrangian manifold `Λ`.
    pub fn lambda_point(&self, x: &DVector<f64>) -> Result<CotangentPoint> {
        Ok(CotangentPoint {
            x: x.clone(),
            p: -self.mc.gradient(x.as_slice())?,
        })
    }

    /// Reference lifted flow `F̂` from `t` forward to `T`.
    pub fn reference_to_final(&self, l: &CotangentPoint, t: f64) -> Result<CotangentPoint> {
        let ext = self.ext;
        let mut y = l.packed();
        for (arc, a, b) in ext.arcs() {
            if b <= t {
                continue;
            }
            let start = a.max(t);
            if start >= b {
                continue;
            }
            let f = ext.arc_field(arc);
            let sol = integrate(|s, y, dy| adjoint_rhs(&f, s, y, dy), start, &y, b, &self.ode_opts(false))?;
            y = sol.final_state().to_vec();
        }
        Ok(CotangentPoint::from_packed(&y))
    }

    pub fn reference_arc(&self, t: f64) -> ArcKind {
        self.ext.arc_at(t)
    }
}
