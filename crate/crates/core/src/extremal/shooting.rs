use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::problem::ControlAffineProblem;
use super::reference::{check_switching_order, integrate_arcs, integrate_reference, BBSExtremal, ReferenceOptions};
use crate::cotangent::{CotangentPoint, EdgeCalculus};
use crate::error::{check_dim, Error, Result};
use super::reference::singular_rhs;
use crate::fieldalg::integrate::{integrate, integrate_with_events, EventFn, OdeOptions};
use crate::fieldalg::{fd_step, flow, flow_trajectory, FlowSegment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootingGuess {
    pub x_final: Vec<f64>,
    pub tau1: f64,
    pub tau2: f64,
}

#[derive(Debug, Clone)]
pub struct ShootingOptions {
    pub reference: ReferenceOptions,
    pub max_iterations: usize,
    /// Convergence threshold on the weighted residual norm.
    pub residual_tol: f64,
    /// Singular values below `rcond · σ_max` are dropped from the step.
    pub rcond: f64,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self {
            reference: ReferenceOptions::default(),
            max_iterations: 60,
            residual_tol: 1e-9,
            rcond: 1e-10,
        }
    }
}

/// Weighted residual split by source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootingResiduals {
    /// `(x(0) − x0) / max(1, |x0|)`
    pub initial_state: Vec<f64>,
    /// `F1(ℓ_T) / max(1, |ℓ_T|)`
    pub f1_terminal: f64,
    /// `H23(ℓ_T) / max(1, |ℓ_T|)`
    pub h23_terminal: f64,
    /// `(H1 − H2)(λ(τ1)) / max(1, |ℓ_T|)`
    pub bang_switch: f64,
}

impl ShootingResiduals {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.initial_state.clone();
        v.extend([self.f1_terminal, self.h23_terminal, self.bang_switch]);
        v
    }

    pub fn norm(&self) -> f64 {
        self.to_vec().iter().map(|r| r * r).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct ShootingResult {
    pub extremal: BBSExtremal,
    pub iterations: usize,
    pub residuals: ShootingResiduals,
    /// Numerical rank of the last Jacobian used (or that would have been used).
    pub jacobian_rank: usize,
    /// Set when the backward solve from the guess failed and the matching
    /// formulation was used to reach its basin.
    pub globalized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Formulation {
    Backward,
    Matching,
}

struct Shooter<'a> {
    prob: &'a ControlAffineProblem,
    calc: EdgeCalculus,
    opts: &'a ShootingOptions,
}

impl Shooter<'_> {
    fn terminal_point(&self, z: &[f64]) -> CotangentPoint {
        let n = self.prob.dim();
        let x = DVector::from_column_slice(&z[..n]);
        let p = -self.prob.cost.gradient(&z[..n]);
        CotangentPoint { x, p }
    }

    /// Residuals at `z = (x_T, τ1, τ2)`, weighting with the bracket scale `scale`.
    fn residuals(&self, z: &[f64], scale: Option<f64>, form: Formulation) -> Result<ShootingResiduals> {
        if form == Formulation::Matching {
            return self.matching_residuals(z, scale);
        }
        let n = self.prob.dim();
        let (tau1, tau2) = (z[n], z[n + 1]);
        check_switching_order(tau1, tau2, self.prob.horizon)?;
        if tau2 >= self.prob.horizon {
            return Err(Error::SwitchingOrder {
                tau1,
                tau2,
                horizon: self.prob.horizon,
            });
        }
        let l_t = self.terminal_point(z);
        let arcs = integrate_arcs(
            &self.calc,
            &l_t,
            tau1,
            tau2,
            self.prob.horizon,
            self.opts.reference.tol,
            false,
        )?;
        let x0w = self.prob.x0.norm().max(1.0);
        let lw = scale.unwrap_or_else(|| l_t.norm().max(1.0));
        let l0 = arcs.bang1.end();
        let l1 = arcs.bang2.end();
        let x1 = l1.x.as_slice();
        let switch = l1.p.dot(&(self.calc.h1.eval(x1) - self.calc.h2.eval(x1)));
        Ok(ShootingResiduals {
            initial_state: (0..n).map(|i| (l0.x[i] - self.prob.x0[i]) / x0w).collect(),
            f1_terminal: self.calc.f1_value(&l_t) / lw,
            h23_terminal: self.calc.h23_value(&l_t) / lw,
            bang_switch: switch / lw,
        })
    }

    fn matching_residuals(&self, z: &[f64], scale: Option<f64>) -> Result<ShootingResiduals> {
        let n = self.prob.dim();
        let (tau1, tau2) = (z[n], z[n + 1]);
        if !(0.0 < tau1 && tau1 < tau2 && tau2 < self.prob.horizon) {
            return Err(Error::SwitchingOrder {
                tau1,
                tau2,
                horizon: self.prob.horizon,
            });
        }
        let tol = self.opts.reference.tol;
        let l_t = self.terminal_point(z);
        let events: Vec<EventFn> = vec![Box::new(|_t, y: &[f64]| {
            y[n..].iter().zip(self.calc.l.eval(&y[..n]).iter()).map(|(a, b)| a * b).sum::<f64>()
        })];
        let opts_plain = OdeOptions {
            keep_dense: false,
            ..OdeOptions::with_tol(tol)
        };
        let (sing, hit) = integrate_with_events(
            |_t, y, dy| singular_rhs(&self.calc, y, dy),
            self.prob.horizon,
            &l_t.packed(),
            tau2,
            &opts_plain,
            &events,
        )?;
        if let Some(h) = hit {
            return Err(Error::SglcDegenerate { time: h.t });
        }
        let l2 = CotangentPoint::from_packed(sing.final_state());
        let x1 = flow(&FlowSegment::new(&self.calc.h1, 0.0, tau1).with_tol(tol), self.prob.x0.as_slice())?;
        let fwd = flow_trajectory(&FlowSegment::new(&self.calc.h2, tau1, tau2).with_tol(tol), x1.as_slice(), true)?;
        let h2 = &self.calc.h2;
        let p1 = integrate(
            |t, p, dp| {
                let a = h2.jacobian(&fwd.eval(t));
                for j in 0..n {
                    dp[j] = -(0..n).map(|i| p[i] * a[(i, j)]).sum::<f64>();
                }
            },
            tau2,
            l2.p.as_slice(),
            tau1,
            &opts_plain,
        )?;
        let p1 = DVector::from_column_slice(p1.final_state());
        let xs = x1.as_slice();
        let switch = p1.dot(&(self.calc.h1.eval(xs) - self.calc.h2.eval(xs)));
        let x0w = self.prob.x0.norm().max(1.0);
        let lw = scale.unwrap_or_else(|| l_t.norm().max(1.0));
        let x2f = fwd.final_state();
        Ok(ShootingResiduals {
            initial_state: (0..n).map(|i| (x2f[i] - l2.x[i]) / x0w).collect(),
            f1_terminal: self.calc.f1_value(&l_t) / lw,
            h23_terminal: self.calc.h23_value(&l_t) / lw,
            bang_switch: switch / lw,
        })
    }

    fn jacobian(&self, z: &[f64], scale: f64, form: Formulation) -> Result<DMatrix<f64>> {
        let m = z.len() + 1;
        let mut jac = DMatrix::zeros(m, z.len());
        let mut zp = z.to_vec();
        for j in 0..z.len() {
            let h = fd_step(z[j]);
            zp[j] = z[j] + h;
            let rp = DVector::from_vec(self.residuals(&zp, Some(scale), form)?.to_vec());
            zp[j] = z[j] - h;
            let rm = DVector::from_vec(self.residuals(&zp, Some(scale), form)?.to_vec());
            zp[j] = z[j];
            jac.set_column(j, &((rp - rm) / (2.0 * h)));
        }
        Ok(jac)
    }
}

/// Least-squares step `−J⁺ r` with singular values below `rcond·σ_max` truncated.
fn truncated_step(jac: &DMatrix<f64>, r: &DVector<f64>, rcond: f64) -> (DVector<f64>, usize) {
    let svd = jac.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.max();
    let mut step = DVector::zeros(jac.ncols());
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > rcond * smax && s > 0.0 {
            rank += 1;
            let coef = u.column(k).dot(r) / s;
            step -= vt.row(k).transpose() * coef;
        }
    }
    (step, rank)
}

/// Solves the junction conditions for a bang-bang-singular extremal with the
/// structure declared by the problem's edge.
///
/// Residuals integrate all three arcs backward from `ℓ_T`. Backward bang arcs
/// can blow up from a poor guess, so when that solve fails it is first
/// replaced by a matching formulation with the same unknowns: bang arcs flow
/// forward from `x0`, the singular arc flows backward from `ℓ_T`, the states
/// must agree at `τ2`, and the switching function is evaluated with the
/// covector carried back along the forward `h2` arc. Its solution then seeds
/// the backward solve.
pub fn shoot_bbs(
    prob: &ControlAffineProblem,
    guess: &ShootingGuess,
    opts: &ShootingOptions,
) -> Result<ShootingResult> {
    let n = prob.dim();
    check_dim("shooting guess", n, guess.x_final.len())?;
    check_switching_order(guess.tau1, guess.tau2, prob.horizon)?;
    if guess.tau2 >= prob.horizon {
        return Err(Error::SwitchingOrder {
            tau1: guess.tau1,
            tau2: guess.tau2,
            horizon: prob.horizon,
        });
    }
    let mut z: Vec<f64> = guess.x_final.clone();
    z.extend([guess.tau1, guess.tau2]);
    let shooter = Shooter {
        prob,
        calc: prob.edge_calculus()?,
        opts,
    };
    match newton(&shooter, z.clone(), Formulation::Backward) {
        Ok((z, iterations, rank)) => finish(&shooter, z, iterations, rank, false),
        Err(
            first @ (Error::Integration { .. }
            | Error::ShootingDiverged { .. }
            | Error::SglcDegenerate { .. }
            | Error::SwitchingOrder { .. }),
        ) => {
            let (zm, it_m, _) = newton(&shooter, z, Formulation::Matching).map_err(|_| first.clone())?;
            let (z, it_b, rank) =
                newton(&shooter, zm, Formulation::Backward).map_err(|_| first)?;
            finish(&shooter, z, it_m + it_b, rank, true)
        }
        Err(e) => Err(e),
    }
}

fn finish(
    shooter: &Shooter<'_>,
    z: Vec<f64>,
    iterations: usize,
    jacobian_rank: usize,
    globalized: bool,
) -> Result<ShootingResult> {
    let prob = shooter.prob;
    let n = prob.dim();
    let residuals = shooter.residuals(&z, None, Formulation::Backward)?;
    let l_t = shooter.terminal_point(&z);
    let extremal = integrate_reference(prob, &l_t, z[n], z[n + 1], &shooter.opts.reference)?;
    Ok(ShootingResult {
        extremal,
        iterations,
        residuals,
        jacobian_rank,
        globalized,
    })
}

fn newton(shooter: &Shooter<'_>, mut z: Vec<f64>, form: Formulation) -> Result<(Vec<f64>, usize, usize)> {
    let opts = shooter.opts;
    let n = shooter.prob.dim();
    let mut norm = shooter.residuals(&z, None, form)?.norm();
    let mut iterations = 0;
    let mut rank = n + 2;
    while norm > opts.residual_tol {
        if iterations >= opts.max_iterations {
            return Err(Error::ShootingDiverged {
                iterations,
                residual: norm,
            });
        }
        iterations += 1;
        let scale = shooter.terminal_point(&z).norm().max(1.0);
        let r = DVector::from_vec(shooter.residuals(&z, Some(scale), form)?.to_vec());
        let jac = shooter.jacobian(&z, scale, form)?;
        let (step, rk) = truncated_step(&jac, &r, opts.rcond);
        rank = rk;

        // backtracking on the residual norm; failed integrations count as rejections
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, b)| a + lambda * b).collect();
            match shooter.residuals(&trial, None, form) {
                Ok(rt) if rt.norm() < norm => {
                    z = trial;
                    norm = rt.norm();
                    accepted = true;
                    break;
                }
                _ => lambda *= 0.5,
            }
        }
        if !accepted {
            return Err(Error::ShootingDiverged {
                iterations,
                residual: norm,
            });
        }
    }
    Ok((z, iterations, rank))
}
