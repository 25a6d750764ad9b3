//! Dormand-Prince 5(4) with continuous output and terminal events.
//!
//! Works in either time direction. All copies of a state that share one call
//! share the same step sequence, which is what the finite-difference bundles in
//! `secondvar` rely on.

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
        }
    }
}

impl Tolerances {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Self { rtol, atol }
    }

    /// Both tolerances scaled by the same factor.
    pub fn scaled(self, factor: f64) -> Self {
        Self {
            rtol: self.rtol * factor,
            atol: self.atol * factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rtol > 0.0 && self.atol > 0.0 && self.rtol.is_finite() && self.atol.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "integrator tolerances must be positive (rtol {}, atol {})",
                self.rtol, self.atol
            )))
        }
    }
}

#[derive(Debug, Clone)]
pub struct OdeOptions {
    pub tol: Tolerances,
    pub max_steps: usize,
    pub h_max: f64,
    pub keep_dense: bool,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            tol: Tolerances::default(),
            max_steps: 2_000_000,
            h_max: f64::INFINITY,
            keep_dense: true,
        }
    }
}

impl OdeOptions {
    pub fn with_tol(tol: Tolerances) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

/// One accepted step, enough to evaluate the continuous extension.
#[derive(Debug, Clone)]
struct DenseStep {
    t0: f64,
    h: f64,
    // r1..r5 stacked, each of length n
    r: Vec<f64>,
}

impl DenseStep {
    fn eval_into(&self, t: f64, out: &mut [f64]) {
        let n = out.len();
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let r = &self.r;
        for i in 0..n {
            out[i] = r[i]
                + th * (r[n + i]
                    + th1 * (r[2 * n + i] + th * (r[3 * n + i] + th1 * r[4 * n + i])));
        }
    }
}

/// Result of an integration: accepted step nodes plus optional dense output.
#[derive(Debug, Clone)]
pub struct Solution {
    dim: usize,
    ts: Vec<f64>,
    ys: Vec<Vec<f64>>,
    dense: Vec<DenseStep>,
}

impl Solution {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t_start(&self) -> f64 {
        self.ts[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.ts.last().unwrap()
    }

    pub fn final_state(&self) -> &[f64] {
        self.ys.last().unwrap()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.ts
    }

    pub fn node_states(&self) -> &[Vec<f64>] {
        &self.ys
    }

    /// Joins `b`, which must start where `a` ends and run in the same direction.
    pub fn concat(a: Solution, b: Solution) -> Solution {
        if a.ts.len() == 1 {
            return b;
        }
        if b.ts.len() == 1 {
            return a;
        }
        debug_assert_eq!(a.t_end(), b.t_start());
        let mut out = a;
        out.ts.extend_from_slice(&b.ts[1..]);
        out.ys.extend(b.ys.into_iter().skip(1));
        out.dense.extend(b.dense);
        out
    }

    pub fn num_steps(&self) -> usize {
        self.ts.len() - 1
    }

    pub fn has_dense(&self) -> bool {
        self.ts.len() == 1 || !self.dense.is_empty()
    }

    /// Continuous extension at `t`; times slightly outside the covered
    /// interval are clamped.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        assert!(self.has_dense(), "solution was computed without dense output");
        if self.ts.len() == 1 {
            out.copy_from_slice(&self.ys[0]);
            return;
        }
        let forward = self.t_end() >= self.t_start();
        // steps are ordered along the integration direction
        let idx = if forward {
            self.ts.partition_point(|&s| s <= t)
        } else {
            self.ts.partition_point(|&s| s >= t)
        };
        let k = idx.saturating_sub(1).min(self.dense.len() - 1);
        let lo = self.t_start().min(self.t_end());
        let hi = self.t_start().max(self.t_end());
        self.dense[k].eval_into(t.clamp(lo, hi), out);
    }
}

/// Terminal event hit: the first sign change of event function `index`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventHit {
    pub index: usize,
    pub t: f64,
    pub y: Vec<f64>,
}

pub type EventFn<'a> = Box<dyn Fn(f64, &[f64]) -> f64 + 'a>;

pub fn integrate<F>(rhs: F, t0: f64, y0: &[f64], t1: f64, opts: &OdeOptions) -> Result<Solution>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    integrate_with_events(rhs, t0, y0, t1, opts, &[]).map(|(s, _)| s)
}

/// Integrates until `t1` or the first zero crossing of any event function,
/// whichever comes first. Event times are refined on the continuous extension.
pub fn integrate_with_events<F>(
    mut rhs: F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    opts: &OdeOptions,
    events: &[EventFn<'_>],
) -> Result<(Solution, Option<EventHit>)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    opts.tol.validate()?;
    let n = y0.len();
    let mut sol = Solution {
        dim: n,
        ts: vec![t0],
        ys: vec![y0.to_vec()],
        dense: Vec::new(),
    };
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integration {
            time: t0,
            reason: "non-finite initial state".into(),
        });
    }
    if t1 == t0 {
        return Ok((sol, None));
    }
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let Tolerances { rtol, atol } = opts.tol;

    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut ytmp = vec![0.0; n];
    let mut y = y0.to_vec();
    let mut ynew = vec![0.0; n];
    let mut t = t0;

    rhs(t, &y, &mut k[0]);
    check_finite(&k[0], t, "right-hand side")?;

    let mut h = initial_step(&mut rhs, t, &y, &k[0], dir, rtol, atol, span).min(opts.h_max);
    let mut ev_prev: Vec<f64> = events.iter().map(|e| e(t, &y)).collect();
    let mut steps = 0usize;
    let mut rejected_last = false;

    loop {
        if steps >= opts.max_steps {
            return Err(Error::Integration {
                time: t,
                reason: format!("step limit {} exceeded", opts.max_steps),
            });
        }
        let remaining = (t1 - t).abs();
        let mut last = false;
        if h >= remaining {
            h = remaining;
            last = true;
        }
        let hs = dir * h;
        if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
            return Err(Error::Integration {
                time: t,
                reason: "step size underflow".into(),
            });
        }

        // stages
        for i in 0..n {
            ytmp[i] = y[i] + hs * A21 * k[0][i];
        }
        rhs(t + C2 * hs, &ytmp, &mut k[1]);
        for i in 0..n {
            ytmp[i] = y[i] + hs * (A31 * k[0][i] + A32 * k[1][i]);
        }
        rhs(t + C3 * hs, &ytmp, &mut k[2]);
        for i in 0..n {
            ytmp[i] = y[i] + hs * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
        }
        rhs(t + C4 * hs, &ytmp, &mut k[3]);
        for i in 0..n {
            ytmp[i] =
                y[i] + hs * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
        }
        rhs(t + C5 * hs, &ytmp, &mut k[4]);
        for i in 0..n {
            ytmp[i] = y[i]
                + hs * (A61 * k[0][i]
                    + A62 * k[1][i]
                    + A63 * k[2][i]
                    + A64 * k[3][i]
                    + A65 * k[4][i]);
        }
        let tnew = if last { t1 } else { t + hs };
        rhs(tnew, &ytmp, &mut k[5]);
        for i in 0..n {
            ynew[i] = y[i]
                + hs * (A71 * k[0][i]
                    + A73 * k[2][i]
                    + A74 * k[3][i]
                    + A75 * k[4][i]
                    + A76 * k[5][i]);
        }
        rhs(tnew, &ynew, &mut k[6]);
        steps += 1;

        let mut err = 0.0;
        let mut finite = true;
        for i in 0..n {
            let e = hs
                * (E1 * k[0][i]
                    + E3 * k[2][i]
                    + E4 * k[3][i]
                    + E5 * k[4][i]
                    + E6 * k[5][i]
                    + E7 * k[6][i]);
            let sc = atol + rtol * y[i].abs().max(ynew[i].abs());
            let r = e / sc;
            err += r * r;
            finite &= ynew[i].is_finite() && k[6][i].is_finite();
        }
        err = if n > 0 { (err / n as f64).sqrt() } else { 0.0 };
        if !finite || !err.is_finite() {
            // shrink hard and retry; persistent blow-up ends in underflow
            h *= 0.1;
            rejected_last = true;
            continue;
        }

        if err > 1.0 {
            let fac = (0.9 * err.powf(-0.2)).max(0.2);
            h *= fac;
            rejected_last = true;
            continue;
        }

        // accepted
        let mut r = Vec::new();
        if opts.keep_dense || !events.is_empty() {
            r = vec![0.0; 5 * n];
            for i in 0..n {
                let ydiff = ynew[i] - y[i];
                let bspl = hs * k[0][i] - ydiff;
                r[i] = y[i];
                r[n + i] = ydiff;
                r[2 * n + i] = bspl;
                r[3 * n + i] = ydiff - hs * k[6][i] - bspl;
                r[4 * n + i] = hs
                    * (D1 * k[0][i]
                        + D3 * k[2][i]
                        + D4 * k[3][i]
                        + D5 * k[4][i]
                        + D6 * k[5][i]
                        + D7 * k[6][i]);
            }
        }
        let step = DenseStep { t0: t, h: hs, r };

        if !events.is_empty() {
            if let Some(hit) = locate_event(events, &ev_prev, &step, tnew, &ynew, n) {
                let mut y_ev = vec![0.0; n];
                step.eval_into(hit.1, &mut y_ev);
                sol.ts.push(hit.1);
                sol.ys.push(y_ev.clone());
                sol.dense.push(step);
                if !opts.keep_dense {
                    sol.dense.clear();
                }
                return Ok((
                    sol,
                    Some(EventHit {
                        index: hit.0,
                        t: hit.1,
                        y: y_ev,
                    }),
                ));
            }
            for (v, e) in ev_prev.iter_mut().zip(events) {
                *v = e(tnew, &ynew);
            }
        }

        if opts.keep_dense {
            sol.dense.push(step);
        }
        sol.ts.push(tnew);
        sol.ys.push(ynew.clone());
        t = tnew;
        std::mem::swap(&mut y, &mut ynew);
        k.swap(0, 6);

        if last {
            return Ok((sol, None));
        }

        let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
        fac = fac.clamp(0.2, 10.0);
        if rejected_last {
            fac = fac.min(1.0);
        }
        rejected_last = false;
        h = (h * fac).min(opts.h_max);
    }
}

fn check_finite(v: &[f64], t: f64, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Integration {
            time: t,
            reason: format!("non-finite {what}"),
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn initial_step<F>(
    rhs: &mut F,
    t: f64,
    y: &[f64],
    f0: &[f64],
    dir: f64,
    rtol: f64,
    atol: f64,
    span: f64,
) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    if n == 0 {
        return span;
    }
    let sc: Vec<f64> = y.iter().map(|v| atol + rtol * v.abs()).collect();
    let rms = |v: &[f64]| {
        (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n as f64).sqrt()
    };
    let d0 = rms(y);
    let d1 = rms(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(span);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + dir * h0 * b).collect();
    let mut f1 = vec![0.0; n];
    rhs(t + dir * h0, &y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    let h = (100.0 * h0).min(h1).min(span);
    if h.is_finite() && h > 0.0 {
        h
    } else {
        span.min(1e-6)
    }
}

/// First event (in integration order) changing sign within the step.
fn locate_event(
    events: &[EventFn<'_>],
    prev: &[f64],
    step: &DenseStep,
    tnew: f64,
    ynew: &[f64],
    n: usize,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    let mut ybuf = vec![0.0; n];
    for (i, e) in events.iter().enumerate() {
        let g0 = prev[i];
        let g1 = e(tnew, ynew);
        // leaving an exact zero at the start does not count as a crossing
        let crosses = (g0 != 0.0) && (g1 == 0.0 || (g0 < 0.0) != (g1 < 0.0));
        if !crosses {
            continue;
        }
        let mut eval = |t: f64| {
            step.eval_into(t, &mut ybuf);
            e(t, &ybuf)
        };
        let tr = illinois(&mut eval, step.t0, g0, tnew, g1);
        let earlier = match best {
            None => true,
            Some((_, tb)) => (tr - step.t0).abs() < (tb - step.t0).abs(),
        };
        if earlier {
            best = Some((i, tr));
        }
    }
    best
}

/// Regula falsi with the Illinois modification; the bracket may be reversed.
fn illinois<G: FnMut(f64) -> f64>(g: &mut G, mut a: f64, mut fa: f64, mut b: f64, mut fb: f64) -> f64 {
    if fb == 0.0 {
        return b;
    }
    let mut side = 0i8;
    for _ in 0..200 {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = g(c);
        if fc == 0.0 || (b - a).abs() <= 4.0 * f64::EPSILON * c.abs().max(1.0) {
            return c;
        }
        if (fc < 0.0) == (fb < 0.0) {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    (a * fb - b * fa) / (fb - fa)
}
