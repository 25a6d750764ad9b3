use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};
use crate::extremal::{csv_number, io_err, BBSExtremal, ControlAffineProblem};
use crate::fieldalg::integrate::integrate;
use crate::fieldalg::{OdeOptions, Tolerances};

/// An admissible change of the reference control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Perturbation {
    None,
    /// Vertex `vertex` (0-based) on `[start, start + width)`.
    Needle { vertex: usize, start: f64, width: f64 },
    /// `υ̂(t) + amplitude·sin(2π·frequency·s + phase)` on the singular arc,
    /// `s` the normalized arc time, clipped to `[0, 1]`.
    Wiggle { amplitude: f64, frequency: u32, phase: f64 },
    /// Shifts of the two switching times.
    Dither { tau1: f64, tau2: f64 },
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Perturbation::None => write!(f, "none"),
            Perturbation::Needle { vertex, start, width } => {
                write!(f, "needle vertex={} start={start:.6} width={width:.6}", vertex + 1)
            }
            Perturbation::Wiggle {
                amplitude,
                frequency,
                phase,
            } => write!(f, "wiggle amplitude={amplitude:.6} frequency={frequency} phase={phase:.6}"),
            Perturbation::Dither { tau1, tau2 } => write!(f, "dither tau1={tau1:+.6} tau2={tau2:+.6}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbOptions {
    pub trials: usize,
    pub seed: u64,
    /// C⁰ tube radius around the reference state.
    pub tube_radius: f64,
    pub tol: Tolerances,
    /// Tube check resolution.
    pub tube_samples: usize,
    /// Gaps below `−gap_tol` count as counterexamples.
    pub gap_tol: f64,
    /// `τ1` shifts for the growth-order fit.
    pub dither_sizes: [f64; 4],
}

impl Default for PerturbOptions {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 0,
            tube_radius: 0.05,
            tol: Tolerances::new(1e-12, 1e-14),
            tube_samples: 400,
            gap_tol: 1e-9,
            dither_sizes: [0.0025, 0.005, 0.01, 0.02],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub id: usize,
    pub perturbation: Perturbation,
    pub descriptor: String,
    /// `c(ξ(T))` minus the baseline cost, absent for discarded trials.
    pub gap: Option<f64>,
    pub tube_distance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DitherFit {
    pub sizes: Vec<f64>,
    pub gaps: Vec<f64>,
    /// Least-squares slope of `log gap` against `log size`.
    pub exponent: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationReport {
    pub trials: Vec<TrialRecord>,
    pub min_gap: f64,
    pub discarded: usize,
    /// Cost of the reference control integrated forward; gaps are taken
    /// against this value.
    pub baseline_cost: f64,
    /// `c(x̂_f)` from the backward-integrated extremal.
    pub reference_cost: f64,
    pub dither: DitherFit,
    pub pass: bool,
}

/// Forward integration of controls built around the reference extremal.
pub struct ControlSimulator<'a> {
    prob: &'a ControlAffineProblem,
    ext: &'a BBSExtremal,
    tol: Tolerances,
}

impl<'a> ControlSimulator<'a> {
    pub fn new(prob: &'a ControlAffineProblem, ext: &'a BBSExtremal, tol: Tolerances) -> Self {
        Self { prob, ext, tol }
    }

    fn switching_times(&self, p: &Perturbation) -> (f64, f64) {
        match *p {
            Perturbation::Dither { tau1, tau2 } => (self.ext.tau1 + tau1, self.ext.tau2 + tau2),
            _ => (self.ext.tau1, self.ext.tau2),
        }
    }

    /// Vertex weights of the control at time `t`.
    pub fn weights(&self, p: &Perturbation, t: f64, out: &mut [f64]) {
        self.weights_on(p, t, t, out);
    }

    /// Weights at `t` with the piece of the control chosen by `piece`, so that
    /// a segment between breakpoints never sees its neighbour's field.
    fn weights_on(&self, p: &Perturbation, t: f64, piece: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|w| *w = 0.0);
        let edge = self.prob.edge;
        if let Perturbation::Needle { vertex, start, width } = *p {
            if piece >= start && piece < start + width {
                out[vertex] = 1.0;
                return;
            }
        }
        let (tau1, tau2) = self.switching_times(p);
        if piece < tau1 {
            out[edge.h1] = 1.0;
        } else if piece < tau2 {
            out[edge.h2] = 1.0;
        } else {
            let mut u = self.ext.upsilon(t);
            if let Perturbation::Wiggle {
                amplitude,
                frequency,
                phase,
            } = *p
            {
                let s = (t - self.ext.tau2) / (self.ext.horizon - self.ext.tau2);
                u = (u + amplitude * (std::f64::consts::TAU * frequency as f64 * s + phase).sin()).clamp(0.0, 1.0);
            }
            out[edge.h2] += 1.0 - u;
            out[edge.h3] += u;
        }
    }

    fn breakpoints(&self, p: &Perturbation) -> Vec<f64> {
        let horizon = self.ext.horizon;
        let (tau1, tau2) = self.switching_times(p);
        let mut b = vec![0.0, tau1, tau2, horizon];
        if let Perturbation::Needle { start, width, .. } = *p {
            b.push(start);
            b.push(start + width);
        }
        b.retain(|t| (0.0..=horizon).contains(t));
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    /// State at `T` and the largest deviation from `x̂` on the tube grid.
    pub fn simulate(&self, p: &Perturbation, tube_samples: usize) -> Result<(DVector<f64>, f64)> {
        let fields = &self.prob.fields;
        let n = self.prob.dim();
        let breaks = self.breakpoints(p);
        let mut x = self.prob.x0.as_slice().to_vec();
        let mut deviation: f64 = 0.0;
        let grid: Vec<f64> = (0..=tube_samples)
            .map(|i| self.ext.horizon * i as f64 / tube_samples as f64)
            .collect();
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let mid = 0.5 * (a + b);
            let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
                let mut wts = vec![0.0; fields.len()];
                self.weights_on(p, t, mid, &mut wts);
                dy.iter_mut().for_each(|d| *d = 0.0);
                let mut buf = vec![0.0; n];
                for (f, &wt) in fields.iter().zip(&wts) {
                    if wt != 0.0 {
                        f.eval_into(y, &mut buf);
                        for (d, v) in dy.iter_mut().zip(&buf) {
                            *d += wt * v;
                        }
                    }
                }
            };
            let sol = integrate(rhs, a, &x, b, &OdeOptions::with_tol(self.tol))?;
            for &t in grid.iter().filter(|&&t| t >= a && t <= b) {
                let xi = DVector::from_vec(sol.eval(t));
                deviation = deviation.max((xi - &self.ext.lambda(t).x).norm());
            }
            x = sol.final_state().to_vec();
        }
        Ok((DVector::from_vec(x), deviation))
    }
}

fn sample_perturbation(rng: &mut ChaCha8Rng, prob: &ControlAffineProblem, ext: &BBSExtremal) -> Perturbation {
    let horizon = ext.horizon;
    match rng.random_range(0..3) {
        0 => {
            let width = rng.random_range(5e-4..5e-3);
            Perturbation::Needle {
                vertex: rng.random_range(0..prob.fields.len()),
                start: rng.random_range(0.0..horizon - width),
                width,
            }
        }
        1 => Perturbation::Wiggle {
            amplitude: rng.random_range(0.005..0.05),
            frequency: rng.random_range(1..=6),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        },
        _ => {
            let room = 0.006_f64.min(0.25 * (ext.tau2 - ext.tau1)).min(0.25 * ext.tau1);
            Perturbation::Dither {
                tau1: rng.random_range(-room..room),
                tau2: rng.random_range(-room..room),
            }
        }
    }
}

/// Empirical comparison of the reference against seeded admissible
/// perturbations (needles, singular-amplitude wiggles, switching-time
/// dithers) together with the growth order under `τ1` dithers.
pub fn compare_admissible(
    prob: &ControlAffineProblem,
    ext: &BBSExtremal,
    opts: &PerturbOptions,
) -> Result<PerturbationReport> {
    if !(opts.tube_radius > 0.0) {
        return Err(Error::Config(format!("tube radius must be positive, got {}", opts.tube_radius)));
    }
    let sim = ControlSimulator::new(prob, ext, opts.tol);
    let cost = |x: &DVector<f64>| prob.cost.value(x.as_slice());
    let (x_base, _) = sim.simulate(&Perturbation::None, opts.tube_samples)?;
    let baseline_cost = cost(&x_base);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let perturbations: Vec<Perturbation> = (0..opts.trials).map(|_| sample_perturbation(&mut rng, prob, ext)).collect();
    let trials = perturbations
        .par_iter()
        .enumerate()
        .map(|(id, p)| -> Result<TrialRecord> {
            let (x, dist) = sim.simulate(p, opts.tube_samples)?;
            let inside = dist <= opts.tube_radius;
            Ok(TrialRecord {
                id,
                perturbation: *p,
                descriptor: p.to_string(),
                gap: inside.then(|| cost(&x) - baseline_cost),
                tube_distance: dist,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let discarded = trials.iter().filter(|r| r.gap.is_none()).count();
    let min_gap = trials.iter().filter_map(|r| r.gap).fold(f64::INFINITY, f64::min);

    let gaps = opts
        .dither_sizes
        .par_iter()
        .map(|&d| -> Result<f64> {
            let (x, _) = sim.simulate(&Perturbation::Dither { tau1: d, tau2: 0.0 }, opts.tube_samples)?;
            Ok(cost(&x) - baseline_cost)
        })
        .collect::<Result<Vec<_>>>()?;
    let exponent = log_slope(&opts.dither_sizes, &gaps);
    let dither = DitherFit {
        sizes: opts.dither_sizes.to_vec(),
        gaps,
        exponent,
    };
    let growth_ok = dither.gaps.iter().all(|&g| g > 0.0) && (exponent - 2.0).abs() <= 0.3;
    let pass = min_gap >= -opts.gap_tol && growth_ok;
    Ok(PerturbationReport {
        trials,
        min_gap,
        discarded,
        baseline_cost,
        reference_cost: cost(ext.x_final()),
        dither,
        pass,
    })
}

/// Least-squares slope of `log y` against `log x`; NaN if any `y ≤ 0`.
pub fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    if y.iter().any(|&v| !(v > 0.0)) || x.len() < 2 {
        return f64::NAN;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

pub fn write_perturb_csv<W: Write>(report: &PerturbationReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trial", "descriptor", "gap"]).map_err(io_err)?;
    for r in &report.trials {
        let gap = r.gap.map(csv_number).unwrap_or_else(|| "discarded".into());
        w.write_record([r.id.to_string(), r.descriptor.clone(), gap]).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}
