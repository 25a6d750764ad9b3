use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;

use super::machinery::{Branch, OvermaxMachinery, OvermaxTrajectory};
use crate::cotangent::{sigma, PhaseVector};
use crate::error::Result;
use crate::extremal::csv_number;
use crate::secondvar::{lq_transition_matrix, min_singular_value, LQData};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOptions {
    /// Number of probe times on `[0, T]`.
    pub times: usize,
    /// Central-difference step on `Λ`, relative to `1 + |x̂_f|`.
    pub fd_step: f64,
    /// Smallest singular value that counts as invertible.
    pub threshold: f64,
    /// Radius of the injectivity sample around `x̂_f`.
    pub sample_radius: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            times: 50,
            fd_step: 1e-4,
            threshold: 1e-6,
            sample_radius: 2e-3,
            samples: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeSample {
    pub t: f64,
    pub branch: String,
    pub min_singular_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub samples: Vec<ProbeSample>,
    /// Times where the determinant of the projected linearization changes
    /// sign; each is also added to `samples`.
    pub sign_changes: Vec<f64>,
    pub tau1_time: f64,
    /// Worst convex combination of the two one-sided linearizations at `τ̂1`.
    pub tau1_combination_min: f64,
    pub tau1_worst_weight: f64,
    /// `min |π𝓗_t(a) − π𝓗_t(b)| / |a − b|` over sampled pairs and probe times.
    pub injectivity_ratio: f64,
    /// Sample points whose backward run failed.
    pub injectivity_skipped: usize,
    pub min_singular_value: f64,
    pub worst_time: f64,
    pub threshold: f64,
    pub pass: bool,
    pub disclaimer: String,
}

/// Projections `π𝓗_t(x, −∇c̃(x))` are evaluated from one backward run per
/// sample point; these are those runs for `x̂_f ± h e_i`.
struct Bundle {
    step: f64,
    plus: Vec<OvermaxTrajectory>,
    minus: Vec<OvermaxTrajectory>,
}

impl Bundle {
    fn build(mach: &OvermaxMachinery<'_>, step: f64) -> Result<Self> {
        let xf = mach.ext.x_final();
        let n = xf.len();
        let runs: Vec<Result<OvermaxTrajectory>> = (0..2 * n)
            .into_par_iter()
            .map(|k| {
                let mut x = xf.clone();
                x[k / 2] += if k % 2 == 0 { step } else { -step };
                mach.trajectory(&mach.lambda_point(&x)?)
            })
            .collect();
        let mut plus = Vec::with_capacity(n);
        let mut minus = Vec::with_capacity(n);
        for (k, r) in runs.into_iter().enumerate() {
            if k % 2 == 0 {
                plus.push(r?);
            } else {
                minus.push(r?);
            }
        }
        Ok(Self { step, plus, minus })
    }

    /// Columns of `D(π𝓗_t)|_{TΛ}` in base coordinates.
    fn projected(&self, t: f64) -> DMatrix<f64> {
        let n = self.plus.len();
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let d = (self.plus[j].at(t).0.x - self.minus[j].at(t).0.x) / (2.0 * self.step);
            m.set_column(j, &d);
        }
        m
    }
}

fn branch_name(b: Branch) -> &'static str {
    match b {
        Branch::Singular => "singular",
        Branch::Correction => "correction",
        Branch::Bang2 => "bang2",
        Branch::Bang1 => "bang1",
    }
}

/// Probe times: `times` equally spaced points of `[0, T]`, each nudged off
/// `τ̂1` by at least a hundredth of the grid spacing.
pub fn probe_times(mach: &OvermaxMachinery<'_>, times: usize) -> Vec<f64> {
    let (tau1, horizon) = (mach.ext.tau1, mach.ext.horizon);
    let count = times.max(2);
    let dt = horizon / (count - 1) as f64;
    (0..count)
        .map(|i| {
            let t = horizon * (count - 1 - i) as f64 / (count - 1) as f64;
            if (t - tau1).abs() < 1e-2 * dt {
                tau1 + 1e-2 * dt
            } else {
                t
            }
        })
        .collect()
}

/// Sampled invertibility of `x ↦ π𝓗_t(x, −∇c̃(x))` near `x̂_f`. Sampled
/// evidence only: no Lipschitz constant is certified.
pub fn invertibility_probe(mach: &OvermaxMachinery<'_>, opts: &ProbeOptions) -> Result<ProbeReport> {
    let ext = mach.ext;
    let xf = ext.x_final();
    let n = xf.len();
    let step = opts.fd_step * (1.0 + xf.norm());
    let bundle = Bundle::build(mach, step)?;
    let reference = mach.trajectory(&ext.l_t)?;

    let sample = |t: f64| ProbeSample {
        t,
        branch: branch_name(reference.branch_at(t)).into(),
        min_singular_value: min_singular_value(&bundle.projected(t)),
    };
    let times = probe_times(mach, opts.times);
    let mut samples: Vec<ProbeSample> = times.iter().map(|&t| sample(t)).collect();
    // a determinant sign change between probe times hides a degenerate point
    let det = |t: f64| bundle.projected(t).determinant().signum();
    let mut sign_changes = Vec::new();
    for w in times.windows(2) {
        let (mut hi, mut lo) = (w[0], w[1]);
        let s_hi = det(hi);
        if s_hi == det(lo) {
            continue;
        }
        for _ in 0..60 {
            let mid = 0.5 * (hi + lo);
            if det(mid) == s_hi {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        sign_changes.push(0.5 * (hi + lo));
    }
    samples.extend(sign_changes.iter().map(|&t| sample(t)));
    samples.sort_by(|a, b| b.t.total_cmp(&a.t));

    // two one-sided linearizations at τ̂1 and their convex combinations
    let mut d2 = DMatrix::zeros(n, n);
    let mut d1 = DMatrix::zeros(n, n);
    for j in 0..n {
        let (p2, p1) = mach.one_sided_at_tau1(&bundle.plus[j])?;
        let (m2, m1) = mach.one_sided_at_tau1(&bundle.minus[j])?;
        d2.set_column(j, &((p2.x - m2.x) / (2.0 * step)));
        d1.set_column(j, &((p1.x - m1.x) / (2.0 * step)));
    }
    let (mut comb_min, mut comb_a) = (f64::INFINITY, 0.0);
    for i in 0..=10 {
        let a = i as f64 / 10.0;
        let s = min_singular_value(&(&d2 * (1.0 - a) + &d1 * a));
        if s < comb_min {
            comb_min = s;
            comb_a = a;
        }
    }

    let (injectivity_ratio, injectivity_skipped) = injectivity(mach, opts, &samples);

    let (mut smin, mut worst) = (comb_min, ext.tau1);
    for s in &samples {
        if s.min_singular_value < smin {
            smin = s.min_singular_value;
            worst = s.t;
        }
    }
    let pass = smin > opts.threshold && injectivity_ratio > opts.threshold;
    Ok(ProbeReport {
        samples,
        sign_changes,
        tau1_time: ext.tau1,
        tau1_combination_min: comb_min,
        tau1_worst_weight: comb_a,
        injectivity_ratio,
        injectivity_skipped,
        min_singular_value: smin,
        worst_time: worst,
        threshold: opts.threshold,
        pass,
        disclaimer: format!(
            "sampled at {} times with finite-difference step {step:.1e}; invertibility is not proven",
            opts.times
        ),
    })
}

fn injectivity(mach: &OvermaxMachinery<'_>, opts: &ProbeOptions, samples: &[ProbeSample]) -> (f64, usize) {
    if opts.samples < 2 {
        return (f64::INFINITY, 0);
    }
    let xf = mach.ext.x_final();
    let radius = opts.sample_radius * (1.0 + xf.norm());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let points: Vec<DVector<f64>> = (0..opts.samples)
        .map(|_| xf.map(|v| v + radius * rng.random_range(-1.0..1.0)))
        .collect();
    // points where the construction breaks down lie outside the validated
    // neighbourhood and are skipped
    let runs: Vec<(DVector<f64>, OvermaxTrajectory)> = points
        .into_par_iter()
        .filter_map(|x| {
            let run = mach.lambda_point(&x).and_then(|l| mach.trajectory(&l)).ok()?;
            Some((x, run))
        })
        .collect();
    let skipped = opts.samples - runs.len();
    let points: Vec<&DVector<f64>> = runs.iter().map(|(x, _)| x).collect();
    let mut ratio = f64::INFINITY;
    for s in samples.iter().step_by(5) {
        let images: Vec<DVector<f64>> = runs.iter().map(|(_, r)| r.at(s.t).0.x).collect();
        for i in 0..points.len() {
            for j in 0..i {
                ratio = ratio.min((&images[i] - &images[j]).norm() / (points[i] - points[j]).norm());
            }
        }
    }
    (ratio, skipped)
}

/// `ι(μ, ζ) = (δx, δp) = (ζ, −μ − D²c̃ ζ)` as a `2n × 2n` matrix acting on
/// `(μ, ζ)` and returning `(δx, δp)`.
pub fn iota_matrix(hessian: &DMatrix<f64>) -> DMatrix<f64> {
    let n = hessian.nrows();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        m[(i, n + i)] = 1.0;
        m[(n + i, i)] = -1.0;
    }
    m.view_mut((n, n), (n, n)).copy_from(&(-hessian));
    m
}

/// `ι⁻¹(δx, δp) = (μ, ζ) = (−δp − D²c̃ δx, δx)`.
pub fn iota_inverse_matrix(hessian: &DMatrix<f64>) -> DMatrix<f64> {
    let n = hessian.nrows();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        m[(i, n + i)] = -1.0;
        m[(n + i, i)] = 1.0;
    }
    m.view_mut((0, 0), (n, n)).copy_from(&(-hessian));
    m
}

/// `σ(ιa, ιb) + σ(a, b)` with both forms written as `⟨first, second'⟩ − ⟨first', second⟩`.
pub fn antisymplectic_defect(hessian: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let n = hessian.nrows();
    let iota = iota_matrix(hessian);
    let (ia, ib) = (&iota * a, &iota * b);
    // (δx, δp): σ = ⟨δp, δx'⟩ − ⟨δp', δx⟩
    let phase = |v: &DVector<f64>| PhaseVector {
        dx: v.rows(0, n).into_owned(),
        dp: v.rows(n, n).into_owned(),
    };
    let s_iota = sigma(&phase(&ia), &phase(&ib));
    // (μ, ζ): σ = ⟨μ, ζ'⟩ − ⟨μ', ζ⟩
    let s_lq = a.rows(0, n).dot(&b.rows(n, n)) - b.rows(0, n).dot(&a.rows(n, n));
    s_iota + s_lq
}

#[derive(Debug, Clone, Serialize)]
pub struct IotaReport {
    pub times: Vec<f64>,
    pub residuals: Vec<f64>,
    pub max_residual: f64,
}

/// Compares `ι Φ(t) ι⁻¹`, with `Φ(t)` the LQ transition from `T` to `t`,
/// against the finite-difference linearization of `F̂_t⁻¹ ∘ 𝓗_t` at `ℓ̂_T`
/// on `grid` points of `[τ̂2, T]`. Residuals are max-abs matrix entries.
pub fn iota_conjugacy_check(
    mach: &OvermaxMachinery<'_>,
    lq: &LQData,
    grid: usize,
    fd_step: f64,
) -> Result<IotaReport> {
    let ext = mach.ext;
    let n = ext.dim();
    let m = 2 * n;
    let hess = mach.mc.hessian(ext.x_final().as_slice())?;
    let iota = iota_matrix(&hess);
    let iota_inv = iota_inverse_matrix(&hess);
    let base = ext.l_t.packed();
    let scale: Vec<f64> = base.iter().map(|v| fd_step * (1.0 + v.abs())).collect();
    let runs = (0..2 * m)
        .into_par_iter()
        .map(|k| {
            let mut y = base.clone();
            y[k / 2] += if k % 2 == 0 { scale[k / 2] } else { -scale[k / 2] };
            mach.trajectory(&crate::cotangent::CotangentPoint::from_packed(&y))
        })
        .collect::<Result<Vec<_>>>()?;

    let count = grid.max(2);
    let times: Vec<f64> = (0..count)
        .map(|i| ext.horizon - (ext.horizon - ext.tau2) * i as f64 / (count - 1) as f64)
        .collect();
    let residuals = times
        .par_iter()
        .map(|&t| -> Result<f64> {
            if t >= ext.horizon {
                return Ok(0.0);
            }
            let mut d = DMatrix::zeros(m, m);
            for j in 0..m {
                let a = mach.reference_to_final(&runs[2 * j].at(t).0, t)?.packed();
                let b = mach.reference_to_final(&runs[2 * j + 1].at(t).0, t)?.packed();
                for i in 0..m {
                    d[(i, j)] = (a[i] - b[i]) / (2.0 * scale[j]);
                }
            }
            let phi = lq_transition_matrix(lq, t)?;
            let predicted = &iota * phi * &iota_inv;
            Ok((d - predicted).amax())
        })
        .collect::<Result<Vec<f64>>>()?;
    let max_residual = residuals.iter().fold(0.0_f64, |a, &b| a.max(b));
    Ok(IotaReport {
        times,
        residuals,
        max_residual,
    })
}

/// Transported `𝓗_{t*} H⃗2(ℓ̂_T)` against `H⃗2(λ̂(t))` on `grid` points of
/// `[τ̂2, T]`; returns the largest deviation.
pub fn h2_transport_defect(mach: &OvermaxMachinery<'_>, grid: usize, fd_step: f64) -> Result<f64> {
    let ext = mach.ext;
    let calc = ext.calculus();
    let n = ext.dim();
    let lt = &ext.l_t;
    let mut v = vec![0.0; 2 * n];
    crate::cotangent::adjoint_rhs(&calc.h2, 0.0, &lt.packed(), &mut v);
    let h = fd_step * (1.0 + lt.norm());
    let shifted = |s: f64| {
        let y: Vec<f64> = lt.packed().iter().zip(&v).map(|(a, b)| a + s * h * b).collect();
        mach.trajectory(&crate::cotangent::CotangentPoint::from_packed(&y))
    };
    let (plus, minus) = (shifted(1.0)?, shifted(-1.0)?);
    let count = grid.max(2);
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let t = ext.horizon - (ext.horizon - ext.tau2) * i as f64 / (count - 1) as f64;
        let d: Vec<f64> = plus.at(t).0.packed().iter().zip(minus.at(t).0.packed()).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let mut expect = vec![0.0; 2 * n];
        crate::cotangent::adjoint_rhs(&calc.h2, 0.0, &ext.lambda(t).packed(), &mut expect);
        for (a, b) in d.iter().zip(&expect) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

pub fn write_probe_csv<W: Write>(report: &ProbeReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = crate::extremal::io_err;
    w.write_record(["t", "branch", "min_singular_value"]).map_err(io)?;
    for s in &report.samples {
        w.write_record([csv_number(s.t), s.branch.clone(), csv_number(s.min_singular_value)])
            .map_err(io)?;
    }
    w.write_record([csv_number(report.tau1_time), "tau1-combination".into(), csv_number(report.tau1_combination_min)])
        .map_err(io)?;
    w.flush().map_err(|e| crate::error::Error::Io(e.to_string()))?;
    Ok(())
}
