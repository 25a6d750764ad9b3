use serde::{Deserialize, Serialize};

use super::problem::ControlAffineProblem;
use super::reference::{ArcKind, BBSExtremal};
use crate::cotangent::CotangentPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub verdict: Verdict,
    /// Minimum slack of the strict inequality; `None` when skipped.
    pub margin: Option<f64>,
    pub worst_time: Option<f64>,
    pub diagnostics: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub checks: Vec<CheckRecord>,
}

impl ConditionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.verdict != Verdict::Fail)
    }

    pub fn get(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| c.verdict == Verdict::Fail)
            .map(|c| c.name.as_str())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ConditionConfig {
    pub samples_per_arc: usize,
    /// Half-width of the excluded neighbourhood of each switching time, as a fraction of `T`.
    pub delta_fraction: f64,
    /// Required slack of every strict inequality.
    pub margin: f64,
    /// Allowed negative slack in the endpoint sign-only test, relative to `|ℓ|`.
    pub sign_tol: f64,
}

impl Default for ConditionConfig {
    fn default() -> Self {
        Self {
            samples_per_arc: 400,
            delta_fraction: 1e-3,
            margin: 1e-10,
            sign_tol: 1e-8,
        }
    }
}

pub const BANG_MAXIMALITY: &str = "bang_maximality";
pub const SINGULAR_MAXIMALITY: &str = "singular_maximality";
pub const SWITCH_TAU1: &str = "switching_regularity_tau1";
pub const SWITCH_TAU2: &str = "switching_regularity_tau2";
pub const SGLC: &str = "strong_generalized_legendre";
pub const SINGULAR_SIGNS: &str = "singular_control_interior";

fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    if b <= a {
        return vec![];
    }
    let n = n.max(2);
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Running minimum with its location.
#[derive(Default)]
struct MinTracker {
    value: Option<f64>,
    time: Option<f64>,
}

impl MinTracker {
    fn push(&mut self, t: f64, v: f64) {
        if self.value.is_none_or(|m| v < m) {
            self.value = Some(v);
            self.time = Some(t);
        }
    }
}

fn lifted(f: &crate::fieldalg::SmoothField, l: &CotangentPoint) -> f64 {
    l.p.dot(&f.eval(l.x.as_slice()))
}

fn strict(name: &str, m: MinTracker, margin: f64, extra_ok: bool, diag: String) -> CheckRecord {
    match m.value {
        None => CheckRecord {
            name: name.into(),
            verdict: Verdict::Skipped,
            margin: None,
            worst_time: None,
            diagnostics: diag,
        },
        Some(v) => CheckRecord {
            name: name.into(),
            verdict: if v > margin && extra_ok {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
            margin: Some(v),
            worst_time: m.time,
            diagnostics: diag,
        },
    }
}

/// Evaluates the pointwise conditions along the extremal: bang maximality,
/// singular-arc maximality off the edge, regularity at both switching times,
/// the strong generalized Legendre condition, and interiority of the singular control.
pub fn check_conditions(
    prob: &ControlAffineProblem,
    ext: &BBSExtremal,
    cfg: &ConditionConfig,
) -> ConditionReport {
    let calc = ext.calculus();
    let n = cfg.samples_per_arc;
    let delta = cfg.delta_fraction * ext.horizon;
    let mut checks = Vec::new();

    // (a) bang arcs
    {
        let mut strict_min = MinTracker::default();
        let mut sign_min = f64::INFINITY;
        let mut sign_t = 0.0;
        let arcs = [
            (ArcKind::Bang1, prob.edge.h1, 0.0, ext.tau1),
            (ArcKind::Bang2, prob.edge.h2, ext.tau1, ext.tau2),
        ];
        for (arc, active, a, b) in arcs {
            let active_field = &prob.fields[active];
            let others: Vec<usize> = (0..prob.fields.len()).filter(|&i| i != active).collect();
            let slack = |t: f64| {
                let l = ext.lambda_on(arc, t);
                let h = lifted(active_field, &l);
                let s = others
                    .iter()
                    .map(|&i| h - lifted(&prob.fields[i], &l))
                    .fold(f64::INFINITY, f64::min);
                (s, l.norm())
            };
            for t in grid(a + delta, b - delta, n) {
                strict_min.push(t, slack(t).0);
            }
            for t in grid(a, b, n) {
                let (s, scale) = slack(t);
                let rel = s / scale.max(1.0);
                if rel < sign_min {
                    sign_min = rel;
                    sign_t = t;
                }
            }
        }
        let sign_ok = sign_min >= -cfg.sign_tol;
        let diag = format!(
            "strict test on arcs shrunk by δ = {delta:.3e}; endpoint sign test min relative slack {sign_min:.3e} at t = {sign_t:.6}"
        );
        checks.push(strict(BANG_MAXIMALITY, strict_min, cfg.margin, sign_ok, diag));
    }

    let sing_grid = grid(ext.tau2, ext.horizon, n);
    let sing_points: Vec<(f64, CotangentPoint)> = sing_grid
        .iter()
        .map(|&t| (t, ext.lambda_on(ArcKind::Singular, t)))
        .collect();

    // (b) singular arc against vertices off the edge
    {
        let off: Vec<usize> = (0..prob.fields.len())
            .filter(|&i| i != prob.edge.h2 && i != prob.edge.h3)
            .collect();
        let mut m = MinTracker::default();
        for (t, l) in &sing_points {
            let h2 = lifted(&calc.h2, l);
            let f1 = lifted(&calc.f1, l);
            for &i in &off {
                let xi = lifted(&prob.fields[i], l);
                for a in [0.0, 0.5, 1.0] {
                    m.push(*t, h2 + a * f1 - xi);
                }
            }
        }
        let diag = if off.is_empty() {
            "no vertex off the singular edge".to_string()
        } else {
            format!("{} vertices off the edge, a ∈ {{0, 1/2, 1}}", off.len())
        };
        checks.push(strict(SINGULAR_MAXIMALITY, m, cfg.margin, true, diag));
    }

    // (c) switching regularity
    {
        let h12 = lifted(&calc.h12, &ext.l1);
        let mut m = MinTracker::default();
        m.push(ext.tau1, h12);
        checks.push(strict(SWITCH_TAU1, m, cfg.margin, true, format!("H12(ℓ1) = {h12:.6e}")));
        let h232 = lifted(&calc.h232, &ext.l2);
        let mut m = MinTracker::default();
        m.push(ext.tau2, h232);
        checks.push(strict(SWITCH_TAU2, m, cfg.margin, true, format!("H232(ℓ2) = {h232:.6e}")));
    }

    // (d) SGLC
    {
        let mut m = MinTracker::default();
        for (t, l) in &sing_points {
            m.push(*t, lifted(&calc.l, l));
        }
        checks.push(strict(SGLC, m, cfg.margin, true, "R(t) = L(λ(t)) on [τ2, T]".into()));
    }

    // (e) H232 > 0 and H323 > 0 on (τ2, T]
    {
        let mut m = MinTracker::default();
        let mut worst_word = "H232";
        for (t, l) in sing_points.iter().skip(1) {
            let a = lifted(&calc.h232, l);
            let b = lifted(&calc.h323, l);
            let before = m.value;
            m.push(*t, a.min(b));
            if m.value != before {
                worst_word = if a <= b { "H232" } else { "H323" };
            }
        }
        let diag = format!("binding bracket {worst_word}");
        checks.push(strict(SINGULAR_SIGNS, m, cfg.margin, true, diag));
    }

    ConditionReport { checks }
}
