//! Machine-readable results of each subcommand.

use std::collections::BTreeMap;

use bbscert::extremal::{ConditionReport, ShootingResult};
use bbscert::overmax::{DitherFit, IotaReport, PerturbationReport, ProbeReport};
use bbscert::problems::LoadedProblem;
use bbscert::secondvar::{CoercivityReport, OracleResult};
use bbscert::Error;
use serde::Serialize;

use crate::pipeline::{error_kind, exit_code};

pub const CERTIFIED: &str = "certified strict strong local minimizer";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Error,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorInfo {
    pub kind: &'static str,
    pub message: String,
    pub exit_code: i32,
}

impl From<&Error> for ErrorInfo {
    fn from(e: &Error) -> Self {
        Self {
            kind: error_kind(e),
            message: e.to_string(),
            exit_code: exit_code(e),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Stage<T> {
    pub status: Status,
    pub required: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
}

impl<T> Stage<T> {
    pub fn skipped(required: bool) -> Self {
        Self {
            status: Status::Skipped,
            required,
            report: None,
            error: None,
        }
    }

    pub fn done(required: bool, pass: bool, report: T) -> Self {
        Self {
            status: if pass { Status::Pass } else { Status::Fail },
            required,
            report: Some(report),
            error: None,
        }
    }

    pub fn failed(required: bool, e: &Error) -> Self {
        Self {
            status: Status::Error,
            required,
            report: None,
            error: Some(e.into()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProblemEcho {
    pub name: String,
    pub dim: usize,
    pub declared_dim: usize,
    pub augmented: bool,
    pub horizon: f64,
    /// 1-based vertex indices `(h1, h2, h3)`.
    pub edge: [usize; 3],
    pub x0: Vec<f64>,
    pub guess: bbscert::extremal::ShootingGuess,
    pub settings: bbscert::problems::SolverSettings,
}

impl ProblemEcho {
    pub fn new(lp: &LoadedProblem) -> Self {
        let p = &lp.problem;
        Self {
            name: p.name.clone(),
            dim: p.dim(),
            declared_dim: lp.declared_dim,
            augmented: lp.augmented,
            horizon: p.horizon,
            edge: [p.edge.h1 + 1, p.edge.h2 + 1, p.edge.h3 + 1],
            x0: p.x0.iter().copied().collect(),
            guess: lp.guess.clone(),
            settings: lp.settings.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ShootingSummary {
    pub tau1: f64,
    pub tau2: f64,
    pub x_final: Vec<f64>,
    pub p_final: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub jacobian_rank: usize,
    pub globalized: bool,
    pub diagnostics: Vec<String>,
}

impl ShootingSummary {
    pub fn new(sr: &ShootingResult) -> Self {
        let e = &sr.extremal;
        Self {
            tau1: e.tau1,
            tau2: e.tau2,
            x_final: e.l_t.x.iter().copied().collect(),
            p_final: e.l_t.p.iter().copied().collect(),
            iterations: sr.iterations,
            residual: sr.residuals.norm(),
            jacobian_rank: sr.jacobian_rank,
            globalized: sr.globalized,
            diagnostics: e.diagnostics.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoercivitySummary {
    pub lq_intervals: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub k: Vec<f64>,
    pub hamiltonian: CoercivityReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeSummary {
    pub invertibility: ProbeReport,
    pub iota: IotaReport,
    pub iota_tolerance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationSummary {
    pub trials: usize,
    pub discarded: usize,
    pub min_gap: f64,
    pub worst: Option<String>,
    pub baseline_cost: f64,
    pub reference_cost: f64,
    pub dither: DitherFit,
}

impl PerturbationSummary {
    pub fn new(r: &PerturbationReport) -> Self {
        let worst = r
            .trials
            .iter()
            .filter_map(|t| t.gap.map(|g| (g, &t.descriptor)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, d)| d.clone());
        Self {
            trials: r.trials.len(),
            discarded: r.discarded,
            min_gap: r.min_gap,
            worst,
            baseline_cost: r.baseline_cost,
            reference_cost: r.reference_cost,
            dither: r.dither.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Stages {
    pub shooting: Stage<ShootingSummary>,
    pub conditions: Stage<ConditionReport>,
    pub coercivity: Stage<CoercivitySummary>,
    pub probe: Stage<ProbeSummary>,
    pub perturbation: Stage<PerturbationSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub problem: ProblemEcho,
    pub certified: bool,
    pub certificate: String,
    pub stages: Stages,
    /// Wall-clock milliseconds per stage; the only non-deterministic field.
    pub runtimes_ms: BTreeMap<&'static str, f64>,
}

impl Verdict {
    /// First required stage that did not pass, in pipeline order.
    pub fn failing_stage(stages: &Stages) -> Option<&'static str> {
        let required = [
            ("shooting", stages.shooting.status),
            ("conditions", stages.conditions.status),
            ("coercivity", stages.coercivity.status),
        ];
        required.into_iter().find(|(_, s)| *s != Status::Pass).map(|(n, _)| n)
    }

    pub fn new(problem: ProblemEcho, stages: Stages, runtimes_ms: BTreeMap<&'static str, f64>) -> Self {
        let failing = Self::failing_stage(&stages);
        Self {
            problem,
            certified: failing.is_none(),
            certificate: match failing {
                None => CERTIFIED.into(),
                Some(s) => format!("not certified: {s}"),
            },
            stages,
            runtimes_ms,
        }
    }

    /// 0 when certified, 3 when a required stage hit a numerical error,
    /// 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.certified {
            return 0;
        }
        let s = &self.stages;
        let errors = [&s.shooting.error, &s.conditions.error, &s.coercivity.error];
        match errors.into_iter().flatten().next() {
            Some(e) => e.exit_code,
            None => 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleComparison {
    pub hamiltonian: CoercivityReport,
    pub oracle: OracleResult,
    pub agree: bool,
}
