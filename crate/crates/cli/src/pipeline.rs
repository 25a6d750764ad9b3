//! The certification stages, each a thin wrapper around the core library.

use std::time::Instant;

use bbscert::extremal::{
    check_conditions, shoot_bbs, ConditionConfig, ConditionReport, ReferenceOptions, ShootingOptions,
    ShootingResult,
};
use bbscert::fieldalg::Tolerances;
use bbscert::overmax::{
    compare_admissible, invertibility_probe, iota_conjugacy_check, IotaReport, OvermaxMachinery, OvermaxOptions,
    PerturbOptions, PerturbationReport, ProbeOptions, ProbeReport,
};
use bbscert::problems::{LoadedProblem, SolverSettings};
use bbscert::secondvar::{
    assemble_lq, build_ctilde, coercivity_oracle, coercivity_test, lq_hamiltonian_flow, CoercivityReport, LQData,
    LqOptions, ModifiedCost, OracleResult,
};
use bbscert::{Error, Result};

/// Grid points of the ι-conjugacy check on `[τ2, T]`.
pub const IOTA_GRID: usize = 20;
/// Finite-difference step of the ι-conjugacy check.
pub const IOTA_STEP: f64 = 1e-4;

/// Millisecond stopwatch for the per-stage timings.
pub struct Timer(Instant);

impl Timer {
    pub fn start() -> Self {
        Self(Instant::now())
    }

    pub fn ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

pub fn shooting_options(settings: &SolverSettings) -> ShootingOptions {
    ShootingOptions {
        reference: ReferenceOptions {
            tol: Tolerances::new(settings.rtol, settings.atol),
            samples_per_arc: settings.samples_per_arc,
            ..ReferenceOptions::default()
        },
        max_iterations: settings.max_iterations,
        ..ShootingOptions::default()
    }
}

pub fn shoot(lp: &LoadedProblem) -> Result<ShootingResult> {
    shoot_bbs(&lp.problem, &lp.guess, &shooting_options(&lp.settings))
}

pub fn conditions(lp: &LoadedProblem, sr: &ShootingResult) -> ConditionReport {
    let cfg = ConditionConfig {
        samples_per_arc: lp.settings.samples_per_arc,
        delta_fraction: lp.settings.delta_fraction,
        margin: lp.settings.condition_margin,
        ..ConditionConfig::default()
    };
    check_conditions(&lp.problem, &sr.extremal, &cfg)
}

/// Everything the second-variation stage produces.
pub struct SecondVariation {
    pub ctilde: ModifiedCost,
    pub lq: LQData,
    pub report: CoercivityReport,
}

pub fn second_variation(lp: &LoadedProblem, sr: &ShootingResult, oracle_intervals: Option<usize>) -> Result<SecondVariation> {
    let ext = &sr.extremal;
    let ctilde = build_ctilde(&lp.problem, ext)?;
    let opts = LqOptions {
        intervals: lp.settings.lq_intervals,
        ..LqOptions::default()
    };
    let lq = assemble_lq(&lp.problem, ext, &ctilde, &opts)?;
    let flow = lq_hamiltonian_flow(&lq)?;
    let mut report = coercivity_test(&lq, &flow, Some(&ctilde), lp.settings.coercivity_margin)?;
    if let Some(n) = oracle_intervals {
        report.oracle = Some(coercivity_oracle(&lq, n)?);
    }
    Ok(SecondVariation { ctilde, lq, report })
}

pub fn oracle(sv: &SecondVariation, intervals: usize) -> Result<OracleResult> {
    coercivity_oracle(&sv.lq, intervals)
}

pub fn machinery<'a>(sr: &'a ShootingResult, sv: &'a SecondVariation) -> Result<OvermaxMachinery<'a>> {
    OvermaxMachinery::new(&sr.extremal, &sv.ctilde, OvermaxOptions::default())
}

pub fn probe(lp: &LoadedProblem, mach: &OvermaxMachinery<'_>) -> Result<ProbeReport> {
    let opts = ProbeOptions {
        times: lp.settings.probe_times,
        seed: lp.settings.seed,
        ..ProbeOptions::default()
    };
    invertibility_probe(mach, &opts)
}

pub fn iota(mach: &OvermaxMachinery<'_>, sv: &SecondVariation) -> Result<IotaReport> {
    iota_conjugacy_check(mach, &sv.lq, IOTA_GRID, IOTA_STEP)
}

pub fn perturbation(lp: &LoadedProblem, sr: &ShootingResult) -> Result<PerturbationReport> {
    let opts = PerturbOptions {
        trials: lp.settings.trials,
        seed: lp.settings.seed,
        tube_radius: lp.settings.tube_radius,
        ..PerturbOptions::default()
    };
    compare_admissible(&lp.problem, &sr.extremal, &opts)
}

/// Process exit code for an error: configuration and input problems are 2,
/// numerical failures 3. A cost that admits no modified cost is a failed
/// hypothesis, hence "not certified".
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::SecondLieDerivativeNotPositive { .. } => 1,
        Error::Parse { .. } | Error::Config(_) | Error::UnknownWord(_) | Error::Io(_) | Error::DimensionMismatch { .. } => {
            2
        }
        _ => 3,
    }
}

pub fn error_kind(e: &Error) -> &'static str {
    match exit_code(e) {
        1 => "hypothesis",
        2 => "config",
        _ => "numerical",
    }
}
