//! Command-line front end: loads a problem file, runs the certification
//! stages and writes verdicts and CSV artifacts.

pub mod pipeline;
pub mod verdict;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use bbscert::extremal::write_extremal_csv;
use bbscert::overmax::{write_perturb_csv, write_probe_csv};
use bbscert::problems::{load_problem_file, LoadedProblem};
use bbscert::secondvar::write_lq_csv;
use bbscert::{Error, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pipeline::Timer;
use verdict::{
    CoercivitySummary, ErrorInfo, OracleComparison, PerturbationSummary, ProbeSummary, ProblemEcho, ShootingSummary,
    Stage, Stages, Status, Verdict,
};

/// Residual bound of the ι-conjugacy check.
pub const IOTA_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "bbscert", version, about = "Certify bang-bang-singular extremals as strong local minimizers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the shooting problem and export the extremal.
    Shoot(Common),
    /// Shooting followed by the pointwise conditions.
    Check(Common),
    /// Full pipeline with a verdict.
    Certify(Common),
    /// Compare the Hamiltonian coercivity test with the discretized oracle.
    LqOracle {
        #[command(flatten)]
        common: Common,
        /// Oracle subintervals.
        #[arg(long, default_value_t = 128)]
        n: usize,
    },
    /// Invertibility probe of the overmaximized flow and the ι-conjugacy check.
    Probe(Common),
    /// Empirical comparison against admissible perturbations.
    Perturb {
        #[command(flatten)]
        common: Common,
        /// Number of random perturbations.
        #[arg(long)]
        trials: Option<usize>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Problem file (TOML).
    pub config: PathBuf,
    /// Relative integration tolerance; the absolute one is a hundredth of it.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Grid intervals of the LQ data on the singular arc.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Absolute coercivity margin.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Directory for verdict.json and CSV artifacts.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed of the perturbation and sampling RNGs.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

impl Common {
    fn load(&self) -> Result<LoadedProblem> {
        let mut lp = load_problem_file(&self.config)?;
        let s = &mut lp.settings;
        if let Some(t) = self.tol {
            s.rtol = t;
            s.atol = t * 1e-2;
        }
        if let Some(g) = self.grid {
            s.lq_intervals = g;
        }
        if let Some(m) = self.margin {
            s.coercivity_margin = Some(m);
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        s.validate()?;
        Ok(lp)
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    execute(&cli.command)
}

pub fn execute(cmd: &Command) -> i32 {
    let common = match cmd {
        Command::Shoot(c) | Command::Check(c) | Command::Certify(c) | Command::Probe(c) => c,
        Command::LqOracle { common, .. } | Command::Perturb { common, .. } => common,
    };
    let outcome = common.load().and_then(|lp| match cmd {
        Command::Shoot(c) => cmd_shoot(c, &lp),
        Command::Check(c) => cmd_check(c, &lp),
        Command::Certify(c) => cmd_certify(c, &lp),
        Command::LqOracle { common, n } => cmd_lq_oracle(common, &lp, *n),
        Command::Probe(c) => cmd_probe(c, &lp),
        Command::Perturb { common, trials } => {
            let mut lp = lp;
            if let Some(t) = trials {
                lp.settings.trials = *t;
            }
            cmd_perturb(common, &lp)
        }
    });
    match outcome {
        Ok(code) => code,
        Err(e) => report_error(common, &e),
    }
}

#[derive(Serialize)]
struct ErrorOutput {
    error: ErrorInfo,
}

fn report_error(c: &Common, e: &Error) -> i32 {
    let info = ErrorInfo::from(e);
    let code = info.exit_code;
    if c.json {
        print_json(&ErrorOutput { error: info });
    } else {
        eprintln!("error: {e}");
    }
    code
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", to_json(v));
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize")
}

fn out_file(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn status_word(s: Status) -> &'static str {
    match s {
        Status::Pass => "pass",
        Status::Fail => "FAIL",
        Status::Error => "ERROR",
        Status::Skipped => "skipped",
    }
}

fn cmd_shoot(c: &Common, lp: &LoadedProblem) -> Result<i32> {
    let sr = pipeline::shoot(lp)?;
    if let Some(dir) = &c.out {
        write_extremal_csv(&lp.problem, &sr.extremal, out_file(dir, "extremal.csv")?)?;
    }
    let summary = ShootingSummary::new(&sr);
    if c.json {
        print_json(&summary);
    } else {
        print_shooting(&summary);
    }
    Ok(0)
}

fn print_shooting(s: &ShootingSummary) {
    println!(
        "shooting: τ1 = {:.7}, τ2 = {:.7} after {} iterations (residual {:.2e}{})",
        s.tau1,
        s.tau2,
        s.iterations,
        s.residual,
        if s.globalized { ", globalized" } else { "" }
    );
    println!("  x(T) = {:?}", s.x_final);
    for d in &s.diagnostics {
        println!("  note: {d}");
    }
}

#[derive(Serialize)]
struct CheckOutput {
    shooting: ShootingSummary,
    conditions: bbscert::extremal::ConditionReport,
    pass: bool,
}

fn cmd_check(c: &Common, lp: &LoadedProblem) -> Result<i32> {
    let sr = pipeline::shoot(lp)?;
    let report = pipeline::conditions(lp, &sr);
    if let Some(dir) = &c.out {
        write_extremal_csv(&lp.problem, &sr.extremal, out_file(dir, "extremal.csv")?)?;
    }
    let pass = report.passed();
    let out = CheckOutput {
        shooting: ShootingSummary::new(&sr),
        conditions: report,
        pass,
    };
    if c.json {
        print_json(&out);
    } else {
        print_shooting(&out.shooting);
        print_conditions(&out.conditions);
    }
    Ok(if pass { 0 } else { 1 })
}

fn print_conditions(r: &bbscert::extremal::ConditionReport) {
    for ch in &r.checks {
        let v = match ch.verdict {
            bbscert::extremal::Verdict::Pass => "pass",
            bbscert::extremal::Verdict::Fail => "FAIL",
            bbscert::extremal::Verdict::Skipped => "skipped",
        };
        match ch.margin {
            Some(m) => println!("  {:<32} {v:<7} margin {m:.3e}", ch.name),
            None => println!("  {:<32} {v}", ch.name),
        }
    }
}

/// Runs every stage; required stages short-circuit the ones that need them.
pub fn certify(lp: &LoadedProblem) -> (Verdict, Artifacts) {
    let mut times = BTreeMap::new();
    let mut art = Artifacts::default();
    let required = true;

    let t = Timer::start();
    let shot = pipeline::shoot(lp);
    times.insert("shooting", t.ms());
    let sr = match shot {
        Ok(sr) => sr,
        Err(e) => {
            let stages = Stages {
                shooting: Stage::failed(required, &e),
                conditions: Stage::skipped(required),
                coercivity: Stage::skipped(required),
                probe: Stage::skipped(false),
                perturbation: Stage::skipped(false),
            };
            return (Verdict::new(ProblemEcho::new(lp), stages, times), art);
        }
    };
    let mut csv = Vec::new();
    if write_extremal_csv(&lp.problem, &sr.extremal, &mut csv).is_ok() {
        art.extremal = Some(csv);
    }
    let shooting = Stage::done(required, true, ShootingSummary::new(&sr));

    let t = Timer::start();
    let cond = pipeline::conditions(lp, &sr);
    times.insert("conditions", t.ms());
    let conditions = Stage::done(required, cond.passed(), cond);

    let t = Timer::start();
    let sv = pipeline::second_variation(lp, &sr, Some(lp.settings.oracle_intervals));
    times.insert("coercivity", t.ms());
    let (coercivity, sv) = match sv {
        Ok(sv) => {
            let mut csv = Vec::new();
            if write_lq_csv(&sv.lq, &mut csv).is_ok() {
                art.lq = Some(csv);
            }
            let summary = CoercivitySummary {
                lq_intervals: lp.settings.lq_intervals,
                r_min: sv.lq.r.iter().copied().fold(f64::INFINITY, f64::min),
                r_max: sv.lq.r_scale(),
                k: sv.lq.k.iter().copied().collect(),
                hamiltonian: sv.report.clone(),
            };
            (Stage::done(required, sv.report.pass, summary), Some(sv))
        }
        Err(e) => {
            let mut s = Stage::failed(required, &e);
            if matches!(e, Error::SecondLieDerivativeNotPositive { .. }) {
                s.status = Status::Fail;
            }
            (s, None)
        }
    };

    let t = Timer::start();
    let probe = match &sv {
        None => Stage::skipped(false),
        Some(sv) => {
            let res = pipeline::machinery(&sr, sv).and_then(|m| Ok((pipeline::probe(lp, &m)?, pipeline::iota(&m, sv)?)));
            match res {
                Ok((inv, iota)) => {
                    let mut csv = Vec::new();
                    if write_probe_csv(&inv, &mut csv).is_ok() {
                        art.probe = Some(csv);
                    }
                    let pass = inv.pass && iota.max_residual <= IOTA_TOLERANCE;
                    Stage::done(
                        false,
                        pass,
                        ProbeSummary {
                            invertibility: inv,
                            iota,
                            iota_tolerance: IOTA_TOLERANCE,
                        },
                    )
                }
                Err(e) => Stage::failed(false, &e),
            }
        }
    };
    times.insert("probe", t.ms());

    let t = Timer::start();
    let perturbation = match pipeline::perturbation(lp, &sr) {
        Ok(r) => {
            let mut csv = Vec::new();
            if write_perturb_csv(&r, &mut csv).is_ok() {
                art.perturb = Some(csv);
            }
            Stage::done(false, r.pass, PerturbationSummary::new(&r))
        }
        Err(e) => Stage::failed(false, &e),
    };
    times.insert("perturbation", t.ms());

    let stages = Stages {
        shooting,
        conditions,
        coercivity,
        probe,
        perturbation,
    };
    (Verdict::new(ProblemEcho::new(lp), stages, times), art)
}

/// CSV bytes produced by [`certify`].
#[derive(Debug, Default)]
pub struct Artifacts {
    pub extremal: Option<Vec<u8>>,
    pub lq: Option<Vec<u8>>,
    pub probe: Option<Vec<u8>>,
    pub perturb: Option<Vec<u8>>,
}

fn cmd_certify(c: &Common, lp: &LoadedProblem) -> Result<i32> {
    let (v, art) = certify(lp);
    if let Some(dir) = &c.out {
        write_text(dir, "verdict.json", &(to_json(&v) + "\n"))?;
        let files = [
            ("extremal.csv", &art.extremal),
            ("lq.csv", &art.lq),
            ("probe.csv", &art.probe),
            ("perturb.csv", &art.perturb),
        ];
        for (name, bytes) in files {
            if let Some(b) = bytes {
                fs::write(dir.join(name), b).map_err(|e| Error::Io(format!("{name}: {e}")))?;
            }
        }
    }
    if c.json {
        print_json(&v);
    } else {
        print_verdict(&v);
    }
    Ok(v.exit_code())
}

fn print_verdict(v: &Verdict) {
    let s = &v.stages;
    let line = |name: &str, st: Status, req: bool, detail: String| {
        let tag = if req { "" } else { " (advisory)" };
        let text = format!("{name:<13} {:<7}{detail}{tag}", status_word(st));
        println!("{}", text.trim_end());
    };
    let err = |e: &Option<ErrorInfo>| e.as_ref().map(|e| e.message.clone()).unwrap_or_default();
    line(
        "shooting",
        s.shooting.status,
        true,
        match &s.shooting.report {
            Some(r) => format!("τ1 = {:.7}, τ2 = {:.7}", r.tau1, r.tau2),
            None => err(&s.shooting.error),
        },
    );
    line(
        "conditions",
        s.conditions.status,
        true,
        match &s.conditions.report {
            Some(r) if !r.passed() => format!("failing: {}", r.failing().join(", ")),
            _ => String::new(),
        },
    );
    line(
        "coercivity",
        s.coercivity.status,
        true,
        match &s.coercivity.report {
            Some(r) => {
                let h = &r.hamiltonian;
                let mut d = format!(
                    "min σ(ζ) = {:.3e} at t = {:.4}",
                    h.conjugate_min_singular_value, h.conjugate_worst_time
                );
                if let Some(b) = h.boundary_value {
                    d += &format!(", boundary {b:.3e}");
                }
                if let Some(o) = &h.oracle {
                    d += &format!(", oracle λmin {:.3e} (N = {})", o.min_eigenvalue, o.intervals);
                }
                d
            }
            None => err(&s.coercivity.error),
        },
    );
    line(
        "probe",
        s.probe.status,
        false,
        match &s.probe.report {
            Some(r) => format!(
                "min σ = {:.3e} at t = {:.4}, ι residual {:.2e}",
                r.invertibility.min_singular_value, r.invertibility.worst_time, r.iota.max_residual
            ),
            None => err(&s.probe.error),
        },
    );
    line(
        "perturbation",
        s.perturbation.status,
        false,
        match &s.perturbation.report {
            Some(r) => format!(
                "min gap {:.3e} over {} trials ({} discarded), dither exponent {:.3}",
                r.min_gap, r.trials, r.discarded, r.dither.exponent
            ),
            None => err(&s.perturbation.error),
        },
    );
    println!("{}", v.certificate);
}

fn cmd_lq_oracle(c: &Common, lp: &LoadedProblem, n: usize) -> Result<i32> {
    let sr = pipeline::shoot(lp)?;
    let sv = pipeline::second_variation(lp, &sr, None)?;
    let oracle = pipeline::oracle(&sv, n)?;
    if let Some(dir) = &c.out {
        write_lq_csv(&sv.lq, out_file(dir, "lq.csv")?)?;
    }
    let agree = oracle.coercive == sv.report.pass;
    let out = OracleComparison {
        hamiltonian: sv.report,
        oracle,
        agree,
    };
    if c.json {
        print_json(&out);
    } else {
        println!(
            "hamiltonian test: {} (min σ(ζ) = {:.3e})",
            if out.hamiltonian.pass { "coercive" } else { "not coercive" },
            out.hamiltonian.conjugate_min_singular_value
        );
        println!(
            "oracle (N = {}): {} (λmin = {:.3e})",
            out.oracle.intervals,
            if out.oracle.coercive { "coercive" } else { "not coercive" },
            out.oracle.min_eigenvalue
        );
        println!("{}", if agree { "agree" } else { "DISAGREE" });
    }
    Ok(if out.oracle.coercive && agree { 0 } else { 1 })
}

fn cmd_probe(c: &Common, lp: &LoadedProblem) -> Result<i32> {
    let sr = pipeline::shoot(lp)?;
    let sv = pipeline::second_variation(lp, &sr, None)?;
    let mach = pipeline::machinery(&sr, &sv)?;
    let inv = pipeline::probe(lp, &mach)?;
    let iota = pipeline::iota(&mach, &sv)?;
    if let Some(dir) = &c.out {
        write_probe_csv(&inv, out_file(dir, "probe.csv")?)?;
    }
    let pass = inv.pass && iota.max_residual <= IOTA_TOLERANCE;
    let out = ProbeSummary {
        invertibility: inv,
        iota,
        iota_tolerance: IOTA_TOLERANCE,
    };
    if c.json {
        print_json(&out);
    } else {
        let r = &out.invertibility;
        println!(
            "invertibility: min σ = {:.3e} at t = {:.4}; τ1 convex combinations ≥ {:.3e}; injectivity ratio {:.3e}",
            r.min_singular_value, r.worst_time, r.tau1_combination_min, r.injectivity_ratio
        );
        for t in &r.sign_changes {
            println!("  degenerate linearization near t = {t:.6}");
        }
        println!("  {}", r.disclaimer);
        println!("ι-conjugacy: max residual {:.3e} (bound {IOTA_TOLERANCE:.0e})", out.iota.max_residual);
        println!("{}", if pass { "pass" } else { "FAIL" });
    }
    Ok(if pass { 0 } else { 1 })
}

fn cmd_perturb(c: &Common, lp: &LoadedProblem) -> Result<i32> {
    let sr = pipeline::shoot(lp)?;
    let r = pipeline::perturbation(lp, &sr)?;
    if let Some(dir) = &c.out {
        write_perturb_csv(&r, out_file(dir, "perturb.csv")?)?;
    }
    let pass = r.pass;
    let summary = PerturbationSummary::new(&r);
    if c.json {
        print_json(&summary);
    } else {
        println!(
            "min gap {:.3e} over {} trials ({} discarded, tube radius {})",
            summary.min_gap, summary.trials, summary.discarded, lp.settings.tube_radius
        );
        if let Some(w) = &summary.worst {
            println!("  smallest: {w}");
        }
        let d = &summary.dither;
        for (s, g) in d.sizes.iter().zip(&d.gaps) {
            println!("  τ1 dither {s:.4}: gap {g:.3e}");
        }
        println!("  growth exponent {:.3}", d.exponent);
        println!("{}", if pass { "pass" } else { "FAIL" });
    }
    Ok(if pass { 0 } else { 1 })
}
