//! The overmaximized Hamiltonian flow around a reference extremal, numerical
//! probes of its projected invertibility, the conjugacy with the LQ flow and
//! an empirical comparison against admissible perturbations.

mod machinery;

pub use machinery::{Branch, OvermaxMachinery, OvermaxOptions, OvermaxTrajectory};
mod perturb;
mod probe;

pub use perturb::{
    compare_admissible, log_slope, write_perturb_csv, ControlSimulator, DitherFit, PerturbOptions, Perturbation,
    PerturbationReport, TrialRecord,
};
pub use probe::{
    antisymplectic_defect, h2_transport_defect, invertibility_probe, iota_conjugacy_check, iota_inverse_matrix,
    iota_matrix, probe_times, write_probe_csv, IotaReport, ProbeOptions, ProbeReport, ProbeSample,
};
