//! Benchmark problems and the TOML problem format.

mod bilinear;
mod config;
pub mod expr;
mod vanderpol;

pub use bilinear::{bilinear_to_mayer, bilinear_vertex_subsets, BilinearData, MAX_BILINEAR_CONTROLS};
pub use config::{load_problem_file, parse_problem_config, serialize_problem, LoadedProblem, SolverSettings};
pub use vanderpol::{vanderpol_problem, vanderpol_u_sing};
