//! Extended second variation: the modified cost `c̃`, the singular LQ problem
//! on the singular arc and its coercivity via the LQ Hamiltonian flow, with a
//! brute-force discretized oracle.

mod coercivity;
mod ctilde;
mod lq;
mod oracle;

use std::io::Write;

pub use coercivity::{
    boundary_value_with_omega, coercivity_test, default_margin, lq_hamiltonian_flow, lq_transition_matrix,
    CoercivityReport, LQFlow, OracleResult,
};
pub use ctilde::{build_ctilde, build_ctilde_at, CostCase, ModifiedCost, INVARIANCE_TOL};
pub use lq::{assemble_lq, LQData, LqOptions, K_ZERO_TOL};
pub(crate) use coercivity::min_singular_value;
pub use oracle::{coercivity_oracle, oracle_form_value, oracle_matrix};

use crate::error::{Error, Result};
use crate::extremal::{csv_number, io_err};

/// CSV with columns `t, R, gdot1.., a1..`.
pub fn write_lq_csv<W: Write>(lq: &LQData, out: W) -> Result<()> {
    let n = lq.dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "R".to_string()];
    header.extend((1..=n).map(|i| format!("gdot{i}")));
    header.extend((1..=n).map(|i| format!("a{i}")));
    w.write_record(&header).map_err(io_err)?;
    for i in 0..lq.times.len() {
        let mut row = vec![csv_number(lq.times[i]), csv_number(lq.r[i])];
        row.extend(lq.gdot[i].iter().map(|&v| csv_number(v)));
        row.extend(lq.crossform[i].iter().map(|&v| csv_number(v)));
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}
