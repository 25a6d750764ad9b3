use std::io::Write;

use super::problem::ControlAffineProblem;
use super::reference::{ArcKind, BBSExtremal};
use crate::error::{Error, Result};

/// Writes the sampled extremal as CSV:
/// `t, x1..xn, p1..pn, u, F1, H23, H232, H323, L`.
///
/// `u` is the weight of `h3` in the active field `h2 + u (h3 − h2)`: 0 on the
/// `h2` arc, `υ̂(t)` on the singular arc. On the `h1` arc it is 1 when `h1` is
/// the vertex `h3` and −1 otherwise.
pub fn write_extremal_csv<W: Write>(prob: &ControlAffineProblem, ext: &BBSExtremal, out: W) -> Result<()> {
    let n = ext.dim();
    let calc = ext.calculus();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=n).map(|i| format!("p{i}")));
    header.extend(["u", "F1", "H23", "H232", "H323", "L"].map(String::from));
    w.write_record(&header).map_err(io_err)?;
    let bang1_u = if prob.edge.h1 == prob.edge.h3 { 1.0 } else { -1.0 };
    for s in &ext.samples {
        let l = s.point();
        let x = s.x.as_slice();
        let u = match s.arc {
            ArcKind::Bang1 => bang1_u,
            ArcKind::Bang2 => 0.0,
            ArcKind::Singular => s.upsilon.unwrap_or(f64::NAN),
        };
        let mut row: Vec<String> = vec![fmt(s.t)];
        row.extend(s.x.iter().map(|v| fmt(*v)));
        row.extend(s.p.iter().map(|v| fmt(*v)));
        row.push(fmt(u));
        for f in [&calc.f1, &calc.h23, &calc.h232, &calc.h323, &calc.l] {
            row.push(fmt(l.p.dot(&f.eval(x))));
        }
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

pub(crate) fn io_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}
