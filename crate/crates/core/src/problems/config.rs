use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use toml::Spanned;

use super::bilinear::{bilinear_to_mayer, BilinearData};
use super::expr::{default_variables, parse_polynomial};
use crate::error::{Error, Result};
use crate::extremal::{ControlAffineProblem, Cost, Edge, ShootingGuess};
use crate::fieldalg::{Polynomial, SmoothField, Tolerances};

/// Numerical settings; every key is optional in the `[solver]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub rtol: f64,
    pub atol: f64,
    pub max_iterations: usize,
    pub samples_per_arc: usize,
    pub delta_fraction: f64,
    pub condition_margin: f64,
    /// Absolute coercivity margin; when absent it is `1e-7 · max R(t)`.
    pub coercivity_margin: Option<f64>,
    /// Grid intervals of the LQ data on `[τ2, T]`.
    pub lq_intervals: usize,
    pub oracle_intervals: usize,
    pub probe_times: usize,
    pub tube_radius: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            max_iterations: 60,
            samples_per_arc: 400,
            delta_fraction: 1e-3,
            condition_margin: 1e-10,
            coercivity_margin: None,
            lq_intervals: 400,
            oracle_intervals: 128,
            probe_times: 50,
            tube_radius: 0.05,
            trials: 100,
            seed: 0,
        }
    }
}

impl SolverSettings {
    /// Rejects values no stage can work with.
    pub fn validate(&self) -> Result<()> {
        Tolerances::new(self.rtol, self.atol).validate()?;
        let positive = [
            ("delta_fraction", self.delta_fraction),
            ("tube_radius", self.tube_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("solver.{name} must be positive, got {v}")));
            }
        }
        if !(self.condition_margin >= 0.0) || self.coercivity_margin.is_some_and(|m| !(m >= 0.0)) {
            return Err(Error::Config("margins must be non-negative".into()));
        }
        let counts = [
            ("max_iterations", self.max_iterations, 1),
            ("samples_per_arc", self.samples_per_arc, 2),
            ("lq_intervals", self.lq_intervals, 2),
            ("oracle_intervals", self.oracle_intervals, 8),
            ("probe_times", self.probe_times, 2),
        ];
        for (name, v, min) in counts {
            if v < min {
                return Err(Error::Config(format!("solver.{name} must be at least {min}, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub problem: ControlAffineProblem,
    pub guess: ShootingGuess,
    pub settings: SolverSettings,
    /// State dimension as declared, before any Bolza augmentation.
    pub declared_dim: usize,
    pub augmented: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: RawProblem,
    fields: Option<RawFields>,
    bilinear: Option<RawBilinear>,
    cost: Option<RawCost>,
    structure: Option<RawStructure>,
    #[serde(default)]
    solver: SolverSettings,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    name: Option<String>,
    dim: Option<usize>,
    variables: Option<Vec<String>>,
    x0: Option<Vec<f64>>,
    horizon: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFields {
    vertices: Vec<Vec<Spanned<String>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCost {
    terminal: Option<Spanned<String>>,
    running: Option<Spanned<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStructure {
    edge: Option<[usize; 3]>,
    guess: Option<ShootingGuess>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct RawBilinear {
    A: Vec<Vec<f64>>,
    B: Vec<Vec<Vec<f64>>>,
    q: Vec<f64>,
    r: Vec<f64>,
    s: Vec<f64>,
    u_max: Vec<f64>,
    N0: Vec<f64>,
}

/// 1-based line and column of byte offset `pos` in `text`.
fn line_col(text: &str, pos: usize) -> (usize, usize) {
    let pos = pos.min(text.len());
    let before = &text[..pos];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map(|l| l.chars().count()).unwrap_or(0) + 1;
    (line, col)
}

fn parse_expr(text: &str, s: &Spanned<String>, vars: &[String]) -> Result<Polynomial> {
    parse_polynomial(s.get_ref(), vars).map_err(|e| {
        // span covers the quoted literal; skip the opening quote
        let inner_start = s.span().start + 1;
        let byte_in_expr: usize = s.get_ref().chars().take(e.offset).map(char::len_utf8).sum();
        let (line, column) = line_col(text, inner_start + byte_in_expr);
        Error::Parse {
            line,
            column,
            message: format!("{} in `{}`", e.message, s.get_ref()),
        }
    })
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map(Vec::len).unwrap_or(0);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Config(format!("{what} has rows of different lengths")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

fn edge_from(raw: Option<[usize; 3]>, default: Edge) -> Result<Edge> {
    match raw {
        None => Ok(default),
        Some(e) => {
            if e.contains(&0) {
                return Err(Error::Config("edge indices are 1-based".into()));
            }
            Ok(Edge {
                h1: e[0] - 1,
                h2: e[1] - 1,
                h3: e[2] - 1,
            })
        }
    }
}

/// Parses a problem file. Expressions are compiled to polynomials with exact
/// derivatives; a running cost appends one state with zero initial value.
pub fn parse_problem_config(text: &str) -> Result<LoadedProblem> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
        Error::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    raw.solver.validate()?;

    let structure = raw.structure.unwrap_or(RawStructure {
        edge: None,
        guess: None,
    });
    let Some(mut guess) = structure.guess else {
        return Err(Error::Config(
            "missing [structure.guess]: a shooting guess with x_final, tau1 and tau2 is required".into(),
        ));
    };
    let name = raw.problem.name.clone().unwrap_or_else(|| "problem".into());

    if let Some(b) = raw.bilinear {
        if raw.fields.is_some() || raw.cost.is_some() {
            return Err(Error::Config("[bilinear] replaces [fields] and [cost]; give only one".into()));
        }
        let data = BilinearData {
            a: matrix(&b.A, "A")?,
            b: b.B.iter().enumerate().map(|(j, m)| matrix(m, &format!("B_{}", j + 1))).collect::<Result<_>>()?,
            q: DVector::from_vec(b.q),
            r: DVector::from_vec(b.r),
            s: DVector::from_vec(b.s),
            u_max: DVector::from_vec(b.u_max),
            horizon: raw.problem.horizon,
            n0: DVector::from_vec(b.N0),
        };
        let edge = structure.edge.map(|_| edge_from(structure.edge, Edge { h1: 1, h2: 0, h3: 1 })).transpose()?;
        let mut problem = bilinear_to_mayer(&data, edge)?;
        problem.name = name;
        let n = data.a.nrows();
        if guess.x_final.len() == n {
            guess.x_final.push(0.0);
        }
        return Ok(LoadedProblem {
            problem,
            guess,
            settings: raw.solver,
            declared_dim: n,
            augmented: true,
        });
    }

    let fields = raw
        .fields
        .ok_or_else(|| Error::Config("missing [fields] (or [bilinear]) section".into()))?;
    let n = match (raw.problem.dim, &raw.problem.x0) {
        (Some(d), _) => d,
        (None, Some(x0)) => x0.len(),
        (None, None) => return Err(Error::Config("[problem] needs dim or x0".into())),
    };
    let vars = raw.problem.variables.clone().unwrap_or_else(|| default_variables(n));
    if vars.len() != n {
        return Err(Error::Config(format!("{} variable names declared for dimension {n}", vars.len())));
    }
    let x0 = raw
        .problem
        .x0
        .clone()
        .ok_or_else(|| Error::Config("[problem] x0 is required".into()))?;
    if x0.len() != n {
        return Err(Error::Config(format!("x0 has length {}, expected {n}", x0.len())));
    }
    if fields.vertices.is_empty() {
        return Err(Error::Config("[fields] vertices is empty".into()));
    }
    let mut vertex_polys = Vec::new();
    for (k, v) in fields.vertices.iter().enumerate() {
        if v.len() != n {
            return Err(Error::Config(format!(
                "vertex {} has {} components, expected {n}",
                k + 1,
                v.len()
            )));
        }
        vertex_polys.push(v.iter().map(|s| parse_expr(text, s, &vars)).collect::<Result<Vec<_>>>()?);
    }
    let cost = raw.cost.ok_or_else(|| Error::Config("missing [cost] section".into()))?;
    let terminal = match &cost.terminal {
        Some(s) => parse_expr(text, s, &vars)?,
        None => Polynomial::zero(n),
    };
    let running = cost.running.as_ref().map(|s| parse_expr(text, s, &vars)).transpose()?;
    if cost.terminal.is_none() && running.is_none() {
        return Err(Error::Config("[cost] needs terminal and/or running".into()));
    }

    let (vertex_polys, terminal, x0, augmented) = match running {
        None => (vertex_polys, terminal, x0, false),
        Some(run) => {
            let nt = n + 1;
            let verts = vertex_polys
                .into_iter()
                .map(|comps| {
                    let mut c: Vec<Polynomial> = comps.iter().map(|p| p.extend_vars(nt)).collect();
                    c.push(run.extend_vars(nt));
                    c
                })
                .collect();
            let cost = &terminal.extend_vars(nt) + &Polynomial::variable(nt, n);
            let mut x0 = x0;
            x0.push(0.0);
            if guess.x_final.len() == n {
                guess.x_final.push(0.0);
            }
            (verts, cost, x0, true)
        }
    };
    let fields = vertex_polys
        .into_iter()
        .map(SmoothField::polynomial)
        .collect::<Result<Vec<_>>>()?;
    let default_edge = Edge {
        h1: 0,
        h2: 1.min(fields.len() - 1),
        h3: 0,
    };
    let edge = edge_from(structure.edge, default_edge)?;
    let problem = ControlAffineProblem::new(
        name,
        fields,
        Cost::polynomial(terminal),
        DVector::from_vec(x0),
        raw.problem.horizon,
        edge,
    )?;
    Ok(LoadedProblem {
        problem,
        guess,
        settings: raw.solver,
        declared_dim: n,
        augmented,
    })
}

pub fn load_problem_file(path: impl AsRef<Path>) -> Result<LoadedProblem> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_problem_config(&text)
}

#[derive(Serialize)]
struct OutConfig<'a> {
    problem: OutProblem<'a>,
    fields: OutFields,
    cost: OutCost,
    structure: OutStructure<'a>,
    solver: &'a SolverSettings,
}

#[derive(Serialize)]
struct OutProblem<'a> {
    name: &'a str,
    dim: usize,
    x0: Vec<f64>,
    horizon: f64,
}

#[derive(Serialize)]
struct OutFields {
    vertices: Vec<Vec<String>>,
}

#[derive(Serialize)]
struct OutCost {
    terminal: String,
}

#[derive(Serialize)]
struct OutStructure<'a> {
    edge: [usize; 3],
    guess: &'a ShootingGuess,
}

/// Writes a polynomial problem in Mayer form; the output parses back to the same problem.
pub fn serialize_problem(
    prob: &ControlAffineProblem,
    guess: &ShootingGuess,
    settings: &SolverSettings,
) -> Result<String> {
    let not_poly = || Error::Config("only polynomial problems can be serialized".into());
    let vertices = prob
        .fields
        .iter()
        .map(|f| {
            f.components()
                .map(|c| c.iter().map(|p| p.to_string()).collect())
                .ok_or_else(not_poly)
        })
        .collect::<Result<Vec<Vec<String>>>>()?;
    let terminal = prob.cost.as_polynomial().ok_or_else(not_poly)?.to_string();
    let out = OutConfig {
        problem: OutProblem {
            name: &prob.name,
            dim: prob.dim(),
            x0: prob.x0.iter().copied().collect(),
            horizon: prob.horizon,
        },
        fields: OutFields { vertices },
        cost: OutCost { terminal },
        structure: OutStructure {
            edge: [prob.edge.h1 + 1, prob.edge.h2 + 1, prob.edge.h3 + 1],
            guess,
        },
        solver: settings,
    };
    toml::to_string(&out).map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[problem]
x0 = [0.0, 1.0]
horizon = 2.0

[fields]
vertices = [["x2", "-x1 - 1"], ["x2", "-x1 + 1"]]

[cost]
terminal = "x1^2"

[structure]
edge = [1, 2, 1]

[structure.guess]
x_final = [0.0, 0.0]
tau1 = 0.5
tau2 = 1.0
"#;

    #[test]
    fn minimal_parses() {
        let lp = parse_problem_config(MINIMAL).unwrap();
        assert_eq!(lp.problem.dim(), 2);
        assert_eq!(lp.problem.fields.len(), 2);
        assert!(!lp.augmented);
        assert_eq!(lp.settings, SolverSettings::default());
    }

    #[test]
    fn expression_error_location() {
        let bad = MINIMAL.replace("\"-x1 + 1\"", "\"-x1 + y\"");
        match parse_problem_config(&bad).unwrap_err() {
            Error::Parse { line, column, message } => {
                assert_eq!(line, 7);
                let row = bad.lines().nth(line - 1).unwrap();
                assert_eq!(row.chars().nth(column - 1), Some('y'));
                assert!(message.contains("unknown identifier"));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn toml_syntax_error_location() {
        let bad = MINIMAL.replace("horizon = 2.0", "horizon = = 2.0");
        assert!(matches!(parse_problem_config(&bad), Err(Error::Parse { line: 4, .. })));
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = MINIMAL.replace("[solver]", "").replace("horizon = 2.0", "horizon = 2.0\nhorizn = 3");
        assert!(parse_problem_config(&bad).is_err());
    }
}
