//! Hamiltonian lifts, Poisson brackets of lifts and adjoint flows on T*ℝⁿ.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};
use crate::fieldalg::integrate::{integrate, OdeOptions, Solution, Tolerances};
use crate::fieldalg::{SmoothField, TimeField};

/// A point `(x, p)` of the cotangent bundle in the global chart; the pairing
/// with a tangent vector `v` is `p·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct CotangentPoint {
    pub x: DVector<f64>,
    pub p: DVector<f64>,
}

impl CotangentPoint {
    pub fn new(x: DVector<f64>, p: DVector<f64>) -> Result<Self> {
        check_dim("cotangent point", x.len(), p.len())?;
        Ok(Self { x, p })
    }

    pub fn from_slices(x: &[f64], p: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(x), DVector::from_column_slice(p))
    }

    /// Splits a packed `[x, p]` state.
    pub fn from_packed(y: &[f64]) -> Self {
        let n = y.len() / 2;
        Self {
            x: DVector::from_column_slice(&y[..n]),
            p: DVector::from_column_slice(&y[n..2 * n]),
        }
    }

    pub fn packed(&self) -> Vec<f64> {
        self.x.iter().chain(self.p.iter()).copied().collect()
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn norm(&self) -> f64 {
        (self.x.norm_squared() + self.p.norm_squared()).sqrt()
    }
}

/// A tangent vector to T*ℝⁿ in chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector {
    pub dx: DVector<f64>,
    pub dp: DVector<f64>,
}

/// Canonical symplectic form `σ(a, b) = a.dp·b.dx − b.dp·a.dx`.
pub fn sigma(a: &PhaseVector, b: &PhaseVector) -> f64 {
    a.dp.dot(&b.dx) - b.dp.dot(&a.dx)
}

/// `⟨ℓ, f(πℓ)⟩`.
pub fn lifted_value(f: &SmoothField, l: &CotangentPoint) -> Result<f64> {
    check_dim("lifted value", f.dim(), l.dim())?;
    Ok(l.p.dot(&f.eval(l.x.as_slice())))
}

/// Hamiltonian vector field of the lift of `f`: `(f(x), −p·Df(x))`.
pub fn lift_vector(f: &SmoothField, l: &CotangentPoint) -> PhaseVector {
    let x = l.x.as_slice();
    PhaseVector {
        dx: f.eval(x),
        dp: -(f.jacobian(x).transpose() * &l.p),
    }
}

/// Poisson bracket of two Hamiltonians given their partial gradients at a
/// point: `{F, G} = G_x·F_p − G_p·F_x`, the derivative of `G` along the flow of `F`.
pub fn poisson_from_gradients(
    f_x: &DVector<f64>,
    f_p: &DVector<f64>,
    g_x: &DVector<f64>,
    g_p: &DVector<f64>,
) -> f64 {
    g_x.dot(f_p) - g_p.dot(f_x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Generator {
    H1,
    H2,
    H3,
    F1,
}

/// An iterated bracket of the edge Hamiltonians, e.g. `H232 = {H2, {H3, H2}}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BracketWord {
    Atom(Generator),
    Bracket(Box<BracketWord>, Box<BracketWord>),
}

impl BracketWord {
    pub fn bracket(a: BracketWord, b: BracketWord) -> Self {
        Self::Bracket(Box::new(a), Box::new(b))
    }

    pub fn atom(g: Generator) -> Self {
        Self::Atom(g)
    }

    /// `L = {F1, {H2, F1}}`, equal to `H323 + H232`.
    pub fn l() -> Self {
        use Generator::*;
        Self::bracket(Self::Atom(F1), Self::bracket(Self::Atom(H2), Self::Atom(F1)))
    }

    /// Number of generators in the word.
    pub fn len(&self) -> usize {
        match self {
            Self::Atom(_) => 1,
            Self::Bracket(a, b) => a.len() + b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl fmt::Display for BracketWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Atom(g) => write!(f, "{g:?}"),
            Self::Bracket(a, b) => write!(f, "{{{a},{b}}}"),
        }
    }
}

/// Accepts `H1`, `H2`, `H3`, `F1`, `L`, digit words such as `H12`, `H232`
/// (right-nested: `Hijk = {Hi, {Hj, Hk}}`) and explicit `{A,B}` forms.
impl FromStr for BracketWord {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let w = parse_word(s.trim()).ok_or_else(|| Error::UnknownWord(s.to_string()))?;
        if w.len() > 3 {
            return Err(Error::UnknownWord(format!("{s} (depth above 3)")));
        }
        Ok(w)
    }
}

fn parse_word(s: &str) -> Option<BracketWord> {
    use Generator::*;
    let up = s.to_ascii_uppercase();
    match up.as_str() {
        "L" => return Some(BracketWord::l()),
        "F1" => return Some(BracketWord::Atom(F1)),
        _ => {}
    }
    if let Some(inner) = s.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
        let mut depth = 0i32;
        for (i, c) in inner.char_indices() {
            match c {
                '{' => depth += 1,
                '}' => depth -= 1,
                ',' if depth == 0 => {
                    let a = parse_word(inner[..i].trim())?;
                    let b = parse_word(inner[i + 1..].trim())?;
                    return Some(BracketWord::bracket(a, b));
                }
                _ => {}
            }
        }
        return None;
    }
    let digits = up.strip_prefix('H')?;
    if digits.is_empty() {
        return None;
    }
    let gens: Option<Vec<Generator>> = digits
        .chars()
        .map(|c| match c {
            '1' => Some(H1),
            '2' => Some(H2),
            '3' => Some(H3),
            _ => None,
        })
        .collect();
    let gens = gens?;
    let mut it = gens.into_iter().rev();
    let mut w = BracketWord::Atom(it.next()?);
    for g in it {
        w = BracketWord::bracket(BracketWord::Atom(g), w);
    }
    Some(w)
}

/// Bracket fields of the edge `(h1, h2, h3)` with `f1 = h3 − h2`.
///
/// Poisson brackets of lifts are evaluated as lifts of Lie brackets; the
/// words used by the certification pipeline are built once up front.
#[derive(Debug, Clone)]
pub struct EdgeCalculus {
    pub h1: SmoothField,
    pub h2: SmoothField,
    pub h3: SmoothField,
    pub f1: SmoothField,
    /// `[h1, h2]`
    pub h12: SmoothField,
    /// `[h2, h3] = [h2, f1]`
    pub h23: SmoothField,
    /// `[h2, [h3, h2]]`
    pub h232: SmoothField,
    /// `[h3, [h2, h3]]`
    pub h323: SmoothField,
    /// `[f1, [h2, f1]]`
    pub l: SmoothField,
}

impl EdgeCalculus {
    pub fn new(h1: SmoothField, h2: SmoothField, h3: SmoothField) -> Result<Self> {
        check_dim("edge fields", h1.dim(), h2.dim())?;
        check_dim("edge fields", h1.dim(), h3.dim())?;
        let f1 = h3.sub(&h2)?;
        let h12 = h1.bracket(&h2)?;
        let h23 = h2.bracket(&h3)?;
        let h32 = h3.bracket(&h2)?;
        let h232 = h2.bracket(&h32)?;
        let h323 = h3.bracket(&h23)?;
        let l = f1.bracket(&h2.bracket(&f1)?)?;
        Ok(Self {
            h1,
            h2,
            h3,
            f1,
            h12,
            h23,
            h232,
            h323,
            l,
        })
    }

    pub fn dim(&self) -> usize {
        self.h1.dim()
    }

    fn generator(&self, g: Generator) -> &SmoothField {
        match g {
            Generator::H1 => &self.h1,
            Generator::H2 => &self.h2,
            Generator::H3 => &self.h3,
            Generator::F1 => &self.f1,
        }
    }

    /// The vector field whose lift is the Hamiltonian of `word`.
    pub fn field_of(&self, word: &BracketWord) -> Result<SmoothField> {
        if let Some(f) = self.cached(word) {
            return Ok(f.clone());
        }
        match word {
            BracketWord::Atom(g) => Ok(self.generator(*g).clone()),
            BracketWord::Bracket(a, b) => self.field_of(a)?.bracket(&self.field_of(b)?),
        }
    }

    fn cached(&self, word: &BracketWord) -> Option<&SmoothField> {
        use Generator::*;
        let a = BracketWord::Atom;
        let b = BracketWord::bracket;
        if *word == b(a(H1), a(H2)) {
            Some(&self.h12)
        } else if *word == b(a(H2), a(H3)) || *word == b(a(H2), a(F1)) {
            Some(&self.h23)
        } else if *word == b(a(H2), b(a(H3), a(H2))) {
            Some(&self.h232)
        } else if *word == b(a(H3), b(a(H2), a(H3))) {
            Some(&self.h323)
        } else if *word == BracketWord::l() {
            Some(&self.l)
        } else {
            None
        }
    }

    pub fn poisson_lifted(&self, word: &BracketWord, l: &CotangentPoint) -> Result<f64> {
        lifted_value(&self.field_of(word)?, l)
    }

    /// Convenience: parse `word` then evaluate.
    pub fn eval_word(&self, word: &str, l: &CotangentPoint) -> Result<f64> {
        self.poisson_lifted(&word.parse()?, l)
    }

    /// Singular feedback `H232 / L`.
    pub fn singular_feedback(&self, l: &CotangentPoint) -> Result<f64> {
        Ok(lifted_value(&self.h232, l)? / lifted_value(&self.l, l)?)
    }

    pub fn f1_value(&self, l: &CotangentPoint) -> f64 {
        l.p.dot(&self.f1.eval(l.x.as_slice()))
    }

    pub fn h23_value(&self, l: &CotangentPoint) -> f64 {
        l.p.dot(&self.h23.eval(l.x.as_slice()))
    }

    pub fn l_value(&self, l: &CotangentPoint) -> f64 {
        l.p.dot(&self.l.eval(l.x.as_slice()))
    }
}

/// Adjoint trajectory `(x(t), p(t))` stored as packed `[x, p]` dense output.
#[derive(Debug, Clone)]
pub struct CotangentTrajectory {
    sol: Solution,
}

impl CotangentTrajectory {
    pub fn from_solution(sol: Solution) -> Self {
        Self { sol }
    }

    pub fn at(&self, t: f64) -> CotangentPoint {
        CotangentPoint::from_packed(&self.sol.eval(t))
    }

    pub fn start(&self) -> CotangentPoint {
        CotangentPoint::from_packed(&self.sol.node_states()[0])
    }

    pub fn end(&self) -> CotangentPoint {
        CotangentPoint::from_packed(self.sol.final_state())
    }

    pub fn t_start(&self) -> f64 {
        self.sol.t_start()
    }

    pub fn t_end(&self) -> f64 {
        self.sol.t_end()
    }

    pub fn solution(&self) -> &Solution {
        &self.sol
    }
}

/// Right-hand side of `ẋ = f_t(x)`, `ṗ = −p·Df_t(x)` on a packed state.
pub fn adjoint_rhs(field: &dyn TimeField, t: f64, y: &[f64], dy: &mut [f64]) {
    let n = field.dim();
    field.eval_into(t, &y[..n], &mut dy[..n]);
    let a = field.jacobian(t, &y[..n]);
    for j in 0..n {
        let mut s = 0.0;
        for i in 0..n {
            s += y[n + i] * a[(i, j)];
        }
        dy[n + j] = -s;
    }
}

/// Flows `ℓ` (given at `t_from`) to `t_to`; backward time is allowed.
pub fn adjoint_flow(
    field: &dyn TimeField,
    l: &CotangentPoint,
    t_from: f64,
    t_to: f64,
    tol: Tolerances,
) -> Result<CotangentTrajectory> {
    check_dim("adjoint flow", field.dim(), l.dim())?;
    let sol = integrate(
        |t, y, dy| adjoint_rhs(field, t, y, dy),
        t_from,
        &l.packed(),
        t_to,
        &OdeOptions::with_tol(tol),
    )?;
    Ok(CotangentTrajectory { sol })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_parse() {
        use Generator::*;
        let w: BracketWord = "H232".parse().unwrap();
        let expected = BracketWord::bracket(
            BracketWord::Atom(H2),
            BracketWord::bracket(BracketWord::Atom(H3), BracketWord::Atom(H2)),
        );
        assert_eq!(w, expected);
        assert_eq!("{H2,{H3,H2}}".parse::<BracketWord>().unwrap(), expected);
        assert_eq!("L".parse::<BracketWord>().unwrap(), BracketWord::l());
        assert!("H4".parse::<BracketWord>().is_err());
        assert!("H1232".parse::<BracketWord>().is_err());
        assert!("Q".parse::<BracketWord>().is_err());
    }

    #[test]
    fn sigma_is_antisymmetric() {
        let a = PhaseVector {
            dx: DVector::from_vec(vec![1.0, 2.0]),
            dp: DVector::from_vec(vec![0.5, -1.0]),
        };
        let b = PhaseVector {
            dx: DVector::from_vec(vec![-3.0, 0.25]),
            dp: DVector::from_vec(vec![2.0, 1.0]),
        };
        assert_eq!(sigma(&a, &b), -sigma(&b, &a));
        assert_eq!(sigma(&a, &a), 0.0);
    }
}
