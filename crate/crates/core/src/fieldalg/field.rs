use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::polynomial::Polynomial;
use crate::error::{check_dim, Error, Result};

pub type EvalFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;
pub type JacFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    Analytic,
    Polynomial,
    FiniteDifference,
}

/// Central-difference step for first derivatives at coordinate value `xi`.
pub fn fd_step(xi: f64) -> f64 {
    f64::EPSILON.cbrt() * xi.abs().max(1.0)
}

/// Central-difference step for second derivatives.
pub fn fd_step2(xi: f64) -> f64 {
    f64::EPSILON.powf(0.25) * xi.abs().max(1.0)
}

/// A polynomial compiled to a flat monomial list for fast evaluation.
#[derive(Debug, Clone)]
struct Compiled {
    terms: Vec<(f64, Vec<(usize, i32)>)>,
}

impl Compiled {
    fn new(p: &Polynomial) -> Self {
        let terms = p
            .terms()
            .map(|(e, c)| {
                let factors = e
                    .iter()
                    .enumerate()
                    .filter(|(_, &k)| k > 0)
                    .map(|(i, &k)| (i, k as i32))
                    .collect();
                (c, factors)
            })
            .collect();
        Self { terms }
    }

    #[inline]
    fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (c, fs) in &self.terms {
            let mut m = *c;
            for &(i, k) in fs {
                m *= if k == 1 { x[i] } else { x[i].powi(k) };
            }
            acc += m;
        }
        acc
    }
}

struct PolyField {
    comps: Vec<Polynomial>,
    eval: Vec<Compiled>,
    // row-major: jac[i * n + j] = d comp_i / d x_j
    jac: Vec<Compiled>,
    jac_polys: Vec<Polynomial>,
    // hess[(i * n + j) * n + k]
    hess: Vec<Compiled>,
}

#[derive(Clone)]
enum Repr {
    Poly(Arc<PolyField>),
    Func { eval: EvalFn, jac: Option<JacFn> },
}

/// A smooth vector field on ℝⁿ.
#[derive(Clone)]
pub struct SmoothField {
    dim: usize,
    repr: Repr,
}

impl fmt::Debug for SmoothField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.repr {
            Repr::Poly(p) => {
                let comps: Vec<String> = p.comps.iter().map(|c| c.to_string()).collect();
                f.debug_struct("SmoothField")
                    .field("dim", &self.dim)
                    .field("components", &comps)
                    .finish()
            }
            Repr::Func { .. } => f
                .debug_struct("SmoothField")
                .field("dim", &self.dim)
                .field("kind", &self.kind())
                .finish(),
        }
    }
}

impl SmoothField {
    pub fn polynomial(comps: Vec<Polynomial>) -> Result<Self> {
        let n = comps.len();
        if n == 0 {
            return Err(Error::Config("vector field needs at least one component".into()));
        }
        for c in &comps {
            check_dim("polynomial field", n, c.nvars())?;
        }
        let mut jac_polys = Vec::with_capacity(n * n);
        for c in &comps {
            for j in 0..n {
                jac_polys.push(c.derivative(j));
            }
        }
        let mut hess = Vec::with_capacity(n * n * n);
        for d in &jac_polys {
            for k in 0..n {
                hess.push(Compiled::new(&d.derivative(k)));
            }
        }
        let pf = PolyField {
            eval: comps.iter().map(Compiled::new).collect(),
            jac: jac_polys.iter().map(Compiled::new).collect(),
            jac_polys,
            hess,
            comps,
        };
        Ok(Self {
            dim: n,
            repr: Repr::Poly(Arc::new(pf)),
        })
    }

    pub fn constant(v: &[f64]) -> Self {
        let n = v.len();
        Self::polynomial(v.iter().map(|&c| Polynomial::constant(n, c)).collect())
            .expect("constant field")
    }

    /// The linear field x ↦ A x.
    pub fn linear(a: &DMatrix<f64>) -> Self {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "linear field needs a square matrix");
        let comps = (0..n)
            .map(|i| {
                (0..n).fold(Polynomial::zero(n), |acc, j| {
                    &acc + &Polynomial::variable(n, j).scale(a[(i, j)])
                })
            })
            .collect();
        Self::polynomial(comps).expect("linear field")
    }

    /// A field given only by its values; derivatives fall back to central differences.
    pub fn from_fn<F>(dim: usize, eval: F) -> Self
    where
        F: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            dim,
            repr: Repr::Func {
                eval: Arc::new(eval),
                jac: None,
            },
        }
    }

    pub fn from_fn_with_jacobian<F, J>(dim: usize, eval: F, jac: J) -> Self
    where
        F: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
        J: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            dim,
            repr: Repr::Func {
                eval: Arc::new(eval),
                jac: Some(Arc::new(jac)),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> FieldKind {
        match &self.repr {
            Repr::Poly(_) => FieldKind::Polynomial,
            Repr::Func { jac: Some(_), .. } => FieldKind::Analytic,
            Repr::Func { jac: None, .. } => FieldKind::FiniteDifference,
        }
    }

    pub fn components(&self) -> Option<&[Polynomial]> {
        match &self.repr {
            Repr::Poly(p) => Some(&p.comps),
            Repr::Func { .. } => None,
        }
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        self.eval_into(x, out.as_mut_slice());
        out
    }

    pub fn try_eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_dim("field evaluation", self.dim, x.len())?;
        Ok(self.eval(x))
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        match &self.repr {
            Repr::Poly(p) => {
                for (o, c) in out.iter_mut().zip(&p.eval) {
                    *o = c.eval(x);
                }
            }
            Repr::Func { eval, .. } => out.copy_from_slice(eval(x).as_slice()),
        }
    }

    /// Jacobian; exact for polynomial and analytic kinds, central differences otherwise.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        match &self.repr {
            Repr::Poly(p) => DMatrix::from_fn(n, n, |i, j| p.jac[i * n + j].eval(x)),
            Repr::Func { jac: Some(j), .. } => j(x),
            Repr::Func { eval, jac: None } => fd_jacobian(|y| eval(y), x, n),
        }
    }

    /// Step used by the finite-difference Jacobian at `x`, if one is used.
    pub fn jacobian_fd_step(&self, x: &[f64]) -> Option<f64> {
        match self.kind() {
            FieldKind::FiniteDifference => {
                Some(x.iter().fold(0.0f64, |m, &v| m.max(fd_step(v))))
            }
            _ => None,
        }
    }

    /// Second derivatives: element `i` is the Hessian matrix of component `i`.
    pub fn hessian(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        let n = self.dim;
        match &self.repr {
            Repr::Poly(p) => (0..n)
                .map(|i| DMatrix::from_fn(n, n, |j, k| p.hess[(i * n + j) * n + k].eval(x)))
                .collect(),
            Repr::Func { jac: Some(jac), .. } => {
                // central differences of the analytic Jacobian
                let mut out = vec![DMatrix::zeros(n, n); n];
                let mut xp = x.to_vec();
                for k in 0..n {
                    let h = fd_step(x[k]);
                    xp[k] = x[k] + h;
                    let jp = jac(&xp);
                    xp[k] = x[k] - h;
                    let jm = jac(&xp);
                    xp[k] = x[k];
                    for i in 0..n {
                        for j in 0..n {
                            out[i][(j, k)] = (jp[(i, j)] - jm[(i, j)]) / (2.0 * h);
                        }
                    }
                }
                out
            }
            Repr::Func { eval, jac: None } => fd_hessian(|y| eval(y), x, n),
        }
    }

    fn map_poly(&self, other: &Self, op: impl Fn(&Polynomial, &Polynomial) -> Polynomial) -> Option<Self> {
        match (&self.repr, &other.repr) {
            (Repr::Poly(a), Repr::Poly(b)) => Some(
                Self::polynomial(a.comps.iter().zip(&b.comps).map(|(x, y)| op(x, y)).collect())
                    .expect("same dimension"),
            ),
            _ => None,
        }
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        check_dim("field combination", self.dim, other.dim)?;
        if let Some(f) = self.map_poly(other, |x, y| &x.scale(a) + &y.scale(b)) {
            return Ok(f);
        }
        let (f, g) = (self.clone(), other.clone());
        let (f2, g2) = (self.clone(), other.clone());
        let analytic = self.kind() != FieldKind::FiniteDifference
            && other.kind() != FieldKind::FiniteDifference;
        let eval = move |x: &[f64]| f.eval(x) * a + g.eval(x) * b;
        Ok(if analytic {
            Self::from_fn_with_jacobian(self.dim, eval, move |x: &[f64]| {
                f2.jacobian(x) * a + g2.jacobian(x) * b
            })
        } else {
            Self::from_fn(self.dim, eval)
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.combine(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.combine(1.0, other, -1.0)
    }

    pub fn scale(&self, a: f64) -> Self {
        match &self.repr {
            Repr::Poly(p) => {
                Self::polynomial(p.comps.iter().map(|c| c.scale(a)).collect()).expect("scale")
            }
            Repr::Func { .. } => self.combine(a, self, 0.0).expect("same field"),
        }
    }

    /// True when the field is polynomial with every component identically zero.
    pub fn is_identically_zero(&self) -> bool {
        self.components()
            .map(|c| c.iter().all(Polynomial::is_zero))
            .unwrap_or(false)
    }

    /// Lie bracket `[self, other]` as a field. Exact for two polynomial fields.
    pub fn bracket(&self, other: &Self) -> Result<Self> {
        check_dim("lie bracket", self.dim, other.dim)?;
        let n = self.dim;
        if let (Repr::Poly(f), Repr::Poly(g)) = (&self.repr, &other.repr) {
            let comps = (0..n)
                .map(|i| {
                    let mut acc = Polynomial::zero(n);
                    for j in 0..n {
                        acc = &acc + &(&g.jac_polys[i * n + j] * &f.comps[j]);
                        acc = &acc - &(&f.jac_polys[i * n + j] * &g.comps[j]);
                    }
                    acc
                })
                .collect();
            return Self::polynomial(comps);
        }
        let (f, g) = (self.clone(), other.clone());
        Ok(Self::from_fn(n, move |x: &[f64]| {
            g.jacobian(x) * f.eval(x) - f.jacobian(x) * g.eval(x)
        }))
    }
}

pub fn fd_jacobian<F>(f: F, x: &[f64], n_out: usize) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> DVector<f64>,
{
    let n = x.len();
    let mut out = DMatrix::zeros(n_out, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = fd_step(x[j]);
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        out.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    out
}

fn fd_hessian<F>(f: F, x: &[f64], n: usize) -> Vec<DMatrix<f64>>
where
    F: Fn(&[f64]) -> DVector<f64>,
{
    let mut out = vec![DMatrix::zeros(n, n); n];
    let mut y = x.to_vec();
    for j in 0..n {
        for k in j..n {
            let hj = fd_step2(x[j]);
            let hk = fd_step2(x[k]);
            let mut corner = |sj: f64, sk: f64| {
                y.copy_from_slice(x);
                y[j] += sj * hj;
                y[k] += sk * hk;
                f(&y)
            };
            let d = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * hj * hk);
            for i in 0..n {
                out[i][(j, k)] = d[i];
                out[i][(k, j)] = d[i];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vdp_h2() -> SmoothField {
        let x1 = Polynomial::variable(3, 0);
        let x2 = Polynomial::variable(3, 1);
        let one = Polynomial::constant(3, 1.0);
        let c2 = &(&x1.scale(-1.0) + &(&x2 * &(&one - &x1.pow(2)))) + &one;
        let c3 = (&x1.pow(2) + &x2.pow(2)).scale(0.5);
        SmoothField::polynomial(vec![x2.clone(), c2, c3]).unwrap()
    }

    #[test]
    fn polynomial_jacobian_exact() {
        let h = vdp_h2();
        let j = h.jacobian(&[0.5, -1.0, 3.0]);
        // d/dx1 of -x1 + x2(1 - x1^2) + 1 is -1 - 2 x1 x2
        assert_eq!(j[(1, 0)], -1.0 + 2.0 * 0.5);
        assert_eq!(j[(1, 1)], 1.0 - 0.25);
        assert_eq!(j[(2, 0)], 0.5);
        assert_eq!(h.kind(), FieldKind::Polynomial);
    }

    #[test]
    fn bracket_with_constant_field() {
        let h2 = vdp_h2();
        let f1 = SmoothField::constant(&[0.0, -2.0, 0.0]);
        let b = h2.bracket(&f1).unwrap();
        assert_eq!(b.eval(&[1.0, 1.0, 0.0]).as_slice(), &[2.0, 0.0, 2.0]);
        let bb = f1.bracket(&b).unwrap();
        assert_eq!(bb.eval(&[0.3, -0.2, 7.0]).as_slice(), &[0.0, 0.0, -4.0]);
    }

    #[test]
    fn fd_kind_agrees_with_polynomial() {
        let h2 = vdp_h2();
        let hc = h2.clone();
        let fd = SmoothField::from_fn(3, move |x: &[f64]| hc.eval(x));
        assert_eq!(fd.kind(), FieldKind::FiniteDifference);
        let x = [0.7, -0.4, 1.2];
        let d = (fd.jacobian(&x) - h2.jacobian(&x)).abs().max();
        assert!(d < 1e-8);
        let hs = fd.hessian(&x);
        let he = h2.hessian(&x);
        for i in 0..3 {
            assert!((&hs[i] - &he[i]).abs().max() < 1e-5);
        }
        assert!(fd.jacobian_fd_step(&x).is_some());
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let a = SmoothField::constant(&[1.0, 2.0]);
        let b = SmoothField::constant(&[1.0, 2.0, 3.0]);
        assert!(matches!(a.bracket(&b), Err(Error::DimensionMismatch { .. })));
        assert!(a.try_eval(&[1.0]).is_err());
    }
}
