use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::cotangent::EdgeCalculus;
use crate::error::{check_dim, Error, Result};
use crate::fieldalg::{fd_step, fd_step2, Polynomial, SmoothField};

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;

#[derive(Clone)]
enum CostRepr {
    Poly {
        value: Polynomial,
        grad: Vec<Polynomial>,
        hess: Vec<Polynomial>,
    },
    Func {
        value: ScalarFn,
        grad: Option<GradFn>,
    },
}

/// Terminal cost `c` with gradient and Hessian.
#[derive(Clone)]
pub struct Cost {
    dim: usize,
    repr: CostRepr,
}

impl fmt::Debug for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.repr {
            CostRepr::Poly { value, .. } => write!(f, "Cost({value})"),
            CostRepr::Func { .. } => write!(f, "Cost(<function of {} variables>)", self.dim),
        }
    }
}

impl Cost {
    pub fn polynomial(value: Polynomial) -> Self {
        let n = value.nvars();
        let grad: Vec<Polynomial> = (0..n).map(|i| value.derivative(i)).collect();
        let hess = grad
            .iter()
            .flat_map(|g| (0..n).map(move |j| g.derivative(j)))
            .collect();
        Self {
            dim: n,
            repr: CostRepr::Poly { value, grad, hess },
        }
    }

    /// Cost given by a value function; the gradient defaults to central differences.
    pub fn from_fn<F>(dim: usize, value: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            dim,
            repr: CostRepr::Func {
                value: Arc::new(value),
                grad: None,
            },
        }
    }

    pub fn from_fn_with_gradient<F, G>(dim: usize, value: F, grad: G) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            dim,
            repr: CostRepr::Func {
                value: Arc::new(value),
                grad: Some(Arc::new(grad)),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_polynomial(&self) -> Option<&Polynomial> {
        match &self.repr {
            CostRepr::Poly { value, .. } => Some(value),
            CostRepr::Func { .. } => None,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.repr {
            CostRepr::Poly { value, .. } => value.eval(x),
            CostRepr::Func { value, .. } => value(x),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        match &self.repr {
            CostRepr::Poly { grad, .. } => DVector::from_iterator(self.dim, grad.iter().map(|g| g.eval(x))),
            CostRepr::Func { grad: Some(g), .. } => g(x),
            CostRepr::Func { value, grad: None } => {
                let mut y = x.to_vec();
                DVector::from_fn(self.dim, |j, _| {
                    let h = fd_step(x[j]);
                    y[j] = x[j] + h;
                    let fp = value(&y);
                    y[j] = x[j] - h;
                    let fm = value(&y);
                    y[j] = x[j];
                    (fp - fm) / (2.0 * h)
                })
            }
        }
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        match &self.repr {
            CostRepr::Poly { hess, .. } => DMatrix::from_fn(n, n, |i, j| hess[i * n + j].eval(x)),
            CostRepr::Func { grad: Some(_), .. } => {
                let mut y = x.to_vec();
                let mut m = DMatrix::zeros(n, n);
                for j in 0..n {
                    let h = fd_step(x[j]);
                    y[j] = x[j] + h;
                    let gp = self.gradient(&y);
                    y[j] = x[j] - h;
                    let gm = self.gradient(&y);
                    y[j] = x[j];
                    m.set_column(j, &((gp - gm) / (2.0 * h)));
                }
                (&m + m.transpose()) * 0.5
            }
            CostRepr::Func { value, grad: None } => {
                let mut m = DMatrix::zeros(n, n);
                let mut y = x.to_vec();
                for j in 0..n {
                    for k in j..n {
                        let hj = fd_step2(x[j]);
                        let hk = fd_step2(x[k]);
                        let mut corner = |a: f64, b: f64| {
                            y.copy_from_slice(x);
                            y[j] += a * hj;
                            y[k] += b * hk;
                            value(&y)
                        };
                        let d = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0)
                            + corner(-1.0, -1.0))
                            / (4.0 * hj * hk);
                        m[(j, k)] = d;
                        m[(k, j)] = d;
                    }
                }
                m
            }
        }
    }

    /// `L_f c(x) = ∇c(x)·f(x)`.
    pub fn lie_derivative(&self, f: &SmoothField, x: &[f64]) -> f64 {
        self.gradient(x).dot(&f.eval(x))
    }

    /// `L²_f c(x) = f·Hc·f + ∇c·Df·f`.
    pub fn second_lie_derivative(&self, f: &SmoothField, x: &[f64]) -> f64 {
        let v = f.eval(x);
        let hv = self.hessian(x) * &v;
        v.dot(&hv) + self.gradient(x).dot(&(f.jacobian(x) * &v))
    }
}

/// Indices (zero-based) of the vertices playing `h1`, `h2`, `h3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub h1: usize,
    pub h2: usize,
    pub h3: usize,
}

/// `min c(ξ(T))` over trajectories of `ξ̇ ∈ conv{X_1..X_m}` from `x0`.
#[derive(Debug, Clone)]
pub struct ControlAffineProblem {
    pub name: String,
    pub fields: Vec<SmoothField>,
    pub cost: Cost,
    pub x0: DVector<f64>,
    pub horizon: f64,
    pub edge: Edge,
}

impl ControlAffineProblem {
    pub fn new(
        name: impl Into<String>,
        fields: Vec<SmoothField>,
        cost: Cost,
        x0: DVector<f64>,
        horizon: f64,
        edge: Edge,
    ) -> Result<Self> {
        let p = Self {
            name: name.into(),
            fields,
            cost,
            x0,
            horizon,
            edge,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x0.len();
        if self.fields.is_empty() {
            return Err(Error::Config("problem has no vertex fields".into()));
        }
        for f in &self.fields {
            check_dim("vertex field", n, f.dim())?;
        }
        check_dim("cost", n, self.cost.dim())?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        let m = self.fields.len();
        for (name, i) in [("h1", self.edge.h1), ("h2", self.edge.h2), ("h3", self.edge.h3)] {
            if i >= m {
                return Err(Error::Config(format!(
                    "edge index {name} = {} out of range for {m} vertices",
                    i + 1
                )));
            }
        }
        if self.edge.h2 == self.edge.h3 {
            return Err(Error::Config("h2 and h3 must be distinct vertices".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn h1(&self) -> &SmoothField {
        &self.fields[self.edge.h1]
    }

    pub fn h2(&self) -> &SmoothField {
        &self.fields[self.edge.h2]
    }

    pub fn h3(&self) -> &SmoothField {
        &self.fields[self.edge.h3]
    }

    pub fn edge_calculus(&self) -> Result<EdgeCalculus> {
        EdgeCalculus::new(self.h1().clone(), self.h2().clone(), self.h3().clone())
    }

    /// Same problem with the cost multiplied by `factor`.
    pub fn with_scaled_cost(&self, factor: f64) -> Self {
        let cost = match self.cost.as_polynomial() {
            Some(p) => Cost::polynomial(p.scale(factor)),
            None => {
                let c = self.cost.clone();
                let c2 = self.cost.clone();
                Cost::from_fn_with_gradient(
                    self.dim(),
                    move |x| factor * c.value(x),
                    move |x| c2.gradient(x) * factor,
                )
            }
        };
        Self {
            cost,
            ..self.clone()
        }
    }
}
