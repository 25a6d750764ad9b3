use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::extremal::{ControlAffineProblem, Cost, Edge};
use crate::fieldalg::{Polynomial, SmoothField};

pub const MAX_BILINEAR_CONTROLS: usize = 12;

/// `min ⟨r, N(T)⟩ + ∫ ⟨q, N⟩ + ⟨s, u⟩` subject to `Ṅ = (A + Σ u_j B_j) N`,
/// `u_j ∈ [0, u_max_j]`, `N(0) = N0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearData {
    pub a: DMatrix<f64>,
    pub b: Vec<DMatrix<f64>>,
    pub q: DVector<f64>,
    pub r: DVector<f64>,
    pub s: DVector<f64>,
    pub u_max: DVector<f64>,
    pub horizon: f64,
    pub n0: DVector<f64>,
}

impl BilinearData {
    fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        let m = self.b.len();
        let bad = |msg: String| Err(Error::Config(msg));
        if self.a.ncols() != n || n == 0 {
            return bad(format!("A must be square and non-empty, got {}×{}", n, self.a.ncols()));
        }
        if m == 0 {
            return bad("at least one control matrix B_j is required".into());
        }
        if m > MAX_BILINEAR_CONTROLS {
            return bad(format!(
                "{m} controls give 2^{m} vertices; at most {MAX_BILINEAR_CONTROLS} controls are supported"
            ));
        }
        for (j, b) in self.b.iter().enumerate() {
            if b.shape() != (n, n) {
                return bad(format!("B_{} has shape {:?}, expected ({n}, {n})", j + 1, b.shape()));
            }
        }
        for (name, v, len) in [("q", &self.q, n), ("r", &self.r, n), ("N0", &self.n0, n), ("s", &self.s, m), ("u_max", &self.u_max, m)] {
            if v.len() != len {
                return bad(format!("{name} has length {}, expected {len}", v.len()));
            }
        }
        if self.u_max.iter().any(|&u| !(u > 0.0)) {
            return bad("u_max must be componentwise positive".into());
        }
        if !(self.horizon > 0.0) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        Ok(())
    }
}

/// Control subsets in vertex order: by size, then lexicographically.
/// Vertex `k` is `f0 + Σ_{j ∈ subset_k} f_j`.
pub fn bilinear_vertex_subsets(m: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = (0u32..(1u32 << m))
        .map(|mask| (0..m).filter(|j| mask & (1 << j) != 0).collect())
        .collect();
    out.sort_by(|a: &Vec<usize>, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}

fn linear_row(row: impl Iterator<Item = f64>, nvars: usize) -> Polynomial {
    row.enumerate().fold(Polynomial::zero(nvars), |acc, (j, a)| {
        &acc + &Polynomial::variable(nvars, j).scale(a)
    })
}

/// Mayer form on `(N, N_{n+1})` with the unit control box; the cost is
/// `⟨(r, 1), ξ̃(T)⟩`. The default edge is `(X2, X1, X2)`.
pub fn bilinear_to_mayer(data: &BilinearData, edge: Option<Edge>) -> Result<ControlAffineProblem> {
    data.validate()?;
    let n = data.a.nrows();
    let m = data.b.len();
    let nt = n + 1;

    // f0 = (A x, ⟨q, x⟩)
    let mut f0: Vec<Polynomial> = (0..n)
        .map(|i| linear_row(data.a.row(i).iter().copied(), nt))
        .collect();
    f0.push(linear_row(data.q.iter().copied(), nt));

    // f_j = (C_j x, s̃_j) with C_j = u_max_j B_j, s̃_j = u_max_j s_j
    let fj: Vec<Vec<Polynomial>> = (0..m)
        .map(|j| {
            let c = &data.b[j] * data.u_max[j];
            let mut comps: Vec<Polynomial> = (0..n).map(|i| linear_row(c.row(i).iter().copied(), nt)).collect();
            comps.push(Polynomial::constant(nt, data.u_max[j] * data.s[j]));
            comps
        })
        .collect();

    let vertices = bilinear_vertex_subsets(m)
        .into_iter()
        .map(|subset| {
            let comps = (0..nt)
                .map(|i| subset.iter().fold(f0[i].clone(), |acc, &j| &acc + &fj[j][i]))
                .collect();
            SmoothField::polynomial(comps)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rt: Vec<f64> = data.r.iter().copied().collect();
    rt.push(1.0);
    let cost = Cost::polynomial(linear_row(rt.into_iter(), nt));
    let mut x0: Vec<f64> = data.n0.iter().copied().collect();
    x0.push(0.0);
    ControlAffineProblem::new(
        "bilinear",
        vertices,
        cost,
        DVector::from_vec(x0),
        data.horizon,
        edge.unwrap_or(Edge { h1: 1, h2: 0, h3: 1 }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_order() {
        assert_eq!(bilinear_vertex_subsets(1), vec![vec![], vec![0]]);
        assert_eq!(
            bilinear_vertex_subsets(3),
            vec![vec![], vec![0], vec![1], vec![2], vec![0, 1], vec![0, 2], vec![1, 2], vec![0, 1, 2]]
        );
    }
}
