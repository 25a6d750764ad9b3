mod common;

use bbscert::extremal::Cost;
use bbscert::fieldalg::{Polynomial, SmoothField};
use bbscert::secondvar::{
    boundary_value_with_omega, build_ctilde_at, coercivity_oracle, coercivity_test, lq_hamiltonian_flow,
    lq_transition_matrix, oracle_form_value, oracle_matrix, write_lq_csv, CostCase, LQData,
};
use bbscert::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::lq_instances::{compare_instances, random_instance};
use common::vdp;

/// Scalar LQ data with constant `R`, `ġ = b`, `a` on `[0, 1]`.
fn constant_scalar(r: f64, b: f64, a: f64, k: f64, h12: f64, kcov: f64) -> LQData {
    let times: Vec<f64> = (0..=50).map(|i| i as f64 / 50.0).collect();
    let m = times.len();
    LQData::new(
        times,
        vec![r; m],
        vec![DVector::from_element(1, b); m],
        vec![DVector::from_element(1, a); m],
        DVector::from_element(1, k),
        h12,
        DVector::from_element(1, kcov),
    )
    .unwrap()
}

// With constant scalar data the LQ Hamiltonian matrix
// M = [[−ab, a²], [−b², ab]] / R squares to zero, so Φ(t) = I + M (t − T).
fn nilpotent_transition(r: f64, b: f64, a: f64, t: f64) -> DMatrix<f64> {
    let m = DMatrix::from_row_slice(2, 2, &[-a * b, a * a, -b * b, a * b]) / r;
    DMatrix::identity(2, 2) + m * (t - 1.0)
}

#[test]
fn constant_scalar_transition_is_affine_in_time() {
    let (r, b, a) = (1.3, 0.7, -0.4);
    let lq = constant_scalar(r, b, a, 0.0, 0.0, 0.0);
    for t in [0.0, 0.25, 0.6, 0.99] {
        let phi = lq_transition_matrix(&lq, t).unwrap();
        assert!((phi - nilpotent_transition(r, b, a, t)).amax() < 1e-10);
    }
}

#[test]
fn scalar_conjugate_point_at_closed_form_time() {
    // ζ(t) = 1 + (ab/R)(t − T) vanishes at T − R/(ab) = 0.5
    let lq = constant_scalar(1.0, 1.0, 2.0, 0.0, 0.0, 0.0);
    let flow = lq_hamiltonian_flow(&lq).unwrap();
    let (_, z) = flow.blocks_at(0.5);
    assert!(z[(0, 0)].abs() < 1e-10);
    let rep = coercivity_test(&lq, &flow, None, None).unwrap();
    assert!(!rep.pass);
    assert!((rep.conjugate_worst_time - 0.5).abs() < 0.02);
    assert!(!coercivity_oracle(&lq, 128).unwrap().coercive);

    // conjugate time 1 − 1/0.8 lies before the interval
    let lq = constant_scalar(1.0, 1.0, 0.8, 0.0, 0.0, 0.0);
    let flow = lq_hamiltonian_flow(&lq).unwrap();
    assert!(coercivity_test(&lq, &flow, None, None).unwrap().pass);
    assert!(coercivity_oracle(&lq, 128).unwrap().coercive);
}

#[test]
fn scalar_boundary_value_closed_form() {
    let (r, b, a, k, h12, kcov) = (1.0, 1.0, 0.5, 0.8, 0.3, 0.2);
    let lq = constant_scalar(r, b, a, k, h12, kcov);
    let flow = lq_hamiltonian_flow(&lq).unwrap();
    let phi = nilpotent_transition(r, b, a, 0.0);
    let (mu, zeta) = (phi[(0, 1)], phi[(1, 1)]);
    let expected = h12 - kcov * k + mu * k * k / zeta;
    let rep = coercivity_test(&lq, &flow, None, Some(0.0)).unwrap();
    assert!((rep.boundary_value.unwrap() - expected).abs() < 1e-9);
    assert_eq!(rep.pass, expected > 0.0);
    assert_eq!(coercivity_oracle(&lq, 128).unwrap().coercive, rep.pass);
}

#[test]
fn boundary_value_does_not_depend_on_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    while checked < 10 {
        let lq = random_instance(&mut rng);
        if lq.k_is_zero() || lq.dim() < 2 {
            continue;
        }
        let flow = lq_hamiltonian_flow(&lq).unwrap();
        let omega = lq.omega().unwrap();
        let Some(base) = boundary_value_with_omega(&lq, &flow, &omega) else {
            continue;
        };
        // add a covector annihilating k
        let mut v = DVector::from_fn(lq.dim(), |_, _| rng.random_range(-1.0..1.0));
        v -= &omega * v.dot(&lq.k);
        let other = boundary_value_with_omega(&lq, &flow, &(&omega + v)).unwrap();
        assert!((base - other).abs() <= 1e-12 * (1.0 + base.abs()));
        checked += 1;
    }
}

#[test]
fn oracle_matrix_matches_direct_form_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let lq = random_instance(&mut rng);
        let n = 16;
        let m = oracle_matrix(&lq, n).unwrap();
        let v = DVector::from_fn(m.nrows(), |_, _| rng.random_range(-1.0..1.0));
        let quad = v.dot(&(&m * &v));
        let direct = oracle_form_value(&lq, n, v.as_slice()).unwrap();
        assert!((quad - direct).abs() <= 1e-6 * (1.0 + quad.abs()), "{quad} vs {direct}");
    }
}

#[test]
fn randomized_instances_agree() {
    let start = std::time::Instant::now();
    let runs = compare_instances(20_250_101, 20, 128);
    let agree = runs.iter().filter(|c| c.hamiltonian == c.oracle).count();
    assert_eq!(agree, 20);
    assert!(start.elapsed().as_secs_f64() <= 60.0);
    // both outcomes are represented
    assert!(runs.iter().any(|c| c.hamiltonian) && runs.iter().any(|c| !c.hamiltonian));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn lq_flow_preserves_symplectic_form(seed in any::<u64>(), s in 0.0..1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lq = random_instance(&mut rng);
        let n = lq.dim();
        let t = lq.t_start() + s * (lq.t_end() - lq.t_start());
        let phi = lq_transition_matrix(&lq, t).unwrap();
        let mut j = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            j[(i, n + i)] = 1.0;
            j[(n + i, i)] = -1.0;
        }
        let defect = (phi.transpose() * &j * &phi - &j).amax();
        prop_assert!(defect < 1e-8, "defect {defect:e}");
    }
}

#[test]
fn vanderpol_second_variation() {
    let v = vdp();
    assert!(v.lq.r.iter().all(|r| (r - 4.0).abs() <= 1e-6));
    assert_eq!(v.mc.case(), CostCase::F1Invariant);
    let flow = lq_hamiltonian_flow(&v.lq).unwrap();
    let rep = coercivity_test(&v.lq, &flow, Some(&v.mc), None).unwrap();
    assert!(rep.pass, "{rep:?}");
    assert_eq!(rep.cost_case, Some(CostCase::F1Invariant));
    let mins: Vec<f64> = [64, 128, 256]
        .iter()
        .map(|&n| coercivity_oracle(&v.lq, n).unwrap().min_eigenvalue)
        .collect();
    assert!(mins.iter().all(|&m| m > 0.0));
    assert!((mins[1] - mins[2]).abs() < 0.05 * mins[2]);
}

#[test]
fn lq_csv_columns() {
    let mut buf = Vec::new();
    write_lq_csv(&vdp().lq, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap(), "t,R,gdot1,gdot2,gdot3,a1,a2,a3");
    assert_eq!(text.lines().count(), vdp().lq.times.len() + 1);
}

fn poly2(terms: &[(f64, [u32; 2])]) -> Polynomial {
    Polynomial::from_terms(2, terms.iter().map(|(c, e)| (*c, e.to_vec())))
}

#[test]
fn transverse_modified_cost_closed_form() {
    // c = x1² + x2 + x1 x2 along f1 = e1: L c = 2 x1 + x2 vanishes at
    // z = (−x2/2, x2), so c̃(x) = x2 − x2²/4
    let cost = Cost::polynomial(poly2(&[(1.0, [2, 0]), (1.0, [0, 1]), (1.0, [1, 1])]));
    let f1 = SmoothField::constant(&[1.0, 0.0]);
    let xref = DVector::from_vec(vec![-0.25, 0.5]);
    let mc = build_ctilde_at(&cost, &f1, &xref).unwrap();
    assert_eq!(mc.case(), CostCase::F1Transverse);
    for x in [[0.3, 0.5], [-1.0, 0.2], [0.0, -0.4]] {
        let x2 = x[1];
        assert!((mc.value(&x).unwrap() - (x2 - x2 * x2 / 4.0)).abs() < 1e-10);
        let g = mc.gradient(&x).unwrap();
        assert!((g - DVector::from_vec(vec![0.0, 1.0 - x2 / 2.0])).amax() < 1e-9);
        let h = mc.hessian(&x).unwrap();
        assert!((h - DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -0.5])).amax() < 1e-6);
    }
}

#[test]
fn concave_transverse_cost_has_no_modified_cost() {
    let cost = Cost::polynomial(poly2(&[(-1.0, [2, 0]), (1.0, [0, 1])]));
    let f1 = SmoothField::constant(&[1.0, 0.0]);
    let err = build_ctilde_at(&cost, &f1, &DVector::from_vec(vec![0.0, 0.0])).unwrap_err();
    assert!(matches!(err, Error::SecondLieDerivativeNotPositive { .. }), "{err}");
}
