mod common;

use bbscert::cotangent::{lifted_value, poisson_from_gradients, CotangentPoint, EdgeCalculus};
use bbscert::fieldalg::{
    fd_jacobian, flow, flow_differential, lie_bracket, transport_vector, FlowSegment, SmoothField, Tolerances,
    Transport,
};
use bbscert::problems::vanderpol_problem;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::random_field;

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn jacobi_identity(seed in any::<u64>(), x in point()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (f, g, h) = (random_field(&mut rng, 3), random_field(&mut rng, 3), random_field(&mut rng, 3));
        let cyc = |a: &SmoothField, b: &SmoothField, c: &SmoothField| a.bracket(&b.bracket(c).unwrap()).unwrap().eval(&x);
        let sum = cyc(&f, &g, &h) + cyc(&g, &h, &f) + cyc(&h, &f, &g);
        prop_assert!(sum.amax() <= 1e-9, "jacobi residual {}", sum.amax());
    }

    #[test]
    fn poisson_bracket_of_lifts_is_lift_of_lie_bracket(seed in any::<u64>(), x in point(), p in point()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (f, g) = (random_field(&mut rng, 3), random_field(&mut rng, 3));
        let l = CotangentPoint::from_slices(&x, &p).unwrap();
        let pv = DVector::from_vec(p.clone());
        let fx = f.jacobian(&x).transpose() * &pv;
        let gx = g.jacobian(&x).transpose() * &pv;
        let poisson = poisson_from_gradients(&fx, &f.eval(&x), &gx, &g.eval(&x));
        let lifted = lifted_value(&f.bracket(&g).unwrap(), &l).unwrap();
        prop_assert!((poisson - lifted).abs() <= 1e-10, "{poisson} vs {lifted}");
    }

    #[test]
    fn bracket_matches_finite_differences(seed in any::<u64>(), x in point()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (f, g) = (random_field(&mut rng, 3), random_field(&mut rng, 3));
        let df = fd_jacobian(|y: &[f64]| f.eval(y), &x, 3);
        let dg = fd_jacobian(|y: &[f64]| g.eval(y), &x, 3);
        let oracle = dg * f.eval(&x) - df * g.eval(&x);
        let exact = lie_bracket(&f, &g, &x).unwrap();
        prop_assert!((&exact - &oracle).amax() <= 1e-6 * (1.0 + exact.amax()));
        prop_assert!((exact - f.bracket(&g).unwrap().eval(&x)).amax() <= 1e-12);
    }

    #[test]
    fn bracket_is_antisymmetric(seed in any::<u64>(), x in point()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (f, g) = (random_field(&mut rng, 3), random_field(&mut rng, 3));
        let s = f.bracket(&g).unwrap().eval(&x) + g.bracket(&f).unwrap().eval(&x);
        prop_assert!(s.amax() <= 1e-12);
    }
}

#[test]
fn vanderpol_brackets() {
    let (prob, _) = vanderpol_problem();
    let calc = EdgeCalculus::new(prob.h1().clone(), prob.h2().clone(), prob.h3().clone()).unwrap();
    let x = [0.3, -0.7, 1.1];
    assert_eq!(calc.f1.eval(&x).as_slice(), &[0.0, -2.0, 0.0]);
    // L is the constant 4 on this edge
    let l = CotangentPoint::from_slices(&x, &[0.2, 0.5, -1.0]).unwrap();
    let lv = calc.l_value(&l);
    assert!((lv - 4.0).abs() < 1e-12, "L = {lv}");
}

fn linear_field(a: &DMatrix<f64>) -> SmoothField {
    SmoothField::linear(a)
}

#[test]
fn linear_flow_matches_matrix_exponential() {
    let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, -2.0, -0.3, 0.5, 0.1, 0.0, -1.0]);
    let f = linear_field(&a);
    let x0 = [0.4, -1.0, 2.0];
    let tol = Tolerances::new(1e-12, 1e-14);
    for (t0, t1) in [(0.0, 1.5), (2.0, -0.5)] {
        let seg = FlowSegment::new(&f, t0, t1).with_tol(tol);
        let expm = (&a * (t1 - t0)).exp();
        let x = flow(&seg, &x0).unwrap();
        assert!((x - &expm * DVector::from_row_slice(&x0)).amax() < 1e-9);
        let d = flow_differential(&seg, &x0).unwrap();
        assert!((d - &expm).amax() < 1e-9);
    }
}

#[test]
fn inverse_transport_undoes_pushforward() {
    let (prob, _) = vanderpol_problem();
    let f = prob.h2();
    let seg = FlowSegment::new(f, 0.0, 1.2).with_tol(Tolerances::new(1e-12, 1e-14));
    let x = [0.2, 0.9, 0.0];
    let v = [1.0, -0.5, 0.25];
    let end = flow(&seg, &x).unwrap();
    let pushed = transport_vector(&seg, &x, &v, Transport::Pushforward).unwrap();
    let back = transport_vector(&seg, &x, pushed.as_slice(), Transport::InversePushforward).unwrap();
    assert!((back - DVector::from_row_slice(&v)).amax() < 1e-8);
    // finite-difference oracle for the pushforward
    let h = 1e-6;
    let shifted: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + h * b).collect();
    let fd = (flow(&seg, &shifted).unwrap() - end) / h;
    assert!((fd - pushed).amax() < 1e-5);
}
