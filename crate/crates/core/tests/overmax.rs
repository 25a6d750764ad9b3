mod common;

use bbscert::cotangent::CotangentPoint;
use bbscert::extremal::{shoot_bbs, Cost, ShootingOptions};
use bbscert::fieldalg::Polynomial;
use bbscert::overmax::{
    antisymplectic_defect, compare_admissible, h2_transport_defect, invertibility_probe, iota_conjugacy_check,
    iota_inverse_matrix, iota_matrix, write_perturb_csv, write_probe_csv, Branch, ControlSimulator,
    OvermaxMachinery, OvermaxOptions, PerturbOptions, Perturbation, ProbeOptions,
};
use bbscert::problems::vanderpol_problem;
use bbscert::secondvar::{
    assemble_lq, build_ctilde, coercivity_oracle, coercivity_test, lq_hamiltonian_flow, LqOptions,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::vdp;

fn machinery() -> OvermaxMachinery<'static> {
    let v = vdp();
    OvermaxMachinery::new(&v.sr.extremal, &v.mc, OvermaxOptions::default()).unwrap()
}

fn singular_times(count: usize) -> Vec<f64> {
    let e = &vdp().sr.extremal;
    (0..=count).map(|i| e.tau2 + (e.horizon - e.tau2) * i as f64 / count as f64).collect()
}

/// `λ̂(t)` with a random covector offset of size `eps`.
fn nearby(rng: &mut ChaCha8Rng, t: f64, eps: f64) -> CotangentPoint {
    let mut l = vdp().sr.extremal.lambda(t);
    l.p += DVector::from_fn(l.dim(), |_, _| eps * rng.random_range(-1.0..1.0));
    l
}

#[test]
fn theta_vanishes_on_the_reference() {
    let m = machinery();
    for t in singular_times(20) {
        let theta = m.solve_theta(&vdp().sr.extremal.lambda(t)).unwrap();
        assert!(theta.abs() <= 1e-10, "theta({t}) = {theta:e}");
    }
}

#[test]
fn theta_zeroes_h23_with_the_right_sign() {
    let m = machinery();
    let calc = vdp().sr.extremal.calculus();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for t in singular_times(10) {
        let l = nearby(&mut rng, t, 1e-2);
        let theta = m.solve_theta(&l).unwrap();
        let moved = m.exp_f1(&l, theta).unwrap();
        assert!(calc.h23_value(&moved).abs() <= 1e-10);
        let ratio = calc.h23_value(&l) / calc.l_value(&l);
        if ratio.abs() > 1e-12 {
            assert!(theta * ratio < 0.0, "theta {theta:e}, H23/L {ratio:e}");
        }
    }
}

#[test]
fn overmaximized_hamiltonian_dominates_h2() {
    let m = machinery();
    let calc = vdp().sr.extremal.calculus();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for t in singular_times(10) {
        let l = nearby(&mut rng, t, 1e-2);
        let h2 = l.p.dot(&calc.h2.eval(l.x.as_slice()));
        let h2t = m.h2_tilde(&l).unwrap();
        assert!(h2t >= h2 - 1e-12, "{h2t} < {h2}");
        let r = vdp().sr.extremal.lambda(t);
        let h2r = r.p.dot(&calc.h2.eval(r.x.as_slice()));
        assert!((m.h2_tilde(&r).unwrap() - h2r).abs() <= 1e-10);
    }
}

#[test]
fn flow_is_identity_at_final_time_and_follows_the_reference() {
    let m = machinery();
    let e = &vdp().sr.extremal;
    let traj = m.trajectory(&e.l_t).unwrap();
    let (end, b) = traj.at(e.horizon);
    assert_eq!(b, Branch::Singular);
    assert!((end.x - &e.l_t.x).amax() <= 1e-12 && (end.p - &e.l_t.p).amax() <= 1e-12);
    assert!((traj.tau1 - e.tau1).abs() <= 1e-7);
    assert!((traj.tau2 - e.tau2).abs() <= 1e-7);
    for i in 0..=100 {
        let t = e.horizon * i as f64 / 100.0;
        let (l, _) = traj.at(t);
        let r = e.lambda(t);
        let d = (l.x - &r.x).amax().max((l.p - &r.p).amax());
        assert!(d <= 1e-7, "t = {t}: {d:e}");
    }
}

#[test]
fn f1_is_conserved_on_the_singular_branch() {
    let m = machinery();
    let calc = vdp().sr.extremal.calculus();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let e = &vdp().sr.extremal;
    for _ in 0..5 {
        let l = nearby(&mut rng, e.horizon, 1e-3);
        let f0 = calc.f1_value(&l);
        let traj = m.trajectory(&l).unwrap();
        for t in singular_times(20) {
            let (lt, _) = traj.at(t);
            assert!((calc.f1_value(&lt) - f0).abs() <= 1e-7);
        }
    }
}

#[test]
fn branch_times_follow_h23_sign() {
    let m = machinery();
    let e = &vdp().sr.extremal;
    let calc = e.calculus();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut corrected, mut plain) = (0, 0);
    for _ in 0..12 {
        let x = e.x_final().map(|v| v + 2e-3 * rng.random_range(-1.0..1.0));
        let traj = m.trajectory(&m.lambda_point(&x).unwrap()).unwrap();
        if traj.h23_at_tau2 >= 0.0 {
            assert_eq!(traj.tau2, e.tau2);
            plain += 1;
        } else {
            assert!(traj.tau2 < e.tau2);
            let (l, b) = traj.at(traj.tau2);
            assert_eq!(b, Branch::Correction);
            assert!(calc.h23_value(&l).abs() <= 1e-8);
            corrected += 1;
        }
        // continuity across each branch boundary
        for s in [traj.tau2, traj.tau1, e.tau2] {
            let (a, _) = traj.at(s + 1e-10);
            let (b, _) = traj.at(s - 1e-10);
            assert!((a.x - b.x).amax() + (a.p - b.p).amax() <= 1e-7, "jump at {s}");
        }
    }
    assert!(corrected > 0 && plain > 0, "corrected {corrected}, plain {plain}");
}

#[test]
fn h2_field_is_transported_along_the_singular_arc() {
    let defect = h2_transport_defect(&machinery(), 20, 1e-4).unwrap();
    assert!(defect <= 1e-5, "defect {defect:e}");
}

#[test]
fn iota_inverts_and_reverses_the_symplectic_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for n in 1..=4 {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
        let hess = &a + a.transpose();
        let prod = iota_matrix(&hess) * iota_inverse_matrix(&hess);
        assert!((prod - DMatrix::identity(2 * n, 2 * n)).amax() <= 1e-12);
        for _ in 0..10 {
            let u = DVector::from_fn(2 * n, |_, _| rng.random_range(-1.0..1.0));
            let v = DVector::from_fn(2 * n, |_, _| rng.random_range(-1.0..1.0));
            assert!(antisymplectic_defect(&hess, &u, &v).abs() <= 1e-12);
        }
    }
}

#[test]
fn iota_conjugates_the_lq_flow() {
    let rep = iota_conjugacy_check(&machinery(), &vdp().lq, 20, 1e-4).unwrap();
    assert_eq!(rep.times.len(), 20);
    assert!(rep.residuals[0] <= 1e-12);
    assert!(rep.max_residual <= 1e-4, "residual {:e}", rep.max_residual);
}

#[test]
fn vanderpol_probe_passes() {
    let m = machinery();
    let rep = invertibility_probe(&m, &ProbeOptions::default()).unwrap();
    assert!(rep.pass, "{rep:?}");
    assert!(rep.sign_changes.is_empty());
    assert_eq!(rep.injectivity_skipped, 0);
    let last = rep.samples.iter().find(|s| s.t == vdp().sr.extremal.horizon).unwrap();
    assert!((last.min_singular_value - 1.0).abs() <= 1e-6);
    let mut buf = Vec::new();
    write_probe_csv(&rep, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap(), "t,branch,min_singular_value");
    assert!(text.lines().last().unwrap().contains("tau1-combination"));
}

#[test]
fn concave_cost_counterexample_is_flagged() {
    // c = x3 − α/2 (x1 − x̂f1)² keeps the Van der Pol extremal but breaks
    // coercivity; the probe must see the resulting degenerate point
    let (mut prob, guess) = vanderpol_problem();
    let a = vdp().sr.extremal.x_final()[0];
    let alpha = 10.0;
    prob.cost = Cost::polynomial(Polynomial::from_terms(
        3,
        vec![
            (1.0, vec![0, 0, 1]),
            (-alpha / 2.0, vec![2, 0, 0]),
            (alpha * a, vec![1, 0, 0]),
            (-alpha * a * a / 2.0, vec![0, 0, 0]),
        ],
    ));
    let sr = shoot_bbs(&prob, &guess, &ShootingOptions::default()).unwrap();
    let e = &sr.extremal;
    assert!((e.tau1 - vdp().sr.extremal.tau1).abs() < 1e-6);
    let mc = build_ctilde(&prob, e).unwrap();
    let lq = assemble_lq(&prob, e, &mc, &LqOptions::default()).unwrap();
    let flow = lq_hamiltonian_flow(&lq).unwrap();
    let rep = coercivity_test(&lq, &flow, Some(&mc), None).unwrap();
    assert!(!rep.pass);
    assert!(coercivity_oracle(&lq, 128).unwrap().min_eigenvalue < 0.0);
    let m = OvermaxMachinery::new(e, &mc, OvermaxOptions::default()).unwrap();
    let probe = invertibility_probe(&m, &ProbeOptions::default()).unwrap();
    assert!(!probe.pass);
    assert!((probe.worst_time - rep.conjugate_worst_time).abs() < 0.02, "{} vs {}", probe.worst_time, rep.conjugate_worst_time);
}

#[test]
fn unperturbed_control_reproduces_the_reference() {
    let v = vdp();
    let e = &v.sr.extremal;
    let sim = ControlSimulator::new(&v.prob, e, PerturbOptions::default().tol);
    let (x, dev) = sim.simulate(&Perturbation::None, 400).unwrap();
    assert!((x - e.x_final()).amax() <= 1e-7);
    assert!(dev <= 1e-7);
    // a zero-amplitude wiggle and an h2 needle inside the h2 arc change nothing
    let (base, _) = sim.simulate(&Perturbation::None, 400).unwrap();
    let same = [
        Perturbation::Wiggle { amplitude: 0.0, frequency: 3, phase: 0.4 },
        Perturbation::Needle { vertex: v.prob.edge.h2, start: e.tau1 + 0.1, width: 0.05 },
    ];
    for p in same {
        let (x, _) = sim.simulate(&p, 400).unwrap();
        assert!((x - &base).amax() <= 1e-9, "{p}");
    }
}

#[test]
fn vanderpol_perturbations() {
    let v = vdp();
    let rep = compare_admissible(&v.prob, &v.sr.extremal, &PerturbOptions::default()).unwrap();
    assert_eq!(rep.trials.len(), 100);
    assert_eq!(rep.discarded, 0);
    assert!(rep.min_gap >= -1e-9, "min gap {:e}", rep.min_gap);
    assert!(rep.dither.gaps.iter().all(|&g| g > 0.0));
    assert!((rep.dither.exponent - 2.0).abs() <= 0.3);
    assert!((rep.baseline_cost - rep.reference_cost).abs() <= 1e-7);
    assert!(rep.pass);
    let mut buf = Vec::new();
    write_perturb_csv(&rep, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap(), "trial,descriptor,gap");
    assert_eq!(text.lines().count(), 101);
}

#[test]
fn perturbation_runs_are_seeded() {
    let v = vdp();
    let opts = PerturbOptions { trials: 12, seed: 42, ..PerturbOptions::default() };
    let a = compare_admissible(&v.prob, &v.sr.extremal, &opts).unwrap();
    let b = compare_admissible(&v.prob, &v.sr.extremal, &opts).unwrap();
    let gaps = |r: &bbscert::overmax::PerturbationReport| r.trials.iter().map(|t| t.gap).collect::<Vec<_>>();
    assert_eq!(gaps(&a), gaps(&b));
    assert_eq!(
        a.trials.iter().map(|t| &t.descriptor).collect::<Vec<_>>(),
        b.trials.iter().map(|t| &t.descriptor).collect::<Vec<_>>()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn small_dithers_never_beat_the_reference(d1 in -0.006..0.006f64, d2 in -0.006..0.006f64) {
        let v = vdp();
        let sim = ControlSimulator::new(&v.prob, &v.sr.extremal, PerturbOptions::default().tol);
        let (base, _) = sim.simulate(&Perturbation::None, 50).unwrap();
        let (x, _) = sim.simulate(&Perturbation::Dither { tau1: d1, tau2: d2 }, 50).unwrap();
        prop_assert!(v.prob.cost.value(x.as_slice()) - v.prob.cost.value(base.as_slice()) >= -1e-9);
    }
}
