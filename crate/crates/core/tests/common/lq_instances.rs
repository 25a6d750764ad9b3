//! Random smooth singular LQ instances for cross-checking the two
//! coercivity tests.

use bbscert::secondvar::{coercivity_oracle, coercivity_test, lq_hamiltonian_flow, LQData};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smallest distance from the decision boundary accepted for an instance.
pub const MIN_MARGIN: f64 = 1e-6;

fn smooth(rng: &mut ChaCha8Rng) -> impl Fn(f64) -> f64 {
    let c: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let w = rng.random_range(0.5..4.0);
    move |t| c[0] + c[1] * t + c[2] * (w * t).sin() + c[3] * (w * t).cos()
}

/// One instance on `[0, T]`, `n ≤ 3`; about a third have `k = 0`.
pub fn random_instance(rng: &mut ChaCha8Rng) -> LQData {
    let n = rng.random_range(1..=3);
    let horizon = rng.random_range(0.5..2.0);
    let nodes = 200;
    let times: Vec<f64> = (0..=nodes).map(|i| horizon * i as f64 / nodes as f64).collect();
    let r0 = rng.random_range(0.5..2.0);
    let rf = smooth(rng);
    let bf: Vec<_> = (0..n).map(|_| smooth(rng)).collect();
    let af: Vec<_> = (0..n).map(|_| smooth(rng)).collect();
    let scale = rng.random_range(0.0..3.0);
    let r = times.iter().map(|&t| r0 + 0.3 * rf(t).tanh()).collect();
    let gdot = times.iter().map(|&t| DVector::from_fn(n, |i, _| bf[i](t))).collect();
    let cross = times.iter().map(|&t| DVector::from_fn(n, |i, _| scale * af[i](t))).collect();
    let k = if rng.random_bool(1.0 / 3.0) {
        DVector::zeros(n)
    } else {
        DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    };
    let h12 = rng.random_range(-1.0..3.0);
    let kcov = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    LQData::new(times, r, gdot, cross, k, h12, kcov).expect("valid instance")
}

pub struct Comparison {
    pub hamiltonian: bool,
    pub oracle: bool,
    pub margin: f64,
}

/// Runs both tests on the first `count` instances whose Hamiltonian margin
/// is at least [`MIN_MARGIN`] in absolute value.
pub fn compare_instances(seed: u64, count: usize, intervals: usize) -> Vec<Comparison> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let lq = random_instance(&mut rng);
        let flow = lq_hamiltonian_flow(&lq).expect("flow");
        let rep = coercivity_test(&lq, &flow, None, Some(0.0)).expect("test");
        let margin = rep.hamiltonian_margin();
        if margin.abs() < MIN_MARGIN {
            continue;
        }
        let oracle = coercivity_oracle(&lq, intervals).expect("oracle");
        out.push(Comparison {
            hamiltonian: rep.pass,
            oracle: oracle.coercive,
            margin,
        });
    }
    out
}
