use std::path::PathBuf;

use bbscert::extremal::ControlAffineProblem;
use bbscert::problems::{
    bilinear_vertex_subsets, load_problem_file, parse_problem_config, serialize_problem, vanderpol_problem,
    LoadedProblem,
};
use bbscert::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn example(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../cli/examples").join(name)
}

fn load(name: &str) -> LoadedProblem {
    load_problem_file(example(name)).unwrap()
}

/// Largest difference in vertex fields, their Jacobians and the cost at
/// `count` random points of `[-2, 2]ⁿ`.
fn max_difference(a: &ControlAffineProblem, b: &ControlAffineProblem, count: usize) -> f64 {
    assert_eq!(a.dim(), b.dim());
    assert_eq!(a.fields.len(), b.fields.len());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let x: Vec<f64> = (0..a.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
        for (f, g) in a.fields.iter().zip(&b.fields) {
            worst = worst.max((f.eval(&x) - g.eval(&x)).amax());
            worst = worst.max((f.jacobian(&x) - g.jacobian(&x)).amax());
        }
        worst = worst.max((a.cost.value(&x) - b.cost.value(&x)).abs());
        worst = worst.max((a.cost.gradient(&x) - b.cost.gradient(&x)).amax());
    }
    worst
}

#[test]
fn vanderpol_config_matches_builtin() {
    let lp = load("vanderpol.toml");
    let (prob, guess) = vanderpol_problem();
    assert!(max_difference(&lp.problem, &prob, 100) <= 1e-14);
    assert_eq!(lp.problem.edge, prob.edge);
    assert_eq!(lp.problem.x0, prob.x0);
    assert_eq!(lp.problem.horizon, prob.horizon);
    assert_eq!(lp.guess, guess);
    assert!(!lp.augmented);
}

#[test]
fn bolza_form_is_augmented_to_the_same_problem() {
    let lp = load("vanderpol_bolza.toml");
    assert!(lp.augmented);
    assert_eq!(lp.declared_dim, 2);
    let (prob, _) = vanderpol_problem();
    assert!(max_difference(&lp.problem, &prob, 100) <= 1e-14);
    assert_eq!(lp.guess.x_final.len(), 3);
}

#[test]
fn serialized_problem_parses_back() {
    for name in ["vanderpol.toml", "bilinear_demo.toml"] {
        let lp = load(name);
        let text = serialize_problem(&lp.problem, &lp.guess, &lp.settings).unwrap();
        let again = parse_problem_config(&text).unwrap();
        assert!(max_difference(&lp.problem, &again.problem, 100) <= 1e-14, "{name}");
        assert_eq!(again.guess, lp.guess);
        assert_eq!(again.settings, lp.settings);
        assert_eq!(again.problem.edge, lp.problem.edge);
    }
}

#[test]
fn bilinear_demo_has_one_vertex_per_control_subset() {
    let lp = load("bilinear_demo.toml");
    assert_eq!(bilinear_vertex_subsets(2).len(), 4);
    assert_eq!(lp.problem.fields.len(), 4);
    assert_eq!(lp.problem.dim(), 3);
    // vertex with both controls on at N = (1, 1): (A + B1 + B2) N plus the running cost
    let f = lp.problem.fields[3].eval(&[1.0, 1.0, 0.0]);
    assert!((f[0] - (-0.5 + 0.2 - 1.0 + 0.3)).abs() < 1e-14);
    assert!((f[1] - (0.1 - 0.3 + 0.5 - 0.8)).abs() < 1e-14);
    assert!((f[2] - (1.0 + 0.5 + 0.1 + 0.1)).abs() < 1e-14);
}

#[test]
fn invalid_configs_are_config_errors() {
    let base = std::fs::read_to_string(example("vanderpol.toml")).unwrap();
    let cases = [
        base.replace("horizon = 4.0", "horizon = -4.0"),
        format!("{base}\n[solver]\nrtol = -1.0\n"),
        format!("{base}\n[solver]\nprobe_times = 1\n"),
        base.replace("edge = [1, 2, 1]", "edge = [1, 5, 1]"),
    ];
    for text in &cases {
        let err = parse_problem_config(text).unwrap_err();
        assert!(matches!(err, Error::Config(_) | Error::Parse { .. }), "{err}");
    }
    let err = parse_problem_config(&base.replace("\"x3\"", "\"x3 +\"")).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }), "{err}");
}
