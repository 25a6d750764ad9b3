#![allow(dead_code)]

pub mod lq_instances;

use std::sync::OnceLock;

use bbscert::extremal::{shoot_bbs, ControlAffineProblem, ShootingOptions, ShootingResult};
use bbscert::fieldalg::{Polynomial, SmoothField};
use bbscert::problems::vanderpol_problem;
use bbscert::secondvar::{assemble_lq, build_ctilde, LQData, LqOptions, ModifiedCost};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Van der Pol extremal with its modified cost and LQ data, computed once
/// per test binary.
pub struct Vdp {
    pub prob: ControlAffineProblem,
    pub sr: ShootingResult,
    pub mc: ModifiedCost,
    pub lq: LQData,
}

pub fn vdp() -> &'static Vdp {
    static CELL: OnceLock<Vdp> = OnceLock::new();
    CELL.get_or_init(|| {
        let (prob, guess) = vanderpol_problem();
        let sr = shoot_bbs(&prob, &guess, &ShootingOptions::default()).expect("van der pol shoots");
        let mc = build_ctilde(&prob, &sr.extremal).expect("modified cost");
        let lq = assemble_lq(&prob, &sr.extremal, &mc, &LqOptions::default()).expect("lq data");
        Vdp { prob, sr, mc, lq }
    })
}

/// Random polynomial of degree ≤ 2 in `n` variables.
pub fn random_poly(rng: &mut ChaCha8Rng, n: usize) -> Polynomial {
    let mut terms = vec![(rng.random_range(-1.0..1.0), vec![0; n])];
    for i in 0..n {
        let mut e = vec![0; n];
        e[i] = 1;
        terms.push((rng.random_range(-1.0..1.0), e));
        for j in i..n {
            let mut e = vec![0; n];
            e[i] += 1;
            e[j] += 1;
            terms.push((rng.random_range(-1.0..1.0), e));
        }
    }
    Polynomial::from_terms(n, terms)
}

pub fn random_field(rng: &mut ChaCha8Rng, n: usize) -> SmoothField {
    SmoothField::polynomial((0..n).map(|_| random_poly(rng, n)).collect()).expect("polynomial field")
}
