//! Exhaustive-enumeration oracle equivalence on small random instances:
//! survival, conditioned laws, bridge marginals, and minorization all match
//! brute-force path sums within 1e-12.

mod common;

use common::{oracle_bridge_marginal, oracle_conditioned_law, oracle_forward, oracle_minorize};
use qexodus::certify::{minorize, pair_minimum_measure};
use qexodus::chain::{
    conditioned_bridge_marginal, conditioned_law, survival, AbsorbedChain, BoundarySchedule,
    Measure,
};
use qexodus::suite::{
    random_chain, random_constant_schedule, random_converging_schedule, random_periodic_schedule,
    suite_rng,
};
use rand::Rng;

fn random_instance(seed: u64) -> (AbsorbedChain, BoundarySchedule) {
    let mut rng = suite_rng(seed);
    let n_live = rng.gen_range(2..=3);
    let chain = random_chain(&mut rng, n_live, 0.05, 0.25);
    let n = n_live + 1;
    let schedule = match seed % 3 {
        0 => random_constant_schedule(&mut rng, n, 0.3),
        1 => {
            let period = rng.gen_range(2..=3);
            random_periodic_schedule(&mut rng, n, period, 0.3)
        }
        _ => random_converging_schedule(&mut rng, n, 0.5),
    };
    (chain, schedule)
}

#[test]
fn survival_and_laws_match_enumeration() {
    for seed in 0..50u64 {
        let (chain, schedule) = random_instance(seed);
        let n = chain.n();
        for s in 0..3usize {
            for t in 1..=6usize {
                for x in 0..n {
                    if !schedule.surviving_at(s)[x] {
                        continue;
                    }
                    let mut dirac = vec![0.0; n];
                    dirac[x] = 1.0;
                    let (oracle_total, _) = oracle_forward(&chain, &schedule, &dirac, s, t);
                    let p = survival(&chain, &schedule, x, s, t).unwrap();
                    assert!(
                        (p - oracle_total).abs() < 1e-12,
                        "seed {seed} s={s} t={t} x={x}: {p} vs {oracle_total}"
                    );
                    if oracle_total > 0.0 {
                        let law = conditioned_law(
                            &chain,
                            &schedule,
                            &Measure::dirac(n, x),
                            s,
                            t,
                        )
                        .unwrap();
                        let oracle = oracle_conditioned_law(&chain, &schedule, &dirac, s, t);
                        for (a, b) in law.weights().iter().zip(&oracle) {
                            assert!((a - b).abs() < 1e-12, "seed {seed} law mismatch");
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn bridge_marginals_match_enumeration() {
    for seed in 0..50u64 {
        let (chain, schedule) = random_instance(seed);
        let n = chain.n();
        let mu = Measure::uniform_on(&schedule.surviving_at(0)).unwrap();
        for t in 2..=5usize {
            for k in 0..=t {
                let got = conditioned_bridge_marginal(&chain, &schedule, &mu, 0, k, t).unwrap();
                let oracle = oracle_bridge_marginal(&chain, &schedule, mu.weights(), 0, k, t);
                for (a, b) in got.weights().iter().zip(&oracle) {
                    assert!(
                        (a - b).abs() < 1e-12,
                        "seed {seed} k={k} t={t}: {:?} vs {:?}",
                        got.weights(),
                        oracle
                    );
                }
            }
            let _ = n;
        }
    }
}

#[test]
fn minorization_matches_enumeration() {
    for seed in 0..50u64 {
        let (chain, schedule) = random_instance(seed);
        for s in 0..2usize {
            for t0 in 1..=4usize {
                let (c1, nu) = minorize(&chain, &schedule, s, t0).unwrap();
                let (c1_o, nu_o) = oracle_minorize(&chain, &schedule, s, t0);
                assert!(
                    (c1 - c1_o).abs() < 1e-12,
                    "seed {seed} s={s} t0={t0}: c1 {c1} vs {c1_o}"
                );
                if c1_o > 0.0 {
                    for (a, b) in nu.weights().iter().zip(&nu_o) {
                        assert!((a - b).abs() < 1e-12, "seed {seed} witness mismatch");
                    }
                }
            }
        }
    }
}

#[test]
fn pair_minimum_matches_enumeration() {
    for seed in 0..30u64 {
        let (chain, schedule) = random_instance(seed);
        let n = chain.n();
        let t0 = 2;
        let s = 0;
        let surviving: Vec<usize> = (0..n).filter(|&x| schedule.surviving_at(s)[x]).collect();
        for i in 0..surviving.len() {
            for j in i + 1..surviving.len() {
                let (x1, x2) = (surviving[i], surviving[j]);
                let v = pair_minimum_measure(&chain, &schedule, s, t0, &[x1, x2]).unwrap();
                let mut d1 = vec![0.0; n];
                d1[x1] = 1.0;
                let mut d2 = vec![0.0; n];
                d2[x2] = 1.0;
                let r1 = oracle_conditioned_law(&chain, &schedule, &d1, s, t0);
                let r2 = oracle_conditioned_law(&chain, &schedule, &d2, s, t0);
                for ((a, b1), b2) in v.weights().iter().zip(&r1).zip(&r2) {
                    assert!(
                        (a - b1.min(*b2)).abs() < 1e-12,
                        "seed {seed} pair ({x1},{x2}) mismatch"
                    );
                }
            }
        }
    }
}
