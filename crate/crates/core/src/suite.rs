//! Seeded generators for random absorbed chains and boundary schedules,
//! used by the randomized verification suites and the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::{AbsorbedChain, BoundarySchedule, Kernel, Mask, StateSpace};

pub fn suite_rng(seed: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(b"suitegen");
    ChaCha8Rng::from_seed(key)
}

/// Random chain on `n_live` live states plus one absorbing dead state.
/// Live rows are strictly positive on the live block, with per-step
/// absorption between `kill_min` and `kill_max` so long horizons keep
/// workable surviving mass.
pub fn random_chain(
    rng: &mut ChaCha8Rng,
    n_live: usize,
    kill_min: f64,
    kill_max: f64,
) -> AbsorbedChain {
    assert!(n_live >= 1 && n_live <= 25);
    assert!(0.0 < kill_min && kill_min <= kill_max && kill_max < 1.0);
    let n = n_live + 1;
    let labels: Vec<String> = (0..n_live)
        .map(|i| format!("s{i}"))
        .chain(std::iter::once("dead".to_string()))
        .collect();
    let states = StateSpace::new(labels).unwrap();
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n_live {
        let kill = rng.gen_range(kill_min..=kill_max);
        // strictly positive live block: floor each weight away from zero
        let mut w: Vec<f64> = (0..n_live).map(|_| 0.05 + rng.gen::<f64>()).collect();
        let total: f64 = w.iter().sum();
        for v in &mut w {
            *v *= (1.0 - kill) / total;
        }
        w.push(kill);
        rows.push(w);
    }
    let mut dead = vec![0.0; n];
    dead[n - 1] = 1.0;
    rows.push(dead);
    AbsorbedChain::new(states, Kernel::new(rows).unwrap()).unwrap()
}

fn dead_only_mask(n: usize) -> Mask {
    let mut m = vec![false; n];
    m[n - 1] = true;
    m
}

/// Mask absorbing the dead state plus each live state independently with
/// probability `p_extra`, never absorbing every live state.
fn random_mask(rng: &mut ChaCha8Rng, n: usize, p_extra: f64) -> Mask {
    loop {
        let mut m = dead_only_mask(n);
        for slot in m.iter_mut().take(n - 1) {
            if rng.gen::<f64>() < p_extra {
                *slot = true;
            }
        }
        if m.iter().take(n - 1).any(|&b| !b) {
            return m;
        }
    }
}

pub fn random_constant_schedule(rng: &mut ChaCha8Rng, n: usize, p_extra: f64) -> BoundarySchedule {
    BoundarySchedule::constant(random_mask(rng, n, p_extra)).unwrap()
}

pub fn random_periodic_schedule(
    rng: &mut ChaCha8Rng,
    n: usize,
    period: usize,
    p_extra: f64,
) -> BoundarySchedule {
    let masks: Vec<Mask> = (0..period).map(|_| random_mask(rng, n, p_extra)).collect();
    BoundarySchedule::periodic(masks).unwrap()
}

/// Non-increasing schedule: starts from a random mask and clears one extra
/// absorbed live state per step until only the dead state remains.
pub fn random_converging_schedule(
    rng: &mut ChaCha8Rng,
    n: usize,
    p_extra: f64,
) -> BoundarySchedule {
    let first = random_mask(rng, n, p_extra);
    let mut masks = vec![first.clone()];
    let mut cur = first;
    loop {
        let extras: Vec<usize> = (0..n - 1).filter(|&i| cur[i]).collect();
        if extras.is_empty() {
            break;
        }
        let drop = extras[rng.gen_range(0..extras.len())];
        cur[drop] = false;
        masks.push(cur.clone());
    }
    if masks.len() == 1 {
        // already constant at the limit; add the same mask so the schedule
        // has an explicit stabilization step
        masks.push(masks[0].clone());
    }
    BoundarySchedule::converging(masks).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    
    #[test]
    fn random_chain_rows_are_stochastic_and_positive() {
        let mut rng = suite_rng(7);
        for _ in 0..20 {
            let chain = random_chain(&mut rng, 4, 0.05, 0.2);
            let n = chain.states().len();
            assert_eq!(n, 5);
            for i in 0..n - 1 {
                let row = chain.kernel().row(i);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for &v in &row[..n - 1] {
                    assert!(v > 0.0);
                }
                assert!(row[n - 1] >= 0.05 && row[n - 1] <= 0.2);
            }
            assert_eq!(chain.kernel().row(n - 1)[n - 1], 1.0);
        }
    }

    #[test]
    fn generators_are_seed_deterministic() {
        let a = random_chain(&mut suite_rng(11), 3, 0.05, 0.15);
        let b = random_chain(&mut suite_rng(11), 3, 0.05, 0.15);
        for i in 0..a.states().len() {
            assert_eq!(a.kernel().row(i), b.kernel().row(i));
        }
    }

    #[test]
    fn converging_schedule_is_nested_and_stabilizes() {
        let mut rng = suite_rng(3);
        for _ in 0..20 {
            let sched = random_converging_schedule(&mut rng, 5, 0.5);
            let t_star = sched.stabilization_time().unwrap();
            let limit = sched.limit_set().unwrap();
            assert_eq!(*limit, dead_only_mask(5));
            for t in 0..t_star {
                let cur = sched.absorbing_at(t);
                let next = sched.absorbing_at(t + 1);
                for i in 0..5 {
                    // non-increasing: A_{t+1} subset of A_t
                    assert!(!next[i] || cur[i]);
                }
            }
            assert_eq!(sched.absorbing_at(t_star + 10), limit);
        }
    }

    #[test]
    fn periodic_schedule_survival_is_well_defined() {
        let mut rng = suite_rng(5);
        let chain = random_chain(&mut rng, 4, 0.05, 0.15);
        let sched = random_periodic_schedule(&mut rng, 5, 3, 0.3);
        let s = crate::chain::survival(&chain, &sched, 0, 0, 30).unwrap();
        assert!(s > 0.0 && s < 1.0);
    }
}
