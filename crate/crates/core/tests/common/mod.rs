//! Shared test support: an exhaustive path-enumeration oracle for small
//! chains and short horizons, plus random instance helpers.
//!
//! The oracle sums probabilities over every trajectory explicitly, so it is
//! exponential in the horizon and only meant for n <= 4 states and t <= 6
//! steps, where it is exact to rounding.

#![allow(dead_code)]

use qexodus::chain::{AbsorbedChain, BoundarySchedule};

/// Enumerates all trajectories x_0..x_t with x_k in E_{s+k}, weighting each
/// by mu(x_0) * prod P(x_k, x_{k+1}). Returns (survival mass, unnormalized
/// endpoint law).
pub fn oracle_forward(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    mu: &[f64],
    s: usize,
    t: usize,
) -> (f64, Vec<f64>) {
    let n = chain.n();
    let mut total = 0.0;
    let mut law = vec![0.0; n];
    let mut stack: Vec<(usize, usize, f64)> = Vec::new(); // (state, depth, weight)
    for x0 in 0..n {
        if mu[x0] > 0.0 && schedule.surviving_at(s)[x0] {
            stack.push((x0, 0, mu[x0]));
        }
    }
    while let Some((x, depth, w)) = stack.pop() {
        if depth == t {
            total += w;
            law[x] += w;
            continue;
        }
        for y in 0..n {
            let p = chain.kernel().p(x, y);
            if p > 0.0 && schedule.surviving_at(s + depth + 1)[y] {
                stack.push((y, depth + 1, w * p));
            }
        }
    }
    (total, law)
}

/// Endpoint law conditioned on survival: oracle_forward, normalized.
pub fn oracle_conditioned_law(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    mu: &[f64],
    s: usize,
    t: usize,
) -> Vec<f64> {
    let (total, law) = oracle_forward(chain, schedule, mu, s, t);
    assert!(total > 0.0, "oracle: conditioning on a null event");
    law.into_iter().map(|w| w / total).collect()
}

/// Marginal at intermediate time k of trajectories surviving to t,
/// conditioned on that survival.
pub fn oracle_bridge_marginal(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    mu: &[f64],
    s: usize,
    k: usize,
    t: usize,
) -> Vec<f64> {
    assert!(k <= t);
    let n = chain.n();
    let mut marginal = vec![0.0; n];
    let mut total = 0.0;
    // enumerate full trajectories to t and bin the state at depth k
    let mut stack: Vec<(usize, usize, f64, usize)> = Vec::new(); // state, depth, weight, state_at_k
    for x0 in 0..n {
        if mu[x0] > 0.0 && schedule.surviving_at(s)[x0] {
            stack.push((x0, 0, mu[x0], if k == 0 { x0 } else { usize::MAX }));
        }
    }
    while let Some((x, depth, w, at_k)) = stack.pop() {
        if depth == t {
            total += w;
            marginal[at_k] += w;
            continue;
        }
        for y in 0..n {
            let p = chain.kernel().p(x, y);
            if p > 0.0 && schedule.surviving_at(s + depth + 1)[y] {
                let next_at_k = if depth + 1 == k { y } else { at_k };
                stack.push((y, depth + 1, w * p, next_at_k));
            }
        }
    }
    assert!(total > 0.0, "oracle: conditioning on a null event");
    marginal.into_iter().map(|w| w / total).collect()
}

/// Oracle minorization constant at (s, t0): entrywise min over start states
/// of the conditioned t0-step laws; returns (c1, normalized witness).
pub fn oracle_minorize(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    s: usize,
    t0: usize,
) -> (f64, Vec<f64>) {
    let n = chain.n();
    let mut min_row: Option<Vec<f64>> = None;
    for x in 0..n {
        if !schedule.surviving_at(s)[x] {
            continue;
        }
        let mut dirac = vec![0.0; n];
        dirac[x] = 1.0;
        let (total, law) = oracle_forward(chain, schedule, &dirac, s, t0);
        if total <= 0.0 {
            return (0.0, vec![0.0; n]);
        }
        let row: Vec<f64> = law.into_iter().map(|w| w / total).collect();
        min_row = Some(match min_row {
            None => row,
            Some(m) => m.iter().zip(&row).map(|(&a, &b)| a.min(b)).collect(),
        });
    }
    let min_row = min_row.expect("oracle: empty survival set");
    let c1: f64 = min_row.iter().sum();
    if c1 <= 0.0 {
        return (0.0, min_row);
    }
    (c1, min_row.iter().map(|&w| w / c1).collect())
}

pub fn tv_vec(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
