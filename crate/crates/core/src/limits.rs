//! Limiting objects: fixed-boundary quasi-stationary triple, quasi-limiting
//! distributions, quasi-ergodic averages, the periodic skeleton chain and
//! its invariant measure, and converging-boundary limits.

use serde::{Deserialize, Serialize};

use crate::certify::CVCertificate;
use crate::chain::{
    backward_sweep_scaled, forward_sweep_scaled, AbsorbedChain,
    BoundarySchedule, Mask, Measure, ScheduleKind, NULL_MASS,
};
use crate::error::{Error, Result};
use crate::qprocess::QProcess;

const POWER_ITER_CAP: usize = 1_000_000;
const POWER_ITER_TOL: f64 = 1e-14;
pub const EIGEN_RESIDUAL_TOL: f64 = 1e-12;

/// Quasi-stationary triple for a fixed absorbing set: left eigenvector
/// alpha, per-step survival eigenvalue rho* (lambda = -ln rho* in the
/// continuous-time convention) and right eigenvector eta_inf.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QSDTriple {
    pub alpha: Vec<f64>,
    /// Per-step survival eigenvalue rho* in (0, 1).
    pub rho: f64,
    /// Continuous-time absorption rate -ln(rho*).
    pub lambda: f64,
    /// Right eigenvector, normalized to 1 at the reference state
    /// (lexicographically smallest surviving state).
    pub eta_inf: Vec<f64>,
}

/// Sub-stochastic kernel of the period-skeleton chain observed at times
/// n*gamma with absorption aggregated over each period.
#[derive(Debug, Clone)]
pub struct SkeletonChain {
    pub kernel: Vec<Vec<f64>>,
    pub period: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitKind {
    QuasiLimiting,
    QuasiErgodic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitReport {
    pub kind: LimitKind,
    pub value: Vec<f64>,
    /// (time, TV distance to `value`).
    pub diagnostics: Vec<(usize, f64)>,
    pub converged: bool,
}

fn tv_vec(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// One restricted step for a fixed absorbing mask, as a dense matrix.
fn fixed_restricted(chain: &AbsorbedChain, absorbing: &Mask) -> Vec<Vec<f64>> {
    let n = chain.n();
    let mut m = vec![vec![0.0; n]; n];
    for x in 0..n {
        if absorbing[x] {
            continue;
        }
        for y in 0..n {
            if !absorbing[y] {
                m[x][y] = chain.kernel().p(x, y);
            }
        }
    }
    m
}

fn mat_vec_left(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut out = vec![0.0; n];
    for x in 0..n {
        if v[x] == 0.0 {
            continue;
        }
        for y in 0..n {
            out[y] += v[x] * m[x][y];
        }
    }
    out
}

fn mat_vec_right(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(&p, &w)| p * w).sum()).collect()
}

/// Perron pair of a sub-stochastic matrix restricted to `surviving`,
/// by deterministic power iteration (uniform start, cap 1e6 iterations).
fn perron_pair(m: &[Vec<f64>], surviving: &Mask) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let count = surviving.iter().filter(|&&s| s).count();
    let mut alpha: Vec<f64> = surviving
        .iter()
        .map(|&s| if s { 1.0 / count as f64 } else { 0.0 })
        .collect();
    let mut rho;
    let mut iterations = 0;
    loop {
        let next = mat_vec_left(m, &alpha);
        let mass: f64 = next.iter().sum();
        if mass <= 0.0 {
            return Err(Error::PowerIteration {
                iterations,
                residual: f64::NAN,
            });
        }
        let normalized: Vec<f64> = next.iter().map(|&w| w / mass).collect();
        let delta = tv_vec(&normalized, &alpha);
        alpha = normalized;
        rho = mass;
        iterations += 1;
        if delta < POWER_ITER_TOL {
            break;
        }
        if iterations >= POWER_ITER_CAP {
            return Err(Error::PowerIteration {
                iterations,
                residual: delta,
            });
        }
    }
    let mut eta: Vec<f64> = surviving.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
    let mut iterations_r = 0;
    loop {
        let next = mat_vec_right(m, &eta);
        let mx = next.iter().cloned().fold(0.0f64, f64::max);
        if mx <= 0.0 {
            return Err(Error::PowerIteration {
                iterations: iterations_r,
                residual: f64::NAN,
            });
        }
        let normalized: Vec<f64> = next.iter().map(|&w| w / mx).collect();
        let delta = normalized
            .iter()
            .zip(&eta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        eta = normalized;
        iterations_r += 1;
        if delta < POWER_ITER_TOL {
            break;
        }
        if iterations_r >= POWER_ITER_CAP {
            return Err(Error::PowerIteration {
                iterations: iterations_r,
                residual: delta,
            });
        }
    }
    Ok((alpha, rho, eta))
}

fn reference_index(chain: &AbsorbedChain, surviving: &Mask) -> usize {
    (0..chain.n())
        .filter(|&x| surviving[x])
        .min_by(|&a, &b| chain.states().label(a).cmp(chain.states().label(b)))
        .expect("nonempty survival set")
}

/// Quasi-stationary triple of the chain killed at a fixed set `absorbing`.
pub fn qsd_fixed(chain: &AbsorbedChain, absorbing: &Mask) -> Result<QSDTriple> {
    if absorbing.len() != chain.n() {
        return Err(Error::Shape("absorbing mask size mismatch".into()));
    }
    let surviving: Mask = absorbing.iter().map(|&a| !a).collect();
    if !surviving.iter().any(|&s| s) {
        return Err(Error::DegenerateSchedule { time: 0 });
    }
    let m = fixed_restricted(chain, absorbing);
    let (alpha, rho, mut eta) = perron_pair(&m, &surviving)?;
    let y = reference_index(chain, &surviving);
    if eta[y] <= 0.0 {
        return Err(Error::PowerIteration {
            iterations: 0,
            residual: f64::NAN,
        });
    }
    let scale = eta[y];
    for e in &mut eta {
        *e /= scale;
    }
    // residual validation
    let left = mat_vec_left(&m, &alpha);
    let res_l: f64 = left
        .iter()
        .zip(&alpha)
        .map(|(a, b)| (a - rho * b).abs())
        .sum();
    let right = mat_vec_right(&m, &eta);
    let res_r = right
        .iter()
        .zip(&eta)
        .map(|(a, b)| (a - rho * b).abs())
        .fold(0.0f64, f64::max);
    if res_l > EIGEN_RESIDUAL_TOL || res_r > EIGEN_RESIDUAL_TOL {
        return Err(Error::PowerIteration {
            iterations: POWER_ITER_CAP,
            residual: res_l.max(res_r),
        });
    }
    Ok(QSDTriple {
        alpha,
        rho,
        lambda: -rho.ln(),
        eta_inf: eta,
    })
}

/// Invariant measure of the Doob transform of the chain killed at a fixed
/// set: proportional to alpha * eta entrywise.
pub fn doob_invariant(chain: &AbsorbedChain, absorbing: &Mask) -> Result<Measure> {
    let triple = qsd_fixed(chain, absorbing)?;
    Measure::normalized(
        triple
            .alpha
            .iter()
            .zip(&triple.eta_inf)
            .map(|(&a, &e)| a * e)
            .collect(),
    )
}

/// Tracks the conditioned law up to `t_max` against the predicted limit.
/// For constant and converging schedules the prediction is the QSD of the
/// limit set; for periodic schedules the final iterate is used and the
/// report only checks stabilization.
pub fn quasi_limiting(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    mu: &Measure,
    t_max: usize,
    tol: f64,
) -> Result<LimitReport> {
    let trajectory = conditioned_trajectory(chain, schedule, mu, 0, t_max)?;
    let predicted = match schedule.limit_set() {
        Some(limit) => qsd_fixed(chain, limit)?.alpha,
        None => trajectory.last().unwrap().clone(),
    };
    let diagnostics: Vec<(usize, f64)> = trajectory
        .iter()
        .enumerate()
        .map(|(t, law)| (t, tv_vec(law, &predicted)))
        .collect();
    let tail = (t_max / 8).max(1);
    let converged = diagnostics.len() > tail
        && diagnostics[diagnostics.len() - tail..]
            .iter()
            .all(|&(_, d)| d <= tol);
    Ok(LimitReport {
        kind: LimitKind::QuasiLimiting,
        value: predicted,
        diagnostics,
        converged,
    })
}

/// Conditioned laws phi_{s,s+t}(mu) for t = 0..=t_max, scaled recursion.
fn conditioned_trajectory(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    mu: &Measure,
    s: usize,
    t_max: usize,
) -> Result<Vec<Vec<f64>>> {
    let (vectors, logs) = forward_sweep_scaled(chain, schedule, mu.weights(), s, t_max)?;
    if logs[t_max] < NULL_MASS.ln() {
        return Err(Error::ConditioningOnNull {
            mass: logs[t_max].exp(),
        });
    }
    Ok(vectors)
}

/// Reruns the quasi-limiting tracking from a second (s, mu) start and
/// checks the two limits agree within 2*tol (uniqueness check for
/// converging schedules).
pub fn quasi_limiting_independence(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    starts: &[(usize, Measure)],
    t_max: usize,
    tol: f64,
) -> Result<(bool, Vec<Vec<f64>>)> {
    let mut finals = Vec::new();
    for (s, mu) in starts {
        let traj = conditioned_trajectory(chain, schedule, mu, *s, t_max)?;
        finals.push(traj.last().unwrap().clone());
    }
    let mut ok = true;
    for i in 1..finals.len() {
        if tv_vec(&finals[0], &finals[i]) > 2.0 * tol {
            ok = false;
        }
    }
    Ok((ok, finals))
}

/// Quasi-ergodic average: mean over k = 0..=n of
/// `P_mu(X_k in . | tau_{A} > n)`, computed with one forward and one
/// backward scaled sweep.
pub fn quasi_ergodic(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    mu: &Measure,
    n: usize,
) -> Result<Measure> {
    let (fwd, flogs) = forward_sweep_scaled(chain, schedule, mu.weights(), 0, n)?;
    if flogs[n] < NULL_MASS.ln() {
        return Err(Error::ConditioningOnNull {
            mass: flogs[n].exp(),
        });
    }
    let (back, _) = backward_sweep_scaled(chain, schedule, 0, n)?;
    let dim = chain.n();
    let mut acc = vec![0.0; dim];
    for k in 0..=n {
        let mut bridge: Vec<f64> = fwd[k].iter().zip(&back[k]).map(|(&f, &b)| f * b).collect();
        let mass: f64 = bridge.iter().sum();
        if mass < f64::MIN_POSITIVE {
            return Err(Error::ConditioningOnNull { mass });
        }
        for w in &mut bridge {
            *w /= mass;
        }
        for (a, w) in acc.iter_mut().zip(&bridge) {
            *a += w;
        }
    }
    let total = (n + 1) as f64;
    Measure::normalized(acc.into_iter().map(|a| a / total).collect())
}

/// Skeleton chain of a gamma-periodic schedule: the gamma-step surviving
/// transition kernel on E_0.
pub fn skeleton(chain: &AbsorbedChain, schedule: &BoundarySchedule) -> Result<SkeletonChain> {
    let gamma = schedule
        .period()
        .ok_or_else(|| Error::Kind("skeleton requires a periodic schedule".into()))?;
    let n = chain.n();
    let mut kernel: Vec<Vec<f64>> = (0..n)
        .map(|x| {
            let mut row = vec![0.0; n];
            if !schedule.absorbing_at(0)[x] {
                row[x] = 1.0;
            }
            row
        })
        .collect();
    for k in 0..gamma {
        let from = schedule.surviving_at(k);
        let to = schedule.surviving_at(k + 1);
        let mut next = vec![vec![0.0; n]; n];
        for x in 0..n {
            for z in 0..n {
                let w = kernel[x][z];
                if w == 0.0 || !from[z] {
                    continue;
                }
                for y in 0..n {
                    if to[y] {
                        next[x][y] += w * chain.kernel().p(z, y);
                    }
                }
            }
        }
        kernel = next;
    }
    Ok(SkeletonChain {
        kernel,
        period: gamma,
    })
}

/// Invariant measure of the skeleton chain's own Doob transform: the law of
/// the Q-process observed at times n*gamma.
pub fn beta_gamma(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    cert: &CVCertificate,
) -> Result<Measure> {
    let gamma = schedule
        .period()
        .ok_or_else(|| Error::Kind("beta_gamma requires a periodic schedule".into()))?;
    cert.require_valid()?;
    if cert.t0 % gamma != 0 {
        return Err(Error::Assumption(format!(
            "certificate t0 = {} is not a multiple of the period {gamma}",
            cert.t0
        )));
    }
    let sk = skeleton(chain, schedule)?;
    let surviving = schedule.surviving_at(0);
    let (alpha, _rho, eta) = perron_pair(&sk.kernel, &surviving)?;
    let beta = Measure::normalized(alpha.iter().zip(&eta).map(|(&a, &e)| a * e).collect())?;
    // stationarity under the skeleton's Doob transform
    let check = push_doob(&sk.kernel, &eta, &beta)?;
    if tv_vec(check.weights(), beta.weights()) > 1e-10 {
        return Err(Error::PowerIteration {
            iterations: 0,
            residual: tv_vec(check.weights(), beta.weights()),
        });
    }
    Ok(beta)
}

fn push_doob(kernel: &[Vec<f64>], eta: &[f64], mu: &Measure) -> Result<Measure> {
    let n = mu.len();
    let mut out = vec![0.0; n];
    for x in 0..n {
        let w = mu.weights()[x];
        if w == 0.0 || eta[x] <= 0.0 {
            continue;
        }
        for y in 0..n {
            out[y] += w * kernel[x][y] * eta[y] / eta[x];
        }
    }
    Measure::normalized(out)
}

/// The quasi-ergodic limit: for periodic schedules the period-average of
/// the Q-process marginals started from beta_gamma; for constant and
/// converging schedules the invariant measure of the limit-set Doob
/// transform. Constant schedules route through the converging branch.
pub fn qed_limit(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    cert: &CVCertificate,
    qp: Option<&QProcess>,
) -> Result<Measure> {
    match schedule.kind() {
        ScheduleKind::Periodic => {
            let gamma = schedule.period().unwrap();
            let beta = beta_gamma(chain, schedule, cert)?;
            if gamma == 1 {
                return Ok(beta);
            }
            let qp = qp.ok_or_else(|| {
                Error::Domain("periodic qed_limit needs a tabulated Q-process".into())
            })?;
            let n = chain.n();
            let mut acc = vec![0.0; n];
            let mut current = beta;
            for u in 0..gamma {
                for (a, &w) in acc.iter_mut().zip(current.weights()) {
                    *a += w;
                }
                if u + 1 < gamma {
                    current = qp.push(&current, u)?;
                }
            }
            Measure::normalized(acc.into_iter().map(|a| a / gamma as f64).collect())
        }
        ScheduleKind::Constant | ScheduleKind::Converging => {
            let limit = schedule.limit_set().unwrap();
            doob_invariant(chain, limit)
        }
    }
}

/// Diagnostics CSV rows (`t,tv`) for a limit report.
pub fn diagnostics_csv(report: &LimitReport) -> String {
    let mut out = String::from("t,tv\n");
    for (t, tv) in &report.diagnostics {
        out.push_str(&format!("{t},{tv}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::certify;
    use crate::chain::{Kernel, StateSpace};

    fn chain_a() -> (AbsorbedChain, BoundarySchedule) {
        let states = StateSpace::new(vec!["a", "b", "dead"]).unwrap();
        let kernel = Kernel::new(vec![
            vec![0.5, 0.3, 0.2],
            vec![0.4, 0.4, 0.2],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let chain = AbsorbedChain::new(states, kernel).unwrap();
        let schedule = BoundarySchedule::constant(vec![false, false, true]).unwrap();
        (chain, schedule)
    }

    #[test]
    fn qsd_chain_a() {
        let (chain, _) = chain_a();
        let triple = qsd_fixed(&chain, &vec![false, false, true]).unwrap();
        assert!((triple.rho - 0.8).abs() < 1e-12);
        assert!((triple.alpha[0] - 4.0 / 7.0).abs() < 1e-12);
        assert!((triple.alpha[1] - 3.0 / 7.0).abs() < 1e-12);
        assert!((triple.eta_inf[0] - 1.0).abs() < 1e-12);
        assert!((triple.eta_inf[1] - 1.0).abs() < 1e-12);
        assert!((triple.lambda - 0.8f64.ln().abs()).abs() < 1e-10);
    }

    #[test]
    fn qsd_single_self_loop() {
        let states = StateSpace::new(vec!["a", "dead"]).unwrap();
        let kernel = Kernel::new(vec![vec![0.7, 0.3], vec![0.0, 1.0]]).unwrap();
        let chain = AbsorbedChain::new(states, kernel).unwrap();
        let triple = qsd_fixed(&chain, &vec![false, true]).unwrap();
        assert!((triple.rho - 0.7).abs() < 1e-13);
        assert!((triple.alpha[0] - 1.0).abs() < 1e-13);
        assert_eq!(triple.eta_inf[0], 1.0);
    }

    #[test]
    fn quasi_limiting_chain_a() {
        let (chain, sched) = chain_a();
        let mu = Measure::dirac(3, 0);
        let report = quasi_limiting(&chain, &sched, &mu, 80, 1e-9).unwrap();
        assert!(report.converged);
        assert!((report.value[0] - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn quasi_limiting_converging_matches_limit_qsd() {
        // A_0 = {dead, b}, A_t = {dead} for t >= 3
        let (chain, _) = chain_a();
        let sched = BoundarySchedule::converging(vec![
            vec![false, true, true],
            vec![false, true, true],
            vec![false, true, true],
            vec![false, false, true],
        ])
        .unwrap();
        let mu = Measure::dirac(3, 0);
        let report = quasi_limiting(&chain, &sched, &mu, 120, 1e-8).unwrap();
        assert!(report.converged);
        let triple = qsd_fixed(&chain, &vec![false, false, true]).unwrap();
        assert!(tv_vec(&report.value, &triple.alpha) < 1e-12);
    }

    #[test]
    fn quasi_ergodic_boundary_cases() {
        let (chain, sched) = chain_a();
        let mu = Measure::normalized(vec![0.25, 0.75, 0.0]).unwrap();
        let qe0 = quasi_ergodic(&chain, &sched, &mu, 0).unwrap();
        assert!(tv_vec(qe0.weights(), mu.weights()) < 1e-14);
    }

    #[test]
    fn quasi_ergodic_matches_bridge_average() {
        use crate::chain::conditioned_bridge_marginal;
        let (chain, sched) = chain_a();
        let mu = Measure::dirac(3, 0);
        let n = 5;
        let qe = quasi_ergodic(&chain, &sched, &mu, n).unwrap();
        let mut acc = vec![0.0; 3];
        for k in 0..=n {
            let b = conditioned_bridge_marginal(&chain, &sched, &mu, 0, k, n).unwrap();
            for (a, &w) in acc.iter_mut().zip(b.weights()) {
                *a += w / (n + 1) as f64;
            }
        }
        assert!(tv_vec(qe.weights(), &acc) < 1e-13);
    }

    #[test]
    fn quasi_ergodic_long_run_chain_a() {
        let (chain, sched) = chain_a();
        let mu = Measure::dirac(3, 0);
        let qe = quasi_ergodic(&chain, &sched, &mu, 2000).unwrap();
        assert!((qe.weights()[0] - 4.0 / 7.0).abs() < 1e-3);
    }

    #[test]
    fn skeleton_gamma_one_is_restricted_kernel() {
        let (chain, _) = chain_a();
        let sched = BoundarySchedule::periodic(vec![vec![false, false, true]]).unwrap();
        let sk = skeleton(&chain, &sched).unwrap();
        assert!((sk.kernel[0][0] - 0.5).abs() < 1e-15);
        assert!((sk.kernel[0][1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn skeleton_declared_period_two_is_square() {
        let (chain, _) = chain_a();
        let mask = vec![false, false, true];
        let sched = BoundarySchedule::periodic(vec![mask.clone(), mask.clone()]).unwrap();
        let sk = skeleton(&chain, &sched).unwrap();
        // square of the restricted kernel
        assert!((sk.kernel[0][0] - (0.5 * 0.5 + 0.3 * 0.4)).abs() < 1e-15);
        assert!((sk.kernel[0][1] - (0.5 * 0.3 + 0.3 * 0.4)).abs() < 1e-15);
    }

    #[test]
    fn skeleton_survival_identity() {
        use crate::chain::survival;
        let (chain, _) = chain_a();
        let sched = BoundarySchedule::periodic(vec![
            vec![false, false, true],
            vec![false, true, true],
        ])
        .unwrap();
        let sk = skeleton(&chain, &sched).unwrap();
        // survival of the skeleton to n equals survival of the original to n*gamma
        let mut v = vec![1.0, 0.0, 0.0];
        for n in 1..=4 {
            v = mat_vec_left(&sk.kernel, &v);
            let skel_surv: f64 = v.iter().sum();
            let orig = survival(&chain, &sched, 0, 0, 2 * n).unwrap();
            assert!((skel_surv - orig).abs() < 1e-14, "n={n}");
        }
    }

    #[test]
    fn beta_gamma_chain_a() {
        let (chain, _) = chain_a();
        let sched = BoundarySchedule::periodic(vec![vec![false, false, true]]).unwrap();
        let cert = certify(&chain, &sched, 2, 24).unwrap();
        let beta = beta_gamma(&chain, &sched, &cert).unwrap();
        assert!((beta.weights()[0] - 4.0 / 7.0).abs() < 1e-10);
    }

    #[test]
    fn beta_gamma_rejects_misaligned_t0() {
        let (chain, _) = chain_a();
        let mask = vec![false, false, true];
        let sched = BoundarySchedule::periodic(vec![mask.clone(), mask.clone()]).unwrap();
        let mut cert = certify(&chain, &sched, 4, 24).unwrap();
        cert.t0 = 3;
        assert!(matches!(
            beta_gamma(&chain, &sched, &cert),
            Err(Error::Assumption(_))
        ));
    }

    #[test]
    fn qed_limit_constant_equals_periodic_gamma_one() {
        let (chain, sched_const) = chain_a();
        let cert_c = certify(&chain, &sched_const, 2, 24).unwrap();
        let qed_const = qed_limit(&chain, &sched_const, &cert_c, None).unwrap();
        let sched_p = BoundarySchedule::periodic(vec![vec![false, false, true]]).unwrap();
        let cert_p = certify(&chain, &sched_p, 2, 24).unwrap();
        let qed_p = qed_limit(&chain, &sched_p, &cert_p, None).unwrap();
        assert!(tv_vec(qed_const.weights(), qed_p.weights()) < 1e-10);
        assert!((qed_const.weights()[0] - 4.0 / 7.0).abs() < 1e-10);
    }
}
