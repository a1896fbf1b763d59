//! Numerical verification of the quantitative bounds on exactly computed
//! quantities: the exponential Q-process bound, the conditioned-flow merging
//! bound, the mean-ergodic ratio condition, and the uniform convergence gap
//! for converging schedules.

use serde::{Deserialize, Serialize};

use crate::certify::{CVCertificate, DCoefficients};
use crate::chain::{
    conditioned_bridge_marginal, conditioned_law, survival_profile, AbsorbedChain,
    BoundarySchedule, Measure, ScheduleKind,
};
use crate::error::{Error, Result};
use crate::qprocess::QProcess;

/// Margins below this fail hard; margins in [-MARGIN_TOL, 0) are float noise.
pub const MARGIN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundCheckRecord {
    pub seed: u64,
    pub s: usize,
    pub t: usize,
    pub big_t: usize,
    pub x: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
}

impl BoundCheckRecord {
    fn new(seed: u64, s: usize, t: usize, big_t: usize, x: usize, lhs: f64, rhs: f64) -> Self {
        let margin = rhs - lhs;
        BoundCheckRecord {
            seed,
            s,
            t,
            big_t,
            x,
            lhs,
            rhs,
            margin,
            pass: margin >= -MARGIN_TOL,
        }
    }
}

/// Total variation distance: half the l1 distance of weight vectors over the
/// common state universe.
pub fn tv(mu1: &Measure, mu2: &Measure) -> Result<f64> {
    if mu1.len() != mu2.len() {
        return Err(Error::Shape(format!(
            "tv over mismatched universes ({} vs {})",
            mu1.len(),
            mu2.len()
        )));
    }
    Ok(0.5
        * mu1
            .weights()
            .iter()
            .zip(mu2.weights())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>())
}

pub fn tv_slices(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// The exponential convergence bound towards the Q-process:
/// `1/((c1 c2)^3 P_x(tau_{A o th_s} > t0))
///  * P_x(tau_{A o th_s} > t) / max_y P_y(tau_{A o th_{s+t0}} > t)
///  * (1 - c1 c2)^floor(T / t0)`.
pub fn theorem1_bound(
    cert: &CVCertificate,
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    x: usize,
    s: usize,
    t: usize,
    big_t: usize,
) -> Result<f64> {
    cert.require_valid()?;
    let rho = cert.product();
    let t0 = cert.t0;
    let prof_s = survival_profile(chain, schedule, s, t.max(t0))?;
    let prof_shift = survival_profile(chain, schedule, s + t0, t)?;
    let p_t0 = prof_s.value(t0, x);
    if p_t0 <= 0.0 {
        return Err(Error::ConditioningOnNull { mass: p_t0 });
    }
    let num = prof_s.scaled[t][x] * prof_s.log_scale[t].exp();
    let den = prof_shift.max_scaled(t) * prof_shift.log_scale[t].exp();
    if den <= 0.0 {
        return Err(Error::ConditioningOnNull { mass: den });
    }
    let ratio = num / den;
    Ok((1.0 / (rho.powi(3) * p_t0)) * ratio * (1.0 - rho).powi((big_t / t0) as i32))
}

/// For each T in the grid: TV between the exact time-t marginal of the law
/// conditioned to survive to t+T and the tabulated Q-process marginal,
/// against `theorem1_bound`. The marginal TV lower-bounds the trajectory TV
/// the theorem controls, so every record must pass.
pub fn check_qprocess_convergence(
    cert: &CVCertificate,
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    qp: &QProcess,
    seed: u64,
    x: usize,
    s: usize,
    t: usize,
    t_grid: &[usize],
) -> Result<Vec<BoundCheckRecord>> {
    let n = chain.n();
    let q_marg = qp.q_marginal(s, x, t)?;
    let mut records = Vec::with_capacity(t_grid.len());
    for &big_t in t_grid {
        let conditioned = conditioned_bridge_marginal(
            chain,
            schedule,
            &Measure::dirac(n, x),
            s,
            t,
            t + big_t,
        )?;
        let lhs = tv(&conditioned, &q_marg)?;
        let rhs = theorem1_bound(cert, chain, schedule, x, s, t, big_t)?;
        records.push(BoundCheckRecord::new(seed, s, t, big_t, x, lhs, rhs));
    }
    Ok(records)
}

/// Merging of the conditioned flow:
/// `TV(phi_{s,s+u}(mu1), phi_{s,s+u}(mu2)) <= 2 prod_{k<floor(u/t0)} (1 - d_{s+u-k})`.
pub fn merging_check(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    dc: &DCoefficients,
    seed: u64,
    s: usize,
    u: usize,
    pairs: &[(Measure, Measure)],
) -> Result<Vec<BoundCheckRecord>> {
    let t_abs = s + u;
    let steps = u / dc.t0;
    let mut rhs = 2.0;
    for k in 0..steps {
        let (d, _) = dc.d(t_abs - k)?;
        rhs *= 1.0 - d;
    }
    let mut records = Vec::with_capacity(pairs.len());
    for (i, (mu1, mu2)) in pairs.iter().enumerate() {
        let l1 = conditioned_law(chain, schedule, mu1, s, u)?;
        let l2 = conditioned_law(chain, schedule, mu2, s, u)?;
        let lhs = tv(&l1, &l2)?;
        records.push(BoundCheckRecord::new(seed, s, u, 0, i, lhs, rhs));
    }
    Ok(records)
}

/// sup over t <= horizon of
/// `P_x(tau_A > t) / max_y P_y(tau_{A o th_{t0}} > t)`;
/// finiteness (and <= 1 for aligned periodic and non-increasing schedules)
/// is the hypothesis behind the mean ergodic conclusion.
pub fn cs_ratio(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    cert: &CVCertificate,
    x: usize,
    horizon: usize,
) -> Result<f64> {
    cert.require_valid()?;
    let t0 = cert.t0;
    let prof0 = survival_profile(chain, schedule, 0, horizon)?;
    let prof_shift = survival_profile(chain, schedule, t0, horizon)?;
    let mut sup = 0.0f64;
    for t in 0..=horizon {
        let num = prof0.scaled[t][x] * prof0.log_scale[t].exp();
        let den = prof_shift.max_scaled(t) * prof_shift.log_scale[t].exp();
        if den <= 0.0 {
            return Err(Error::ConditioningOnNull { mass: den });
        }
        sup = sup.max(num / den);
    }
    Ok(sup)
}

/// For each s in the grid: sup over t, T <= window of the TV distance
/// between the law conditioned on the shifted moving boundary and the law
/// conditioned on the limit boundary.
pub fn uniform_gap(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    x: usize,
    s_grid: &[usize],
    window: usize,
) -> Result<Vec<(usize, f64)>> {
    if schedule.kind() != ScheduleKind::Converging {
        return Err(Error::Kind(
            "uniform_gap requires a converging schedule".into(),
        ));
    }
    let limit = schedule.limit_set().unwrap().clone();
    let limit_schedule = BoundarySchedule::constant(limit)?;
    let n = chain.n();
    let mu = Measure::dirac(n, x);
    let mut out = Vec::with_capacity(s_grid.len());
    for &s in s_grid {
        let mut sup = 0.0f64;
        for t in 0..=window {
            for big_t in 0..=window {
                let moving =
                    conditioned_bridge_marginal(chain, schedule, &mu, s, t, t + big_t)?;
                let fixed =
                    conditioned_bridge_marginal(chain, &limit_schedule, &mu, 0, t, t + big_t)?;
                sup = sup.max(tv(&moving, &fixed)?);
            }
        }
        out.push((s, sup));
    }
    Ok(out)
}

/// CSV report with one line per record:
/// `seed,s,t,T,x,lhs,rhs,margin,pass`.
pub fn records_csv(records: &[BoundCheckRecord]) -> String {
    let mut out = String::from("seed,s,t,T,x,lhs,rhs,margin,pass\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.seed, r.s, r.t, r.big_t, r.x, r.lhs, r.rhs, r.margin, r.pass
        ));
    }
    out
}
