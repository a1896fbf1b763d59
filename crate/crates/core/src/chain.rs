//! Finite-state chains killed by a moving absorbing schedule.
//!
//! All quantities here are exact (finite linear algebra): survival
//! probabilities, conditioned one-marginal semigroups and conditioned
//! intermediate-time marginals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Renormalization tolerance for stochastic rows and normalized measures.
pub const ROW_TOL: f64 = 1e-12;
/// Conditioning on mass below this is an error rather than a silent renormalization.
pub const NULL_MASS: f64 = 1e-250;
/// Survival probabilities below this raise a horizon-too-deep error.
pub const UNDERFLOW: f64 = 1e-300;

/// Ordered set of state labels with a stable label <-> index bijection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    labels: Vec<String>,
}

impl StateSpace {
    pub fn new<S: Into<String>>(labels: Vec<S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::Model("state space must be nonempty".into()));
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[i + 1..].contains(a) {
                return Err(Error::Model(format!("duplicate state label {a:?}")));
            }
        }
        Ok(StateSpace { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Membership mask over a state space: `true` marks absorbing states.
pub type Mask = Vec<bool>;

fn subset(inner: &Mask, outer: &Mask) -> bool {
    inner.iter().zip(outer).all(|(&a, &b)| !a || b)
}

fn any_survivor(absorbing: &Mask) -> bool {
    absorbing.iter().any(|&a| !a)
}

/// The moving absorbing set `t -> A_t` with its declared behavior class.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundarySchedule {
    Constant {
        absorbing: Mask,
    },
    Periodic {
        period: usize,
        absorbing: Vec<Mask>,
    },
    /// Non-increasing nested sets stabilizing at `absorbing.last()` from
    /// `stabilization_time` on.
    Converging {
        absorbing: Vec<Mask>,
        stabilization_time: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    Periodic,
    Converging,
}

impl BoundarySchedule {
    pub fn constant(absorbing: Mask) -> Result<Self> {
        if !any_survivor(&absorbing) {
            return Err(Error::DegenerateSchedule { time: 0 });
        }
        Ok(BoundarySchedule::Constant { absorbing })
    }

    pub fn periodic(absorbing: Vec<Mask>) -> Result<Self> {
        let period = absorbing.len();
        if period == 0 {
            return Err(Error::Model("periodic schedule needs period >= 1".into()));
        }
        let n = absorbing[0].len();
        for (t, m) in absorbing.iter().enumerate() {
            if m.len() != n {
                return Err(Error::Shape("inconsistent mask sizes in schedule".into()));
            }
            if !any_survivor(m) {
                return Err(Error::DegenerateSchedule { time: t });
            }
        }
        Ok(BoundarySchedule::Periodic { period, absorbing })
    }

    /// `absorbing[t]` for `t <= t*`; the last entry is the limit set `A_inf`.
    pub fn converging(absorbing: Vec<Mask>) -> Result<Self> {
        if absorbing.is_empty() {
            return Err(Error::Model("converging schedule needs at least one set".into()));
        }
        let n = absorbing[0].len();
        for (t, m) in absorbing.iter().enumerate() {
            if m.len() != n {
                return Err(Error::Shape("inconsistent mask sizes in schedule".into()));
            }
            if !any_survivor(m) {
                return Err(Error::DegenerateSchedule { time: t });
            }
            if t > 0 && !subset(m, &absorbing[t - 1]) {
                return Err(Error::Model(format!(
                    "converging schedule not nested at time {t}"
                )));
            }
        }
        let stabilization_time = absorbing.len() - 1;
        Ok(BoundarySchedule::Converging {
            absorbing,
            stabilization_time,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        match self {
            BoundarySchedule::Constant { .. } => ScheduleKind::Constant,
            BoundarySchedule::Periodic { .. } => ScheduleKind::Periodic,
            BoundarySchedule::Converging { .. } => ScheduleKind::Converging,
        }
    }

    pub fn n_states(&self) -> usize {
        match self {
            BoundarySchedule::Constant { absorbing } => absorbing.len(),
            BoundarySchedule::Periodic { absorbing, .. } => absorbing[0].len(),
            BoundarySchedule::Converging { absorbing, .. } => absorbing[0].len(),
        }
    }

    /// The absorbing set A_t.
    pub fn absorbing_at(&self, t: usize) -> &Mask {
        match self {
            BoundarySchedule::Constant { absorbing } => absorbing,
            BoundarySchedule::Periodic { period, absorbing } => &absorbing[t % period],
            BoundarySchedule::Converging {
                absorbing,
                stabilization_time,
            } => &absorbing[t.min(*stabilization_time)],
        }
    }

    /// Indicator of the survival set E_t.
    pub fn surviving_at(&self, t: usize) -> Mask {
        self.absorbing_at(t).iter().map(|&a| !a).collect()
    }

    pub fn period(&self) -> Option<usize> {
        match self {
            BoundarySchedule::Periodic { period, .. } => Some(*period),
            _ => None,
        }
    }

    pub fn stabilization_time(&self) -> Option<usize> {
        match self {
            BoundarySchedule::Converging {
                stabilization_time, ..
            } => Some(*stabilization_time),
            _ => None,
        }
    }

    /// The limit set A_inf for converging schedules; for constant schedules
    /// this is A itself (degenerate case).
    pub fn limit_set(&self) -> Option<&Mask> {
        match self {
            BoundarySchedule::Constant { absorbing } => Some(absorbing),
            BoundarySchedule::Converging { absorbing, .. } => absorbing.last(),
            BoundarySchedule::Periodic { .. } => None,
        }
    }

    /// Distinct start offsets `s` after which the shifted schedule repeats:
    /// `{0}` for constant, one per residue for periodic, up to the
    /// stabilization time for converging schedules.
    pub fn behavior_window(&self) -> Vec<usize> {
        match self {
            BoundarySchedule::Constant { .. } => vec![0],
            BoundarySchedule::Periodic { period, .. } => (0..*period).collect(),
            BoundarySchedule::Converging {
                stabilization_time, ..
            } => (0..=*stabilization_time).collect(),
        }
    }
}

/// One-step transition matrix, row-stochastic within `ROW_TOL`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    n: usize,
    rows: Vec<Vec<f64>>,
}

impl Kernel {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Model("kernel must be nonempty".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Shape(format!("row {i} has length {}", row.len())));
            }
            let mut sum = 0.0;
            for &p in row {
                if !(p >= 0.0) {
                    return Err(Error::Model(format!("negative entry in row {i}")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::Model(format!("row {i} sums to {sum}, not 1")));
            }
        }
        Ok(Kernel { n, rows })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self, x: usize, y: usize) -> f64 {
        self.rows[x][y]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.rows[x]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Nonnegative weights over a state space, optionally normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    weights: Vec<f64>,
    normalized: bool,
}

impl Measure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Model("measure weights must be nonnegative".into()));
        }
        Ok(Measure {
            weights,
            normalized: false,
        })
    }

    /// Renormalizes to total mass one; errors on mass below `NULL_MASS`.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let mut m = Measure::new(weights)?;
        let mass = m.mass();
        if mass < NULL_MASS {
            return Err(Error::ConditioningOnNull { mass });
        }
        for w in &mut m.weights {
            *w /= mass;
        }
        m.normalized = true;
        Ok(m)
    }

    pub fn dirac(n: usize, x: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[x] = 1.0;
        Measure {
            weights,
            normalized: true,
        }
    }

    pub fn uniform_on(mask_surviving: &Mask) -> Result<Self> {
        let count = mask_surviving.iter().filter(|&&s| s).count();
        if count == 0 {
            return Err(Error::Model("uniform measure on empty set".into()));
        }
        let weights = mask_surviving
            .iter()
            .map(|&s| if s { 1.0 / count as f64 } else { 0.0 })
            .collect();
        Ok(Measure {
            weights,
            normalized: true,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Support check against a survival mask.
    pub fn supported_on(&self, surviving: &Mask) -> bool {
        self.weights
            .iter()
            .zip(surviving)
            .all(|(&w, &ok)| ok || w == 0.0)
    }
}

/// Finite state space plus one-step stochastic kernel; absorption is
/// realized by composing the kernel with a `BoundarySchedule`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorbedChain {
    states: StateSpace,
    kernel: Kernel,
}

impl AbsorbedChain {
    pub fn new(states: StateSpace, kernel: Kernel) -> Result<Self> {
        if states.len() != kernel.n() {
            return Err(Error::Shape(format!(
                "{} states but kernel is {}x{}",
                states.len(),
                kernel.n(),
                kernel.n()
            )));
        }
        Ok(AbsorbedChain { states, kernel })
    }

    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &StateSpace {
        &self.states
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    fn check_schedule(&self, schedule: &BoundarySchedule) -> Result<()> {
        if schedule.n_states() != self.n() {
            return Err(Error::Shape(format!(
                "schedule over {} states, chain has {}",
                schedule.n_states(),
                self.n()
            )));
        }
        Ok(())
    }
}

/// Matrix realization of one killed step: entry (x, y) is
/// `P(x,y) * 1_{x in E_{s+k}} * 1_{y in E_{s+k+1}}`.
pub fn restricted_step(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    s: usize,
    k: usize,
) -> Result<Vec<Vec<f64>>> {
    chain.check_schedule(schedule)?;
    let n = chain.n();
    let from = schedule.surviving_at(s + k);
    let to = schedule.surviving_at(s + k + 1);
    let mut m = vec![vec![0.0; n]; n];
    for x in 0..n {
        if !from[x] {
            continue;
        }
        for y in 0..n {
            if to[y] {
                m[x][y] = chain.kernel.p(x, y);
            }
        }
    }
    Ok(m)
}

/// One killed step applied to a row vector, in place into `out`.
fn step_forward(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    abs_time: usize,
    v: &[f64],
    out: &mut [f64],
) {
    let n = chain.n();
    let from = schedule.surviving_at(abs_time);
    let to = schedule.surviving_at(abs_time + 1);
    out.iter_mut().for_each(|o| *o = 0.0);
    for x in 0..n {
        if !from[x] || v[x] == 0.0 {
            continue;
        }
        let vx = v[x];
        let row = &chain.kernel.rows()[x];
        for y in 0..n {
            if to[y] {
                out[y] += vx * row[y];
            }
        }
    }
}

/// One killed step applied to a column vector: `b[x] = sum_y M(x,y) b_next[y]`.
fn step_backward(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    abs_time: usize,
    b_next: &[f64],
    out: &mut [f64],
) {
    let n = chain.n();
    let from = schedule.surviving_at(abs_time);
    let to = schedule.surviving_at(abs_time + 1);
    for x in 0..n {
        if !from[x] {
            out[x] = 0.0;
            continue;
        }
        let row = &chain.kernel.rows()[x];
        let mut acc = 0.0;
        for y in 0..n {
            if to[y] {
                acc += row[y] * b_next[y];
            }
        }
        out[x] = acc;
    }
}

/// Unnormalized forward sub-probability vector: entry y is
/// `P_mu(X_t = y, tau_{A o theta_s} > t)`.
pub fn forward_vector(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    mu: &[f64],
    s: usize,
    t: usize,
) -> Result<Vec<f64>> {
    chain.check_schedule(schedule)?;
    let surviving = schedule.surviving_at(s);
    let mut v: Vec<f64> = mu
        .iter()
        .zip(&surviving)
        .map(|(&w, &ok)| if ok { w } else { 0.0 })
        .collect();
    let mut next = vec![0.0; chain.n()];
    for k in 0..t {
        step_forward(chain, schedule, s + k, &v, &mut next);
        std::mem::swap(&mut v, &mut next);
    }
    Ok(v)
}

/// Scaled forward sweep: returns per-step vectors normalized to unit mass
/// together with the accumulated log of the total surviving mass at each step.
/// Used for deep horizons where raw products underflow.
pub(crate) fn forward_sweep_scaled(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    mu: &[f64],
    s: usize,
    t: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    chain.check_schedule(schedule)?;
    let surviving = schedule.surviving_at(s);
    let mut v: Vec<f64> = mu
        .iter()
        .zip(&surviving)
        .map(|(&w, &ok)| if ok { w } else { 0.0 })
        .collect();
    let mut log_mass = 0.0;
    let m0: f64 = v.iter().sum();
    if m0 <= 0.0 {
        return Err(Error::ConditioningOnNull { mass: 0.0 });
    }
    log_mass += m0.ln();
    v.iter_mut().for_each(|w| *w /= m0);
    let mut vectors = Vec::with_capacity(t + 1);
    let mut logs = Vec::with_capacity(t + 1);
    vectors.push(v.clone());
    logs.push(log_mass);
    let mut next = vec![0.0; chain.n()];
    for k in 0..t {
        step_forward(chain, schedule, s + k, &v, &mut next);
        let m: f64 = next.iter().sum();
        if m <= 0.0 {
            return Err(Error::ConditioningOnNull { mass: 0.0 });
        }
        log_mass += m.ln();
        for (dst, &src) in v.iter_mut().zip(next.iter()) {
            *dst = src / m;
        }
        vectors.push(v.clone());
        logs.push(log_mass);
    }
    Ok((vectors, logs))
}

/// Scaled backward survival sweep for horizon `t` from clock `s`: returns,
/// for each k = 0..=t, a vector proportional to
/// `y -> P_y(tau_{A o theta_{s+k}} > t-k)` (max-normalized) and its log scale.
pub(crate) fn backward_sweep_scaled(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    s: usize,
    t: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    chain.check_schedule(schedule)?;
    let n = chain.n();
    let mut vectors = vec![Vec::new(); t + 1];
    let mut logs = vec![0.0; t + 1];
    let end = schedule.surviving_at(s + t);
    let mut b: Vec<f64> = end.iter().map(|&ok| if ok { 1.0 } else { 0.0 }).collect();
    vectors[t] = b.clone();
    logs[t] = 0.0;
    let mut prev = vec![0.0; n];
    for k in (0..t).rev() {
        step_backward(chain, schedule, s + k, &b, &mut prev);
        let mx = prev.iter().cloned().fold(0.0f64, f64::max);
        if mx <= 0.0 {
            return Err(Error::ConditioningOnNull { mass: 0.0 });
        }
        logs[k] = logs[k + 1] + mx.ln();
        for (dst, &src) in b.iter_mut().zip(prev.iter()) {
            *dst = src / mx;
        }
        vectors[k] = b.clone();
    }
    Ok((vectors, logs))
}

/// Survival vector `y -> P_y(tau_{A o theta_s} > t)` over all states
/// (zero on A_s). Raw values; use only for moderate horizons.
pub fn backward_survival(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    s: usize,
    t: usize,
) -> Result<Vec<f64>> {
    let (vectors, logs) = backward_sweep_scaled(chain, schedule, s, t)?;
    let scale = logs[0].exp();
    Ok(vectors[0].iter().map(|&v| v * scale).collect())
}

fn check_start(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    x: usize,
    s: usize,
) -> Result<()> {
    if schedule.absorbing_at(s)[x] {
        return Err(Error::StartInBoundary {
            state: chain.states.label(x).to_string(),
            time: s,
        });
    }
    Ok(())
}

/// `P_x(tau_{A o theta_s} > t)` by direct products.
pub fn survival(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    x: usize,
    s: usize,
    t: usize,
) -> Result<f64> {
    chain.check_schedule(schedule)?;
    check_start(chain, schedule, x, s)?;
    let v = forward_vector(chain, schedule, &Measure::dirac(chain.n(), x).weights, s, t)?;
    let p: f64 = v.iter().sum();
    if t > 0 && p < UNDERFLOW {
        return Err(Error::HorizonTooDeep { horizon: t });
    }
    Ok(p)
}

/// Log-space variant of `survival` for deep horizons: returns
/// `ln P_x(tau_{A o theta_s} > t)`.
pub fn survival_log_space(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    x: usize,
    s: usize,
    t: usize,
) -> Result<f64> {
    chain.check_schedule(schedule)?;
    check_start(chain, schedule, x, s)?;
    let (_, logs) = forward_sweep_scaled(
        chain,
        schedule,
        &Measure::dirac(chain.n(), x).weights,
        s,
        t,
    )?;
    Ok(logs[t])
}

/// The conditioned one-marginal semigroup
/// `phi_{s,s+t}(mu) = P_mu(X_t in . | tau_{A o theta_s} > t)`.
pub fn conditioned_law(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    mu: &Measure,
    s: usize,
    t: usize,
) -> Result<Measure> {
    chain.check_schedule(schedule)?;
    let (vectors, logs) = forward_sweep_scaled(chain, schedule, mu.weights(), s, t)?;
    if logs[t] < NULL_MASS.ln() {
        return Err(Error::ConditioningOnNull { mass: logs[t].exp() });
    }
    Measure::normalized(vectors[t].clone())
}

/// `P_mu(X_k in . | tau_{A o theta_s} > t)` for `k <= t`: forward
/// sub-probability at k times backward survival over the remaining window,
/// renormalized.
pub fn conditioned_bridge_marginal(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    mu: &Measure,
    s: usize,
    k: usize,
    t: usize,
) -> Result<Measure> {
    if k > t {
        return Err(Error::Domain(format!("bridge time {k} exceeds horizon {t}")));
    }
    chain.check_schedule(schedule)?;
    let (fwd, flogs) = forward_sweep_scaled(chain, schedule, mu.weights(), s, k)?;
    let back = {
        let (vectors, _) = backward_sweep_scaled(chain, schedule, s + k, t - k)?;
        vectors.into_iter().next().unwrap()
    };
    if flogs[k] < NULL_MASS.ln() {
        return Err(Error::ConditioningOnNull {
            mass: flogs[k].exp(),
        });
    }
    let weights: Vec<f64> = fwd[k].iter().zip(&back).map(|(&f, &b)| f * b).collect();
    Measure::normalized(weights)
}

/// Survival-probability profile from clock `s`: `value(t, x)` recovers
/// `P_x(tau_{A o theta_s} > t)` as `scaled[t][x] * exp(log_scale[t])`.
/// Ratios across states at a fixed `t` can use `scaled` directly.
#[derive(Debug, Clone)]
pub struct SurvivalProfile {
    pub scaled: Vec<Vec<f64>>,
    pub log_scale: Vec<f64>,
}

impl SurvivalProfile {
    pub fn value(&self, t: usize, x: usize) -> f64 {
        self.scaled[t][x] * self.log_scale[t].exp()
    }

    pub fn max_scaled(&self, t: usize) -> f64 {
        self.scaled[t].iter().cloned().fold(0.0f64, f64::max)
    }
}

/// All-states survival profile for t = 0..=horizon, computed with a running
/// rescaled matrix product.
pub fn survival_profile(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    s: usize,
    horizon: usize,
) -> Result<SurvivalProfile> {
    chain.check_schedule(schedule)?;
    let n = chain.n();
    let surviving = schedule.surviving_at(s);
    // Columns of the running product, propagated backward-style per start state
    // would cost a sweep per t; instead propagate the product row by row.
    let mut product: Vec<Vec<f64>> = (0..n)
        .map(|x| {
            let mut row = vec![0.0; n];
            if surviving[x] {
                row[x] = 1.0;
            }
            row
        })
        .collect();
    let mut scaled = Vec::with_capacity(horizon + 1);
    let mut log_scale = Vec::with_capacity(horizon + 1);
    let mut log_acc = 0.0;
    let sums = |p: &Vec<Vec<f64>>| -> Vec<f64> { p.iter().map(|r| r.iter().sum()).collect() };
    scaled.push(sums(&product));
    log_scale.push(0.0);
    let mut next = vec![0.0; n];
    for k in 0..horizon {
        let mut mx = 0.0f64;
        for row in product.iter_mut() {
            step_forward(chain, schedule, s + k, row, &mut next);
            row.copy_from_slice(&next);
            for &v in row.iter() {
                mx = mx.max(v);
            }
        }
        if mx <= 0.0 {
            return Err(Error::ConditioningOnNull { mass: 0.0 });
        }
        if mx < 1e-100 {
            for row in product.iter_mut() {
                for v in row.iter_mut() {
                    *v /= mx;
                }
            }
            log_acc += mx.ln();
        }
        scaled.push(sums(&product));
        log_scale.push(log_acc);
    }
    Ok(SurvivalProfile { scaled, log_scale })
}

// ---------------------------------------------------------------------------
// JSON document form

/// Serialized chain + schedule. Round-trips bit-exactly through
/// `to_doc` / `from_doc`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ChainDoc {
    pub states: Vec<String>,
    pub kernel: Vec<Vec<f64>>,
    pub schedule: ScheduleDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScheduleDoc {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub period: Option<usize>,
    pub sets: BTreeMap<String, Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub limit: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stabilization_time: Option<usize>,
}

fn mask_to_labels(states: &StateSpace, mask: &Mask) -> Vec<String> {
    states
        .labels()
        .iter()
        .zip(mask)
        .filter(|(_, &a)| a)
        .map(|(l, _)| l.clone())
        .collect()
}

fn labels_to_mask(states: &StateSpace, labels: &[String]) -> Result<Mask> {
    let mut mask = vec![false; states.len()];
    for l in labels {
        let i = states
            .index_of(l)
            .ok_or_else(|| Error::Model(format!("unknown state label {l:?} in schedule")))?;
        mask[i] = true;
    }
    Ok(mask)
}

pub fn to_doc(chain: &AbsorbedChain, schedule: &BoundarySchedule) -> ChainDoc {
    let states = chain.states();
    let schedule_doc = match schedule {
        BoundarySchedule::Constant { absorbing } => ScheduleDoc {
            kind: "constant".into(),
            period: None,
            sets: BTreeMap::from([("0".to_string(), mask_to_labels(states, absorbing))]),
            limit: None,
            stabilization_time: None,
        },
        BoundarySchedule::Periodic { period, absorbing } => ScheduleDoc {
            kind: "periodic".into(),
            period: Some(*period),
            sets: absorbing
                .iter()
                .enumerate()
                .map(|(t, m)| (t.to_string(), mask_to_labels(states, m)))
                .collect(),
            limit: None,
            stabilization_time: None,
        },
        BoundarySchedule::Converging {
            absorbing,
            stabilization_time,
        } => ScheduleDoc {
            kind: "converging".into(),
            period: None,
            sets: absorbing
                .iter()
                .enumerate()
                .map(|(t, m)| (t.to_string(), mask_to_labels(states, m)))
                .collect(),
            limit: absorbing.last().map(|m| mask_to_labels(states, m)),
            stabilization_time: Some(*stabilization_time),
        },
    };
    ChainDoc {
        states: states.labels().to_vec(),
        kernel: chain.kernel().rows().to_vec(),
        schedule: schedule_doc,
    }
}

pub fn from_doc(doc: &ChainDoc) -> Result<(AbsorbedChain, BoundarySchedule)> {
    let states = StateSpace::new(doc.states.clone())?;
    let kernel = Kernel::new(doc.kernel.clone())?;
    let chain = AbsorbedChain::new(states, kernel)?;

    let mut sets: Vec<(usize, Mask)> = Vec::new();
    for (key, labels) in &doc.schedule.sets {
        let t: usize = key
            .parse()
            .map_err(|_| Error::Model(format!("bad time index key {key:?}")))?;
        sets.push((t, labels_to_mask(chain.states(), labels)?));
    }
    sets.sort_by_key(|(t, _)| *t);

    let schedule = match doc.schedule.kind.as_str() {
        "constant" => {
            let mask = sets
                .into_iter()
                .next()
                .map(|(_, m)| m)
                .ok_or_else(|| Error::Model("constant schedule needs one set".into()))?;
            BoundarySchedule::constant(mask)?
        }
        "periodic" => {
            let period = doc
                .schedule
                .period
                .ok_or_else(|| Error::Model("periodic schedule needs a period".into()))?;
            if sets.len() != period {
                return Err(Error::Model(format!(
                    "periodic schedule needs exactly {period} sets, got {}",
                    sets.len()
                )));
            }
            for (i, (t, _)) in sets.iter().enumerate() {
                if *t != i {
                    return Err(Error::Model("periodic sets must cover 0..period".into()));
                }
            }
            BoundarySchedule::periodic(sets.into_iter().map(|(_, m)| m).collect())?
        }
        "converging" => {
            for (i, (t, _)) in sets.iter().enumerate() {
                if *t != i {
                    return Err(Error::Model(
                        "converging sets must cover 0..=stabilization_time".into(),
                    ));
                }
            }
            let masks: Vec<Mask> = sets.into_iter().map(|(_, m)| m).collect();
            if let Some(st) = doc.schedule.stabilization_time {
                if st != masks.len() - 1 {
                    return Err(Error::Model(format!(
                        "stabilization_time {st} inconsistent with {} sets",
                        masks.len()
                    )));
                }
            }
            if let Some(limit) = &doc.schedule.limit {
                let limit_mask = labels_to_mask(chain.states(), limit)?;
                if Some(&limit_mask) != masks.last() {
                    return Err(Error::Model("limit set does not match last set".into()));
                }
            }
            BoundarySchedule::converging(masks)?
        }
        other => return Err(Error::Model(format!("unknown schedule kind {other:?}"))),
    };
    chain.check_schedule(&schedule)?;
    Ok((chain, schedule))
}

#[cfg(test)]
mod tests {
    use super::*;

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
    fn restricted_step_entries() {
        let (chain, sched) = chain_a();
        let m = restricted_step(&chain, &sched, 0, 0).unwrap();
        assert_eq!(m[0][0], 0.5);
        assert_eq!(m[0][1], 0.3);
        assert_eq!(m[1][0], 0.4);
        assert_eq!(m[1][1], 0.4);
        assert_eq!(m[0][2], 0.0);
        let r0: f64 = m[0].iter().sum();
        let r1: f64 = m[1].iter().sum();
        assert!((r0 - 0.8).abs() < 1e-15);
        assert!((r1 - 0.8).abs() < 1e-15);
    }

    #[test]
    fn restricted_step_identity_when_boundary_unreached() {
        let states = StateSpace::new(vec!["u", "v"]).unwrap();
        let kernel = Kernel::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let chain = AbsorbedChain::new(states, kernel).unwrap();
        let sched = BoundarySchedule::constant(vec![false, true]).unwrap();
        let m = restricted_step(&chain, &sched, 0, 0).unwrap();
        assert_eq!(m[0][0], 1.0);
        let row_sum: f64 = m[0].iter().sum();
        assert_eq!(row_sum, 1.0);
    }

    #[test]
    fn empty_survival_set_rejected() {
        assert!(matches!(
            BoundarySchedule::constant(vec![true, true]),
            Err(Error::DegenerateSchedule { time: 0 })
        ));
    }

    #[test]
    fn periodic_restriction_repeats() {
        let states = StateSpace::new(vec!["a", "b", "c"]).unwrap();
        let kernel = Kernel::new(vec![
            vec![0.2, 0.5, 0.3],
            vec![0.3, 0.3, 0.4],
            vec![0.1, 0.1, 0.8],
        ])
        .unwrap();
        let chain = AbsorbedChain::new(states, kernel).unwrap();
        let sched = BoundarySchedule::periodic(vec![
            vec![false, false, true],
            vec![false, false, false],
        ])
        .unwrap();
        let m0 = restricted_step(&chain, &sched, 0, 0).unwrap();
        let m2 = restricted_step(&chain, &sched, 2, 0).unwrap();
        assert_eq!(m0, m2);
    }

    #[test]
    fn survival_chain_a() {
        let (chain, sched) = chain_a();
        assert_eq!(survival(&chain, &sched, 0, 0, 0).unwrap(), 1.0);
        assert!((survival(&chain, &sched, 0, 0, 1).unwrap() - 0.8).abs() < 1e-15);
        assert!((survival(&chain, &sched, 0, 0, 2).unwrap() - 0.64).abs() < 1e-15);
    }

    #[test]
    fn survival_monotone_and_log_space_agrees() {
        let (chain, sched) = chain_a();
        let mut prev = 1.0;
        for t in 0..20 {
            let p = survival(&chain, &sched, 0, 0, t).unwrap();
            assert!(p <= prev + 1e-15);
            let lp = survival_log_space(&chain, &sched, 0, 0, t).unwrap();
            assert!((lp.exp() - p).abs() < 1e-12);
            prev = p;
        }
    }

    #[test]
    fn survival_from_boundary_errors() {
        let (chain, sched) = chain_a();
        assert!(matches!(
            survival(&chain, &sched, 2, 0, 1),
            Err(Error::StartInBoundary { .. })
        ));
    }

    #[test]
    fn conditioned_law_chain_a() {
        let (chain, sched) = chain_a();
        let mu = Measure::dirac(3, 0);
        let law = conditioned_law(&chain, &sched, &mu, 0, 1).unwrap();
        assert!((law.weights()[0] - 0.625).abs() < 1e-15);
        assert!((law.weights()[1] - 0.375).abs() < 1e-15);
        let law_b = conditioned_law(&chain, &sched, &Measure::dirac(3, 1), 0, 1).unwrap();
        assert!((law_b.weights()[0] - 0.5).abs() < 1e-15);
        assert!((law_b.weights()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn conditioned_law_time_zero_is_identity() {
        let (chain, sched) = chain_a();
        let mu = Measure::normalized(vec![0.3, 0.7, 0.0]).unwrap();
        let law = conditioned_law(&chain, &sched, &mu, 0, 0).unwrap();
        for (a, b) in law.weights().iter().zip(mu.weights()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn bridge_matches_hand_computation() {
        let (chain, sched) = chain_a();
        let mu = Measure::dirac(3, 0);
        let b = conditioned_bridge_marginal(&chain, &sched, &mu, 0, 1, 2).unwrap();
        assert!((b.weights()[0] - 0.625).abs() < 1e-15);
        assert!((b.weights()[1] - 0.375).abs() < 1e-15);
    }

    #[test]
    fn bridge_boundary_cases() {
        let (chain, sched) = chain_a();
        let mu = Measure::dirac(3, 1);
        let at_t = conditioned_bridge_marginal(&chain, &sched, &mu, 0, 3, 3).unwrap();
        let law = conditioned_law(&chain, &sched, &mu, 0, 3).unwrap();
        assert_eq!(at_t.weights(), law.weights());
        let at_0 = conditioned_bridge_marginal(&chain, &sched, &mu, 0, 0, 3).unwrap();
        assert_eq!(at_0.weights(), mu.weights());
    }

    #[test]
    fn doc_round_trip() {
        let (chain, sched) = chain_a();
        let doc = to_doc(&chain, &sched);
        let json = serde_json::to_string(&doc).unwrap();
        let parsed: ChainDoc = serde_json::from_str(&json).unwrap();
        assert_eq!(doc, parsed);
        let (chain2, sched2) = from_doc(&parsed).unwrap();
        assert_eq!(chain, chain2);
        assert_eq!(sched, sched2);
        assert_eq!(json, serde_json::to_string(&to_doc(&chain2, &sched2)).unwrap());
    }
}
