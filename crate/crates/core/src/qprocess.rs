//! The Q-process: the chain conditioned never to be absorbed, built through
//! the eta-function Doob transform.
//!
//! eta is always estimated by finite-horizon survival ratios; eigen-solves
//! appear only as test oracles for constant boundaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::certify::{CVCertificate, DCoefficients};
use crate::chain::{backward_sweep_scaled, AbsorbedChain, BoundarySchedule, Measure};
use crate::error::{Error, Result};

/// How the free scale of eta is pinned down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EtaNormalization {
    /// eta_s(reference) = 1 at a state present in every survival set.
    ReferenceState(usize),
    /// nu_s(eta_s) = 1 with nu from the certificate (used when no state
    /// survives at every time).
    NuWeighted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EtaTable {
    /// values[s][x] = eta_s(x), for s = 0..=s_max; zero off the survival set.
    pub values: Vec<Vec<f64>>,
    pub normalization: EtaNormalization,
    pub truncation_horizon: usize,
    /// Per-s bound (1/(c1 c2)) (1 - c1 c2)^floor((T_eta - s)/t0) on the
    /// harmonicity residual of the truncated ratio estimate.
    pub error_bounds: Vec<f64>,
}

impl EtaTable {
    pub fn s_max(&self) -> usize {
        self.values.len() - 1
    }

    pub fn eta(&self, s: usize, x: usize) -> Result<f64> {
        if s >= self.values.len() {
            return Err(Error::Window {
                time: s,
                max: self.s_max(),
            });
        }
        Ok(self.values[s][x])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QProcess {
    pub eta: EtaTable,
    /// kernels[s] is the transition matrix of the Q-process from time s to s+1.
    pub kernels: Vec<Vec<Vec<f64>>>,
    pub certificate_t0: usize,
}

/// Reference state for eta: the lexicographically smallest state surviving at
/// every time of the schedule's behavior window.
pub fn reference_state(chain: &AbsorbedChain, schedule: &BoundarySchedule) -> Option<usize> {
    let n = chain.n();
    let window = schedule.behavior_window();
    let mut always = vec![true; n];
    // every absolute time in a window cycle plus one period is covered by
    // behavior_window shifts
    for &s in &window {
        let surv = schedule.surviving_at(s);
        for x in 0..n {
            always[x] &= surv[x];
        }
    }
    let mut candidates: Vec<usize> = (0..n).filter(|&x| always[x]).collect();
    candidates.sort_by(|&a, &b| chain.states().label(a).cmp(chain.states().label(b)));
    candidates.into_iter().next()
}

/// eta_s(x) estimated as a ratio of deep-horizon survival probabilities,
/// tabulated for s = 0..=T_eta - t0.
pub fn compute_eta(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    cert: &CVCertificate,
    t_eta: usize,
) -> Result<EtaTable> {
    cert.require_valid()?;
    if t_eta < cert.t0 {
        return Err(Error::Domain(format!(
            "T_eta = {t_eta} below certificate t0 = {}",
            cert.t0
        )));
    }
    let s_max = t_eta - cert.t0;
    let (raw, _) = backward_sweep_scaled(chain, schedule, 0, t_eta)?;
    let normalization = match reference_state(chain, schedule) {
        Some(y) => EtaNormalization::ReferenceState(y),
        None => EtaNormalization::NuWeighted,
    };
    let mut values = Vec::with_capacity(s_max + 1);
    for s in 0..=s_max {
        let b = &raw[s];
        let denom = match &normalization {
            EtaNormalization::ReferenceState(y) => b[*y],
            EtaNormalization::NuWeighted => {
                // pick the witness tabulated at a time congruent to s so its
                // support lies in E_s (the nu family is period-stationary)
                let key = match schedule.period() {
                    Some(gamma) => cert.t0 + (s + gamma - cert.t0 % gamma) % gamma,
                    None => s.max(cert.t0),
                };
                let nu = cert
                    .nu_at(key)
                    .ok_or_else(|| Error::CertificateRequired("empty nu family".into()))?;
                nu.iter().zip(b).map(|(&w, &v)| w * v).sum()
            }
        };
        if !(denom > 0.0) || denom < f64::MIN_POSITIVE {
            return Err(Error::HorizonTooDeep { horizon: t_eta });
        }
        values.push(b.iter().map(|&v| v / denom).collect());
    }
    let rho = cert.product();
    let error_bounds = (0..=s_max)
        .map(|s| (1.0 / rho) * (1.0 - rho).powi(((t_eta - s) / cert.t0) as i32))
        .collect();
    Ok(EtaTable {
        values,
        normalization,
        truncation_horizon: t_eta,
        error_bounds,
    })
}

/// Builds the Doob-transformed transition kernels
/// `q(x,y) ~ P(x,y) 1_{y in E_{s+1}} eta_{s+1}(y)`, row-normalized.
pub fn build_qprocess(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    cert: &CVCertificate,
    t_eta: usize,
) -> Result<QProcess> {
    let eta = compute_eta(chain, schedule, cert, t_eta)?;
    let n = chain.n();
    let mut kernels = Vec::with_capacity(eta.s_max());
    for s in 0..eta.s_max() {
        let from = schedule.surviving_at(s);
        let to = schedule.surviving_at(s + 1);
        let mut m = vec![vec![0.0; n]; n];
        for x in 0..n {
            if !from[x] {
                continue;
            }
            let mut rowsum = 0.0;
            for y in 0..n {
                if to[y] {
                    m[x][y] = chain.kernel().p(x, y) * eta.values[s + 1][y];
                    rowsum += m[x][y];
                }
            }
            if rowsum < f64::MIN_POSITIVE {
                return Err(Error::HorizonTooDeep { horizon: t_eta });
            }
            for y in 0..n {
                m[x][y] /= rowsum;
            }
        }
        kernels.push(m);
    }
    Ok(QProcess {
        eta,
        kernels,
        certificate_t0: cert.t0,
    })
}

impl QProcess {
    pub fn s_max(&self) -> usize {
        self.kernels.len()
    }

    /// Transition matrix of the Q-process at time s (rows indexed by E_s).
    pub fn q_kernel(&self, s: usize) -> Result<&Vec<Vec<f64>>> {
        self.kernels.get(s).ok_or(Error::Window {
            time: s,
            max: self.s_max().saturating_sub(1),
        })
    }

    /// `Q_{s,x}(X_{s+t} in .)` by composing kernels.
    pub fn q_marginal(&self, s: usize, x: usize, t: usize) -> Result<Measure> {
        let n = self.kernels.first().map(|k| k.len()).unwrap_or(0);
        let mut v = vec![0.0; n];
        v[x] = 1.0;
        for k in 0..t {
            let m = self.q_kernel(s + k)?;
            let mut next = vec![0.0; n];
            for (xi, &w) in v.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (yi, &p) in m[xi].iter().enumerate() {
                    next[yi] += w * p;
                }
            }
            v = next;
        }
        Measure::normalized(v)
    }

    /// Pushes a measure one step under the Q-process kernel at time s.
    pub fn push(&self, mu: &Measure, s: usize) -> Result<Measure> {
        let m = self.q_kernel(s)?;
        let n = mu.len();
        let mut next = vec![0.0; n];
        for (xi, &w) in mu.weights().iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (yi, &p) in m[xi].iter().enumerate() {
                next[yi] += w * p;
            }
        }
        Measure::normalized(next)
    }
}

/// Mixing bound of the Q-process:
/// `2 * prod_{k=0}^{floor((t-s)/t0)-1} (1 - d_{t-k})`.
pub fn mixing_bound(dc: &DCoefficients, s: usize, t: usize) -> Result<f64> {
    if t < s {
        return Err(Error::Domain(format!("mixing bound needs t >= s, got s={s}, t={t}")));
    }
    let steps = (t - s) / dc.t0;
    let mut bound = 2.0;
    for k in 0..steps {
        let (d, _) = dc.d(t - k)?;
        bound *= 1.0 - d;
    }
    Ok(bound.clamp(0.0, 2.0))
}

/// Serialized form with times as string keys and matrices row-major.
#[derive(Debug, Serialize, Deserialize)]
pub struct QProcessDoc {
    pub eta: BTreeMap<String, Vec<f64>>,
    pub kernels: BTreeMap<String, Vec<Vec<f64>>>,
    pub truncation_horizon: usize,
    pub error_bounds: Vec<f64>,
    pub certificate_t0: usize,
}

pub fn to_doc(qp: &QProcess) -> QProcessDoc {
    QProcessDoc {
        eta: qp
            .eta
            .values
            .iter()
            .enumerate()
            .map(|(s, v)| (s.to_string(), v.clone()))
            .collect(),
        kernels: qp
            .kernels
            .iter()
            .enumerate()
            .map(|(s, m)| (s.to_string(), m.clone()))
            .collect(),
        truncation_horizon: qp.eta.truncation_horizon,
        error_bounds: qp.eta.error_bounds.clone(),
        certificate_t0: qp.certificate_t0,
    }
}
