//! One-dimensional diffusion dX = dW - V(X) dt killed at a moving boundary
//! h(t): closed-form Brownian first-passage baselines, scale function and
//! speed measure, a comes-down-from-infinity probe, and Monte Carlo
//! estimators of conditioned laws and quasi-ergodic occupation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};

pub const MIN_SURVIVORS: usize = 100;

/// Standard normal CDF.
pub fn phi(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Drift V in dX = dW - V(X) dt.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Drift {
    Zero,
    Linear { slope: f64 },
    CubicShifted { c: f64 },
    Power { alpha: f64, c: f64 },
    /// Piecewise definition by linear interpolation on an ascending grid;
    /// clamped outside the grid.
    Table { xs: Vec<f64>, vs: Vec<f64> },
}

impl Drift {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Drift::Zero => 0.0,
            Drift::Linear { slope } => slope * x,
            Drift::CubicShifted { c } => (x - c).powi(3),
            Drift::Power { alpha, c } => {
                let d = x - c;
                d.signum() * d.abs().powf(*alpha)
            }
            Drift::Table { xs, vs } => interp_linear(xs, vs, x),
        }
    }

    /// Derivative, analytic where available, else central differences with
    /// step 1e-5 (advisory diagnostics only).
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Drift::Zero => 0.0,
            Drift::Linear { slope } => *slope,
            Drift::CubicShifted { c } => 3.0 * (x - c).powi(2),
            Drift::Power { alpha, c } => alpha * (x - c).abs().powf(alpha - 1.0),
            Drift::Table { .. } => {
                let h = 1e-5;
                (self.eval(x + h) - self.eval(x - h)) / (2.0 * h)
            }
        }
    }

    /// Antiderivative of V vanishing at 0: integral of V over [0, y].
    pub fn integral(&self, y: f64) -> f64 {
        match self {
            Drift::Zero => 0.0,
            Drift::Linear { slope } => 0.5 * slope * y * y,
            Drift::CubicShifted { c } => ((y - c).powi(4) - c.powi(4)) / 4.0,
            Drift::Power { alpha, c } => {
                let f = |u: f64| u.signum() * u.abs().powf(alpha + 1.0) / (alpha + 1.0);
                f(y - c) - f(-c)
            }
            Drift::Table { .. } => {
                // cumulative trapezoid on a fine grid, cubic interpolation
                self.table_cumulative(y)
            }
        }
    }

    fn table_cumulative(&self, y: f64) -> f64 {
        // adaptive grid is unnecessary for an interpolated table: Simpson on
        // 4096 panels of [0, y] is already beyond interpolation accuracy
        simpson(|u| self.eval(u), 0.0, y, 4096)
    }
}

fn interp_linear(xs: &[f64], vs: &[f64], x: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    if x <= xs[0] {
        return vs[0];
    }
    if x >= xs[xs.len() - 1] {
        return vs[vs.len() - 1];
    }
    let i = xs.partition_point(|&g| g <= x) - 1;
    let w = (x - xs[i]) / (xs[i + 1] - xs[i]);
    vs[i] * (1.0 - w) + vs[i + 1] * w
}

/// Moving boundary h(t), positive and bounded.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Boundary {
    Constant { level: f64 },
    /// h(t) = base + amplitude * (1 - cos(2 pi t / period)) / 2
    Periodic { base: f64, amplitude: f64, period: f64 },
    /// h(t) = h0 * exp(-rate t): decreasing to 0.
    DecayingToZero { h0: f64, rate: f64 },
}

impl Boundary {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Boundary::Constant { level } => *level,
            Boundary::Periodic {
                base,
                amplitude,
                period,
            } => base + amplitude * 0.5 * (1.0 - (2.0 * std::f64::consts::PI * t / period).cos()),
            Boundary::DecayingToZero { h0, rate } => h0 * (-rate * t).exp(),
        }
    }

    pub fn h_max(&self) -> f64 {
        match self {
            Boundary::Constant { level } => *level,
            Boundary::Periodic {
                base, amplitude, ..
            } => base + amplitude,
            Boundary::DecayingToZero { h0, .. } => *h0,
        }
    }

    /// Lipschitz constant estimated on a sampled grid over [0, horizon].
    pub fn lipschitz_on_grid(&self, horizon: f64, samples: usize) -> f64 {
        let dt = horizon / samples as f64;
        let mut l: f64 = 0.0;
        let mut prev = self.eval(0.0);
        for k in 1..=samples {
            let cur = self.eval(k as f64 * dt);
            l = l.max((cur - prev).abs() / dt);
            prev = cur;
        }
        l
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffusionModel {
    pub drift: Drift,
    pub boundary: Boundary,
    pub dt: f64,
    pub horizon: f64,
    /// Paths above this are clamped (with a counter); default 50 * (h_max + 1).
    pub x_cap: Option<f64>,
    pub seed: u64,
    pub stream: u64,
    pub bridge_correction: bool,
}

impl DiffusionModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Model("dt must be positive".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Model("horizon must be positive".into()));
        }
        if self.boundary.h_max() < 0.0 {
            return Err(Error::Model("boundary must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn x_cap(&self) -> f64 {
        self.x_cap
            .unwrap_or_else(|| 50.0 * (self.boundary.h_max() + 1.0))
    }

    /// sup V' - V^2 over a probe grid (advisory hypothesis diagnostic).
    pub fn drift_hypothesis_sup(&self, lo: f64, hi: f64, samples: usize) -> f64 {
        let step = (hi - lo) / samples as f64;
        (0..=samples)
            .map(|k| {
                let x = lo + k as f64 * step;
                self.drift.derivative(x) - self.drift.eval(x).powi(2)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

const EXP_OVERFLOW: f64 = 700.0;

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    if a == b {
        return 0.0;
    }
    let n = panels.max(2) & !1;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

fn adaptive_simpson<F: Fn(f64) -> f64 + Copy>(
    f: F,
    a: f64,
    b: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let whole = simpson(f, a, b, 2);
    adaptive_step(f, a, b, tol, whole, depth)
}

fn adaptive_step<F: Fn(f64) -> f64 + Copy>(
    f: F,
    a: f64,
    b: f64,
    tol: f64,
    whole: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let left = simpson(f, a, m, 2);
    let right = simpson(f, m, b, 2);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        left + right + (left + right - whole) / 15.0
    } else {
        adaptive_step(f, a, m, 0.5 * tol, left, depth - 1)
            + adaptive_step(f, m, b, 0.5 * tol, right, depth - 1)
    }
}

/// Scale function Lambda_z(x) = int_z^x exp(2 int_0^y V) dy.
pub fn scale_function(model: &DiffusionModel, z: f64, x: f64) -> Result<f64> {
    if x < z {
        return Err(Error::Domain(format!("scale function needs x >= z ({x} < {z})")));
    }
    // overflow scan before integrating
    let probes = 256;
    for k in 0..=probes {
        let y = z + (x - z) * k as f64 / probes as f64;
        if 2.0 * model.drift.integral(y) > EXP_OVERFLOW {
            return Err(Error::DriftTooStrong(y));
        }
    }
    let integrand = |y: f64| (2.0 * model.drift.integral(y)).exp();
    let scale = (x - z).abs().max(1.0);
    Ok(adaptive_simpson(integrand, z, x, 1e-10 * scale, 32))
}

/// Speed measure density m(xi) = 2 exp(-2 int_0^xi V).
pub fn speed_measure_density(model: &DiffusionModel, xi: f64) -> Result<f64> {
    let e = -2.0 * model.drift.integral(xi);
    if e > EXP_OVERFLOW {
        return Err(Error::DriftTooStrong(xi));
    }
    Ok(2.0 * e.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassageKind {
    ConstantLevel,
    LinearBoundary,
}

/// First-passage density of Brownian motion started at x through a constant
/// level, or through the linearly decreasing boundary `level - L t`.
pub fn brownian_passage_density(
    kind: PassageKind,
    x: f64,
    t: f64,
    level: f64,
    slope: f64,
) -> Result<f64> {
    let d = x - level;
    if d <= 0.0 {
        return Err(Error::Domain(format!("x = {x} must exceed the level {level}")));
    }
    if t <= 0.0 {
        return Err(Error::Domain("passage density needs t > 0".into()));
    }
    let base = d / (2.0 * std::f64::consts::PI * t.powi(3)).sqrt();
    let shift = match kind {
        PassageKind::ConstantLevel => d,
        PassageKind::LinearBoundary => d + slope * t,
    };
    Ok(base * (-shift * shift / (2.0 * t)).exp())
}

/// Survival complement of the passage density: P_x(tau > t).
pub fn brownian_survival(kind: PassageKind, x: f64, t: f64, level: f64, slope: f64) -> Result<f64> {
    let d = x - level;
    if d <= 0.0 {
        return Err(Error::Domain(format!("x = {x} must exceed the level {level}")));
    }
    if t <= 0.0 {
        return Ok(1.0);
    }
    let rt = t.sqrt();
    Ok(match kind {
        PassageKind::ConstantLevel => 2.0 * phi(d / rt) - 1.0,
        PassageKind::LinearBoundary => {
            phi((d + slope * t) / rt) - (-2.0 * slope * d).exp() * phi((slope * t - d) / rt)
        }
    })
}

/// Total passage probability over (0, infinity).
pub fn brownian_total_passage(kind: PassageKind, x: f64, level: f64, slope: f64) -> f64 {
    match kind {
        PassageKind::ConstantLevel => 1.0,
        PassageKind::LinearBoundary => (-2.0 * slope * (x - level)).exp().min(1.0),
    }
}

/// Density at time t of Brownian motion started at x0 > 0 and killed at 0
/// (reflection principle).
pub fn killed_bm_density(x0: f64, t: f64, y: f64) -> f64 {
    if y <= 0.0 || t <= 0.0 {
        return 0.0;
    }
    let rt = t.sqrt();
    (normal_pdf((y - x0) / rt) - normal_pdf((y + x0) / rt)) / rt
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathRecord {
    /// Absorption time, `None` when the path survived to the horizon.
    pub absorbed_at: Option<f64>,
    pub terminal: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathBatch {
    pub records: Vec<PathRecord>,
    pub clamped_steps: u64,
    pub dt: f64,
    pub horizon: f64,
}

impl PathBatch {
    pub fn survivors(&self) -> usize {
        self.records.iter().filter(|r| r.absorbed_at.is_none()).count()
    }

    pub fn survival_fraction(&self) -> f64 {
        self.survivors() as f64 / self.records.len() as f64
    }

    /// Binomial standard error of the survival fraction.
    pub fn survival_stderr(&self) -> f64 {
        let p = self.survival_fraction();
        (p * (1.0 - p) / self.records.len() as f64).sqrt()
    }
}

fn path_rng(seed: u64, stream: u64, path: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(path);
    rng
}

struct StepOutcome {
    absorbed_at: Option<f64>,
    terminal: f64,
    clamped: u64,
    /// occupation histogram counts when requested
    occupation: Option<Vec<u64>>,
}

fn simulate_one(
    model: &DiffusionModel,
    x0: f64,
    path: u64,
    bins: Option<&[f64]>,
) -> StepOutcome {
    let mut rng = path_rng(model.seed, model.stream, path);
    let dt = model.dt;
    let sqrt_dt = dt.sqrt();
    let steps = (model.horizon / dt).round() as usize;
    let cap = model.x_cap();
    let mut x = x0;
    let mut h_prev = model.boundary.eval(0.0);
    let mut clamped = 0u64;
    let mut occupation = bins.map(|b| vec![0u64; b.len().saturating_sub(1)]);
    for k in 0..steps {
        let z: f64 = rng.sample(StandardNormal);
        let t_next = (k + 1) as f64 * dt;
        let mut x_next = x - model.drift.eval(x) * dt + sqrt_dt * z;
        if x_next > cap {
            x_next = cap;
            clamped += 1;
        }
        let h_next = model.boundary.eval(t_next);
        if x_next <= h_next {
            return StepOutcome {
                absorbed_at: Some(t_next),
                terminal: x_next,
                clamped,
                occupation,
            };
        }
        if model.bridge_correction {
            // frozen-boundary Brownian-bridge crossing probability between
            // grid points, boundary taken at the step endpoints
            let a = x - h_prev;
            let b = x_next - h_next;
            let p_cross = (-2.0 * a * b / dt).exp();
            if rng.gen::<f64>() < p_cross {
                return StepOutcome {
                    absorbed_at: Some(t_next),
                    terminal: h_next,
                    clamped,
                    occupation,
                };
            }
        }
        x = x_next;
        h_prev = h_next;
        if let (Some(occ), Some(b)) = (occupation.as_mut(), bins) {
            if let Some(idx) = bin_index(b, x) {
                occ[idx] += 1;
            }
        }
    }
    StepOutcome {
        absorbed_at: None,
        terminal: x,
        clamped,
        occupation,
    }
}

fn bin_index(edges: &[f64], x: f64) -> Option<usize> {
    if edges.len() < 2 || x < edges[0] || x >= edges[edges.len() - 1] {
        return None;
    }
    Some(edges.partition_point(|&e| e <= x) - 1)
}

/// Euler-Maruyama paths against the moving boundary. Reproducible given
/// (seed, stream): each path owns a counter-based RNG stream keyed by its
/// index, so results do not depend on thread count.
pub fn simulate_paths(model: &DiffusionModel, x0: f64, n: usize) -> Result<PathBatch> {
    model.validate()?;
    if n == 0 {
        return Err(Error::Domain("need at least one path".into()));
    }
    if x0 <= model.boundary.eval(0.0) {
        return Err(Error::Domain(format!(
            "x0 = {x0} is at or below the boundary h(0) = {}",
            model.boundary.eval(0.0)
        )));
    }
    if !model.drift.eval(x0).is_finite() {
        return Err(Error::Model("drift evaluates to NaN at x0".into()));
    }
    let outcomes: Vec<StepOutcome> = (0..n as u64)
        .into_par_iter()
        .map(|p| simulate_one(model, x0, p, None))
        .collect();
    let clamped_steps = outcomes.iter().map(|o| o.clamped).sum();
    let records = outcomes
        .into_iter()
        .map(|o| PathRecord {
            absorbed_at: o.absorbed_at,
            terminal: o.terminal,
        })
        .collect();
    Ok(PathBatch {
        records,
        clamped_steps,
        dt: model.dt,
        horizon: model.horizon,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbePoint {
    pub x: f64,
    pub estimate: f64,
    pub half_width: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeResult {
    pub points: Vec<ProbePoint>,
    pub plateau: bool,
}

fn wilson_half_width(hits: usize, n: usize) -> f64 {
    let z = 1.959963984540054; // 95%
    let nf = n as f64;
    let p = hits as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let half = (z / denom) * ((p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt());
    half
}

/// Estimates P_x(tau_y < t) for each start in `x_list` (absorption at the
/// constant level y) and flags a plateau when the last three estimates
/// differ pairwise by less than their combined half-widths.
pub fn comes_down_probe(
    model: &DiffusionModel,
    y: f64,
    t: f64,
    x_list: &[f64],
    n: usize,
) -> Result<ProbeResult> {
    if y <= model.boundary.h_max() {
        return Err(Error::Domain(format!(
            "probe level y = {y} must exceed h_max = {}",
            model.boundary.h_max()
        )));
    }
    for w in x_list.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Domain("x_list must be ascending".into()));
        }
    }
    let probe_model = DiffusionModel {
        boundary: Boundary::Constant { level: y },
        horizon: t,
        ..model.clone()
    };
    let mut points = Vec::with_capacity(x_list.len());
    for (i, &x) in x_list.iter().enumerate() {
        if x <= y {
            return Err(Error::Domain(format!("start {x} must exceed the level {y}")));
        }
        let m = DiffusionModel {
            stream: probe_model.stream.wrapping_add(1 + i as u64),
            ..probe_model.clone()
        };
        let batch = simulate_paths(&m, x, n)?;
        let hits = batch.records.len() - batch.survivors();
        points.push(ProbePoint {
            x,
            estimate: hits as f64 / n as f64,
            half_width: wilson_half_width(hits, n),
        });
    }
    let plateau = if points.len() >= 3 {
        let tail = &points[points.len() - 3..];
        let mut ok = tail.iter().all(|p| p.estimate > 0.0);
        for i in 0..3 {
            for j in i + 1..3 {
                if (tail[i].estimate - tail[j].estimate).abs()
                    > tail[i].half_width + tail[j].half_width
                {
                    ok = false;
                }
            }
        }
        ok
    } else {
        false
    };
    Ok(ProbeResult { points, plateau })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub mass: Vec<f64>,
    pub stderr: Vec<f64>,
    pub survivors: usize,
    pub total_paths: usize,
}

impl Histogram {
    pub fn csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,mass,stderr\n");
        for i in 0..self.mass.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.edges[i],
                self.edges[i + 1],
                self.mass[i],
                self.stderr[i]
            ));
        }
        out
    }
}

/// Empirical law of X_t among paths surviving to the horizon.
pub fn mc_conditioned_law(
    model: &DiffusionModel,
    x0: f64,
    n: usize,
    edges: &[f64],
) -> Result<Histogram> {
    if edges.len() < 2 {
        return Err(Error::Domain("need at least two bin edges".into()));
    }
    let h_end = model.boundary.eval(model.horizon);
    if edges[0] > h_end {
        return Err(Error::Domain(format!(
            "bins must cover the survival range: left edge {} above h(T) = {h_end}",
            edges[0]
        )));
    }
    let batch = simulate_paths(model, x0, n)?;
    let survivors = batch.survivors();
    if survivors < MIN_SURVIVORS {
        return Err(Error::TooFewSurvivors {
            survivors,
            total: n,
            fraction: batch.survival_fraction(),
        });
    }
    let mut counts = vec![0usize; edges.len() - 1];
    for r in &batch.records {
        if r.absorbed_at.is_none() {
            if let Some(i) = bin_index(edges, r.terminal) {
                counts[i] += 1;
            }
        }
    }
    let mass: Vec<f64> = counts.iter().map(|&c| c as f64 / survivors as f64).collect();
    let stderr = mass
        .iter()
        .map(|&p| (p * (1.0 - p) / survivors as f64).sqrt())
        .collect();
    Ok(Histogram {
        edges: edges.to_vec(),
        mass,
        stderr,
        survivors,
        total_paths: n,
    })
}

/// Time-average occupation over (0, horizon] of surviving paths,
/// survivor-weighted and normalized.
pub fn mc_quasi_ergodic(
    model: &DiffusionModel,
    x0: f64,
    n: usize,
    edges: &[f64],
) -> Result<Histogram> {
    model.validate()?;
    if edges.len() < 2 {
        return Err(Error::Domain("need at least two bin edges".into()));
    }
    if x0 <= model.boundary.eval(0.0) {
        return Err(Error::Domain(format!(
            "x0 = {x0} is at or below the boundary h(0) = {}",
            model.boundary.eval(0.0)
        )));
    }
    let steps = (model.horizon / model.dt).round() as usize;
    let outcomes: Vec<StepOutcome> = (0..n as u64)
        .into_par_iter()
        .map(|p| simulate_one(model, x0, p, Some(edges)))
        .collect();
    let survivors = outcomes.iter().filter(|o| o.absorbed_at.is_none()).count();
    if survivors < MIN_SURVIVORS {
        return Err(Error::TooFewSurvivors {
            survivors,
            total: n,
            fraction: survivors as f64 / n as f64,
        });
    }
    let nbins = edges.len() - 1;
    // per-path occupation fractions; accumulate mean and variance across paths
    let mut sum = vec![0.0f64; nbins];
    let mut sumsq = vec![0.0f64; nbins];
    for o in &outcomes {
        if o.absorbed_at.is_some() {
            continue;
        }
        let occ = o.occupation.as_ref().expect("occupation requested");
        for (i, &c) in occ.iter().enumerate() {
            let f = c as f64 / steps as f64;
            sum[i] += f;
            sumsq[i] += f * f;
        }
    }
    let m = survivors as f64;
    let mean: Vec<f64> = sum.iter().map(|&s| s / m).collect();
    let total: f64 = mean.iter().sum();
    if total <= 0.0 {
        return Err(Error::TooFewSurvivors {
            survivors,
            total: n,
            fraction: survivors as f64 / n as f64,
        });
    }
    let mass: Vec<f64> = mean.iter().map(|&v| v / total).collect();
    let stderr: Vec<f64> = (0..nbins)
        .map(|i| {
            let var = (sumsq[i] / m - (sum[i] / m).powi(2)).max(0.0);
            (var / m).sqrt() / total
        })
        .collect();
    Ok(Histogram {
        edges: edges.to_vec(),
        mass,
        stderr,
        survivors,
        total_paths: n,
    })
}
