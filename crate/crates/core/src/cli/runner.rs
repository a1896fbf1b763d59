//! Experiment orchestration: turns a validated config into a deterministic
//! `RunReport` plus named plot-ready CSV series.
//!
//! The report is byte-reproducible for a fixed (artifact version, config,
//! seed); wall-clock timings are therefore written to a separate sidecar
//! file, never into the report itself.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{check_qprocess_convergence, records_csv};
use crate::certify::certify;
use crate::chain::{from_doc, AbsorbedChain, BoundarySchedule, Measure};
use crate::cli::config::{DiffusionEstimator, ExperimentConfig, ExperimentKind};
use crate::diffusion::{mc_conditioned_law, mc_quasi_ergodic, simulate_paths, DiffusionModel};
use crate::error::{Error, Result};
use crate::limits::{diagnostics_csv, quasi_ergodic, quasi_limiting};
use crate::qprocess::{build_qprocess, reference_state};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub artifact_version: String,
    pub config_hash: String,
    pub kind: String,
    pub config: serde_json::Value,
    pub sections: BTreeMap<String, serde_json::Value>,
    pub checks: Vec<CheckOutcome>,
    pub pass: bool,
    /// series id -> output file name
    pub series: BTreeMap<String, String>,
    #[serde(skip)]
    series_data: BTreeMap<String, String>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let canonical = serde_json::to_vec(config)?;
    let mut hasher = Sha256::new();
    hasher.update(&canonical);
    Ok(format!("{:x}", hasher.finalize()))
}

fn measure_json(labels: &[String], m: &Measure) -> serde_json::Value {
    let map: BTreeMap<&str, f64> = labels
        .iter()
        .map(String::as_str)
        .zip(m.weights().iter().copied())
        .collect();
    serde_json::json!(map)
}

struct RunCtx {
    sections: BTreeMap<String, serde_json::Value>,
    checks: Vec<CheckOutcome>,
    series: BTreeMap<String, String>,
}

impl RunCtx {
    fn new() -> Self {
        RunCtx {
            sections: BTreeMap::new(),
            checks: Vec::new(),
            series: BTreeMap::new(),
        }
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        self.checks.push(CheckOutcome {
            name: name.to_string(),
            pass,
            detail,
        });
    }
}

fn resolve_start(
    chain: &AbsorbedChain,
    schedule: &BoundarySchedule,
    requested: Option<&str>,
) -> Result<usize> {
    match requested {
        Some(label) => chain
            .states()
            .index_of(label)
            .ok_or_else(|| Error::Config(format!("start_state: unknown state {label:?}"))),
        None => reference_state(chain, schedule)
            .or_else(|| schedule.surviving_at(0).iter().position(|&b| b))
            .ok_or_else(|| Error::Config("no surviving start state".into())),
    }
}

/// Runs the experiment described by a validated config. Deterministic given
/// (artifact version, config, seed).
pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let mut ctx = RunCtx::new();
    match config.kind {
        ExperimentKind::ChainCertify => run_certify(config, &mut ctx)?,
        ExperimentKind::ChainLimits => run_limits(config, &mut ctx)?,
        ExperimentKind::ChainBounds => run_bounds(config, &mut ctx)?,
        ExperimentKind::Diffusion => run_diffusion(config, &mut ctx)?,
    }
    let pass = ctx.checks.iter().all(|c| c.pass);
    let series_files: BTreeMap<String, String> = ctx
        .series
        .keys()
        .map(|id| (id.clone(), format!("{id}.csv")))
        .collect();
    Ok(RunReport {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(config)?,
        kind: config.kind.as_str().to_string(),
        config: serde_json::to_value(config)?,
        sections: ctx.sections,
        checks: ctx.checks,
        pass,
        series: series_files,
        series_data: ctx.series,
    })
}

fn run_certify(config: &ExperimentConfig, ctx: &mut RunCtx) -> Result<()> {
    let (chain, schedule) = from_doc(&config.chain_doc()?)?;
    let t0_max = config.params.t0_max.unwrap_or(6);
    let horizon = config.params.horizon.unwrap_or(48);
    let cert = certify(&chain, &schedule, t0_max, horizon)?;
    ctx.sections.insert(
        "certificate".into(),
        serde_json::json!({
            "t0": cert.t0,
            "c1": cert.c1,
            "c2": cert.c2,
            "product": cert.product(),
            "horizon_used": cert.horizon_used,
            "valid": cert.valid,
        }),
    );
    ctx.check(
        "certificate_valid",
        cert.valid,
        format!("t0={} c1={} c2={}", cert.t0, cert.c1, cert.c2),
    );
    Ok(())
}

fn run_limits(config: &ExperimentConfig, ctx: &mut RunCtx) -> Result<()> {
    let (chain, schedule) = from_doc(&config.chain_doc()?)?;
    let t_max = config.params.t_max.unwrap_or(200);
    let tol = config.params.tol.unwrap_or(1e-8);
    let mu = Measure::uniform_on(&schedule.surviving_at(0))?;
    let report = quasi_limiting(&chain, &schedule, &mu, t_max, tol)?;
    let labels = chain.states().labels().to_vec();
    ctx.sections.insert(
        "quasi_limiting".into(),
        serde_json::json!({
            "converged": report.converged,
            "value": measure_json(&labels, &Measure::new(report.value.clone())?),
            "final_tv": report.diagnostics.last().map(|&(_, d)| d),
        }),
    );
    ctx.series
        .insert("diagnostics".into(), diagnostics_csv(&report));
    ctx.check(
        "quasi_limiting_converged",
        report.converged,
        format!(
            "t_max={t_max} tol={tol} final_tv={:?}",
            report.diagnostics.last().map(|&(_, d)| d)
        ),
    );
    if let Some(n) = config.params.quasi_ergodic_horizon {
        let qe = quasi_ergodic(&chain, &schedule, &mu, n)?;
        ctx.sections.insert(
            "quasi_ergodic".into(),
            serde_json::json!({
                "horizon": n,
                "value": measure_json(&labels, &qe),
            }),
        );
    }
    Ok(())
}

fn run_bounds(config: &ExperimentConfig, ctx: &mut RunCtx) -> Result<()> {
    let (chain, schedule) = from_doc(&config.chain_doc()?)?;
    let p = &config.params;
    let t0_max = p.t0_max.unwrap_or(6);
    let horizon = p.horizon.unwrap_or(48);
    let seed = config.seed.unwrap_or(0);
    let cert = certify(&chain, &schedule, t0_max, horizon)?;
    ctx.check(
        "certificate_valid",
        cert.valid,
        format!("t0={} c1={} c2={}", cert.t0, cert.c1, cert.c2),
    );
    cert.require_valid()?;
    let s = p.s.unwrap_or(0);
    let t = p.t.unwrap_or(2);
    let default_grid: Vec<usize> = (1..=8).collect();
    let grid = p.big_t_grid.clone().unwrap_or(default_grid);
    let max_big_t = grid.iter().copied().max().unwrap_or(1);
    let eta_horizon = p.eta_horizon.unwrap_or(s + t + max_big_t + 60);
    let qp = build_qprocess(&chain, &schedule, &cert, eta_horizon)?;
    let x = resolve_start(&chain, &schedule, p.start_state.as_deref())?;
    let records =
        check_qprocess_convergence(&cert, &chain, &schedule, &qp, seed, x, s, t, &grid)?;
    let failing = records.iter().filter(|r| !r.pass).count();
    ctx.sections.insert(
        "bound_checks".into(),
        serde_json::json!({
            "records": records.len(),
            "failing": failing,
            "t0": cert.t0,
            "c1": cert.c1,
            "c2": cert.c2,
        }),
    );
    ctx.series.insert("bound_checks".into(), records_csv(&records));
    ctx.check(
        "theorem_bound_holds",
        failing == 0,
        format!("{failing} of {} records failing", records.len()),
    );
    Ok(())
}

fn run_diffusion(config: &ExperimentConfig, ctx: &mut RunCtx) -> Result<()> {
    let doc = config
        .diffusion
        .as_ref()
        .ok_or_else(|| Error::Config("config has no diffusion model".into()))?;
    let p = &config.params;
    let model = DiffusionModel {
        drift: doc.drift.clone(),
        boundary: doc.boundary.clone(),
        dt: doc.dt,
        horizon: doc.horizon,
        x_cap: doc.x_cap,
        seed: config.seed.unwrap_or(0),
        stream: 0,
        bridge_correction: doc.bridge_correction,
    };
    let x0 = p.x0.unwrap();
    let n = p.n_paths.unwrap();
    match p.estimator.unwrap() {
        DiffusionEstimator::Survival => {
            let batch = simulate_paths(&model, x0, n)?;
            ctx.sections.insert(
                "survival".into(),
                serde_json::json!({
                    "paths": n,
                    "survivors": batch.survivors(),
                    "fraction": batch.survival_fraction(),
                    "stderr": batch.survival_stderr(),
                    "clamped_steps": batch.clamped_steps,
                }),
            );
            ctx.check(
                "survivors_present",
                batch.survivors() > 0,
                format!("{} of {n} paths survived", batch.survivors()),
            );
        }
        DiffusionEstimator::ConditionedLaw => {
            let edges = p.bin_edges.as_ref().unwrap();
            let hist = mc_conditioned_law(&model, x0, n, edges)?;
            ctx.sections.insert(
                "conditioned_law".into(),
                serde_json::json!({
                    "paths": n,
                    "survivors": hist.survivors,
                    "bins": hist.mass.len(),
                }),
            );
            ctx.series.insert("histogram".into(), hist.csv());
            ctx.check(
                "histogram_normalized",
                (hist.mass.iter().sum::<f64>() - 1.0).abs() < 1e-9
                    || hist.mass.iter().sum::<f64>() <= 1.0,
                format!("total binned mass {}", hist.mass.iter().sum::<f64>()),
            );
        }
        DiffusionEstimator::QuasiErgodic => {
            let edges = p.bin_edges.as_ref().unwrap();
            let hist = mc_quasi_ergodic(&model, x0, n, edges)?;
            ctx.sections.insert(
                "quasi_ergodic".into(),
                serde_json::json!({
                    "paths": n,
                    "survivors": hist.survivors,
                    "bins": hist.mass.len(),
                }),
            );
            ctx.series.insert("histogram".into(), hist.csv());
            ctx.check(
                "histogram_normalized",
                (hist.mass.iter().sum::<f64>() - 1.0).abs() < 1e-9,
                format!("total binned mass {}", hist.mass.iter().sum::<f64>()),
            );
        }
    }
    Ok(())
}

/// Returns the CSV text of one named series from a report.
pub fn emit_plot_data<'a>(report: &'a RunReport, which: &str) -> Result<&'a str> {
    report
        .series_data
        .get(which)
        .map(String::as_str)
        .ok_or_else(|| Error::UnknownSeries(which.to_string()))
}

/// Writes report.json, a timings sidecar, and every series CSV under `out`.
pub fn write_outputs(
    report: &RunReport,
    out_dir: &std::path::Path,
    wall_clock_secs: f64,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("report.json"), report.to_json()?)?;
    let timings = serde_json::json!({
        "wall_clock_secs": wall_clock_secs,
        "kind": report.kind,
    });
    std::fs::write(
        out_dir.join("timings.json"),
        format!("{}\n", serde_json::to_string_pretty(&timings)?),
    )?;
    for (id, file) in &report.series {
        let data = emit_plot_data(report, id)?;
        std::fs::write(out_dir.join(file), data)?;
    }
    Ok(())
}
