//! Subcommands. Each one runs a scenario, writes its tables and manifest
//! into a directory and returns the exit status together with the typed
//! result, so bundles can inspect what was written.

use std::path::Path;

use hmpc::analysis::{estimate_growth, GrowthTable};
use hmpc::homogeneity::{check_approximation, check_homogeneity, ApproximationCertificate, HomogeneityReport};
use hmpc::mpc::{horizon_sweep, run_closed_loop, ClosedLoopResult, HorizonSweep, Verdict};
use hmpc::ocp::{solve, InitialGuess, OcpSolution};
use hmpc::builtin;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::ScenarioConfig;
use crate::manifest::write_manifest;
use crate::{write_file, CliError, Status};

#[derive(Clone, Debug, Serialize)]
pub struct HomogeneityOutcome {
    /// Report for the system itself, or for the approximation when one is configured.
    pub report: HomogeneityReport,
    pub certificate: Option<ApproximationCertificate>,
    pub pass: bool,
}

/// Samples the homogeneity identity of the system (or of its configured
/// approximation, together with the approximation certificate).
pub fn cmd_check_homogeneity(cfg: &ScenarioConfig, dir: &Path) -> Result<(Status, HomogeneityOutcome), CliError> {
    let sys = cfg.system()?;
    let ds = cfg.dilation(&sys)?;
    let plan = &cfg.homogeneity.plan;
    let outcome = match &cfg.homogeneity.approximation {
        None => {
            let report = check_homogeneity(&sys, &ds, plan)?;
            let pass = report.pass;
            HomogeneityOutcome { report, certificate: None, pass }
        }
        Some(a) => {
            let approx = builtin(&a.system, &cfg.params())?;
            let report = check_homogeneity(&approx, &ds, plan)?;
            let cert = check_approximation(&sys, &approx, &ds, a.rho, a.eta, plan)?;
            let pass = report.pass && cert.verified;
            HomogeneityOutcome { report, certificate: Some(cert), pass }
        }
    };
    let mut text = serde_json::to_string_pretty(&outcome).expect("report serializes");
    text.push('\n');
    write_file(&dir.join("homogeneity.json"), &text)?;
    write_manifest(dir, "check-homogeneity", cfg, json!({ "pass": outcome.pass }))?;
    let status = if outcome.pass { Status::Success } else { Status::CheckFailed };
    Ok((status, outcome))
}

/// One open-loop solve from `x0` over the configured horizon.
pub fn cmd_solve_ocp(cfg: &ScenarioConfig, dir: &Path) -> Result<(Status, OcpSolution), CliError> {
    let spec = cfg.ocp_spec()?;
    let x0 = cfg.initial_state(&spec.sys)?;
    let sol = solve(&spec, &x0, &InitialGuess::Zero, cfg.ocp.restarts)?;
    write_file(&dir.join("trajectory.csv"), &sol.trajectory.to_csv())?;
    write_manifest(
        dir,
        "solve-ocp",
        cfg,
        json!({
            "objective": finite_or_null(sol.objective),
            "gradient_norm": finite_or_null(sol.gradient_norm),
            "iterations": sol.iterations,
            "converged": sol.converged,
            "restarts_used": sol.restarts_used,
            "candidate_objectives": sol.candidate_objectives.iter().map(|v| finite_or_null(*v)).collect::<Vec<_>>(),
        }),
    )?;
    let status = if sol.objective.is_finite() { Status::Success } else { Status::Diverged };
    Ok((status, sol))
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

/// The closed-loop result of `run-mpc`: a single run at the OCP horizon, or
/// a sweep when `[mpc] horizons` is set.
#[derive(Clone, Debug)]
pub enum MpcOutcome {
    Single(ClosedLoopResult),
    Sweep(HorizonSweep),
}

/// Runs the MPC loop. A sweep exits 0 when some horizon converged, otherwise
/// with the common verdict of its rows (4 when they disagree). A sweep also
/// writes `closed_loop_T<h>.csv` per horizon.
pub fn cmd_run_mpc(cfg: &ScenarioConfig, dir: &Path) -> Result<(Status, MpcOutcome), CliError> {
    let sys = cfg.system()?;
    let cost = cfg.cost(&sys)?;
    let x0 = cfg.initial_state(&sys)?;
    let mpc = cfg.mpc_config();
    if cfg.mpc.horizons.is_empty() {
        let run = run_closed_loop(&sys, &cost, &mpc, &x0)?;
        write_file(&dir.join("closed_loop.csv"), &run.to_csv())?;
        write_manifest(dir, "run-mpc", cfg, run_diagnostics(&run))?;
        return Ok((Status::from_verdict(run.verdict), MpcOutcome::Single(run)));
    }
    let sweep = horizon_sweep(&sys, &cost, &mpc, &x0, &cfg.mpc.horizons)?;
    write_file(&dir.join("sweep.csv"), &sweep.to_csv())?;
    for (row, run) in sweep.rows.iter().zip(&sweep.runs) {
        write_file(&dir.join(format!("closed_loop_T{}.csv", row.horizon)), &run.to_csv())?;
    }
    let diagnostics: Vec<serde_json::Value> = sweep.runs.iter().map(run_diagnostics).collect();
    write_manifest(
        dir,
        "run-mpc",
        cfg,
        json!({
            "smallest_converged": sweep.smallest_converged,
            "runs": diagnostics,
        }),
    )?;
    let status = if sweep.smallest_converged.is_some() {
        Status::Success
    } else {
        let first = sweep.rows[0].verdict;
        if sweep.rows.iter().all(|r| r.verdict == first) {
            Status::from_verdict(first)
        } else {
            Status::from_verdict(Verdict::Inconclusive)
        }
    };
    Ok((status, MpcOutcome::Sweep(sweep)))
}

fn run_diagnostics(run: &ClosedLoopResult) -> serde_json::Value {
    json!({
        "verdict": run.verdict.as_str(),
        "steps": run.applied.len(),
        "decrease_violations": run.decrease_violations,
        "max_violation": run.max_violation,
        "solver_converged": run.solver_converged.iter().filter(|c| **c).count(),
    })
}

/// Tabulates `B(t)` on the configured sample set.
pub fn cmd_estimate_growth(cfg: &ScenarioConfig, dir: &Path) -> Result<(Status, GrowthTable), CliError> {
    let analysis = cfg
        .analysis
        .as_ref()
        .ok_or_else(|| CliError::Usage("estimate-growth needs an [analysis] section".into()))?;
    if analysis.t_grid.is_empty() {
        return Err(CliError::Usage("analysis t_grid is empty".into()));
    }
    let spec = cfg.ocp_spec()?;
    let table = estimate_growth(&spec, &analysis.set, &analysis.t_grid, analysis.samples, analysis.restarts)?;
    write_file(&dir.join("growth.csv"), &table.to_csv())?;
    write_file(&dir.join("scatter.csv"), &table.scatter_csv(&spec.cost))?;
    write_manifest(
        dir,
        "estimate-growth",
        cfg,
        json!({
            "sup_b": finite_or_null(table.sup()),
            "final_b_over_t": finite_or_null(table.final_slope()),
            "monotone_violations": table.monotone_violations,
            "near_origin_slope": finite_or_null(table.near_origin_slope),
            "unbounded_trend": table.unbounded_trend,
        }),
    )?;
    Ok((Status::Success, table))
}

/// Independent scenarios run in parallel, each into its own directory.
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.par_iter().map(f).collect()
}
