//! Receding-horizon control without terminal cost or constraint.
//!
//! Each iteration measures the state, solves the finite-horizon problem,
//! applies the first `δ` of the optimal control to the plant and shifts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::StageCost;
use crate::error::{check_dim, Error, Result};
use crate::ocp::{solve, InitialGuess, OcpSpec, SolverOptions};
use crate::systems::{fmt_f64, integrate, ControlSignal, ControlSystem};

/// Minimum number of iterations before a motionless run counts as stalled.
pub const STALL_MIN_STEPS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    /// Previous solution shifted by `δ`, its last value held.
    ShiftAndHold,
    Zero,
    /// Previous solution unchanged.
    Previous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    /// Prediction horizon `T`.
    pub horizon: f64,
    /// Time shift `δ`, a whole number of control segments.
    pub delta: f64,
    pub steps: usize,
    /// Control segments on `[0, T]`.
    pub segments: usize,
    /// RK4 steps per segment inside the optimizer.
    pub substeps: usize,
    /// RK4 steps per segment for the plant.
    pub plant_substeps: usize,
    pub warm_start: WarmStart,
    pub restarts: usize,
    /// Converged once both the Euclidean and (for dilation-based costs) the
    /// dilated norm of the state are at most this.
    pub convergence_radius: f64,
    /// Stalled if no state ever moves farther than this from `x0`
    /// (Euclidean) over at least [`STALL_MIN_STEPS`] steps.
    pub stall_tolerance: f64,
    pub solver: SolverOptions,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 3.0,
            delta: 0.25,
            steps: 40,
            segments: 12,
            substeps: 4,
            plant_substeps: 16,
            warm_start: WarmStart::ShiftAndHold,
            restarts: 8,
            convergence_radius: 1e-2,
            stall_tolerance: 1e-6,
            solver: SolverOptions {
                gtol_abs: 0.0,
                max_iterations: 300,
                ..SolverOptions::default()
            },
        }
    }
}

impl MpcConfig {
    /// Number of segments in one shift `δ`.
    pub fn shift_segments(&self) -> usize {
        (self.delta / self.segment_length()).round() as usize
    }

    pub fn segment_length(&self) -> f64 {
        self.horizon / self.segments as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < self.horizon && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < delta < T, got delta = {}, T = {}",
                self.delta, self.horizon
            )));
        }
        if self.segments == 0 || self.substeps == 0 || self.plant_substeps == 0 {
            return Err(Error::InvalidParameter("segment and step counts must be positive".into()));
        }
        let ratio = self.delta / self.segment_length();
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio.round() < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "delta = {} is not a whole number of segments of length {}",
                self.delta,
                self.segment_length()
            )));
        }
        if !(self.convergence_radius > 0.0) || !(self.stall_tolerance >= 0.0) {
            return Err(Error::InvalidParameter("thresholds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converged,
    Stalled,
    Diverged,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Converged => "converged",
            Verdict::Stalled => "stalled",
            Verdict::Diverged => "diverged",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClosedLoopResult {
    /// MPC instants `k δ`.
    pub times: Vec<f64>,
    /// Measured state at each instant; one more entry than `applied`.
    pub states: Vec<Vec<f64>>,
    /// Control values applied on each shift, one row per segment.
    pub applied: Vec<Vec<Vec<f64>>>,
    /// `V_T(x_k)` as returned by the optimizer at each instant.
    pub values: Vec<f64>,
    pub solver_converged: Vec<bool>,
    /// Steps `k` with `V_T(x_{k+1}) ≥ V_T(x_k)`.
    pub decrease_violations: usize,
    /// Largest `(V_T(x_{k+1}) − V_T(x_k)) / V_T(x_k)` over the violations.
    pub max_violation: f64,
    pub verdict: Verdict,
}

impl ClosedLoopResult {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("at least x0")
    }

    /// `step,t,x1..xn,u1..um,V_T,verdict`. `u` is the first applied value;
    /// the final row has empty `u` and `V_T` fields and carries the verdict,
    /// earlier rows read `running`.
    pub fn to_csv(&self) -> String {
        let n = self.states[0].len();
        let m = self.applied.first().map_or(0, |a| a[0].len());
        let mut out = String::from("step,t");
        for i in 1..=n {
            out.push_str(&format!(",x{i}"));
        }
        for j in 1..=m {
            out.push_str(&format!(",u{j}"));
        }
        out.push_str(",V_T,verdict\n");
        for (k, x) in self.states.iter().enumerate() {
            out.push_str(&format!("{k},{}", fmt_f64(self.times[k])));
            for v in x {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            match self.applied.get(k) {
                Some(a) => {
                    for v in &a[0] {
                        out.push(',');
                        out.push_str(&fmt_f64(*v));
                    }
                    out.push_str(&format!(",{},running\n", fmt_f64(self.values[k])));
                }
                None => {
                    out.push_str(&",".repeat(m));
                    out.push_str(&format!(",,{}\n", self.verdict.as_str()));
                }
            }
        }
        out
    }
}

/// The initial guess for the next iteration from the current solution.
pub fn warm_start_guess(previous: &ControlSignal, shift: usize, mode: WarmStart) -> Result<ControlSignal> {
    let values = previous.values();
    let n = values.len();
    let next: Vec<Vec<f64>> = match mode {
        WarmStart::Zero => vec![vec![0.0; previous.control_dim()]; n],
        WarmStart::Previous => values.to_vec(),
        WarmStart::ShiftAndHold => (0..n)
            .map(|i| values[(i + shift).min(n - 1)].clone())
            .collect(),
    };
    ControlSignal::uniform(previous.end(), next)
}

fn euclid(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn within(cost: &StageCost, x: &[f64], radius: f64) -> bool {
    let dilated = cost.dilation().map_or(0.0, |ds| ds.dilated_norm(x).unwrap_or(f64::INFINITY));
    euclid(x) <= radius && dilated <= radius
}

/// Runs [`MpcConfig::steps`] iterations of the receding-horizon loop from `x0`.
///
/// Stops early once the state is within the convergence radius. A plant
/// escape ends the run as diverged. Optimizer non-convergence is recorded per
/// step and does not stop the loop.
pub fn run_closed_loop(
    sys: &ControlSystem,
    cost: &StageCost,
    cfg: &MpcConfig,
    x0: &[f64],
) -> Result<ClosedLoopResult> {
    cfg.validate()?;
    check_dim("initial state", sys.state_dim(), x0.len())?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("initial state must be finite".into()));
    }
    let base = OcpSpec::new(sys.clone(), cost.clone(), cfg.horizon, cfg.segments)?
        .with_substeps(cfg.substeps)?;
    let shift = cfg.shift_segments();
    let seg = cfg.segment_length();
    let mut result = ClosedLoopResult {
        times: vec![0.0],
        states: vec![x0.to_vec()],
        applied: Vec::new(),
        values: Vec::new(),
        solver_converged: Vec::new(),
        decrease_violations: 0,
        max_violation: 0.0,
        verdict: Verdict::Inconclusive,
    };
    if within(cost, x0, cfg.convergence_radius) {
        result.verdict = Verdict::Converged;
        return Ok(result);
    }

    let mut guess = InitialGuess::Zero;
    let mut x = x0.to_vec();
    for k in 0..cfg.steps {
        let spec = base.clone().with_options(SolverOptions {
            seed: cfg.solver.seed.wrapping_add(k as u64),
            ..cfg.solver.clone()
        });
        let sol = solve(&spec, &x, &guess, cfg.restarts)?;
        if let Some(prev) = result.values.last() {
            if sol.objective >= *prev {
                result.decrease_violations += 1;
                let rel = if *prev > 0.0 { (sol.objective - prev) / prev } else { f64::INFINITY };
                result.max_violation = result.max_violation.max(rel);
            }
        }
        result.values.push(sol.objective);
        result.solver_converged.push(sol.converged);

        let piece: Vec<Vec<f64>> = sol.u_star.values()[..shift].to_vec();
        let applied = ControlSignal::uniform(cfg.delta, piece.clone())?;
        let traj = integrate(sys, &x, &applied, cfg.delta, seg / cfg.plant_substeps as f64, None)?;
        result.applied.push(piece);
        if !traj.is_complete() {
            result.times.push(*traj.times.last().expect("nonempty") + k as f64 * cfg.delta);
            result.states.push(traj.final_state().to_vec());
            result.verdict = Verdict::Diverged;
            return Ok(result);
        }
        x = traj.final_state().to_vec();
        result.times.push((k + 1) as f64 * cfg.delta);
        result.states.push(x.clone());
        if within(cost, &x, cfg.convergence_radius) {
            result.verdict = Verdict::Converged;
            return Ok(result);
        }
        guess = InitialGuess::Signal(warm_start_guess(&sol.u_star, shift, cfg.warm_start)?);
    }

    let moved = result
        .states
        .iter()
        .map(|s| euclid(&s.iter().zip(x0).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .fold(0.0, f64::max);
    result.verdict = if cfg.steps >= STALL_MIN_STEPS && moved <= cfg.stall_tolerance {
        Verdict::Stalled
    } else {
        Verdict::Inconclusive
    };
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub horizon: f64,
    pub verdict: Verdict,
    /// `V_T(x0)` from the first iteration (0 when `x0` already converged).
    pub initial_value: f64,
    pub decrease_violations: usize,
    pub steps_run: usize,
    pub final_state: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HorizonSweep {
    pub rows: Vec<SweepRow>,
    /// Smallest tested horizon whose run converged.
    pub smallest_converged: Option<f64>,
    /// The closed-loop run behind each row.
    pub runs: Vec<ClosedLoopResult>,
}

impl HorizonSweep {
    /// `T,verdict,V_T0,decrease_violations,steps,x1..xn` with the final state.
    pub fn to_csv(&self) -> String {
        let n = self.rows.first().map_or(0, |r| r.final_state.len());
        let mut out = String::from("T,verdict,V_T0,decrease_violations,steps");
        for i in 1..=n {
            out.push_str(&format!(",x{i}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}",
                fmt_f64(r.horizon),
                r.verdict.as_str(),
                fmt_f64(r.initial_value),
                r.decrease_violations,
                r.steps_run
            ));
            for v in &r.final_state {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// Runs the closed loop for each horizon, keeping the template's segment
/// length and `δ`. Runs are independent and execute in parallel.
pub fn horizon_sweep(
    sys: &ControlSystem,
    cost: &StageCost,
    template: &MpcConfig,
    x0: &[f64],
    horizons: &[f64],
) -> Result<HorizonSweep> {
    let seg = template.segment_length();
    let rows = horizons
        .par_iter()
        .map(|&t| {
            let segments = (t / seg).round() as usize;
            if segments == 0 || ((t / seg) - segments as f64).abs() > 1e-9 * (t / seg) {
                return Err(Error::InvalidParameter(format!(
                    "horizon {t} is not a whole number of segments of length {seg}"
                )));
            }
            let cfg = MpcConfig { horizon: t, segments, ..template.clone() };
            let run = run_closed_loop(sys, cost, &cfg, x0)?;
            let row = SweepRow {
                horizon: t,
                verdict: run.verdict,
                initial_value: run.values.first().copied().unwrap_or(0.0),
                decrease_violations: run.decrease_violations,
                steps_run: run.applied.len(),
                final_state: run.final_state().to_vec(),
            };
            Ok((row, run))
        })
        .collect::<Result<Vec<_>>>()?;
    let (rows, runs): (Vec<SweepRow>, Vec<ClosedLoopResult>) = rows.into_iter().unzip();
    let smallest_converged = rows
        .iter()
        .filter(|r| r.verdict == Verdict::Converged)
        .map(|r| r.horizon)
        .min_by(f64::total_cmp);
    Ok(HorizonSweep { rows, smallest_converged, runs })
}
