//! Finite-horizon optimal control by direct single shooting.
//!
//! The control is piecewise constant on `N` equal segments of `[0, T]`; the
//! state and the running cost are integrated together with RK4. Gradients
//! with respect to the `N·m` control values come from central differences,
//! and a limited-memory BFGS iteration does the minimization.

mod lbfgs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::StageCost;
use crate::error::{check_dim, Error, Result};
use crate::systems::integrate::Stepper;
use crate::systems::{ControlSignal, ControlSystem, IntegrationStatus, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Converged iff `‖∇J‖ ≤ gtol_abs + gtol_rel·|J|`.
    pub gtol_abs: f64,
    pub gtol_rel: f64,
    pub max_iterations: usize,
    /// L-BFGS memory.
    pub memory: usize,
    /// Relative finite-difference step, floored at the same absolute value.
    pub fd_step: f64,
    /// Stop after three consecutive iterations with relative decrease below this.
    pub ftol: f64,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gtol_abs: 1e-7,
            gtol_rel: 1e-7,
            max_iterations: 500,
            memory: 10,
            fd_step: 1e-6,
            ftol: 1e-13,
            seed: 0,
        }
    }
}

/// Per-channel box `lower[j] ≤ u_j ≤ upper[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone)]
pub struct OcpSpec {
    pub sys: ControlSystem,
    pub cost: StageCost,
    pub horizon: f64,
    pub segments: usize,
    /// RK4 steps per control segment.
    pub substeps: usize,
    pub bounds: Option<ControlBounds>,
    pub options: SolverOptions,
}

impl OcpSpec {
    pub fn new(sys: ControlSystem, cost: StageCost, horizon: f64, segments: usize) -> Result<Self> {
        let spec = Self {
            sys,
            cost,
            horizon,
            segments,
            substeps: 4,
            bounds: None,
            options: SolverOptions::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_substeps(mut self, substeps: usize) -> Result<Self> {
        self.substeps = substeps;
        self.validate()?;
        Ok(self)
    }

    pub fn with_bounds(mut self, bounds: ControlBounds) -> Result<Self> {
        self.bounds = Some(bounds);
        self.validate()?;
        Ok(self)
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    /// Same problem on `[0, t]`, keeping the segment length (at least one segment).
    pub fn with_horizon(&self, t: f64) -> Result<Self> {
        let segments = ((self.segments as f64 * t / self.horizon).round() as usize).max(1);
        let mut spec = self.clone();
        spec.horizon = t;
        spec.segments = segments;
        spec.validate()?;
        Ok(spec)
    }

    pub fn segment_length(&self) -> f64 {
        self.horizon / self.segments as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.segments == 0 || self.substeps == 0 {
            return Err(Error::InvalidParameter("segments and substeps must be at least 1".into()));
        }
        check_dim("cost state", self.sys.state_dim(), self.cost.state_dim())?;
        check_dim("cost control", self.sys.control_dim(), self.cost.control_dim())?;
        if let Some(b) = &self.bounds {
            check_dim("lower bounds", self.sys.control_dim(), b.lower.len())?;
            check_dim("upper bounds", self.sys.control_dim(), b.upper.len())?;
            if b.lower.iter().zip(&b.upper).any(|(l, u)| !(l <= u)) {
                return Err(Error::InvalidParameter("control bounds need lower <= upper".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OcpSolution {
    pub u_star: ControlSignal,
    pub trajectory: Trajectory,
    /// `+∞` when every candidate escapes.
    pub objective: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub restarts_used: usize,
    pub converged: bool,
    /// Final objective of each candidate, the initial guess first.
    pub candidate_objectives: Vec<f64>,
}

/// How the first candidate of [`solve`] is initialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuess {
    Zero,
    /// Resampled onto the spec's segments by the value at each segment start.
    Signal(ControlSignal),
    /// Built chunk by chunk: solve on a `window` (time) from the current
    /// state, keep the first `shift`, move on. The concatenation is then
    /// polished as a whole. Useful on long horizons where holding the state
    /// near an unstable origin in open loop is ill-conditioned.
    Receding { window: f64, shift: f64 },
    /// Extends the optimum of a shorter horizon: a receding construction
    /// whose window is that horizon and whose shift is half of it, the first
    /// window started from the given signal. Holding a final value for a
    /// whole extra horizon can escape where this does not.
    Continued(ControlSignal),
}

pub(crate) struct Shooting<'a> {
    spec: &'a OcpSpec,
    x0: Vec<f64>,
    segments: usize,
    h_seg: f64,
}

impl<'a> Shooting<'a> {
    pub(crate) fn new(spec: &'a OcpSpec, x0: &[f64]) -> Self {
        Self {
            spec,
            x0: x0.to_vec(),
            segments: spec.segments,
            h_seg: spec.segment_length(),
        }
    }

    fn m(&self) -> usize {
        self.spec.sys.control_dim()
    }

    fn step(&self) -> f64 {
        self.h_seg / self.spec.substeps as f64
    }

    /// Integrates segments `from..` starting at `(x, cost)`; `+∞` on escape.
    fn run_from(&self, stepper: &mut Stepper, params: &[f64], from: usize, x: &mut [f64], mut cost: f64) -> f64 {
        let m = self.m();
        let mut status = IntegrationStatus::Completed;
        for i in from..self.segments {
            let u = &params[i * m..(i + 1) * m];
            let t0 = i as f64 * self.h_seg;
            if !stepper.advance_fixed(x, &mut cost, u, t0, self.step(), self.spec.substeps, &mut status) {
                return f64::INFINITY;
            }
        }
        cost
    }

    /// Segment-boundary states and accumulated costs, or `None` on escape.
    fn boundaries(&self, params: &[f64]) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
        let traj = self.trajectory(params, 1);
        traj.is_complete().then(|| {
            let stride = self.spec.substeps;
            (
                traj.states.iter().step_by(stride).cloned().collect(),
                traj.running_cost.iter().step_by(stride).copied().collect(),
            )
        })
    }

    /// The shooting integration itself, recorded at every `every`-th step
    /// within each segment (segment boundaries are always recorded).
    fn trajectory(&self, params: &[f64], every: usize) -> Trajectory {
        let m = self.m();
        let h = self.step();
        let mut stepper = Stepper::new(&self.spec.sys, Some(&self.spec.cost));
        let mut x = self.x0.clone();
        let mut cost = 0.0;
        let mut traj = Trajectory {
            times: vec![0.0],
            states: vec![x.clone()],
            controls: vec![params[..m].to_vec()],
            running_cost: vec![0.0],
            status: IntegrationStatus::Completed,
        };
        for i in 0..self.segments {
            let u = &params[i * m..(i + 1) * m];
            *traj.controls.last_mut().expect("nonempty") = u.to_vec();
            for j in 0..self.spec.substeps {
                let t0 = i as f64 * self.h_seg + j as f64 * h;
                if !stepper.advance_fixed(&mut x, &mut cost, u, t0, h, 1, &mut traj.status) {
                    return traj;
                }
                if (j + 1) % every == 0 || j + 1 == self.spec.substeps {
                    traj.times.push(if j + 1 == self.spec.substeps {
                        (i + 1) as f64 * self.h_seg
                    } else {
                        t0 + h
                    });
                    traj.states.push(x.clone());
                    traj.controls.push(u.to_vec());
                    traj.running_cost.push(cost);
                }
            }
        }
        traj
    }

    /// Receding construction of an initial guess (see [`InitialGuess::Receding`]).
    /// `first` seeds the first window (zeros otherwise).
    fn receding_guess(&self, window: usize, shift: usize, first: Option<Vec<f64>>) -> Vec<f64> {
        let m = self.m();
        let mut params = Vec::with_capacity(self.segments * m);
        let mut x = self.x0.clone();
        let mut guess = first.unwrap_or_else(|| vec![0.0; window * m]);
        let mut stepper = Stepper::new(&self.spec.sys, Some(&self.spec.cost));
        let mut done = 0;
        while done < self.segments {
            let w = window.min(self.segments - done);
            let chunk = Shooting {
                spec: self.spec,
                x0: x.clone(),
                segments: w,
                h_seg: self.h_seg,
            };
            let best = lbfgs::minimize(&chunk, guess[..w * m].to_vec(), &self.spec.options).x;
            let keep = if done + w == self.segments { w } else { shift.min(w) };
            let mut cost = 0.0;
            let mut status = IntegrationStatus::Completed;
            let mut escaped = false;
            for i in 0..keep {
                let u = &best[i * m..(i + 1) * m];
                if !escaped {
                    escaped = !stepper.advance_fixed(&mut x, &mut cost, u, 0.0, self.step(), self.spec.substeps, &mut status);
                }
            }
            params.extend_from_slice(&best[..keep * m]);
            done += keep;
            if escaped {
                params.resize(self.segments * m, 0.0);
                break;
            }
            let tail = &best[keep * m..];
            guess = tail.to_vec();
            let last = best[(w - 1) * m..w * m].to_vec();
            while guess.len() < window * m {
                guess.extend_from_slice(&last);
            }
        }
        params
    }
}

impl lbfgs::Problem for Shooting<'_> {
    fn value(&self, params: &[f64]) -> f64 {
        let mut stepper = Stepper::new(&self.spec.sys, Some(&self.spec.cost));
        let mut x = self.x0.clone();
        self.run_from(&mut stepper, params, 0, &mut x, 0.0)
    }

    fn gradient(&self, params: &[f64], g: &mut [f64]) {
        let Some((states, costs)) = self.boundaries(params) else {
            g.fill(0.0);
            return;
        };
        let base = *costs.last().expect("nonempty");
        let m = self.m();
        let mut stepper = Stepper::new(&self.spec.sys, Some(&self.spec.cost));
        let mut work = params.to_vec();
        let mut x = vec![0.0; self.x0.len()];
        let fd = self.spec.options.fd_step;
        for k in 0..params.len() {
            let seg = k / m;
            let h = fd.max(fd * params[k].abs());
            let mut probe = |value: f64, work: &mut Vec<f64>| {
                work[k] = value;
                x.copy_from_slice(&states[seg]);
                self.run_from(&mut stepper, work, seg, &mut x, costs[seg])
            };
            let plus = probe(params[k] + h, &mut work);
            let minus = probe(params[k] - h, &mut work);
            work[k] = params[k];
            g[k] = match (plus.is_finite(), minus.is_finite()) {
                (true, true) => (plus - minus) / (2.0 * h),
                (true, false) => (plus - base) / h,
                (false, true) => (base - minus) / h,
                (false, false) => 0.0,
            };
        }
    }

    fn project(&self, params: &mut [f64]) {
        if let Some(b) = &self.spec.bounds {
            let m = self.m();
            for (k, v) in params.iter_mut().enumerate() {
                *v = v.clamp(b.lower[k % m], b.upper[k % m]);
            }
        }
    }

    fn mask(&self, params: &[f64], g: &mut [f64]) {
        if let Some(b) = &self.spec.bounds {
            let m = self.m();
            for (k, v) in params.iter().enumerate() {
                let (lo, hi) = (b.lower[k % m], b.upper[k % m]);
                if (*v <= lo && g[k] > 0.0) || (*v >= hi && g[k] < 0.0) {
                    g[k] = 0.0;
                }
            }
        }
    }
}

/// Cost of applying `u` from `x0` over the spec's horizon (`+∞` on escape).
/// `u` is resampled onto the spec's segments by its value at each segment start.
pub fn objective(spec: &OcpSpec, x0: &[f64], u: &ControlSignal) -> Result<f64> {
    let params = resample(spec, u)?;
    check_dim("initial state", spec.sys.state_dim(), x0.len())?;
    Ok(lbfgs::Problem::value(&Shooting::new(spec, x0), &params))
}

fn resample(spec: &OcpSpec, u: &ControlSignal) -> Result<Vec<f64>> {
    check_dim("initial guess", spec.sys.control_dim(), u.control_dim())?;
    let h = spec.segment_length();
    Ok((0..spec.segments).flat_map(|i| u.value_at(i as f64 * h).to_vec()).collect())
}

fn segments_in(spec: &OcpSpec, time: f64, what: &str) -> Result<usize> {
    if !(time > 0.0 && time.is_finite()) {
        return Err(Error::InvalidParameter(format!("{what} must be positive, got {time}")));
    }
    Ok(((time / spec.segment_length()).round() as usize).max(1))
}

/// Minimizes the discretized cost from `x0`.
///
/// Candidate 0 starts from `init`; candidates `1..=restarts` start from
/// independent uniform draws in `[-c_j, c_j]` per channel, where `c_j` is
/// the control magnitude whose cost matches `ℓ*(x0)`. Candidates run in
/// parallel; the best objective wins, ties going to the lower index. A
/// candidate that escapes scores `+∞`.
pub fn solve(spec: &OcpSpec, x0: &[f64], init: &InitialGuess, restarts: usize) -> Result<OcpSolution> {
    spec.validate()?;
    check_dim("initial state", spec.sys.state_dim(), x0.len())?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("initial state must be finite".into()));
    }
    let m = spec.sys.control_dim();
    let dim = spec.segments * m;
    let problem = Shooting::new(spec, x0);
    let first = match init {
        InitialGuess::Zero => vec![0.0; dim],
        InitialGuess::Signal(u) => resample(spec, u)?,
        InitialGuess::Receding { window, shift } => {
            let window = segments_in(spec, *window, "receding window")?;
            let shift = segments_in(spec, *shift, "receding shift")?;
            problem.receding_guess(window, shift, None)
        }
        InitialGuess::Continued(previous) => {
            check_dim("initial guess", m, previous.control_dim())?;
            let window = segments_in(spec, previous.end(), "previous horizon")?;
            let h = spec.segment_length();
            let seed = (0..window).flat_map(|i| previous.value_at(i as f64 * h).to_vec()).collect();
            problem.receding_guess(window, (window / 2).max(1), Some(seed))
        }
    };
    let scale = spec.cost.control_scale(x0);
    let mut starts = vec![first];
    for r in 1..=restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.options.seed);
        rng.set_stream(r as u64);
        starts.push((0..dim).map(|k| scale[k % m] * rng.random_range(-1.0..=1.0)).collect());
    }

    let outcomes: Vec<lbfgs::Outcome> = starts
        .into_par_iter()
        .map(|start| lbfgs::minimize(&problem, start, &spec.options))
        .collect();
    let candidate_objectives: Vec<f64> = outcomes.iter().map(|o| o.f).collect();
    let best = outcomes
        .into_iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.f.total_cmp(&b.f).then(i.cmp(j)))
        .map(|(_, o)| o)
        .expect("at least one candidate");

    let u_star = ControlSignal::from_flat(spec.horizon, m, &best.x)?;
    let trajectory = problem.trajectory(&best.x, 1);
    Ok(OcpSolution {
        u_star,
        trajectory,
        objective: best.f,
        gradient_norm: best.grad_norm,
        iterations: best.iterations,
        restarts_used: restarts,
        converged: best.converged,
        candidate_objectives,
    })
}

/// `V_t(x0)`: the optimal objective over `[0, t]` with the spec's segment
/// length, or `+∞` when every candidate escapes.
pub fn value_function(spec: &OcpSpec, x0: &[f64], t: f64, restarts: usize) -> Result<f64> {
    value_function_with(spec, x0, t, &InitialGuess::Zero, restarts)
}

/// [`value_function`] with an explicit initial guess.
pub fn value_function_with(
    spec: &OcpSpec,
    x0: &[f64],
    t: f64,
    init: &InitialGuess,
    restarts: usize,
) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {t}")));
    }
    Ok(solve(&spec.with_horizon(t)?, x0, init, restarts)?.objective)
}

/// Closed-form value `2(1+√2)/(k+1)·|x|^{k+1}` of `ẋ = |x|^k sign x + u` with
/// running cost `(x²)^k + u²` on the infinite horizon.
pub fn hjb_oracle_1d(k: f64, x: f64) -> f64 {
    2.0 * (1.0 + std::f64::consts::SQRT_2) / (k + 1.0) * x.abs().powf(k + 1.0)
}
