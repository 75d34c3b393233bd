use std::fmt::Write as _;

use serde::Serialize;

use super::{ControlSignal, ControlSystem};
use crate::cost::StageCost;
use crate::error::{check_dim, Error, Result};

/// Integration halts once any state component exceeds this magnitude.
pub const BLOW_UP_GUARD: f64 = 1e8;


#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum IntegrationStatus {
    Completed,
    /// The state left the blow-up guard after time `t`.
    Escaped { t: f64 },
    /// A NaN or infinity appeared after time `t`.
    NonFinite { t: f64 },
}

/// A sampled solution. When integration halts early the trajectory is
/// truncated at the last finite, guarded state and `status` says why.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Control applied from each sample time onward (the last row repeats the
    /// final segment's value).
    pub controls: Vec<Vec<f64>>,
    /// Cumulative stage cost from time 0; all zeros without a cost.
    pub running_cost: Vec<f64>,
    pub status: IntegrationStatus,
}

impl Trajectory {
    pub fn is_complete(&self) -> bool {
        self.status == IntegrationStatus::Completed
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has an initial state")
    }

    pub fn final_cost(&self) -> f64 {
        *self.running_cost.last().expect("trajectory has an initial state")
    }

    /// CSV with header `t,x1..xn,u1..um,cumcost`, 17 significant digits, LF
    /// line endings.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, Vec::len);
        let m = self.controls.first().map_or(0, Vec::len);
        let mut out = String::from("t");
        for i in 1..=n {
            let _ = write!(out, ",x{i}");
        }
        for j in 1..=m {
            let _ = write!(out, ",u{j}");
        }
        out.push_str(",cumcost\n");
        for k in 0..self.times.len() {
            out.push_str(&fmt_f64(self.times[k]));
            for v in self.states[k].iter().chain(&self.controls[k]) {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            out.push(',');
            out.push_str(&fmt_f64(self.running_cost[k]));
            out.push('\n');
        }
        out
    }
}

/// Formats with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Classical RK4 on the state augmented with the running cost.
pub(crate) struct Stepper<'a> {
    sys: &'a ControlSystem,
    cost: Option<&'a StageCost>,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
    backup: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(sys: &'a ControlSystem, cost: Option<&'a StageCost>) -> Self {
        let n = sys.state_dim();
        Self {
            sys,
            cost,
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            tmp: vec![0.0; n],
            backup: vec![0.0; n],
        }
    }

    /// One step of size `h` with control `u` held constant.
    #[inline]
    fn step(&mut self, x: &mut [f64], cost: &mut f64, u: &[f64], h: f64) {
        let absorbing = self.sys.has_absorbing_origin();
        if absorbing && x.iter().all(|v| *v == 0.0) {
            if let Some(c) = self.cost {
                *cost += h * c.eval_unchecked(x, u);
            }
            return;
        }
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        let cost_fn = self.cost;
        let running = |x: &[f64]| cost_fn.map_or(0.0, |c| c.eval_unchecked(x, u));

        self.sys.eval_into(x, u, k1);
        let c1 = running(x);
        for i in 0..x.len() {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        self.sys.eval_into(tmp, u, k2);
        let c2 = running(tmp);
        for i in 0..x.len() {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        self.sys.eval_into(tmp, u, k3);
        let c3 = running(tmp);
        for i in 0..x.len() {
            tmp[i] = x[i] + h * k3[i];
        }
        self.sys.eval_into(tmp, u, k4);
        let c4 = running(tmp);
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        *cost += h / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4);
    }

    /// Integrates `[a, b]` with `count` equal steps. Returns `false` when the
    /// state leaves the guard or becomes non-finite (the state is then left
    /// at its last good value and `status` filled in).
    #[inline]
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn advance(
        &mut self,
        x: &mut [f64],
        cost: &mut f64,
        u: &[f64],
        a: f64,
        b: f64,
        count: usize,
        status: &mut IntegrationStatus,
    ) -> bool {
        self.advance_fixed(x, cost, u, a, (b - a) / count as f64, count, status)
    }

    /// Like [`Stepper::advance`] with an explicit step, so that runs started
    /// at different times perform bit-identical arithmetic.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn advance_fixed(
        &mut self,
        x: &mut [f64],
        cost: &mut f64,
        u: &[f64],
        t0: f64,
        h: f64,
        count: usize,
        status: &mut IntegrationStatus,
    ) -> bool {
        for j in 0..count {
            self.backup.copy_from_slice(x);
            let c_before = *cost;
            self.step(x, cost, u, h);
            if self.sys.has_absorbing_origin() {
                let along: f64 = x.iter().zip(&self.backup).map(|(a, b)| a * b).sum();
                if along <= 0.0 {
                    x.fill(0.0);
                }
            }
            if let Some(bad) = classify(x, *cost, t0 + j as f64 * h) {
                x.copy_from_slice(&self.backup);
                *cost = c_before;
                *status = bad;
                return false;
            }
        }
        true
    }
}

fn classify(x: &[f64], cost: f64, t: f64) -> Option<IntegrationStatus> {
    if !cost.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Some(IntegrationStatus::NonFinite { t });
    }
    if x.iter().any(|v| v.abs() > BLOW_UP_GUARD) {
        return Some(IntegrationStatus::Escaped { t });
    }
    None
}

pub(crate) fn steps_for(len: f64, max_step: f64) -> usize {
    ((len / max_step) - 1e-9).ceil().max(1.0) as usize
}

fn validate(
    sys: &ControlSystem,
    x0: &[f64],
    u: &ControlSignal,
    horizon: f64,
    step: f64,
) -> Result<()> {
    check_dim("initial state", sys.state_dim(), x0.len())?;
    check_dim("control signal", sys.control_dim(), u.control_dim())?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon must be nonnegative, got {horizon}")));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("initial state must be finite".into()));
    }
    if u.end() < horizon * (1.0 - 1e-12) {
        return Err(Error::SignalTooShort {
            requested: horizon,
            available: u.end(),
        });
    }
    Ok(())
}

/// Integrates `ẋ = f(x, u)` from `x0` over `[0, horizon]` with classical RK4.
///
/// Steps never straddle a control breakpoint: each control segment is split
/// into the smallest number of equal steps no longer than `step`. Every step
/// is recorded. With a cost, `running_cost` holds `∫ ℓ(x, u)` integrated by
/// the same RK4 stages.
pub fn integrate(
    sys: &ControlSystem,
    x0: &[f64],
    u: &ControlSignal,
    horizon: f64,
    step: f64,
    cost: Option<&StageCost>,
) -> Result<Trajectory> {
    validate(sys, x0, u, horizon, step)?;
    let mut stepper = Stepper::new(sys, cost);
    let mut x = x0.to_vec();
    let mut c = 0.0;
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x.clone()],
        controls: vec![u.value_at(0.0).to_vec()],
        running_cost: vec![0.0],
        status: IntegrationStatus::Completed,
    };
    let grid = u.grid();
    'segments: for (i, value) in u.values().iter().enumerate() {
        let a = grid[i];
        if a >= horizon {
            break;
        }
        let b = grid[i + 1].min(horizon);
        let count = steps_for(b - a, step);
        let h = (b - a) / count as f64;
        for j in 0..count {
            let t0 = a + j as f64 * h;
            let t1 = if j + 1 == count { b } else { a + (j + 1) as f64 * h };
            if !stepper.advance(&mut x, &mut c, value, t0, t1, 1, &mut traj.status) {
                break 'segments;
            }
            *traj.controls.last_mut().expect("nonempty") = value.clone();
            traj.times.push(t1);
            traj.states.push(x.clone());
            traj.controls.push(value.clone());
            traj.running_cost.push(c);
        }
    }
    Ok(traj)
}

/// Integrates like [`integrate`] but records the solution only at the
/// requested, nondecreasing `sample_times` in `[0, horizon]`. Breakpoints of
/// the control grid and the sample times are both hit exactly.
pub fn integrate_sampled(
    sys: &ControlSystem,
    x0: &[f64],
    u: &ControlSignal,
    sample_times: &[f64],
    max_step: f64,
    cost: Option<&StageCost>,
) -> Result<Trajectory> {
    let horizon = sample_times.last().copied().unwrap_or(0.0);
    validate(sys, x0, u, horizon, max_step)?;
    if sample_times.windows(2).any(|w| w[1] < w[0]) || sample_times.first().is_some_and(|t| *t < 0.0) {
        return Err(Error::InvalidParameter("sample times must be sorted and nonnegative".into()));
    }
    let mut stepper = Stepper::new(sys, cost);
    let mut x = x0.to_vec();
    let mut c = 0.0;
    let mut t = 0.0;
    let mut traj = Trajectory {
        times: Vec::with_capacity(sample_times.len()),
        states: Vec::with_capacity(sample_times.len()),
        controls: Vec::with_capacity(sample_times.len()),
        running_cost: Vec::with_capacity(sample_times.len()),
        status: IntegrationStatus::Completed,
    };
    let grid = u.grid();
    for &target in sample_times {
        while t < target {
            let seg = u.segment_index(t);
            let next_break = grid.get(seg + 1).copied().unwrap_or(f64::INFINITY);
            let b = if next_break > t && next_break < target { next_break } else { target };
            let count = steps_for(b - t, max_step);
            if !stepper.advance(&mut x, &mut c, &u.values()[seg], t, b, count, &mut traj.status) {
                return Ok(traj);
            }
            t = b;
        }
        traj.times.push(target);
        traj.states.push(x.clone());
        traj.controls.push(u.value_at(target).to_vec());
        traj.running_cost.push(c);
    }
    Ok(traj)
}
