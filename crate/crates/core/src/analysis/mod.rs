//! Empirical cost controllability: how `V_t(x)` grows against `ℓ*(x)`.
//!
//! [`estimate_growth`] tabulates `B(t) = max_x V_t(x)/ℓ*(x)` over a sampled
//! set, [`check_bounded_extension`] evaluates the geometric-series ceiling
//! that extends a bound from an annulus to the whole dilated ball, and
//! [`check_remark2_condition`] tests `V_t(x) < t·ℓ*(x)` on a grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::StageCost;
use crate::error::{check_dim, Error, Result};
use crate::homogeneity::DilationStructure;
use crate::ocp::{solve, InitialGuess, OcpSpec};
use crate::sampling::ScrambledHalton;
use crate::systems::{fmt_f64, ControlSignal};

/// Samples with `ℓ*(x)` below this are rejected (the ratio is meaningless there).
pub const ELL_STAR_FLOOR: f64 = 1e-10;

/// Relative drop of `B` between consecutive horizons tolerated as solver noise.
pub const MONOTONE_TOLERANCE: f64 = 1e-4;

/// Slope of `ln(V_t/ℓ*)` against `ln‖x‖` below which the table is flagged
/// as blowing up towards the origin.
pub const UNBOUNDED_SLOPE: f64 = -0.1;

/// A compact sampling set `K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleSet {
    /// `∏[-h_i, h_i]` without the Euclidean ball of radius `exclude`.
    Box { half_widths: Vec<f64>, exclude: f64 },
    /// `{c1 ≤ N(x)^d ≤ c2}`.
    DilatedAnnulus { c1: f64, c2: f64 },
    /// `{N(x) ≤ radius}` minus the points where `ℓ*` falls below the floor.
    DilatedBall { radius: f64 },
    Points { points: Vec<Vec<f64>> },
}

impl SampleSet {
    /// `count` deterministic points of the set (explicit point lists are
    /// returned as given). Annulus and ball share the direction sequence,
    /// so their samples differ only by dilation.
    pub fn sample(&self, ds: &DilationStructure, cost: &StageCost, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let n = ds.state_dim();
        let points = match self {
            SampleSet::Points { points } => {
                for p in points {
                    check_dim("sample point", n, p.len())?;
                }
                points.clone()
            }
            SampleSet::Box { half_widths, exclude } => {
                check_dim("box half widths", n, half_widths.len())?;
                if half_widths.iter().any(|h| !(*h > 0.0)) || !(*exclude >= 0.0) {
                    return Err(Error::InvalidParameter("box needs positive half widths".into()));
                }
                let seq = ScrambledHalton::new(n, seed);
                accept(count, |i| {
                    let x: Vec<f64> = seq
                        .point(i)
                        .iter()
                        .zip(half_widths)
                        .map(|(p, h)| (2.0 * p - 1.0) * h)
                        .collect();
                    (x.iter().map(|v| v * v).sum::<f64>().sqrt() >= *exclude).then_some(x)
                })?
            }
            SampleSet::DilatedAnnulus { c1, c2 } => {
                if !(*c1 > 0.0 && c1 <= c2) {
                    return Err(Error::InvalidParameter(format!("annulus needs 0 < c1 <= c2, got {c1}, {c2}")));
                }
                let d = ds.d();
                let seq = ScrambledHalton::new(n + 1, seed);
                accept(count, |i| {
                    let p = seq.point(i);
                    let level = c1 + (c2 - c1) * p[n];
                    on_sphere(ds, &p[..n]).map(|theta| dilate(ds, level.powf(1.0 / d), &theta))
                })?
            }
            SampleSet::DilatedBall { radius } => {
                if !(*radius > 0.0) {
                    return Err(Error::InvalidParameter(format!("ball radius must be positive, got {radius}")));
                }
                let seq = ScrambledHalton::new(n + 1, seed);
                accept(count, |i| {
                    let p = seq.point(i);
                    on_sphere(ds, &p[..n])
                        .map(|theta| dilate(ds, radius * p[n], &theta))
                        .filter(|x| cost.ell_star(x).is_ok_and(|l| l >= ELL_STAR_FLOOR))
                })?
            }
        };
        Ok(points)
    }
}

fn accept(count: usize, mut candidate: impl FnMut(u64) -> Option<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(count);
    let limit = 1000 * count.max(1) as u64;
    let mut i = 0;
    while out.len() < count {
        if i == limit {
            return Err(Error::InvalidParameter("sampling set is (nearly) empty".into()));
        }
        if let Some(x) = candidate(i) {
            out.push(x);
        }
        i += 1;
    }
    Ok(out)
}

/// Maps a point of `[0,1)^n` onto the unit dilated sphere.
fn on_sphere(ds: &DilationStructure, p: &[f64]) -> Option<Vec<f64>> {
    let v: Vec<f64> = p.iter().map(|c| 2.0 * c - 1.0).collect();
    let norm = ds.dilated_norm(&v).ok()?;
    (norm > 1e-12).then(|| dilate(ds, 1.0 / norm, &v))
}

fn dilate(ds: &DilationStructure, alpha: f64, x: &[f64]) -> Vec<f64> {
    ds.dilate_state(alpha, x).expect("dimension checked")
}

/// `V_t(x)/ℓ*(x)` over a horizon grid and a sample of states.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthTable {
    pub t_grid: Vec<f64>,
    pub set: SampleSet,
    pub samples: Vec<Vec<f64>>,
    /// `values[i][j] = V_{t_i}(samples[j])`, `+∞` on escape.
    pub values: Vec<Vec<f64>>,
    pub ratios: Vec<Vec<f64>>,
    pub converged: Vec<Vec<bool>>,
    /// `B(t_i)`, the largest ratio at `t_i`.
    pub b_values: Vec<f64>,
    /// Sample index attaining `B(t_i)` (lowest index on ties).
    pub argmax: Vec<usize>,
    /// Consecutive horizons where `B` drops by more than [`MONOTONE_TOLERANCE`].
    pub monotone_violations: usize,
    /// Least-squares slope of `ln ratio` against `ln ‖x‖` at the last horizon
    /// (NaN with fewer than two distinct norms).
    pub near_origin_slope: f64,
    /// Slope below [`UNBOUNDED_SLOPE`] or an infinite ratio.
    pub unbounded_trend: bool,
}

impl GrowthTable {
    pub fn samples_per_t(&self) -> usize {
        self.samples.len()
    }

    pub fn argmax_state(&self, i: usize) -> &[f64] {
        &self.samples[self.argmax[i]]
    }

    /// `max_t B(t)`.
    pub fn sup(&self) -> f64 {
        self.b_values.iter().copied().fold(0.0, f64::max)
    }

    /// `B(t_max)/t_max`.
    pub fn final_slope(&self) -> f64 {
        self.b_values.last().copied().unwrap_or(f64::NAN) / self.t_grid.last().copied().unwrap_or(f64::NAN)
    }

    /// `t,B,argmax_x1..xn,converged` with the maximizer's solver flag as 0/1.
    pub fn to_csv(&self) -> String {
        let n = self.samples.first().map_or(0, Vec::len);
        let mut out = String::from("t,B");
        for i in 1..=n {
            out.push_str(&format!(",argmax_x{i}"));
        }
        out.push_str(",converged\n");
        for (i, t) in self.t_grid.iter().enumerate() {
            out.push_str(&format!("{},{}", fmt_f64(*t), fmt_f64(self.b_values[i])));
            for v in self.argmax_state(i) {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            out.push_str(&format!(",{}\n", u8::from(self.converged[i][self.argmax[i]])));
        }
        out
    }

    /// Every `(t, x)` pair: `t,x1..xn,ell_star,V,ratio,converged`. The
    /// `V` against `ell_star` columns are the scatter for comparison
    /// functions `V_t ≤ ρ(ℓ*)`.
    pub fn scatter_csv(&self, cost: &StageCost) -> String {
        let n = self.samples.first().map_or(0, Vec::len);
        let mut out = String::from("t");
        for i in 1..=n {
            out.push_str(&format!(",x{i}"));
        }
        out.push_str(",ell_star,V,ratio,converged\n");
        for (i, t) in self.t_grid.iter().enumerate() {
            for (j, x) in self.samples.iter().enumerate() {
                out.push_str(&fmt_f64(*t));
                for v in x {
                    out.push(',');
                    out.push_str(&fmt_f64(*v));
                }
                let ell = cost.ell_star(x).unwrap_or(f64::NAN);
                out.push_str(&format!(
                    ",{},{},{},{}\n",
                    fmt_f64(ell),
                    fmt_f64(self.values[i][j]),
                    fmt_f64(self.ratios[i][j]),
                    u8::from(self.converged[i][j])
                ));
            }
        }
        out
    }
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::InvalidParameter("horizon grid is empty".into()));
    }
    if t_grid.iter().any(|t| !(*t > 0.0 && t.is_finite())) || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("horizon grid must be positive and increasing".into()));
    }
    Ok(())
}

fn ell_star_checked(cost: &StageCost, x: &[f64]) -> Result<f64> {
    let ell = cost.ell_star(x)?;
    if ell < ELL_STAR_FLOOR {
        return Err(Error::InvalidParameter(format!("sample {x:?} has ell* = {ell:e} below the floor")));
    }
    Ok(ell)
}

/// Tabulates `B(t) = max_j V_t(x_j)/ℓ*(x_j)` over `samples` points of `set`.
///
/// `template` fixes the system, cost, segment length and solver options
/// (its seed drives both the sampling and the restarts). Each sample walks
/// the grid in order: at every horizon a zero-initialized solve with
/// `restarts` random restarts competes with a solve started from the
/// previous horizon's optimum (see [`InitialGuess::Continued`]). Samples run
/// in parallel.
pub fn estimate_growth(
    template: &OcpSpec,
    set: &SampleSet,
    t_grid: &[f64],
    samples: usize,
    restarts: usize,
) -> Result<GrowthTable> {
    check_grid(t_grid)?;
    let cost = &template.cost;
    let ds = match cost.dilation().or(template.sys.declared_dilation()) {
        Some(ds) => ds.clone(),
        None => DilationStructure::new(
            vec![1.0; template.sys.state_dim()],
            vec![1.0; template.sys.control_dim()],
            0.0,
        )?,
    };
    let points = set.sample(&ds, cost, samples, template.options.seed)?;
    if points.is_empty() {
        return Err(Error::InvalidParameter("no sample points".into()));
    }

    let columns: Vec<(Vec<f64>, Vec<bool>, f64)> = points
        .par_iter()
        .map(|x| {
            let ell = ell_star_checked(cost, x)?;
            let mut values = Vec::with_capacity(t_grid.len());
            let mut flags = Vec::with_capacity(t_grid.len());
            let mut previous: Option<ControlSignal> = None;
            for &t in t_grid {
                let spec = template.with_horizon(t)?;
                let mut best = solve(&spec, x, &InitialGuess::Zero, restarts)?;
                if let Some(u) = &previous {
                    let warm = solve(&spec, x, &InitialGuess::Continued(u.clone()), 0)?;
                    if warm.objective < best.objective {
                        best = warm;
                    }
                }
                values.push(best.objective);
                flags.push(best.converged);
                previous = best.objective.is_finite().then_some(best.u_star);
            }
            Ok((values, flags, ell))
        })
        .collect::<Result<_>>()?;

    let rows = t_grid.len();
    let values: Vec<Vec<f64>> = (0..rows).map(|i| columns.iter().map(|c| c.0[i]).collect()).collect();
    let converged: Vec<Vec<bool>> = (0..rows).map(|i| columns.iter().map(|c| c.1[i]).collect()).collect();
    let ratios: Vec<Vec<f64>> = values
        .iter()
        .map(|row| row.iter().zip(&columns).map(|(v, c)| v / c.2).collect())
        .collect();
    let mut b_values = Vec::with_capacity(rows);
    let mut argmax = Vec::with_capacity(rows);
    for row in &ratios {
        let (j, b) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, r)| if *r > acc.1 { (j, *r) } else { acc });
        argmax.push(j);
        b_values.push(b);
    }
    let monotone_violations = b_values
        .windows(2)
        .filter(|w| w[1] < w[0] * (1.0 - MONOTONE_TOLERANCE))
        .count();
    let near_origin_slope = log_slope(&points, ratios.last().expect("nonempty grid"));
    let unbounded_trend = near_origin_slope < UNBOUNDED_SLOPE || b_values.iter().any(|b| b.is_infinite());

    Ok(GrowthTable {
        t_grid: t_grid.to_vec(),
        set: set.clone(),
        samples: points,
        values,
        ratios,
        converged,
        b_values,
        argmax,
        monotone_violations,
        near_origin_slope,
        unbounded_trend,
    })
}

fn log_slope(points: &[Vec<f64>], ratios: &[f64]) -> f64 {
    let pairs: Vec<(f64, f64)> = points
        .iter()
        .zip(ratios)
        .filter(|(_, r)| r.is_finite() && **r > 0.0)
        .map(|(x, r)| (x.iter().map(|v| v * v).sum::<f64>().sqrt().ln(), r.ln()))
        .collect();
    let k = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if pairs.len() < 2 || sxx < 1e-12 {
        f64::NAN
    } else {
        sxy / sxx
    }
}

/// `(1 − α^d)^{-1}·B(t*)` with `B(t*) = table.b_values[t_star_index]`.
pub fn check_bounded_extension(table: &GrowthTable, alpha: f64, d: f64, t_star_index: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(d > 0.0) {
        return Err(Error::InvalidParameter(format!("d must be positive, got {d}")));
    }
    let b = table.b_values.get(t_star_index).ok_or_else(|| {
        Error::InvalidParameter(format!("index {t_star_index} outside a grid of {}", table.b_values.len()))
    })?;
    Ok(b / (1.0 - alpha.powf(d)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioEntry {
    pub t: f64,
    pub x: Vec<f64>,
    /// `V_t(x)/(t·ℓ*(x))`.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Remark2Report {
    pub entries: Vec<RatioEntry>,
    pub max_ratio: f64,
    /// Every ratio finite and below 1.
    pub pass: bool,
}

impl Remark2Report {
    /// `t,x1..xn,ratio`.
    pub fn to_csv(&self) -> String {
        let n = self.entries.first().map_or(0, |e| e.x.len());
        let mut out = String::from("t");
        if n == 1 {
            out.push_str(",x");
        } else {
            for i in 1..=n {
                out.push_str(&format!(",x{i}"));
            }
        }
        out.push_str(",ratio\n");
        for e in &self.entries {
            out.push_str(&fmt_f64(e.t));
            for v in &e.x {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            out.push_str(&format!(",{}\n", fmt_f64(e.ratio)));
        }
        out
    }
}

/// Evaluates `C(t, x) = V_t(x)/(t·ℓ*(x))` on the grid; passes iff every value
/// is below 1. Entries are ordered by `t`, then by sample.
pub fn check_remark2_condition(
    template: &OcpSpec,
    t_grid: &[f64],
    x_samples: &[Vec<f64>],
    restarts: usize,
) -> Result<Remark2Report> {
    check_grid(t_grid)?;
    if x_samples.is_empty() {
        return Err(Error::InvalidParameter("no sample states".into()));
    }
    for x in x_samples {
        check_dim("sample state", template.sys.state_dim(), x.len())?;
        ell_star_checked(&template.cost, x)?;
    }
    let pairs: Vec<(f64, &Vec<f64>)> = t_grid
        .iter()
        .flat_map(|t| x_samples.iter().map(move |x| (*t, x)))
        .collect();
    let entries: Vec<RatioEntry> = pairs
        .par_iter()
        .map(|(t, x)| {
            let v = solve(&template.with_horizon(*t)?, x, &InitialGuess::Zero, restarts)?.objective;
            let ell = template.cost.ell_star(x)?;
            Ok(RatioEntry { t: *t, x: x.to_vec(), ratio: v / (t * ell) })
        })
        .collect::<Result<_>>()?;
    let max_ratio = entries.iter().map(|e| e.ratio).fold(f64::NEG_INFINITY, f64::max);
    let pass = entries.iter().all(|e| e.ratio < 1.0);
    Ok(Remark2Report { entries, max_ratio, pass })
}
