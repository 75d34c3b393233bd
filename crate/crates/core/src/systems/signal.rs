use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::homogeneity::DilationStructure;

/// Piecewise-constant control: `values[i]` is applied on `[grid[i], grid[i+1])`.
///
/// The grid starts at 0 and is strictly increasing. Evaluation at or past the
/// last grid point returns the last value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    grid: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl ControlSignal {
    pub fn new(grid: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("control signal needs a segment".into()));
        }
        check_dim("control grid points", values.len() + 1, grid.len())?;
        if grid[0] != 0.0 {
            return Err(Error::InvalidParameter("control grid must start at 0".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::InvalidParameter(
                "control grid must be finite and strictly increasing".into(),
            ));
        }
        let m = values[0].len();
        for v in &values {
            check_dim("control value", m, v.len())?;
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidParameter("control values must be finite".into()));
            }
        }
        Ok(Self { grid, values })
    }

    /// One constant value on `[0, horizon]`.
    pub fn constant(u: Vec<f64>, horizon: f64) -> Result<Self> {
        Self::new(vec![0.0, horizon], vec![u])
    }

    /// Zero control on `segments` equal pieces of `[0, horizon]`.
    pub fn zero(m: usize, horizon: f64, segments: usize) -> Result<Self> {
        Self::uniform(horizon, vec![vec![0.0; m]; segments])
    }

    /// Equal-length segments over `[0, horizon]`.
    pub fn uniform(horizon: f64, values: Vec<Vec<f64>>) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        let n = values.len();
        let grid = uniform_grid(horizon, n);
        Self::new(grid, values)
    }

    /// Equal-length segments from a flat parameter vector laid out
    /// segment-major (`params[i*m + j]` is channel `j` on segment `i`).
    pub fn from_flat(horizon: f64, m: usize, params: &[f64]) -> Result<Self> {
        if m == 0 || !params.len().is_multiple_of(m) {
            return Err(Error::InvalidParameter(format!(
                "{} parameters do not split into channels of {m}",
                params.len()
            )));
        }
        Self::uniform(horizon, params.chunks(m).map(<[f64]>::to_vec).collect())
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn segments(&self) -> usize {
        self.values.len()
    }

    pub fn control_dim(&self) -> usize {
        self.values[0].len()
    }

    /// Last grid point.
    pub fn end(&self) -> f64 {
        *self.grid.last().expect("nonempty grid")
    }

    /// Values concatenated segment-major.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.concat()
    }

    /// Index of the segment containing `t` (clamped to the valid range).
    pub fn segment_index(&self, t: f64) -> usize {
        let k = self.grid.partition_point(|g| *g <= t);
        k.saturating_sub(1).min(self.values.len() - 1)
    }

    pub fn value_at(&self, t: f64) -> &[f64] {
        &self.values[self.segment_index(t)]
    }

    /// `t ↦ u(factor · t)`, i.e. the grid divided by `factor`.
    pub fn time_scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidParameter(format!("time factor must be positive, got {factor}")));
        }
        Self::new(
            self.grid.iter().map(|t| t / factor).collect(),
            self.values.clone(),
        )
    }

    /// `t ↦ Δ_α u(t)`.
    pub fn dilated(&self, ds: &DilationStructure, alpha: f64) -> Result<Self> {
        let values = self
            .values
            .iter()
            .map(|v| ds.dilate_control(alpha, v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.grid.clone(), values)
    }

    /// The signal restricted to `[0, horizon]`.
    pub fn restricted(&self, horizon: f64) -> Result<Self> {
        if horizon > self.end() * (1.0 + 1e-12) {
            return Err(Error::SignalTooShort {
                requested: horizon,
                available: self.end(),
            });
        }
        let k = self.grid.partition_point(|g| *g < horizon);
        let mut grid = self.grid[..k].to_vec();
        grid.push(horizon);
        Self::new(grid, self.values[..k].to_vec())
    }
}

pub(crate) fn uniform_grid(horizon: f64, segments: usize) -> Vec<f64> {
    let h = horizon / segments as f64;
    (0..=segments)
        .map(|i| if i == segments { horizon } else { i as f64 * h })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_constant_lookup() {
        let u = ControlSignal::uniform(2.0, vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(u.grid(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(u.value_at(0.0), &[1.0]);
        assert_eq!(u.value_at(0.49), &[1.0]);
        assert_eq!(u.value_at(0.5), &[2.0]);
        assert_eq!(u.value_at(2.0), &[4.0]);
        assert_eq!(u.value_at(7.0), &[4.0]);
    }

    #[test]
    fn flat_layout_is_segment_major() {
        let u = ControlSignal::from_flat(1.0, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(u.values(), &[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(u.flatten(), vec![1.0, 2.0, 3.0, 4.0]);
        assert!(ControlSignal::from_flat(1.0, 2, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(ControlSignal::new(vec![0.0, 1.0, 1.0], vec![vec![0.0], vec![0.0]]).is_err());
        assert!(ControlSignal::new(vec![0.5, 1.0], vec![vec![0.0]]).is_err());
        assert!(ControlSignal::new(vec![0.0, 1.0], vec![vec![f64::NAN]]).is_err());
        assert!(ControlSignal::new(vec![0.0, 1.0], vec![]).is_err());
        assert!(ControlSignal::new(vec![0.0, 1.0, 2.0], vec![vec![0.0], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn restriction_and_time_scaling() {
        let u = ControlSignal::uniform(2.0, vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]]).unwrap();
        let r = u.restricted(0.75).unwrap();
        assert_eq!(r.grid(), &[0.0, 0.5, 0.75]);
        assert_eq!(r.values(), &[vec![1.0], vec![2.0]]);
        assert_eq!(u.restricted(1.0).unwrap().segments(), 2);
        assert!(u.restricted(3.0).is_err());

        let slow = u.time_scaled(0.5).unwrap();
        assert_eq!(slow.end(), 4.0);
        assert_eq!(slow.value_at(1.1), &[2.0]);
    }
}
