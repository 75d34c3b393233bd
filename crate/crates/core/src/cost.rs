//! Stage costs.
//!
//! The homogeneous cost puts every coordinate on the same footing under
//! dilations: with `Λ_α`, `Δ_α` from a [`DilationStructure`],
//!
//! ```text
//! ℓ(x, u) = Σ |x_i|^{d/r_i} + Σ |u_j|^{d/s_j},   ℓ(Λ_α x, Δ_α u) = α^d ℓ(x, u).
//! ```
//!
//! Fractional powers always act on absolute values. For the even integer
//! exponents produced by integer weights this changes nothing.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::homogeneity::DilationStructure;
use crate::systems::{integrate_sampled, matrix, ControlSignal, ControlSystem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Homogeneous,
    WeightedHomogeneous,
    Quadratic,
}

/// `|v|^p` with fast paths for the exponents that occur in practice.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Power {
    One,
    Two,
    Four,
    General(f64),
}

impl Power {
    fn new(p: f64) -> Self {
        match p {
            1.0 => Power::One,
            2.0 => Power::Two,
            4.0 => Power::Four,
            p => Power::General(p),
        }
    }

    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Power::One => v.abs(),
            Power::Two => v * v,
            Power::Four => {
                let s = v * v;
                s * s
            }
            Power::General(p) => v.abs().powf(p),
        }
    }

    fn exponent(self) -> f64 {
        match self {
            Power::One => 1.0,
            Power::Two => 2.0,
            Power::Four => 4.0,
            Power::General(p) => p,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Form {
    Separable {
        ds: DilationStructure,
        qx: Vec<f64>,
        qu: Vec<f64>,
        px: Vec<Power>,
        pu: Vec<Power>,
    },
    Quadratic {
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    },
}

/// A running cost `ℓ(x, u) ≥ 0` with `ℓ(0, 0) = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageCost {
    kind: CostKind,
    form: Form,
}

impl StageCost {
    /// `Σ |x_i|^{d/r_i} + Σ |u_j|^{d/s_j}`.
    pub fn homogeneous(ds: &DilationStructure) -> Self {
        let n = ds.state_dim();
        let m = ds.control_dim();
        Self::separable(CostKind::Homogeneous, ds, vec![1.0; n], vec![1.0; m])
    }

    /// `Σ q_{x_i} |x_i|^{d/r_i} + Σ q_{u_j} |u_j|^{d/s_j}` with positive weights.
    pub fn weighted_homogeneous(ds: &DilationStructure, qx: Vec<f64>, qu: Vec<f64>) -> Result<Self> {
        check_dim("state weights", ds.state_dim(), qx.len())?;
        check_dim("control weights", ds.control_dim(), qu.len())?;
        if qx.iter().chain(&qu).any(|q| !(q.is_finite() && *q > 0.0)) {
            return Err(Error::InvalidParameter("cost weights must be positive".into()));
        }
        Ok(Self::separable(CostKind::WeightedHomogeneous, ds, qx, qu))
    }

    fn separable(kind: CostKind, ds: &DilationStructure, qx: Vec<f64>, qu: Vec<f64>) -> Self {
        let px = ds.state_exponents().into_iter().map(Power::new).collect();
        let pu = ds.control_exponents().into_iter().map(Power::new).collect();
        Self {
            kind,
            form: Form::Separable {
                ds: ds.clone(),
                qx,
                qu,
                px,
                pu,
            },
        }
    }

    /// `xᵀ Q x + uᵀ R u` with symmetric positive-definite `Q`, `R`.
    pub fn quadratic(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        spd(&q, "Q")?;
        spd(&r, "R")?;
        Ok(Self {
            kind: CostKind::Quadratic,
            form: Form::Quadratic { q, r },
        })
    }

    /// [`StageCost::quadratic`] from row-major nested vectors.
    pub fn quadratic_from_rows(q: &[Vec<f64>], r: &[Vec<f64>]) -> Result<Self> {
        Self::quadratic(matrix(q, "Q")?, matrix(r, "R")?)
    }

    /// Quadratic cost with identity weights.
    pub fn quadratic_identity(n: usize, m: usize) -> Self {
        Self::quadratic(DMatrix::identity(n, n), DMatrix::identity(m, m))
            .expect("identity is positive definite")
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    pub fn dilation(&self) -> Option<&DilationStructure> {
        match &self.form {
            Form::Separable { ds, .. } => Some(ds),
            Form::Quadratic { .. } => None,
        }
    }

    /// Homogeneity degree of the cost: `d` for the homogeneous kinds, 2 for
    /// the quadratic one.
    pub fn degree(&self) -> f64 {
        self.dilation().map_or(2.0, DilationStructure::d)
    }

    pub fn state_dim(&self) -> usize {
        match &self.form {
            Form::Separable { ds, .. } => ds.state_dim(),
            Form::Quadratic { q, .. } => q.nrows(),
        }
    }

    pub fn control_dim(&self) -> usize {
        match &self.form {
            Form::Separable { ds, .. } => ds.control_dim(),
            Form::Quadratic { r, .. } => r.nrows(),
        }
    }

    pub fn state_weights(&self) -> Option<&[f64]> {
        match &self.form {
            Form::Separable { qx, .. } => Some(qx),
            Form::Quadratic { .. } => None,
        }
    }

    pub fn control_weights(&self) -> Option<&[f64]> {
        match &self.form {
            Form::Separable { qu, .. } => Some(qu),
            Form::Quadratic { .. } => None,
        }
    }

    pub fn matrices(&self) -> Option<(&DMatrix<f64>, &DMatrix<f64>)> {
        match &self.form {
            Form::Quadratic { q, r } => Some((q, r)),
            Form::Separable { .. } => None,
        }
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        check_dim("state", self.state_dim(), x.len())?;
        check_dim("control", self.control_dim(), u.len())?;
        Ok(self.eval_unchecked(x, u))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], u: &[f64]) -> f64 {
        self.state_part(x) + self.control_part(u)
    }

    /// `ℓ*(x) = inf_u ℓ(x, u)`, attained at `u = 0` for every kind here.
    pub fn ell_star(&self, x: &[f64]) -> Result<f64> {
        check_dim("state", self.state_dim(), x.len())?;
        Ok(self.state_part(x))
    }

    #[inline]
    fn state_part(&self, x: &[f64]) -> f64 {
        match &self.form {
            Form::Separable { qx, px, .. } => x
                .iter()
                .zip(px)
                .zip(qx)
                .map(|((v, p), q)| q * p.apply(*v))
                .sum(),
            Form::Quadratic { q, .. } => quad_form(q, x),
        }
    }

    /// Per-channel control magnitude matching `ℓ*(x)`: the `|u_j|` at which
    /// the control term of channel `j` alone equals `ℓ*(x)`.
    pub(crate) fn control_scale(&self, x: &[f64]) -> Vec<f64> {
        let level = self.state_part(x);
        match &self.form {
            Form::Separable { pu, .. } => pu.iter().map(|p| level.powf(1.0 / p.exponent())).collect(),
            Form::Quadratic { r, .. } => vec![level.sqrt(); r.nrows()],
        }
    }

    /// `ℓ(0, u)`.
    #[inline]
    fn control_part(&self, u: &[f64]) -> f64 {
        match &self.form {
            Form::Separable { qu, pu, .. } => u
                .iter()
                .zip(pu)
                .zip(qu)
                .map(|((v, p), q)| q * p.apply(*v))
                .sum(),
            Form::Quadratic { r, .. } => quad_form(r, u),
        }
    }
}

fn quad_form(a: &DMatrix<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += a[(i, j)] * v[j];
        }
        acc += v[i] * row;
    }
    acc
}

fn spd(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::InvalidParameter(format!("{what} must be square and nonempty")));
    }
    let asym = (a - a.transpose()).abs().max();
    if asym > 1e-12 * (1.0 + a.abs().max()) {
        return Err(Error::InvalidParameter(format!("{what} must be symmetric")));
    }
    if a.clone().cholesky().is_none() {
        return Err(Error::InvalidParameter(format!("{what} must be positive definite")));
    }
    Ok(())
}

/// Result of [`check_cost_homogeneity`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostHomogeneityReport {
    /// `max |ℓ_scaled / (α^d ℓ_reference) − 1|` over the samples.
    pub max_ratio_error: f64,
    /// Expected ratio `α^d`.
    pub expected_ratio: f64,
    pub samples: usize,
}

/// Compares stage costs along a dilated trajectory with `α^d` times those
/// along the original one:
///
/// `ℓ(x(s; Λ_α x0, Δ_α u(α^τ ·)), Δ_α u(α^τ s)) = α^d ℓ(x(α^τ s; x0, u), u(α^τ s))`.
///
/// The dilated side runs over `[0, u.end() / α^τ]`; `samples` sample times
/// are placed off the control breakpoints. Both sides are integrated with
/// steps no longer than `max_step`.
#[allow(clippy::too_many_arguments)]
pub fn check_cost_homogeneity(
    sys: &ControlSystem,
    cost: &StageCost,
    ds: &DilationStructure,
    x0: &[f64],
    u: &ControlSignal,
    alpha: f64,
    samples: usize,
    max_step: f64,
) -> Result<CostHomogeneityReport> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    let time_factor = alpha.powf(ds.tau());
    let scaled_u = u.time_scaled(time_factor)?.dilated(ds, alpha)?;
    let scaled_x0 = ds.dilate_state(alpha, x0)?;
    let horizon = scaled_u.end();
    let samples = samples.max(1);
    // Golden-ratio offset keeps samples off rational breakpoints.
    let times: Vec<f64> = (0..samples)
        .map(|j| (j as f64 + 0.381_966_011_250_105) / samples as f64 * horizon)
        .collect();
    let ref_times: Vec<f64> = times.iter().map(|s| (s * time_factor).min(u.end())).collect();

    let lhs = integrate_sampled(sys, &scaled_x0, &scaled_u, &times, max_step, None)?;
    let rhs = integrate_sampled(sys, x0, u, &ref_times, max_step * time_factor, None)?;
    if !lhs.is_complete() || !rhs.is_complete() {
        return Err(Error::Integration {
            t: lhs.times.last().copied().unwrap_or(0.0),
            reason: "trajectory escaped during cost comparison".into(),
        });
    }
    let expected = alpha.powf(cost.degree());
    let mut worst = 0.0f64;
    for k in 0..samples {
        let scaled = cost.eval(&lhs.states[k], &lhs.controls[k])?;
        let reference = expected * cost.eval(&rhs.states[k], &rhs.controls[k])?;
        let err = if reference == 0.0 {
            if scaled == 0.0 { 0.0 } else { f64::INFINITY }
        } else {
            (scaled / reference - 1.0).abs()
        };
        worst = worst.max(err);
    }
    Ok(CostHomogeneityReport {
        max_ratio_error: worst,
        expected_ratio: expected,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{builtin, SystemParams};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unicycle_ds() -> DilationStructure {
        DilationStructure::new(vec![1.0, 2.0, 1.0], vec![1.0, 1.0], 0.0).unwrap()
    }

    #[test]
    fn unicycle_cost_is_quartic_quadratic_quartic() {
        let cost = StageCost::homogeneous(&unicycle_ds());
        let (x, u) = ([0.5, -1.5, 2.0], [0.3, -0.7]);
        let expect = 0.5f64.powi(4) + 1.5f64.powi(2) + 2.0f64.powi(4) + 0.3f64.powi(4) + 0.7f64.powi(4);
        assert_relative_eq!(cost.eval(&x, &u).unwrap(), expect, max_relative = 1e-15);
        assert_eq!(cost.eval(&[0.0; 3], &[0.0; 2]).unwrap(), 0.0);
    }

    #[test]
    fn unit_weights_give_quadratic_cost() {
        let ds = DilationStructure::new(vec![1.0], vec![1.0], 0.0).unwrap();
        let cost = StageCost::homogeneous(&ds);
        assert_eq!(cost.eval(&[3.0], &[-2.0]).unwrap(), 13.0);
    }

    #[test]
    fn ell_star_examples() {
        let cost = StageCost::homogeneous(&unicycle_ds());
        assert_eq!(cost.ell_star(&[1.0, 1.0, 1.0]).unwrap(), 3.0);
        let quad = StageCost::quadratic_identity(3, 2);
        assert_relative_eq!(quad.ell_star(&[0.0, 0.2, 0.0]).unwrap(), 0.04, max_relative = 1e-15);
    }

    #[test]
    fn quadratic_validation() {
        let good = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert!(StageCost::quadratic(good.clone(), DMatrix::identity(1, 1)).is_ok());
        let asym = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.0, 1.0]);
        assert!(StageCost::quadratic(asym, DMatrix::identity(1, 1)).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(StageCost::quadratic(indefinite, DMatrix::identity(1, 1)).is_err());
        assert!(StageCost::quadratic(good, DMatrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn weighted_variant() {
        let ds = unicycle_ds();
        let cost = StageCost::weighted_homogeneous(&ds, vec![2.0, 1.0, 1.0], vec![1.0, 3.0]).unwrap();
        assert_eq!(cost.eval(&[1.0, 1.0, 1.0], &[1.0, 1.0]).unwrap(), 8.0);
        assert!(StageCost::weighted_homogeneous(&ds, vec![0.0, 1.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(StageCost::weighted_homogeneous(&ds, vec![1.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn fractional_exponents_use_absolute_values() {
        let ds = DilationStructure::with_exponent(vec![2.0], vec![1.0], -1.0, 2.0).unwrap();
        let cost = StageCost::homogeneous(&ds);
        assert_eq!(cost.eval(&[-4.0], &[-3.0]).unwrap(), 4.0 + 9.0);
        let ds = DilationStructure::with_exponent(vec![1.0], vec![1.0], 0.0, 3.0).unwrap();
        let cost = StageCost::homogeneous(&ds);
        assert_relative_eq!(cost.eval(&[-2.0], &[0.0]).unwrap(), 8.0);
    }

    #[test]
    fn driftless_cost_scales_by_alpha_to_the_d() {
        let sys = builtin("driftless3", &SystemParams::default()).unwrap();
        let ds = sys.declared_dilation().unwrap().clone();
        let cost = StageCost::homogeneous(&ds);
        let u = ControlSignal::constant(vec![0.5, -0.5], 1.0).unwrap();
        let rep = check_cost_homogeneity(&sys, &cost, &ds, &[1.0, 1.0, 1.0], &u, 2.0, 40, 1e-3).unwrap();
        assert_eq!(rep.expected_ratio, 16.0);
        assert!(rep.max_ratio_error <= 1e-6, "{rep:?}");
        let rep = check_cost_homogeneity(&sys, &cost, &ds, &[1.0, 1.0, 1.0], &u, 1.0, 40, 1e-3).unwrap();
        assert_eq!(rep.max_ratio_error, 0.0);
    }

    #[test]
    fn negative_degree_uses_time_reparameterization() {
        let sys = builtin("scalar_power", &SystemParams::scalar("k", 0.5)).unwrap();
        let ds = sys.declared_dilation().unwrap().clone();
        let cost = StageCost::homogeneous(&ds);
        let u = ControlSignal::uniform(1.0, vec![vec![0.3], vec![0.8]]).unwrap();
        let rep = check_cost_homogeneity(&sys, &cost, &ds, &[1.0], &u, 0.5, 40, 1e-3).unwrap();
        assert!(rep.max_ratio_error <= 1e-6, "{rep:?}");
    }

    #[test]
    fn non_homogeneous_system_is_detected() {
        let sys = builtin("robot", &SystemParams::default()).unwrap();
        let ds = sys.declared_dilation().unwrap().clone();
        let cost = StageCost::homogeneous(&ds);
        let u = ControlSignal::constant(vec![1.0, 0.5], 1.0).unwrap();
        let rep = check_cost_homogeneity(&sys, &cost, &ds, &[0.2, 0.1, 1.0], &u, 2.0, 40, 1e-3).unwrap();
        assert!(rep.max_ratio_error > 1e-3);
    }

    proptest! {
        #[test]
        fn separable_and_scaling(
            x in prop::collection::vec(-2.0f64..2.0, 3),
            u in prop::collection::vec(-2.0f64..2.0, 2),
            alpha in 0.0f64..3.0,
        ) {
            let ds = unicycle_ds();
            let cost = StageCost::homogeneous(&ds);
            let full = cost.eval(&x, &u).unwrap();
            let split = cost.ell_star(&x).unwrap() + cost.eval(&[0.0; 3], &u).unwrap();
            prop_assert!((full - split).abs() <= 1e-14 * (1.0 + full));
            let lhs = cost.ell_star(&ds.dilate_state(alpha, &x).unwrap()).unwrap();
            let rhs = alpha.powi(4) * cost.ell_star(&x).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }

        #[test]
        fn ell_star_positive_away_from_origin(
            x in prop::collection::vec(-1.0f64..1.0, 3),
        ) {
            let cost = StageCost::homogeneous(&unicycle_ds());
            prop_assume!(x.iter().any(|v| *v != 0.0));
            prop_assert!(cost.ell_star(&x).unwrap() > 0.0);
            // shrinking along the ray drives ℓ* to zero
            let small: Vec<f64> = x.iter().map(|v| v * 1e-3).collect();
            prop_assert!(cost.ell_star(&small).unwrap() < 1e-5);
        }
    }
}
