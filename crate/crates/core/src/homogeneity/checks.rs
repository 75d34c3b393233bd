//! Sampled verification of homogeneity identities and of homogeneous
//! approximation bounds.

use serde::{Deserialize, Serialize};

use super::DilationStructure;
use crate::error::{check_dim, Error, Result};
use crate::sampling::ScrambledHalton;
use crate::systems::{integrate_sampled, ControlSignal, ControlSystem};

/// Where the checks sample `(x, u, α)`.
///
/// States and controls come from a scrambled Halton sequence on
/// `[-half_width, half_width]^{n+m}`; the dilation factors form a log-spaced
/// grid on `[alpha_min, alpha_max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingPlan {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub alpha_points: usize,
    pub samples: usize,
    pub half_width: f64,
    pub seed: u64,
    /// Absolute part of the pass tolerance.
    pub abs_tol: f64,
    /// Relative part, scaled by `‖α^τ Λ_α f(x, u)‖_∞`.
    pub rel_tol: f64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            alpha_min: 2f64.powi(-10),
            alpha_max: 1.0,
            alpha_points: 16,
            samples: 256,
            half_width: 1.0,
            seed: 0,
            abs_tol: 1e-9,
            rel_tol: 1e-9,
        }
    }
}

impl SamplingPlan {
    pub fn alphas(&self) -> Vec<f64> {
        let k = self.alpha_points.max(1);
        if k == 1 {
            return vec![self.alpha_max];
        }
        let (lo, hi) = (self.alpha_min.ln(), self.alpha_max.ln());
        (0..k)
            .map(|i| (lo + (hi - lo) * i as f64 / (k - 1) as f64).exp())
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha_min > 0.0 && self.alpha_min <= self.alpha_max && self.alpha_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "alpha range [{}, {}] must satisfy 0 < min <= max",
                self.alpha_min, self.alpha_max
            )));
        }
        if self.samples == 0 || !(self.half_width > 0.0) {
            return Err(Error::InvalidParameter("sampling plan needs samples and a positive box".into()));
        }
        Ok(())
    }

    fn points(&self, dim: usize) -> Vec<Vec<f64>> {
        ScrambledHalton::new(dim, self.seed).symmetric_box(self.samples, self.half_width)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HomogeneityReport {
    /// `max ‖f(Λ_α x, Δ_α u) − α^τ Λ_α f(x, u)‖_∞` over all samples.
    pub max_residual: f64,
    /// Largest residual after dividing by the per-sample tolerance; `pass`
    /// iff this is at most one.
    pub max_tolerance_ratio: f64,
    pub pass: bool,
    /// `(x, u, α)` with the largest tolerance ratio.
    pub worst_sample: Option<(Vec<f64>, Vec<f64>, f64)>,
    pub samples_checked: usize,
    pub diagnostic: Option<String>,
}

/// Samples `f(Λ_α x, Δ_α u) = α^τ Λ_α f(x, u)`.
pub fn check_homogeneity(
    sys: &ControlSystem,
    ds: &DilationStructure,
    plan: &SamplingPlan,
) -> Result<HomogeneityReport> {
    check_dim("dilation state weights", sys.state_dim(), ds.state_dim())?;
    check_dim("dilation control weights", sys.control_dim(), ds.control_dim())?;
    plan.validate()?;
    let (n, m) = (sys.state_dim(), sys.control_dim());
    let mut report = HomogeneityReport {
        max_residual: 0.0,
        max_tolerance_ratio: 0.0,
        pass: true,
        worst_sample: None,
        samples_checked: 0,
        diagnostic: None,
    };
    let mut lhs = vec![0.0; n];
    let mut base = vec![0.0; n];
    for p in plan.points(n + m) {
        let (x, u) = p.split_at(n);
        sys.eval_into(x, u, &mut base);
        for alpha in plan.alphas() {
            let xs = super::scale(ds.r(), alpha, x);
            let us = super::scale(ds.s(), alpha, u);
            sys.eval_into(&xs, &us, &mut lhs);
            let ta = alpha.powf(ds.tau());
            let mut residual = 0.0f64;
            let mut magnitude = 0.0f64;
            let mut nan = false;
            for i in 0..n {
                let rhs = ta * alpha.powf(ds.r()[i]) * base[i];
                let diff = (lhs[i] - rhs).abs();
                nan |= diff.is_nan();
                residual = residual.max(diff);
                magnitude = magnitude.max(rhs.abs());
            }
            report.samples_checked += 1;
            if nan {
                report.pass = false;
                report.max_residual = f64::NAN;
                report.max_tolerance_ratio = f64::NAN;
                report.worst_sample = Some((x.to_vec(), u.to_vec(), alpha));
                report.diagnostic = Some(format!(
                    "vector field returned NaN at x = {x:?}, u = {u:?}, alpha = {alpha}"
                ));
                return Ok(report);
            }
            let ratio = residual / (plan.abs_tol + plan.rel_tol * magnitude);
            report.max_residual = report.max_residual.max(residual);
            if ratio > report.max_tolerance_ratio {
                report.max_tolerance_ratio = ratio;
                report.worst_sample = Some((x.to_vec(), u.to_vec(), alpha));
            }
        }
    }
    report.pass = report.max_tolerance_ratio <= 1.0;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityReport {
    /// Max over the comparison grid and components of
    /// `|x(t; Λ_α x0, Δ_α u(α^τ ·)) − Λ_α x(α^τ t; x0, u)|`.
    pub max_deviation: f64,
    pub grid_points: usize,
}

/// Integrates both sides of `x(t; Λ_α x0, Δ_α u(α^τ ·)) = Λ_α x(α^τ t; x0, u)`
/// on `[0, horizon]` and returns the largest pointwise deviation on a
/// 101-point comparison grid. `u` must cover `[0, α^τ horizon]`.
pub fn check_trajectory_identity(
    sys: &ControlSystem,
    ds: &DilationStructure,
    x0: &[f64],
    u: &ControlSignal,
    alpha: f64,
    horizon: f64,
    max_step: f64,
) -> Result<IdentityReport> {
    check_dim("dilation state weights", sys.state_dim(), ds.state_dim())?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    let time_factor = alpha.powf(ds.tau());
    let scaled_u = u.time_scaled(time_factor)?.dilated(ds, alpha)?;
    let scaled_x0 = ds.dilate_state(alpha, x0)?;
    let points = 101;
    let times: Vec<f64> = (0..points)
        .map(|i| horizon * i as f64 / (points - 1) as f64)
        .collect();
    let ref_times: Vec<f64> = times.iter().map(|t| t * time_factor).collect();

    let lhs = integrate_sampled(sys, &scaled_x0, &scaled_u, &times, max_step, None)?;
    let rhs = integrate_sampled(sys, x0, u, &ref_times, max_step * time_factor, None)?;
    for side in [&lhs, &rhs] {
        if !side.is_complete() {
            return Err(Error::Integration {
                t: side.times.last().copied().unwrap_or(0.0),
                reason: format!("{:?} before the horizon", side.status),
            });
        }
    }
    let mut worst = 0.0f64;
    for (a, b) in lhs.states.iter().zip(&rhs.states) {
        let b = ds.dilate_state(alpha, b)?;
        for (p, q) in a.iter().zip(&b) {
            worst = worst.max((p - q).abs());
        }
    }
    Ok(IdentityReport {
        max_deviation: worst,
        grid_points: points,
    })
}

/// Result of [`check_approximation`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApproximationCertificate {
    pub rho: f64,
    /// Smallest `M` with `|R_i(Λ_α x, Δ_α u)| ≤ M α^{r_i+τ+η}` on every sample.
    pub m: f64,
    pub eta: f64,
    /// Fitted constant per state component.
    pub per_component_m: Vec<f64>,
    /// `m − per_component_m[i]`: slack of each component under the common `m`.
    pub per_component_margins: Vec<f64>,
    /// `(α, max over (x, u) of the scaled residual)` on the α-grid.
    pub alpha_profile: Vec<(f64, f64)>,
    /// Log-log slope of the scaled residual against α over the smallest third
    /// of the α-grid. A bounded residual has slope near 0; a residual of
    /// too-high claimed order `η` grows like `α^{-(η − η_true)}`.
    pub small_alpha_slope: f64,
    pub verified: bool,
    /// Norm used for the `‖x‖ ≤ ρ`, `‖u‖ ≤ ρ` ball.
    pub norm: String,
}

/// Slopes below this mark the fitted constant as growing without bound as α → 0.
pub const UNBOUNDED_SLOPE: f64 = -0.1;

/// Fits the residual constant of a homogeneous approximation `h` of `f`
/// (with `f = h + R`) on samples from the Euclidean balls of radius `rho`.
///
/// The certificate is verified when the fitted `M` is finite and the scaled
/// residual does not grow as α shrinks (see
/// [`ApproximationCertificate::small_alpha_slope`]).
pub fn check_approximation(
    full: &ControlSystem,
    approx: &ControlSystem,
    ds: &DilationStructure,
    rho: f64,
    eta: f64,
    plan: &SamplingPlan,
) -> Result<ApproximationCertificate> {
    check_dim("approximation state", full.state_dim(), approx.state_dim())?;
    check_dim("approximation control", full.control_dim(), approx.control_dim())?;
    check_dim("dilation state weights", full.state_dim(), ds.state_dim())?;
    check_dim("dilation control weights", full.control_dim(), ds.control_dim())?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
    }
    plan.validate()?;
    if plan.alpha_max > 1.0 {
        return Err(Error::InvalidParameter("alpha must lie in (0, 1]".into()));
    }
    let (n, m) = (full.state_dim(), full.control_dim());
    let points: Vec<(Vec<f64>, Vec<f64>)> = ScrambledHalton::new(n + m, plan.seed)
        .symmetric_box(plan.samples, 1.0)
        .into_iter()
        .map(|p| {
            let (x, u) = p.split_at(n);
            (into_ball(x, rho), into_ball(u, rho))
        })
        .collect();

    let alphas = plan.alphas();
    let mut per_component = vec![0.0f64; n];
    let mut profile = Vec::with_capacity(alphas.len());
    let (mut fv, mut hv) = (vec![0.0; n], vec![0.0; n]);
    for &alpha in &alphas {
        let mut level = 0.0f64;
        for (x, u) in &points {
            let xs = super::scale(ds.r(), alpha, x);
            let us = super::scale(ds.s(), alpha, u);
            full.eval_into(&xs, &us, &mut fv);
            approx.eval_into(&xs, &us, &mut hv);
            for i in 0..n {
                let bound = alpha.powf(ds.r()[i] + ds.tau() + eta);
                let scaled = (fv[i] - hv[i]).abs() / bound;
                let scaled = if scaled.is_nan() { f64::INFINITY } else { scaled };
                per_component[i] = per_component[i].max(scaled);
                level = level.max(scaled);
            }
        }
        profile.push((alpha, level));
    }
    let fitted = per_component.iter().copied().fold(0.0, f64::max);
    let slope = small_alpha_slope(&profile);
    Ok(ApproximationCertificate {
        rho,
        m: fitted,
        eta,
        per_component_margins: per_component.iter().map(|c| fitted - c).collect(),
        per_component_m: per_component,
        alpha_profile: profile,
        small_alpha_slope: slope,
        verified: fitted.is_finite() && slope >= UNBOUNDED_SLOPE,
        norm: "euclidean".into(),
    })
}

fn into_ball(v: &[f64], rho: f64) -> Vec<f64> {
    let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    let shrink = norm.max(1.0);
    v.iter().map(|c| rho * c / shrink).collect()
}

fn small_alpha_slope(profile: &[(f64, f64)]) -> f64 {
    let mut sorted: Vec<_> = profile.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let take = (sorted.len() / 3).max(2).min(sorted.len());
    let pts: Vec<(f64, f64)> = sorted[..take]
        .iter()
        .filter(|(_, v)| *v > 0.0 && v.is_finite())
        .map(|(a, v)| (a.ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        // identically zero (or a single level): nothing grows
        return 0.0;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{builtin, SystemParams};
    use nalgebra::DMatrix;

    fn sys(name: &str) -> ControlSystem {
        builtin(name, &SystemParams::default()).unwrap()
    }

    fn ds(r: &[f64], s: &[f64], tau: f64) -> DilationStructure {
        DilationStructure::new(r.to_vec(), s.to_vec(), tau).unwrap()
    }

    #[test]
    fn driftless_weight_combinations_pass() {
        let plan = SamplingPlan::default();
        let f = sys("driftless3");
        for (s, tau) in [(1.0, 0.0), (1.5, 0.5), (0.5, -0.5)] {
            let rep = check_homogeneity(&f, &ds(&[1.0, 2.0, 1.0], &[s, s], tau), &plan).unwrap();
            assert!(rep.pass, "tau {tau}: {rep:?}");
            assert!(rep.max_residual <= 1e-9);
        }
        // the wrong degree for these weights fails
        let rep = check_homogeneity(&f, &ds(&[1.0, 2.0, 1.0], &[1.0, 1.0], 0.5), &plan).unwrap();
        assert!(!rep.pass);
    }

    #[test]
    fn robot_is_not_homogeneous() {
        let rep = check_homogeneity(
            &sys("robot"),
            &ds(&[1.0, 2.0, 1.0], &[1.0, 1.0], 0.0),
            &SamplingPlan::default(),
        )
        .unwrap();
        assert!(!rep.pass);
        // hand value at x = (0,0,1), u = (1,0), α = 1/2:
        // f1(Λx, Δu) = cos(1/2)/2 vs α^τ Λ f = cos(1)/2, residual ≈ 0.1686
        let f = sys("robot");
        let lhs = f.eval(&[0.0, 0.0, 0.5], &[0.5, 0.0]).unwrap();
        let rhs = f.eval(&[0.0, 0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((lhs[0] - 0.5 * rhs[0] - (0.5f64.cos() - 1f64.cos()) / 2.0).abs() < 1e-15);
        assert!(rep.max_residual >= (0.5f64.cos() - 1f64.cos()) / 2.0 * 0.5);
    }

    #[test]
    fn linear_systems_are_degree_zero_homogeneous() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 2.5, 0.7]);
        let b = DMatrix::from_row_slice(2, 1, &[1.1, -0.4]);
        let f = ControlSystem::linear(a, b).unwrap();
        let rep = check_homogeneity(&f, f.declared_dilation().unwrap(), &SamplingPlan::default()).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn nan_fields_fail_with_a_diagnostic() {
        let f = ControlSystem::new("bad", 1, 1, |x, _, dx| {
            dx[0] = if x[0] > 0.5 { f64::NAN } else { 0.0 }
        })
        .unwrap();
        let rep = check_homogeneity(&f, &ds(&[1.0], &[1.0], 0.0), &SamplingPlan::default()).unwrap();
        assert!(!rep.pass);
        assert!(rep.diagnostic.unwrap().contains("NaN"));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let err = check_homogeneity(&sys("driftless3"), &ds(&[1.0], &[1.0], 0.0), &SamplingPlan::default());
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn unicycle_certificate() {
        let cert = check_approximation(
            &sys("robot"),
            &sys("robot_approx"),
            &ds(&[1.0, 2.0, 1.0], &[1.0, 1.0], 0.0),
            1.0,
            2.0,
            &SamplingPlan::default(),
        )
        .unwrap();
        assert!(cert.verified, "{cert:?}");
        assert!(cert.m <= 0.5 && cert.m > 0.3, "{}", cert.m);
        assert_eq!(cert.per_component_m[2], 0.0);
        assert!(cert.per_component_m[1] <= 1.0 / 6.0);
    }

    #[test]
    fn identical_fields_fit_zero() {
        let cert = check_approximation(
            &sys("driftless3"),
            &sys("robot_approx"),
            &ds(&[1.0, 2.0, 1.0], &[1.0, 1.0], 0.0),
            1.0,
            1.0,
            &SamplingPlan::default(),
        )
        .unwrap();
        assert_eq!(cert.m, 0.0);
        assert!(cert.verified);
    }

    #[test]
    fn too_high_order_is_not_verified() {
        let plan = SamplingPlan {
            alpha_min: 1e-4,
            alpha_points: 25,
            ..SamplingPlan::default()
        };
        let cert = check_approximation(
            &sys("robot"),
            &sys("robot_approx"),
            &ds(&[1.0, 2.0, 1.0], &[1.0, 1.0], 0.0),
            1.0,
            2.5,
            &plan,
        )
        .unwrap();
        assert!(!cert.verified);
        assert!((cert.small_alpha_slope + 0.5).abs() < 0.05, "{}", cert.small_alpha_slope);
        // the fitted constant keeps growing as the α floor shrinks
        let first = cert.alpha_profile.first().unwrap().1;
        let last = cert.alpha_profile.last().unwrap().1;
        assert!(first > 50.0 * last);
    }

    #[test]
    fn approximation_rejects_bad_eta() {
        let d = ds(&[1.0, 2.0, 1.0], &[1.0, 1.0], 0.0);
        let plan = SamplingPlan::default();
        assert!(check_approximation(&sys("robot"), &sys("robot_approx"), &d, 1.0, 0.0, &plan).is_err());
        assert!(check_approximation(&sys("robot"), &sys("robot_approx"), &d, 1.0, -1.0, &plan).is_err());
        let scalar = builtin("scalar_power", &SystemParams::scalar("k", 1.0)).unwrap();
        assert!(check_approximation(&sys("robot"), &scalar, &d, 1.0, 2.0, &plan).is_err());
    }

    #[test]
    fn trajectory_identity_identity_case() {
        let f = sys("driftless3");
        let d = f.declared_dilation().unwrap().clone();
        let u = ControlSignal::constant(vec![1.0, 1.0], 1.0).unwrap();
        let rep = check_trajectory_identity(&f, &d, &[1.0, 1.0, 1.0], &u, 1.0, 1.0, 1e-2).unwrap();
        assert_eq!(rep.max_deviation, 0.0);
    }

    #[test]
    fn trajectory_identity_reports_escape() {
        let f = builtin("scalar_power", &SystemParams::scalar("k", 2.0)).unwrap();
        let d = f.declared_dilation().unwrap().clone();
        let u = ControlSignal::constant(vec![0.0], 10.0).unwrap();
        let err = check_trajectory_identity(&f, &d, &[1.0], &u, 1.0, 2.0, 1e-3).unwrap_err();
        assert!(matches!(err, Error::Integration { .. }));
    }
}
