//! Dilation algebra.
//!
//! A [`DilationStructure`] holds the weights `r` (state), `s` (control), the
//! degree `tau` and the exponent `d` of the dilated norm. Everything that
//! scales in this crate (states, controls, stage costs, value functions)
//! scales through one of these.

mod checks;

pub use checks::{
    check_approximation, check_homogeneity, check_trajectory_identity, ApproximationCertificate,
    HomogeneityReport, IdentityReport, SamplingPlan,
};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Homogeneity data `(r, s, tau)` plus the dilated-norm exponent `d`.
///
/// Invariants checked at construction:
/// all weights positive, `tau > -min r_i`, `d > 0`, and every cost exponent
/// `d / r_i`, `d / s_j` at least one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDilation", into = "RawDilation")]
pub struct DilationStructure {
    r: Vec<f64>,
    s: Vec<f64>,
    tau: f64,
    d: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RawDilation {
    r: Vec<f64>,
    s: Vec<f64>,
    tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d: Option<f64>,
}

impl TryFrom<RawDilation> for DilationStructure {
    type Error = Error;

    fn try_from(raw: RawDilation) -> Result<Self> {
        match raw.d {
            Some(d) => Self::with_exponent(raw.r, raw.s, raw.tau, d),
            None => Self::new(raw.r, raw.s, raw.tau),
        }
    }
}

impl From<DilationStructure> for RawDilation {
    fn from(ds: DilationStructure) -> Self {
        RawDilation {
            r: ds.r,
            s: ds.s,
            tau: ds.tau,
            d: Some(ds.d),
        }
    }
}

impl DilationStructure {
    /// Builds the structure with the canonical exponent `d = 2 * prod(r_i)`.
    pub fn new(r: Vec<f64>, s: Vec<f64>, tau: f64) -> Result<Self> {
        let d = canonical_exponent(&r);
        Self::with_exponent(r, s, tau, d)
    }

    /// Builds the structure with an explicit dilated-norm exponent.
    pub fn with_exponent(r: Vec<f64>, s: Vec<f64>, tau: f64, d: f64) -> Result<Self> {
        if r.is_empty() {
            return Err(Error::InvalidDilation("no state weights".into()));
        }
        if let Some(bad) = r.iter().chain(&s).find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidDilation(format!(
                "weights must be positive and finite, got {bad}"
            )));
        }
        let r_min = r.iter().copied().fold(f64::INFINITY, f64::min);
        if !(tau.is_finite() && tau > -r_min) {
            return Err(Error::InvalidDilation(format!(
                "degree {tau} outside (-{r_min}, inf)"
            )));
        }
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::InvalidDilation(format!("exponent d = {d} must be positive")));
        }
        if let Some(w) = r.iter().chain(&s).find(|w| d / **w < 1.0) {
            return Err(Error::InvalidDilation(format!(
                "cost exponent d/{w} = {} below 1; raise d",
                d / w
            )));
        }
        Ok(Self { r, s, tau, d })
    }

    /// Same weights and degree, different exponent `d`.
    pub fn rescaled_exponent(&self, d: f64) -> Result<Self> {
        Self::with_exponent(self.r.clone(), self.s.clone(), self.tau, d)
    }

    pub fn state_dim(&self) -> usize {
        self.r.len()
    }

    pub fn control_dim(&self) -> usize {
        self.s.len()
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    /// Exponents `d / r_i` of the state part of the stage cost.
    pub fn state_exponents(&self) -> Vec<f64> {
        self.r.iter().map(|r| self.d / r).collect()
    }

    /// Exponents `d / s_j` of the control part of the stage cost.
    pub fn control_exponents(&self) -> Vec<f64> {
        self.s.iter().map(|s| self.d / s).collect()
    }

    /// `Λ_α x = (α^{r_1} x_1, …, α^{r_n} x_n)`.
    pub fn dilate_state(&self, alpha: f64, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("state", self.r.len(), x.len())?;
        check_alpha(alpha)?;
        Ok(scale(&self.r, alpha, x))
    }

    /// `Δ_α u = (α^{s_1} u_1, …, α^{s_m} u_m)`.
    pub fn dilate_control(&self, alpha: f64, u: &[f64]) -> Result<Vec<f64>> {
        check_dim("control", self.s.len(), u.len())?;
        check_alpha(alpha)?;
        Ok(scale(&self.s, alpha, u))
    }

    /// The dilated norm `N(x) = (Σ |x_i|^{d/r_i})^{1/d}`, satisfying
    /// `N(Λ_α x) = α N(x)`.
    pub fn dilated_norm(&self, x: &[f64]) -> Result<f64> {
        check_dim("state", self.r.len(), x.len())?;
        Ok(self.norm_power(x).powf(1.0 / self.d))
    }

    /// `N(x)^d = Σ |x_i|^{d/r_i}`, without the final root.
    pub(crate) fn norm_power(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.r)
            .map(|(xi, ri)| xi.abs().powf(self.d / ri))
            .sum()
    }
}

fn canonical_exponent(r: &[f64]) -> f64 {
    2.0 * r.iter().product::<f64>()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "dilation factor must be finite and nonnegative, got {alpha}"
        )))
    }
}

pub(crate) fn scale(weights: &[f64], alpha: f64, v: &[f64]) -> Vec<f64> {
    v.iter()
        .zip(weights)
        .map(|(vi, w)| alpha.powf(*w) * vi)
        .collect()
}
