//! Control systems `ẋ = f(x, u)`, piecewise-constant control signals, the
//! fixed-step integrator and the finite-time steering law for the driftless
//! benchmark system.

pub(crate) mod integrate;
mod signal;
mod steering;

pub use integrate::{
    fmt_f64, integrate, integrate_sampled, IntegrationStatus, Trajectory, BLOW_UP_GUARD,
};
pub use signal::ControlSignal;
pub use steering::steer_driftless_to_origin;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::homogeneity::DilationStructure;

type Field = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// An evaluatable vector field with its dimensions and optional declared
/// homogeneity.
///
/// Cloning is cheap; the field itself is shared.
#[derive(Clone)]
pub struct ControlSystem {
    label: String,
    n: usize,
    m: usize,
    field: Arc<Field>,
    declared_dilation: Option<DilationStructure>,
    params: BTreeMap<String, f64>,
    absorbing_origin: bool,
}

impl fmt::Debug for ControlSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlSystem")
            .field("label", &self.label)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("declared_dilation", &self.declared_dilation)
            .field("params", &self.params)
            .finish()
    }
}

impl ControlSystem {
    /// Wraps a vector field. The field writes `f(x, u)` into its third
    /// argument. Fails unless `f(0, 0) = 0`.
    pub fn new<F>(label: impl Into<String>, n: usize, m: usize, field: F) -> Result<Self>
    where
        F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if n == 0 {
            return Err(Error::InvalidParameter("state dimension must be positive".into()));
        }
        let mut out = vec![0.0; n];
        field(&vec![0.0; n], &vec![0.0; m], &mut out);
        let at_origin = out.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if !(at_origin <= 1e-14) {
            return Err(Error::OriginNotEquilibrium(at_origin));
        }
        Ok(Self {
            label: label.into(),
            n,
            m,
            field: Arc::new(field),
            declared_dilation: None,
            params: BTreeMap::new(),
            absorbing_origin: false,
        })
    }

    /// Attaches a declared dilation. Dimensions must match.
    pub fn with_dilation(mut self, ds: DilationStructure) -> Result<Self> {
        check_dim("dilation state weights", self.n, ds.state_dim())?;
        check_dim("dilation control weights", self.m, ds.control_dim())?;
        self.declared_dilation = Some(ds);
        Ok(self)
    }

    pub fn with_params(mut self, params: BTreeMap<String, f64>) -> Self {
        self.params = params;
        self
    }

    /// Makes the origin absorbing for the integrators: a step that reaches or
    /// crosses it ends at 0, and the state stays there.
    ///
    /// Meant for fields that are not Lipschitz at 0, where solutions through
    /// the origin are not unique. This selects the solution that stops.
    /// Crossing is detected by `⟨x_before, x_after⟩ ≤ 0`, which is exact for
    /// scalar systems.
    pub fn with_absorbing_origin(mut self) -> Self {
        self.absorbing_origin = true;
        self
    }

    /// `ẋ = A x + B u`.
    pub fn linear(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        check_dim("A columns", n, a.ncols())?;
        check_dim("B rows", n, b.nrows())?;
        let m = b.ncols();
        let ds = DilationStructure::new(vec![1.0; n], vec![1.0; m], 0.0)?;
        Self::new("linear", n, m, move |x, u, dx| {
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += a[(i, j)] * x[j];
                }
                for j in 0..m {
                    acc += b[(i, j)] * u[j];
                }
                dx[i] = acc;
            }
        })?
        .with_dilation(ds)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn control_dim(&self) -> usize {
        self.m
    }

    pub fn declared_dilation(&self) -> Option<&DilationStructure> {
        self.declared_dilation.as_ref()
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn has_absorbing_origin(&self) -> bool {
        self.absorbing_origin
    }

    /// Evaluates `f(x, u)`.
    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_dim("state", self.n, x.len())?;
        check_dim("control", self.m, u.len())?;
        let mut out = vec![0.0; self.n];
        (self.field)(x, u, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation into a caller-owned buffer.
    #[inline]
    pub(crate) fn eval_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.field)(x, u, out)
    }
}

/// Parameters for [`builtin`]: named scalars plus the matrices of the
/// linear system.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SystemParams {
    pub scalars: BTreeMap<String, f64>,
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<Vec<f64>>>,
}

impl SystemParams {
    pub fn scalar(name: &str, value: f64) -> Self {
        Self {
            scalars: BTreeMap::from([(name.to_string(), value)]),
            ..Self::default()
        }
    }

    fn get(&self, name: &str) -> Option<f64> {
        self.scalars.get(name).copied()
    }
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 6] = [
    "driftless3",
    "scalar_power",
    "robot",
    "robot_approx",
    "damped1d",
    "linear",
];

/// Built-in systems.
///
/// * `driftless3`: `(u1, x3 u1, u2)`, declared `tau = 0`, `r = (1,2,1)`, `s = (1,1)`.
/// * `scalar_power` (param `k > 0`, optional `s`, default 1):
///   `|x|^k sign(x) + u`, declared `r = s/k`, `tau = s - s/k`.
/// * `robot`: the unicycle `(cos(x3) u1, sin(x3) u1, u2)`. It is not
///   homogeneous; the declared dilation is the one of its approximation.
/// * `robot_approx`: identical to `driftless3`, labelled as the unicycle's
///   homogeneous approximation.
/// * `damped1d`: `-|x| (x + u)`, declared `r = s = 1`, `tau = 1`.
/// * `linear`: `A x + B u` from [`SystemParams::a`] and [`SystemParams::b`].
pub fn builtin(name: &str, params: &SystemParams) -> Result<ControlSystem> {
    match name {
        "driftless3" | "robot_approx" => {
            let ds = DilationStructure::new(vec![1.0, 2.0, 1.0], vec![1.0, 1.0], 0.0)?;
            ControlSystem::new(name, 3, 2, |x, u, dx| {
                dx[0] = u[0];
                dx[1] = x[2] * u[0];
                dx[2] = u[1];
            })?
            .with_dilation(ds)
        }
        "robot" => {
            let ds = DilationStructure::new(vec![1.0, 2.0, 1.0], vec![1.0, 1.0], 0.0)?;
            ControlSystem::new(name, 3, 2, |x, u, dx| {
                dx[0] = x[2].cos() * u[0];
                dx[1] = x[2].sin() * u[0];
                dx[2] = u[1];
            })?
            .with_dilation(ds)
        }
        "scalar_power" => {
            let k = params
                .get("k")
                .ok_or_else(|| Error::InvalidParameter("scalar_power needs k".into()))?;
            if !(k.is_finite() && k > 0.0) {
                return Err(Error::InvalidParameter(format!("k must be positive, got {k}")));
            }
            let s = params.get("s").unwrap_or(1.0);
            let r = s / k;
            // Raise d above the canonical 2r if a cost exponent would drop below 1.
            let d = (2.0 * r).max(s).max(r);
            let ds = DilationStructure::with_exponent(vec![r], vec![s], s - r, d)?;
            let absorbing = params.get("absorbing").unwrap_or(if k < 1.0 { 1.0 } else { 0.0 });
            let sys = if k == 1.0 {
                ControlSystem::new(name, 1, 1, |x, u, dx| dx[0] = x[0] + u[0])
            } else if k == 2.0 {
                ControlSystem::new(name, 1, 1, |x, u, dx| dx[0] = x[0].abs() * x[0] + u[0])
            } else {
                ControlSystem::new(name, 1, 1, move |x, u, dx| {
                    dx[0] = x[0].abs().powf(k) * x[0].signum() + u[0];
                })
            }?
            .with_dilation(ds)?
            .with_params(BTreeMap::from([
                ("absorbing".to_string(), absorbing),
                ("k".to_string(), k),
                ("s".to_string(), s),
            ]));
            Ok(if absorbing != 0.0 { sys.with_absorbing_origin() } else { sys })
        }
        "damped1d" => {
            let ds = DilationStructure::new(vec![1.0], vec![1.0], 1.0)?;
            ControlSystem::new(name, 1, 1, |x, u, dx| {
                dx[0] = -x[0].abs() * (x[0] + u[0]);
            })?
            .with_dilation(ds)
        }
        "linear" => {
            let a = params
                .a
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("linear needs A".into()))?;
            let b = params
                .b
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("linear needs B".into()))?;
            ControlSystem::linear(matrix(a, "A")?, matrix(b, "B")?)
        }
        other => Err(Error::UnknownSystem(other.to_string())),
    }
}

pub(crate) fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidParameter(format!("{what} must be a nonempty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_params() -> SystemParams {
        SystemParams::default()
    }

    #[test]
    fn builtin_examples() {
        let sys = builtin("driftless3", &no_params()).unwrap();
        assert_eq!(sys.eval(&[1.0, 2.0, 3.0], &[4.0, 5.0]).unwrap(), vec![4.0, 12.0, 5.0]);

        let sys = builtin("scalar_power", &SystemParams::scalar("k", 2.0)).unwrap();
        assert_eq!(sys.eval(&[-2.0], &[0.5]).unwrap(), vec![-3.5]);

        let sys = builtin("robot", &no_params()).unwrap();
        assert_eq!(sys.eval(&[0.0, 0.0, 0.0], &[1.0, 1.0]).unwrap(), vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn builtin_errors() {
        assert!(matches!(
            builtin("pendulum", &no_params()),
            Err(Error::UnknownSystem(_))
        ));
        assert!(builtin("scalar_power", &SystemParams::scalar("k", 0.0)).is_err());
        assert!(builtin("scalar_power", &SystemParams::scalar("k", -1.0)).is_err());
        assert!(builtin("scalar_power", &no_params()).is_err());
        assert!(builtin("linear", &no_params()).is_err());
    }

    #[test]
    fn scalar_power_declares_example_weights() {
        for (k, tau) in [(0.5, -1.0), (1.0, 0.0), (2.0, 0.5)] {
            let sys = builtin("scalar_power", &SystemParams::scalar("k", k)).unwrap();
            let ds = sys.declared_dilation().unwrap();
            assert_eq!(ds.r(), &[1.0 / k]);
            assert_eq!(ds.s(), &[1.0]);
            assert!((ds.tau() - tau).abs() < 1e-15);
            assert!(ds.state_exponents()[0] >= 1.0 && ds.control_exponents()[0] >= 1.0);
        }
        let k3 = builtin("scalar_power", &SystemParams::scalar("k", 3.0)).unwrap();
        assert_eq!(k3.declared_dilation().unwrap().d(), 1.0);
    }

    #[test]
    fn origin_must_be_an_equilibrium() {
        let err = ControlSystem::new("drift", 1, 1, |_, _, dx| dx[0] = 1.0).unwrap_err();
        assert_eq!(err, Error::OriginNotEquilibrium(1.0));
    }

    #[test]
    fn linear_system_from_matrices() {
        let params = SystemParams {
            a: Some(vec![vec![0.0, 1.0], vec![-1.0, 0.0]]),
            b: Some(vec![vec![0.0], vec![1.0]]),
            ..SystemParams::default()
        };
        let sys = builtin("linear", &params).unwrap();
        assert_eq!(sys.eval(&[1.0, 2.0], &[3.0]).unwrap(), vec![2.0, 2.0]);
        assert_eq!(sys.declared_dilation().unwrap().tau(), 0.0);
        let bad = SystemParams {
            a: Some(vec![vec![0.0, 1.0]]),
            b: Some(vec![vec![1.0]]),
            ..SystemParams::default()
        };
        assert!(builtin("linear", &bad).is_err());
    }

    #[test]
    fn eval_checks_dimensions() {
        let sys = builtin("driftless3", &no_params()).unwrap();
        assert!(sys.eval(&[1.0], &[0.0, 0.0]).is_err());
        assert!(sys.eval(&[1.0, 2.0, 3.0], &[0.0]).is_err());
    }
}
