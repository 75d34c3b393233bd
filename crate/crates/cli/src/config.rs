//! Scenario files: one TOML document per experiment.

use std::collections::BTreeMap;
use std::path::Path;

use hmpc::analysis::SampleSet;
use hmpc::homogeneity::SamplingPlan;
use hmpc::mpc::{MpcConfig, WarmStart};
use hmpc::ocp::{OcpSpec, SolverOptions};
use hmpc::{builtin, ControlSystem, DilationStructure, StageCost, SystemParams};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: String,
    /// Output directory; `--out` overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub x0: Vec<f64>,
    pub system: SystemSection,
    /// Overrides the system's declared dilation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dilation: Option<DilationSection>,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub ocp: OcpSection,
    #[serde(default)]
    pub mpc: MpcSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisSection>,
    #[serde(default)]
    pub homogeneity: HomogeneitySection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DilationSection {
    pub r: Vec<f64>,
    pub s: Vec<f64>,
    pub tau: f64,
    /// Cost degree; canonical when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSection {
    /// Built from the scenario's dilation.
    #[default]
    Homogeneous,
    Weighted { qx: Vec<f64>, qu: Vec<f64> },
    /// Identity weights where a matrix is omitted.
    Quadratic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        q: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r: Option<Vec<Vec<f64>>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcpSection {
    pub horizon: f64,
    pub segments: usize,
    pub substeps: usize,
    pub restarts: usize,
    pub seed: u64,
    pub solver: SolverSection,
}

impl Default for OcpSection {
    fn default() -> Self {
        Self {
            horizon: 3.0,
            segments: 12,
            substeps: 4,
            restarts: 8,
            seed: 0,
            solver: SolverSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub gtol_abs: f64,
    pub gtol_rel: f64,
    pub max_iterations: usize,
    pub memory: usize,
    pub fd_step: f64,
    pub ftol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let base = SolverOptions::default();
        Self {
            gtol_abs: 0.0,
            gtol_rel: base.gtol_rel,
            max_iterations: base.max_iterations,
            memory: base.memory,
            fd_step: base.fd_step,
            ftol: base.ftol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcSection {
    pub delta: f64,
    pub steps: usize,
    pub plant_substeps: usize,
    pub warm_start: WarmStart,
    /// Restarts per MPC iteration.
    pub restarts: usize,
    pub convergence_radius: f64,
    pub stall_tolerance: f64,
    /// Horizons of a sweep; empty means the OCP horizon only.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub horizons: Vec<f64>,
}

impl Default for MpcSection {
    fn default() -> Self {
        let base = MpcConfig::default();
        Self {
            delta: base.delta,
            steps: base.steps,
            plant_substeps: base.plant_substeps,
            warm_start: base.warm_start,
            restarts: base.restarts,
            convergence_radius: base.convergence_radius,
            stall_tolerance: base.stall_tolerance,
            horizons: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub set: SampleSet,
    pub t_grid: Vec<f64>,
    /// Ignored for explicit point sets.
    #[serde(default)]
    pub samples: usize,
    #[serde(default)]
    pub restarts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct HomogeneitySection {
    pub plan: SamplingPlan,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub approximation: Option<ApproximationSection>,
}

/// Certify `approximation` as a homogeneous approximation of the system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproximationSection {
    pub system: String,
    pub rho: f64,
    pub eta: f64,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("bad config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn params(&self) -> SystemParams {
        SystemParams {
            scalars: self.system.params.clone(),
            a: self.system.a.clone(),
            b: self.system.b.clone(),
        }
    }

    pub fn system(&self) -> Result<ControlSystem, CliError> {
        Ok(builtin(&self.system.name, &self.params())?)
    }

    /// The configured dilation, else the system's declared one.
    pub fn dilation(&self, sys: &ControlSystem) -> Result<DilationStructure, CliError> {
        match &self.dilation {
            Some(d) => Ok(match d.d {
                Some(deg) => DilationStructure::with_exponent(d.r.clone(), d.s.clone(), d.tau, deg)?,
                None => DilationStructure::new(d.r.clone(), d.s.clone(), d.tau)?,
            }),
            None => sys.declared_dilation().cloned().ok_or_else(|| {
                CliError::Usage(format!("system `{}` declares no dilation; add [dilation]", sys.label()))
            }),
        }
    }

    pub fn cost(&self, sys: &ControlSystem) -> Result<StageCost, CliError> {
        let (n, m) = (sys.state_dim(), sys.control_dim());
        Ok(match &self.cost {
            CostSection::Homogeneous => StageCost::homogeneous(&self.dilation(sys)?),
            CostSection::Weighted { qx, qu } => {
                StageCost::weighted_homogeneous(&self.dilation(sys)?, qx.clone(), qu.clone())?
            }
            CostSection::Quadratic { q, r } => {
                let eye = |k: usize| (0..k).map(|i| (0..k).map(|j| f64::from(u8::from(i == j))).collect()).collect();
                let q = q.clone().unwrap_or_else(|| eye(n));
                let r = r.clone().unwrap_or_else(|| eye(m));
                StageCost::quadratic_from_rows(&q, &r)?
            }
        })
    }

    pub fn solver_options(&self) -> SolverOptions {
        let s = &self.ocp.solver;
        SolverOptions {
            gtol_abs: s.gtol_abs,
            gtol_rel: s.gtol_rel,
            max_iterations: s.max_iterations,
            memory: s.memory,
            fd_step: s.fd_step,
            ftol: s.ftol,
            seed: self.ocp.seed,
        }
    }

    pub fn ocp_spec(&self) -> Result<OcpSpec, CliError> {
        let sys = self.system()?;
        let cost = self.cost(&sys)?;
        Ok(OcpSpec::new(sys, cost, self.ocp.horizon, self.ocp.segments)?
            .with_substeps(self.ocp.substeps)?
            .with_options(self.solver_options()))
    }

    pub fn mpc_config(&self) -> MpcConfig {
        MpcConfig {
            horizon: self.ocp.horizon,
            delta: self.mpc.delta,
            steps: self.mpc.steps,
            segments: self.ocp.segments,
            substeps: self.ocp.substeps,
            plant_substeps: self.mpc.plant_substeps,
            warm_start: self.mpc.warm_start,
            restarts: self.mpc.restarts,
            convergence_radius: self.mpc.convergence_radius,
            stall_tolerance: self.mpc.stall_tolerance,
            solver: self.solver_options(),
        }
    }

    /// `x0`, checked against the system dimension.
    pub fn initial_state(&self, sys: &ControlSystem) -> Result<Vec<f64>, CliError> {
        if self.x0.len() != sys.state_dim() {
            return Err(CliError::Usage(format!(
                "x0 has {} entries, system `{}` has {} states",
                self.x0.len(),
                sys.label(),
                sys.state_dim()
            )));
        }
        Ok(self.x0.clone())
    }

    /// Applies a `--seed` override to every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.ocp.seed = seed;
        self.homogeneity.plan.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FULL: &str = r#"
id = "demo"
x0 = [0.0, 0.2, 0.0]

[system]
name = "driftless3"

[cost]
kind = "quadratic"

[ocp]
horizon = 2.0
segments = 8
restarts = 0

[mpc]
steps = 20
warm_start = "zero"

[analysis]
t_grid = [1.0, 2.0]
samples = 4

[analysis.set]
kind = "dilated_annulus"
c1 = 0.1
c2 = 1.0
"#;

    #[test]
    fn parses_and_builds() {
        let cfg = ScenarioConfig::from_toml(FULL).unwrap();
        assert_eq!(cfg.mpc.warm_start, WarmStart::Zero);
        let spec = cfg.ocp_spec().unwrap();
        assert_eq!(spec.segments, 8);
        assert_eq!(cfg.mpc_config().segments, 8);
        assert_eq!(cfg.initial_state(&spec.sys).unwrap(), vec![0.0, 0.2, 0.0]);
        assert_eq!(spec.cost.eval(&[1.0, 0.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = FULL.replace("restarts = 0", "restart = 0");
        assert!(matches!(ScenarioConfig::from_toml(&text), Err(CliError::Usage(_))));
    }

    #[test]
    fn wrong_state_length_is_a_usage_error() {
        let cfg = ScenarioConfig::from_toml("id = \"x\"\nx0 = [1.0]\n[system]\nname = \"driftless3\"\n").unwrap();
        let sys = cfg.system().unwrap();
        assert!(matches!(cfg.initial_state(&sys), Err(CliError::Usage(_))));
    }

    fn finite() -> impl Strategy<Value = f64> {
        -1e6f64..1e6
    }

    fn config() -> impl Strategy<Value = ScenarioConfig> {
        (
            "[a-z][a-z0-9-]{0,12}",
            prop::collection::vec(finite(), 0..4),
            prop::option::of(prop::collection::vec(finite(), 1..3)),
            0.01f64..10.0,
            1usize..64,
            0..=i64::MAX as u64,
            prop::option::of((1e-3f64..5.0, prop::collection::vec(0.1f64..4.0, 1..4))),
            prop::sample::select(vec![WarmStart::ShiftAndHold, WarmStart::Zero, WarmStart::Previous]),
        )
            .prop_map(|(id, x0, qx, horizon, segments, seed, analysis, warm_start)| {
                let mut cfg = ScenarioConfig::from_toml(&format!("id = \"{id}\"\n[system]\nname = \"driftless3\"\n")).unwrap();
                cfg.x0 = x0;
                if let Some(qx) = qx {
                    cfg.cost = CostSection::Weighted { qx: qx.clone(), qu: qx };
                }
                cfg.ocp.horizon = horizon;
                cfg.ocp.segments = segments;
                cfg.ocp.seed = seed;
                cfg.mpc.warm_start = warm_start;
                cfg.analysis = analysis.map(|(c1, t_grid)| AnalysisSection {
                    set: SampleSet::DilatedAnnulus { c1, c2: c1 * 2.0 },
                    t_grid,
                    samples: 3,
                    restarts: 1,
                });
                cfg
            })
    }

    proptest! {
        #[test]
        fn toml_round_trip_is_lossless(cfg in config()) {
            let text = cfg.to_toml();
            let back = ScenarioConfig::from_toml(&text).unwrap();
            prop_assert_eq!(&back, &cfg);
            prop_assert_eq!(back.to_toml(), text);
        }
    }
}
