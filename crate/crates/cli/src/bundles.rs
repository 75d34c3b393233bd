//! Named reproduction bundles. Each runs a fixed set of shipped scenarios
//! into subdirectories of `out` and writes `summary.csv` with one verdict
//! row per check.

use std::path::Path;

use hmpc::analysis::{check_remark2_condition, GrowthTable, SampleSet};
use hmpc::homogeneity::{check_trajectory_identity, DilationStructure};
use hmpc::mpc::{HorizonSweep, Verdict};
use hmpc::sampling::ScrambledHalton;
use hmpc::systems::{fmt_f64, integrate, steer_driftless_to_origin};
use hmpc::{check_cost_homogeneity, ControlSignal, ControlSystem, StageCost};
use serde::Serialize;

use crate::commands::{cmd_check_homogeneity, cmd_estimate_growth, cmd_run_mpc, cmd_solve_ocp, par_map, MpcOutcome};
use crate::config::{DilationSection, ScenarioConfig};
use crate::{write_file, CliError};

pub const BUNDLES: [&str; 5] = [
    "example1-dichotomy",
    "example2-ratios",
    "robot-stabilization",
    "approximation-certificates",
    "remark2-condition",
];

/// Shipped scenarios, by id.
pub const SCENARIOS: [(&str, &str); 10] = [
    ("damped-remark2", include_str!("../../../scenarios/damped-remark2.toml")),
    ("driftless-homogeneous", include_str!("../../../scenarios/driftless-homogeneous.toml")),
    ("driftless-quadratic-stall", include_str!("../../../scenarios/driftless-quadratic-stall.toml")),
    ("driftless3-homogeneity", include_str!("../../../scenarios/driftless3-homogeneity.toml")),
    ("robot-approximation", include_str!("../../../scenarios/robot-approximation.toml")),
    ("robot-homogeneous", include_str!("../../../scenarios/robot-homogeneous.toml")),
    ("robot-not-homogeneous", include_str!("../../../scenarios/robot-not-homogeneous.toml")),
    ("scalar-k05-growth", include_str!("../../../scenarios/scalar-k05-growth.toml")),
    ("scalar-k1-growth", include_str!("../../../scenarios/scalar-k1-growth.toml")),
    ("scalar-k2-nearzero", include_str!("../../../scenarios/scalar-k2-nearzero.toml")),
];

pub fn scenario(id: &str) -> Result<ScenarioConfig, CliError> {
    let (_, text) = SCENARIOS
        .iter()
        .find(|(name, _)| *name == id)
        .ok_or_else(|| CliError::Usage(format!("unknown scenario `{id}`")))?;
    ScenarioConfig::from_toml(text)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub criterion: u8,
    pub check: String,
    pub value: f64,
    pub expected: String,
    pub pass: bool,
}

impl SummaryRow {
    fn new(criterion: u8, check: impl Into<String>, value: f64, expected: impl Into<String>, pass: bool) -> Self {
        Self { criterion, check: check.into(), value, expected: expected.into(), pass }
    }

    fn at_most(criterion: u8, check: impl Into<String>, value: f64, bound: f64) -> Self {
        Self::new(criterion, check, value, format!("<= {bound:e}"), value <= bound)
    }

    fn within(criterion: u8, check: impl Into<String>, value: f64, target: f64, rel: f64) -> Self {
        let pass = ((value - target) / target).abs() <= rel;
        Self::new(criterion, check, value, format!("{target:.6} +- {}%", rel * 100.0), pass)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BundleReport {
    pub name: String,
    pub rows: Vec<SummaryRow>,
}

impl BundleReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    /// Verdict over all rows of one criterion; `None` if the bundle has none.
    pub fn criterion(&self, c: u8) -> Option<bool> {
        let rows: Vec<&SummaryRow> = self.rows.iter().filter(|r| r.criterion == c).collect();
        (!rows.is_empty()).then(|| rows.iter().all(|r| r.pass))
    }

    /// `criterion,check,value,expected,result`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("criterion,check,value,expected,result\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.criterion,
                r.check,
                fmt_f64(r.value),
                r.expected,
                if r.pass { "PASS" } else { "FAIL" }
            ));
        }
        out
    }
}

/// Runs bundle `name` into `out`. `seed` overrides every scenario's seed.
pub fn reproduce(name: &str, out: &Path, seed: Option<u64>) -> Result<BundleReport, CliError> {
    let load = |id: &str| -> Result<ScenarioConfig, CliError> {
        let cfg = scenario(id)?;
        Ok(match seed {
            Some(s) => cfg.with_seed(s),
            None => cfg,
        })
    };
    let rows = match name {
        "example1-dichotomy" => example1(out, &load)?,
        "example2-ratios" => example2(out, &load)?,
        "robot-stabilization" => {
            let cfg = load("robot-homogeneous")?;
            let sweep = sweep(&cfg, &out.join("robot"))?;
            converged_somewhere(&sweep, "robot")
        }
        "approximation-certificates" => certificates(out, &load)?,
        "remark2-condition" => remark2(out, &load("damped-remark2")?)?,
        other => {
            return Err(CliError::Usage(format!(
                "unknown bundle `{other}`; expected one of {}",
                BUNDLES.join(", ")
            )))
        }
    };
    let report = BundleReport { name: name.to_string(), rows };
    write_file(&out.join("summary.csv"), &report.to_csv())?;
    Ok(report)
}

type Loader<'a> = dyn Fn(&str) -> Result<ScenarioConfig, CliError> + Sync + 'a;

fn sweep(cfg: &ScenarioConfig, dir: &Path) -> Result<HorizonSweep, CliError> {
    match cmd_run_mpc(cfg, dir)?.1 {
        MpcOutcome::Sweep(s) => Ok(s),
        MpcOutcome::Single(_) => Err(CliError::Usage(format!("scenario `{}` sets no horizons", cfg.id))),
    }
}

/// Converged at some tested horizon with at most 5% decrease violations.
fn converged_somewhere(sweep: &HorizonSweep, label: &str) -> Vec<SummaryRow> {
    let good = sweep
        .rows
        .iter()
        .filter(|r| r.verdict == Verdict::Converged && r.decrease_violations * 20 <= r.steps_run)
        .map(|r| r.horizon)
        .min_by(f64::total_cmp);
    vec![SummaryRow::new(
        5,
        format!("{label} smallest converged horizon"),
        good.unwrap_or(f64::NAN),
        "some tested horizon",
        good.is_some(),
    )]
}

fn example1(out: &Path, load: &Loader) -> Result<Vec<SummaryRow>, CliError> {
    let stall_cfg = load("driftless-quadratic-stall")?;
    let homogeneous_cfg = load("driftless-homogeneous")?;
    let (stall, (homogeneous, steering)) = rayon::join(
        || stall_rows(&stall_cfg, &out.join("quadratic")),
        || {
            rayon::join(
                || homogeneous_rows(&homogeneous_cfg, &out.join("homogeneous")),
                || steering_rows(&homogeneous_cfg, &out.join("steering")),
            )
        },
    );
    Ok([stall?, homogeneous?, steering?].concat())
}

fn stall_rows(cfg: &ScenarioConfig, dir: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let segment = cfg.ocp.horizon / cfg.ocp.segments as f64;
    let solves = par_map(&cfg.mpc.horizons, |&h| {
        let mut one = cfg.clone();
        one.ocp.horizon = h;
        one.ocp.segments = (h / segment).round() as usize;
        one.mpc.horizons.clear();
        cmd_solve_ocp(&one, &dir.join(format!("solve_T{h}"))).map(|(_, sol)| (h, sol.gradient_norm))
    });
    let sweep = sweep(cfg, dir)?;
    let mut rows = Vec::new();
    for solve in solves {
        let (h, grad) = solve?;
        rows.push(SummaryRow::at_most(4, format!("gradient at zero T={h}"), grad, 1e-8));
    }
    for (row, run) in sweep.rows.iter().zip(&sweep.runs) {
        let x0 = &run.states[0];
        let moved = run
            .states
            .iter()
            .map(|x| x.iter().zip(x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let steps = run.applied.len();
        rows.push(SummaryRow::new(
            4,
            format!("displacement over {steps} steps T={}", row.horizon),
            moved,
            format!("<= 1e-6 over {} steps", cfg.mpc.steps),
            moved <= 1e-6 && steps == cfg.mpc.steps,
        ));
    }
    Ok(rows)
}

fn homogeneous_rows(cfg: &ScenarioConfig, dir: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let sweep = sweep(cfg, dir)?;
    let (row, _) = sweep
        .rows
        .iter()
        .zip(&sweep.runs)
        .max_by(|a, b| a.0.horizon.total_cmp(&b.0.horizon))
        .ok_or_else(|| CliError::Usage("empty sweep".into()))?;
    let ok = row.verdict == Verdict::Converged;
    let share = row.decrease_violations as f64 / row.steps_run.max(1) as f64;
    Ok(vec![
        SummaryRow::new(
            5,
            format!("driftless steps to converge at largest horizon T={}", row.horizon),
            row.steps_run as f64,
            "converged",
            ok,
        ),
        SummaryRow::at_most(5, format!("driftless violation share T={}", row.horizon), share, 0.05),
    ])
}

const STEERING_STAGE: f64 = 1.0;
const STEERING_SAMPLES: usize = 100;

/// Open-loop steering from sampled states: exactness of the construction and
/// its cost from the unit dilated ball.
fn steering_rows(cfg: &ScenarioConfig, dir: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let sys = cfg.system()?;
    let ds = cfg.dilation(&sys)?;
    let cost = cfg.cost(&sys)?;
    let seed = cfg.ocp.seed;
    let starts = ScrambledHalton::new(3, seed).symmetric_box(STEERING_SAMPLES, 2.0);
    let ball = SampleSet::DilatedBall { radius: 1.0 }.sample(&ds, &cost, STEERING_SAMPLES, seed)?;
    let run = |x0: &Vec<f64>| -> Result<(f64, f64), CliError> {
        let u = steer_driftless_to_origin(&[x0[0], x0[1], x0[2]], STEERING_STAGE)?;
        let traj = integrate(&sys, x0, &u, u.end(), STEERING_STAGE / 64.0, Some(&cost))?;
        let end = traj.final_state().iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok((end, traj.final_cost()))
    };
    let mut csv = String::from("set,x1,x2,x3,final_norm,cost\n");
    let mut worst_end = 0.0f64;
    let mut worst_cost = 0.0f64;
    for (label, points) in [("box", &starts), ("ball", &ball)] {
        for x0 in points {
            let (end, c) = run(x0)?;
            if label == "box" {
                worst_end = worst_end.max(end);
            } else {
                worst_cost = if c.is_finite() { worst_cost.max(c) } else { f64::INFINITY };
            }
            csv.push_str(&format!(
                "{label},{},{},{},{},{}\n",
                fmt_f64(x0[0]),
                fmt_f64(x0[1]),
                fmt_f64(x0[2]),
                fmt_f64(end),
                fmt_f64(c)
            ));
        }
    }
    write_file(&dir.join("steering.csv"), &csv)?;
    Ok(vec![
        SummaryRow::at_most(9, "steering final norm", worst_end, 1e-8),
        SummaryRow::new(
            9,
            "steering cost on the unit dilated ball",
            worst_cost,
            "finite",
            worst_cost.is_finite() && ball.len() == STEERING_SAMPLES,
        ),
    ])
}

const SILVER: f64 = 1.0 + std::f64::consts::SQRT_2;

/// `V/ℓ*` of the scalar power system `ẋ = |x|^k sign x + u`, cost `|x|^{2k} + u²`.
fn closed_ratio(k: f64, x: f64) -> f64 {
    2.0 * SILVER / (k + 1.0) * x.abs().powf(1.0 - k)
}

fn example2(out: &Path, load: &Loader) -> Result<Vec<SummaryRow>, CliError> {
    let k1 = load("scalar-k1-growth")?;
    let k05 = load("scalar-k05-growth")?;
    let k2 = load("scalar-k2-nearzero")?;
    let radii = [1.0, 2.0, 4.0];
    let k05_sets: Vec<ScenarioConfig> = radii
        .iter()
        .map(|&r| {
            let mut cfg = k05.clone();
            if let Some(a) = cfg.analysis.as_mut() {
                a.set = SampleSet::Box { half_widths: vec![r], exclude: 0.01 * r };
            }
            cfg
        })
        .collect();

    enum Job<'a> {
        Solve(&'a ScenarioConfig, &'static str),
        Growth(&'a ScenarioConfig, String),
    }
    let mut jobs = vec![
        Job::Solve(&k1, "k1/solve"),
        Job::Solve(&k05, "k05/solve"),
        Job::Growth(&k1, "k1/growth".into()),
        Job::Growth(&k2, "k2/growth".into()),
    ];
    for (cfg, r) in k05_sets.iter().zip(radii) {
        jobs.push(Job::Growth(cfg, format!("k05/growth_R{r}")));
    }
    enum Done {
        Value(f64),
        Table(Box<GrowthTable>),
    }
    let done = par_map(&jobs, |job| match job {
        Job::Solve(cfg, dir) => cmd_solve_ocp(cfg, &out.join(dir)).map(|(_, s)| Done::Value(s.objective)),
        Job::Growth(cfg, dir) => cmd_estimate_growth(cfg, &out.join(dir)).map(|(_, t)| Done::Table(Box::new(t))),
    });
    let mut values = Vec::new();
    let mut tables = Vec::new();
    for d in done {
        match d? {
            Done::Value(v) => values.push(v),
            Done::Table(t) => tables.push(*t),
        }
    }

    let mut rows = vec![
        SummaryRow::within(3, "value k=1 x0=1 t=8", values[0], SILVER, 0.02),
        SummaryRow::within(3, "value k=0.5 x0=1 t=8", values[1], closed_ratio(0.5, 1.0), 0.05),
        SummaryRow::within(7, "sup B k=1", tables[0].sup(), SILVER, 0.05),
    ];
    for (table, r) in tables[2..].iter().zip(radii) {
        rows.push(SummaryRow::within(7, format!("sup B k=0.5 R={r}"), table.sup(), closed_ratio(0.5, r), 0.1));
    }
    let near = &tables[1];
    let last = near.ratios.last().map(Vec::as_slice).unwrap_or(&[]);
    let growth = match last {
        [a, b] => b / a,
        _ => f64::NAN,
    };
    rows.push(SummaryRow::new(
        7,
        "ratio growth k=2 from |x|=0.1 to 0.01",
        growth,
        "10 +- 30%",
        (7.0..=13.0).contains(&growth),
    ));
    rows.push(SummaryRow::new(
        7,
        "unbounded trend flagged k=2",
        f64::from(u8::from(near.unbounded_trend)),
        "1",
        near.unbounded_trend,
    ));
    Ok(rows)
}

fn certificates(out: &Path, load: &Loader) -> Result<Vec<SummaryRow>, CliError> {
    let mut rows = Vec::new();
    let (_, outcome) = cmd_check_homogeneity(&load("robot-approximation")?, &out.join("robot-approximation"))?;
    let cert = outcome
        .certificate
        .ok_or_else(|| CliError::Usage("robot-approximation configures no approximation".into()))?;
    rows.push(SummaryRow::new(6, "fitted M rho=1 eta=2", cert.m, "<= 5e-1 and verified", cert.m <= 0.5 && cert.verified));
    rows.push(SummaryRow::new(6, "component 3 residual", cert.per_component_m[2], "0", cert.per_component_m[2] == 0.0));

    let base = load("driftless3-homogeneity")?;
    let mut identities = Vec::new();
    for (s, tau) in [(1.0, 0.0), (1.5, 0.5), (0.5, -0.5)] {
        let mut cfg = base.clone();
        cfg.dilation = Some(DilationSection { r: vec![1.0, 2.0, 1.0], s: vec![s, s], tau, d: None });
        identities.push((format!("driftless3 tau={tau}"), format!("driftless3_tau{tau}"), cfg));
    }
    for k in [0.5, 1.0, 2.0] {
        let mut cfg = base.clone();
        cfg.system.name = "scalar_power".into();
        cfg.system.params.insert("k".into(), k);
        cfg.dilation = Some(DilationSection { r: vec![1.0 / k], s: vec![1.0], tau: 1.0 - 1.0 / k, d: None });
        identities.push((format!("scalar_power k={k}"), format!("scalar_k{k}"), cfg));
    }
    let checked = par_map(&identities, |(_, dir, cfg)| cmd_check_homogeneity(cfg, &out.join("identities").join(dir)));
    for ((label, _, _), res) in identities.iter().zip(checked) {
        let (_, o) = res?;
        rows.push(SummaryRow::new(1, format!("{label} residual"), o.report.max_residual, "<= 1e-9", o.report.pass && o.report.max_residual <= 1e-9));
    }

    let driftless = base.system()?;
    let mut k05 = base.clone();
    k05.system.name = "scalar_power".into();
    k05.system.params.insert("k".into(), 0.5);
    let scalar = k05.system()?;
    let seed = base.ocp.seed;
    let results = par_map(&[(&driftless, "driftless3"), (&scalar, "scalar_power k=0.5")], |(sys, label)| {
        scaling_instances(sys, label, seed)
    });
    let mut csv = String::from("system,instance,alpha,norm_error,cost_error,trajectory_error\n");
    for res in results {
        let (label, lines, worst) = res?;
        csv.push_str(&lines);
        for (what, v) in ["dilated norm", "stage cost", "trajectory"].iter().zip(worst) {
            rows.push(SummaryRow::at_most(2, format!("{label} {what} scaling"), v, 1e-6));
        }
    }
    write_file(&out.join("identities").join("scaling.csv"), &csv)?;
    Ok(rows)
}

const SCALING_INSTANCES: usize = 100;
const SCALING_SEGMENTS: usize = 4;

/// Random `(x0, u, α)` instances with `α ∈ [1/2, 2]` and `u` on `[0, 1]`:
/// dilated norm scaling, stage-cost scaling along trajectories and the
/// trajectory identity. Returns CSV lines and the worst error of each.
fn scaling_instances(sys: &ControlSystem, label: &str, seed: u64) -> Result<(String, String, [f64; 3]), CliError> {
    let ds: DilationStructure = sys
        .declared_dilation()
        .cloned()
        .ok_or_else(|| CliError::Usage(format!("{label} declares no dilation")))?;
    let cost = StageCost::homogeneous(&ds);
    let (n, m) = (sys.state_dim(), sys.control_dim());
    let dim = n + m * SCALING_SEGMENTS + 1;
    let points = ScrambledHalton::new(dim, seed).symmetric_box(SCALING_INSTANCES, 1.0);
    let mut lines = String::new();
    let mut worst = [0.0f64; 3];
    for (i, p) in points.iter().enumerate() {
        let x0 = &p[..n];
        let values: Vec<Vec<f64>> = p[n..dim - 1].chunks(m).map(<[f64]>::to_vec).collect();
        let u = ControlSignal::uniform(1.0, values)?;
        let alpha = 2f64.powf(p[dim - 1]);
        let norm = ds.dilated_norm(x0)?;
        let scaled = ds.dilated_norm(&ds.dilate_state(alpha, x0)?)?;
        let norm_err = (scaled - alpha * norm).abs() / norm.max(f64::MIN_POSITIVE);
        let cost_err = check_cost_homogeneity(sys, &cost, &ds, x0, &u, alpha, 40, 1e-3)?.max_ratio_error;
        let horizon = u.end() / alpha.powf(ds.tau());
        let traj_err = check_trajectory_identity(sys, &ds, x0, &u, alpha, horizon, 1e-3)?.max_deviation;
        for (w, e) in worst.iter_mut().zip([norm_err, cost_err, traj_err]) {
            *w = if e.is_nan() { f64::INFINITY } else { w.max(e) };
        }
        lines.push_str(&format!(
            "{label},{i},{},{},{},{}\n",
            fmt_f64(alpha),
            fmt_f64(norm_err),
            fmt_f64(cost_err),
            fmt_f64(traj_err)
        ));
    }
    Ok((label.to_string(), lines, worst))
}

fn remark2(out: &Path, cfg: &ScenarioConfig) -> Result<Vec<SummaryRow>, CliError> {
    let analysis = cfg
        .analysis
        .as_ref()
        .ok_or_else(|| CliError::Usage(format!("scenario `{}` has no [analysis] section", cfg.id)))?;
    let SampleSet::Points { points } = &analysis.set else {
        return Err(CliError::Usage("the ratio check needs an explicit point set".into()));
    };
    let spec = cfg.ocp_spec()?;
    let report = check_remark2_condition(&spec, &analysis.t_grid, points, analysis.restarts)?;
    let dir = out.join("damped");
    write_file(&dir.join("ratios.csv"), &report.to_csv())?;
    crate::manifest::write_manifest(
        &dir,
        "reproduce",
        cfg,
        serde_json::json!({ "max_ratio": report.max_ratio, "pass": report.pass }),
    )?;
    Ok(vec![SummaryRow::new(8, "max V/(t l*)", report.max_ratio, "< 1", report.pass)])
}
