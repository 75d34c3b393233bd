use hmpc::analysis::{check_bounded_extension, check_remark2_condition, estimate_growth, SampleSet};
use hmpc::ocp::{OcpSpec, SolverOptions};
use hmpc::{builtin, DilationStructure, StageCost, SystemParams};

const SILVER: f64 = 1.0 + std::f64::consts::SQRT_2;

fn example2(k: f64, segment: f64) -> OcpSpec {
    let sys = builtin("scalar_power", &SystemParams::scalar("k", k)).unwrap();
    let r = 1.0 / k;
    let ds = DilationStructure::with_exponent(vec![r], vec![1.0], 1.0 - r, 2.0).unwrap();
    OcpSpec::new(sys, StageCost::homogeneous(&ds), segment, 1)
        .unwrap()
        .with_options(SolverOptions {
            gtol_abs: 0.0,
            max_iterations: 2000,
            ..SolverOptions::default()
        })
}

/// `V/ℓ* = 2(1+√2)/(k+1)·|x|^{1−k}` for the cost `|x|^{2k} + u²`.
fn closed_ratio(k: f64, x: f64) -> f64 {
    2.0 * SILVER / (k + 1.0) * x.abs().powf(1.0 - k)
}

#[test]
fn fractional_power_sup_grows_with_the_set() {
    let spec = example2(0.5, 0.125);
    for radius in [1.0, 2.0, 4.0] {
        let set = SampleSet::Box { half_widths: vec![radius], exclude: 0.01 * radius };
        let table = estimate_growth(&spec, &set, &[2.0, 4.0, 8.0], 16, 0).unwrap();
        let oracle = closed_ratio(0.5, radius);
        assert!((table.sup() / oracle - 1.0).abs() < 0.1, "R = {radius}: {} vs {oracle}", table.sup());
        assert!(table.near_origin_slope > 0.4, "{}", table.near_origin_slope);
        assert!(!table.unbounded_trend);
    }
}

#[test]
fn quadratic_power_blows_up_near_the_origin() {
    let spec = example2(2.0, 1.0);
    let grid: Vec<f64> = (1..=8).map(|i| 2f64.powi(i)).collect();
    let set = SampleSet::Points { points: vec![vec![0.1], vec![0.01]] };
    let table = estimate_growth(&spec, &set, &grid, 0, 0).unwrap();
    let last = table.ratios.last().unwrap();
    for (x, r) in [0.1, 0.01].iter().zip(last) {
        assert!((r / closed_ratio(2.0, *x) - 1.0).abs() < 0.05, "x = {x}: {r}");
    }
    let growth = last[1] / last[0];
    assert!((7.0..=13.0).contains(&growth), "{growth}");
    assert!(table.unbounded_trend);
    assert_eq!(table.monotone_violations, 0);
}

#[test]
fn damped_ratio_stays_below_the_free_decay_bound() {
    let sys = builtin("damped1d", &SystemParams::default()).unwrap();
    let ds = DilationStructure::with_exponent(vec![1.0], vec![1.0], 1.0, 1.0).unwrap();
    let spec = OcpSpec::new(sys, StageCost::homogeneous(&ds), 0.05, 1).unwrap();
    let xs: Vec<Vec<f64>> = [0.5, -1.0, 2.0].iter().map(|v| vec![*v]).collect();
    let report = check_remark2_condition(&spec, &[0.1, 1.0, 10.0], &xs, 0).unwrap();
    assert!(report.pass);
    for e in &report.entries {
        // u ≡ 0 gives x(s) = x/(1 + |x| s), so V_t(x) ≤ ln(1 + |x| t)
        let a = e.x[0].abs();
        let free = (1.0 + a * e.t).ln() / (a * e.t);
        assert!(e.ratio <= free * (1.0 + 1e-6), "{e:?} vs {free}");
    }
    assert_eq!(report.to_csv().lines().next(), Some("t,x,ratio"));
}

#[test]
fn driftless_ball_respects_the_extension_bound() {
    let sys = builtin("driftless3", &SystemParams::default()).unwrap();
    let ds = sys.declared_dilation().unwrap().clone();
    let spec = OcpSpec::new(sys, StageCost::homogeneous(&ds), 0.25, 1).unwrap();
    let alpha: f64 = 0.5;
    let grid = [0.5, 1.0, 2.0];
    let ring = SampleSet::DilatedAnnulus { c1: alpha.powf(ds.d()), c2: 1.0 };
    let annulus = estimate_growth(&spec, &ring, &grid, 8, 2).unwrap();
    let ball = estimate_growth(&spec, &SampleSet::DilatedBall { radius: 1.0 }, &grid, 8, 2).unwrap();
    let bound = check_bounded_extension(&annulus, alpha, ds.d(), grid.len() - 1).unwrap();
    assert!(ball.sup() <= bound, "{} > {bound}", ball.sup());
    assert!(annulus.sup().is_finite() && annulus.sup() > 0.0);
}

#[test]
fn driftless_ratio_is_invariant_under_dilation() {
    let sys = builtin("driftless3", &SystemParams::default()).unwrap();
    let ds = sys.declared_dilation().unwrap().clone();
    let spec = OcpSpec::new(sys, StageCost::homogeneous(&ds), 0.25, 1).unwrap();
    let x = vec![0.4, 0.3, -0.5];
    let y = ds.dilate_state(0.3, &x).unwrap();
    let table = estimate_growth(&spec, &SampleSet::Points { points: vec![x, y] }, &[1.5], 0, 4).unwrap();
    let r = &table.ratios[0];
    assert!((r[1] / r[0] - 1.0).abs() < 0.02, "{r:?}");
}
