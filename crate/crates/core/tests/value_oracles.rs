use hmpc::ocp::{hjb_oracle_1d, objective, value_function, OcpSpec, SolverOptions};
use hmpc::systems::integrate;
use hmpc::{builtin, ControlSignal, DilationStructure, StageCost, SystemParams};

const SILVER: f64 = 1.0 + std::f64::consts::SQRT_2;

fn example2(k: f64, horizon: f64, segments: usize) -> OcpSpec {
    let sys = builtin("scalar_power", &SystemParams::scalar("k", k)).unwrap();
    let r = 1.0 / k;
    let ds = DilationStructure::with_exponent(vec![r], vec![1.0], 1.0 - r, 2.0).unwrap();
    OcpSpec::new(sys, StageCost::homogeneous(&ds), horizon, segments)
        .unwrap()
        .with_options(SolverOptions {
            gtol_abs: 0.0,
            max_iterations: 2000,
            ..SolverOptions::default()
        })
}

fn driftless(horizon: f64, segments: usize) -> (OcpSpec, DilationStructure) {
    let sys = builtin("driftless3", &SystemParams::default()).unwrap();
    let ds = sys.declared_dilation().unwrap().clone();
    let spec = OcpSpec::new(sys, StageCost::homogeneous(&ds), horizon, segments).unwrap();
    (spec, ds)
}

/// Composite Simpson rule for `∫_0^x V'(s) ds` with `V'(s) = 2(1+√2)|s|^k sign s`.
fn integrate_gradient(k: f64, x: f64) -> f64 {
    let n = 20_000;
    let h = x / n as f64;
    let dv = |s: f64| 2.0 * SILVER * s.abs().powf(k) * s.signum();
    let mut acc = dv(0.0) + dv(x);
    for i in 1..n {
        acc += dv(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

#[test]
fn closed_form_matches_the_integrated_gradient() {
    for k in [0.5, 1.0, 2.0, 3.0] {
        for x in [-2.0, -0.3, 0.7, 4.0] {
            let closed = hjb_oracle_1d(k, x);
            assert!((closed / integrate_gradient(k, x) - 1.0).abs() < 1e-6, "k = {k}, x = {x}");
        }
    }
    assert!((hjb_oracle_1d(1.0, 1.0) - SILVER).abs() < 1e-12);
    assert!((hjb_oracle_1d(0.5, 4.0) - 25.752).abs() < 1e-3);
    assert_eq!(hjb_oracle_1d(0.7, 0.0), 0.0);
}

#[test]
fn linear_quadratic_value_at_long_horizon() {
    let v = value_function(&example2(1.0, 8.0, 64), &[1.0], 8.0, 0).unwrap();
    assert!((v / SILVER - 1.0).abs() < 0.02, "{v}");
}

#[test]
fn fractional_power_value_matches_the_closed_form() {
    let spec = example2(0.5, 8.0, 64);
    let v = value_function(&spec, &[1.0], 8.0, 0).unwrap();
    let oracle = integrate_gradient(0.5, 1.0);
    assert!((v / oracle - 1.0).abs() < 0.05, "{v} vs {oracle}");
    let v4 = value_function(&spec, &[4.0], 8.0, 0).unwrap();
    assert!((v4 / integrate_gradient(0.5, 4.0) - 1.0).abs() < 0.05, "{v4}");
}

#[test]
fn value_is_nondecreasing_in_the_horizon() {
    let spec = example2(1.0, 0.125, 1);
    let mut last = 0.0;
    for t in [0.25, 0.5, 1.0, 2.0, 4.0] {
        let v = value_function(&spec, &[0.8], t, 0).unwrap();
        assert!(v >= last * (1.0 - 1e-4), "t = {t}: {v} < {last}");
        last = v;
    }
    let (spec, _) = driftless(0.25, 1);
    let mut last = 0.0;
    for t in [0.5, 1.0, 2.0] {
        let v = value_function(&spec, &[0.3, -0.2, 0.4], t, 4).unwrap();
        assert!(v >= last * (1.0 - 1e-4), "t = {t}: {v} < {last}");
        last = v;
    }
}

#[test]
fn dynamic_programming_inequality() {
    let (t1, t2) = (1.0, 2.0);
    let spec = example2(1.0, 0.125, 1);
    let whole = value_function(&spec, &[1.0], t1 + t2, 0).unwrap();
    for (i, u) in [-1.5, -0.5, 0.3].into_iter().enumerate() {
        let head = spec.with_horizon(t1).unwrap();
        let signal = ControlSignal::uniform(t1, vec![vec![u], vec![u * 0.5]]).unwrap();
        let first = objective(&head, &[1.0], &signal).unwrap();
        let reached = integrate(&head.sys, &[1.0], &signal, t1, 1e-3, None).unwrap();
        let rest = value_function(&spec, reached.final_state(), t2, 0).unwrap();
        assert!(whole <= (first + rest) * (1.0 + 1e-4), "case {i}: {whole} > {first} + {rest}");
    }
}

#[test]
fn driftless_value_scales_with_the_dilation() {
    let (spec, ds) = driftless(2.0, 16);
    let x0 = [0.3, -0.2, 0.4];
    let alpha = 0.5;
    let v = value_function(&spec, &x0, 2.0, 4).unwrap();
    let scaled = value_function(&spec, &ds.dilate_state(alpha, &x0).unwrap(), 2.0, 4).unwrap();
    let expected = alpha.powf(ds.d()) * v;
    assert!((scaled / expected - 1.0).abs() < 0.02, "{scaled} vs {expected}");
}

/// Exact flow of `driftless3` under a constant control, with the running
/// cost `x1⁴ + x2² + x3⁴ + u1⁴ + u2⁴` integrated by 5-point Gauss-Legendre
/// (exact for the degree-4 polynomial integrand).
fn exact_driftless_cost(x0: [f64; 3], u: &[[f64; 2]], h: f64) -> f64 {
    let nodes = [
        (0.0, 128.0 / 225.0),
        (-0.538_469_310_105_683, 0.478_628_670_499_366_5),
        (0.538_469_310_105_683, 0.478_628_670_499_366_5),
        (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
        (0.906_179_845_938_664, 0.236_926_885_056_189_1),
    ];
    let flow = |x: [f64; 3], v: [f64; 2], s: f64| {
        [x[0] + v[0] * s, x[1] + v[0] * (x[2] * s + v[1] * s * s / 2.0), x[2] + v[1] * s]
    };
    let mut x = x0;
    let mut cost = 0.0;
    for v in u {
        for (z, w) in nodes {
            let y = flow(x, *v, h / 2.0 * (z + 1.0));
            cost += w * h / 2.0 * (y[0].powi(4) + y[1].powi(2) + y[2].powi(4) + v[0].powi(4) + v[1].powi(4));
        }
        x = flow(x, *v, h);
    }
    cost
}

#[test]
fn shooting_objective_matches_an_exact_flow() {
    let (spec, _) = driftless(2.0, 4);
    let u = [[0.4, -0.3], [-1.2, 0.8], [0.0, 0.5], [0.9, -1.1]];
    let signal = ControlSignal::uniform(2.0, u.iter().map(|v| v.to_vec()).collect()).unwrap();
    let x0 = [0.5, -0.4, 0.3];
    let j = objective(&spec, &x0, &signal).unwrap();
    let oracle = exact_driftless_cost(x0, &u, 0.5);
    assert!((j / oracle - 1.0).abs() < 1e-5, "{j} vs {oracle}");
}

#[test]
fn riccati_value_on_a_short_horizon() {
    // P(t) = 1 + √2 tanh(√2 t − atanh(1/√2)) solves the Riccati equation of
    // ẋ = x + u with cost x² + u² and P(0) = 0.
    let t = 1.5;
    let p = 1.0 + 2f64.sqrt() * (2f64.sqrt() * t - (1.0 / 2f64.sqrt()).atanh()).tanh();
    let v = value_function(&example2(1.0, t, 48), &[0.6], t, 0).unwrap();
    assert!((v / (p * 0.36) - 1.0).abs() < 0.01, "{v} vs {}", p * 0.36);
}
