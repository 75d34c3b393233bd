use hmpc::mpc::{horizon_sweep, run_closed_loop, MpcConfig, Verdict, WarmStart};
use hmpc::{builtin, StageCost, SystemParams};

fn stall_config(horizon: f64) -> MpcConfig {
    MpcConfig {
        horizon,
        delta: 0.25,
        segments: (horizon / 0.25) as usize,
        steps: 20,
        warm_start: WarmStart::Zero,
        restarts: 0,
        ..MpcConfig::default()
    }
}

#[test]
fn quadratic_cost_leaves_the_state_in_place() {
    let sys = builtin("driftless3", &SystemParams::default()).unwrap();
    let cost = StageCost::quadratic_identity(3, 2);
    let x0 = [0.0, 0.2, 0.0];
    let sweep = horizon_sweep(&sys, &cost, &stall_config(1.0), &x0, &[1.0, 2.0, 4.0]).unwrap();
    assert!(sweep.rows.iter().all(|r| r.verdict == Verdict::Stalled), "{:?}", sweep.rows);
    assert_eq!(sweep.smallest_converged, None);
    let run = run_closed_loop(&sys, &cost, &stall_config(2.0), &x0).unwrap();
    assert!(run.applied.iter().flatten().flatten().all(|u| *u == 0.0));
}

#[test]
fn homogeneous_cost_steers_driftless_to_the_origin() {
    let sys = builtin("driftless3", &SystemParams::default()).unwrap();
    let cost = StageCost::homogeneous(sys.declared_dilation().unwrap());
    let cfg = MpcConfig {
        horizon: 2.0,
        segments: 8,
        steps: 200,
        ..MpcConfig::default()
    };
    let run = run_closed_loop(&sys, &cost, &cfg, &[0.0, 0.2, 0.0]).unwrap();
    assert_eq!(run.verdict, Verdict::Converged);
    let steps = run.applied.len();
    assert!(run.decrease_violations * 20 <= steps, "{} of {steps}", run.decrease_violations);
    // the loop stops once inside the radius
    assert!(steps < cfg.steps);
}

#[test]
fn closed_loop_csv_is_reproducible() {
    let sys = builtin("robot", &SystemParams::default()).unwrap();
    let cost = StageCost::homogeneous(sys.declared_dilation().unwrap());
    let cfg = MpcConfig {
        horizon: 1.0,
        segments: 4,
        steps: 5,
        restarts: 3,
        ..MpcConfig::default()
    };
    let a = run_closed_loop(&sys, &cost, &cfg, &[0.5, 0.5, 0.5]).unwrap().to_csv();
    let b = run_closed_loop(&sys, &cost, &cfg, &[0.5, 0.5, 0.5]).unwrap().to_csv();
    assert_eq!(a, b);
    assert!(a.starts_with("step,t,x1,x2,x3,u1,u2,V_T,verdict\n"));
    assert_eq!(a.lines().count(), 7);
}
