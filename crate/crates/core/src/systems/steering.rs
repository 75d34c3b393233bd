use super::ControlSignal;
use crate::error::{Error, Result};

/// Open-loop control steering `driftless3` from `x0` to the origin in four
/// stages of `stage_duration` each:
///
/// 1. if `x2 != 0` and `|x3| < 0.1`, move `x3` to 1 with `u2` (otherwise idle);
/// 2. hold `x3`, cancel `x2` with `u1 = -x2 / (x3 T)`;
/// 3. hold `x1, x2`, cancel `x3` with `u2`;
/// 4. cancel `x1` with `u1`.
///
/// Each stage uses the constant control that finishes exactly at the end of
/// the stage, so every component is piecewise polynomial of degree at most
/// two and RK4 reproduces it to round-off.
pub fn steer_driftless_to_origin(x0: &[f64; 3], stage_duration: f64) -> Result<ControlSignal> {
    if !(stage_duration > 0.0 && stage_duration.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "stage duration must be positive, got {stage_duration}"
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("initial state must be finite".into()));
    }
    let t = stage_duration;
    let [mut x1, x2, mut x3] = *x0;

    let lift = if x2 != 0.0 && x3.abs() < 0.1 {
        let u2 = (1.0 - x3) / t;
        x3 = 1.0;
        u2
    } else {
        0.0
    };
    let u1_shear = if x2 != 0.0 { -x2 / (x3 * t) } else { 0.0 };
    x1 += u1_shear * t;
    let u2_drop = -x3 / t;
    let u1_home = -x1 / t;

    let grid = (0..=4).map(|i| i as f64 * t).collect();
    ControlSignal::new(
        grid,
        vec![
            vec![0.0, lift],
            vec![u1_shear, 0.0],
            vec![0.0, u2_drop],
            vec![u1_home, 0.0],
        ],
    )
}
