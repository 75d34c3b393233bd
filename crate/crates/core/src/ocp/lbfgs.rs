//! Limited-memory BFGS with Armijo backtracking and optional box projection.

use std::collections::VecDeque;

use super::SolverOptions;

pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) trait Problem {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], g: &mut [f64]);
    /// Projects onto the feasible box (no-op when unconstrained).
    fn project(&self, _x: &mut [f64]) {}
    /// Zeroes gradient components pinned at an active bound.
    fn mask(&self, _x: &[f64], _g: &mut [f64]) {}
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn minimize(problem: &impl Problem, start: Vec<f64>, opts: &SolverOptions) -> Outcome {
    let mut x = start;
    problem.project(&mut x);
    let mut f = problem.value(&x);
    let dim = x.len();
    if !f.is_finite() {
        return Outcome {
            x,
            f: f64::INFINITY,
            grad_norm: f64::INFINITY,
            iterations: 0,
            converged: false,
        };
    }
    let mut g = vec![0.0; dim];
    problem.gradient(&x, &mut g);
    problem.mask(&x, &mut g);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut dir = vec![0.0; dim];
    let mut trial = vec![0.0; dim];
    let mut g_new = vec![0.0; dim];
    let mut alpha_buf = vec![0.0; opts.memory.max(1)];
    let mut stagnant = 0;
    let mut iterations = 0;

    let converged = |f: f64, gn: f64| gn <= opts.gtol_abs + opts.gtol_rel * f.abs();

    while iterations < opts.max_iterations {
        let gn = norm(&g);
        if converged(f, gn) {
            return Outcome { x, f, grad_norm: gn, iterations, converged: true };
        }

        // two-loop recursion
        dir.copy_from_slice(&g);
        for (k, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &dir);
            alpha_buf[k] = a;
            for i in 0..dim {
                dir[i] -= a * y[i];
            }
        }
        let gamma = history
            .back()
            .map_or_else(|| (1.0f64).min(1.0 / gn), |(s, y, _)| dot(s, y) / dot(y, y));
        for v in dir.iter_mut() {
            *v *= gamma;
        }
        for (k, (s, y, rho)) in history.iter().enumerate() {
            let b = rho * dot(y, &dir);
            for i in 0..dim {
                dir[i] += s[i] * (alpha_buf[k] - b);
            }
        }
        for v in dir.iter_mut() {
            *v = -*v;
        }
        problem.mask(&x, &mut dir);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            history.clear();
            let scale = (1.0f64).min(1.0 / gn);
            for i in 0..dim {
                dir[i] = -scale * g[i];
            }
            slope = -scale * gn * gn;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            for i in 0..dim {
                trial[i] = x[i] + step * dir[i];
            }
            problem.project(&mut trial);
            let ft = problem.value(&trial);
            if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                accepted = Some(ft);
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        let Some(f_new) = accepted else {
            if history.is_empty() {
                break;
            }
            history.clear();
            continue;
        };

        problem.gradient(&trial, &mut g_new);
        problem.mask(&trial, &mut g_new);
        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if history.len() == opts.memory {
                history.pop_front();
            }
            if opts.memory > 0 {
                history.push_back((s, y, 1.0 / sy));
            }
        }

        let decrease = f - f_new;
        x.copy_from_slice(&trial);
        g.copy_from_slice(&g_new);
        f = f_new;
        if decrease <= opts.ftol * f.abs().max(f64::MIN_POSITIVE) {
            stagnant += 1;
            if stagnant >= 3 {
                break;
            }
        } else {
            stagnant = 0;
        }
    }
    let gn = norm(&g);
    Outcome { converged: converged(f, gn), x, f, grad_norm: gn, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl Problem for Rosenbrock {
        fn value(&self, x: &[f64]) -> f64 {
            (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
        }
        fn gradient(&self, x: &[f64], g: &mut [f64]) {
            g[0] = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
            g[1] = 200.0 * (x[1] - x[0] * x[0]);
        }
    }

    struct BoxedQuadratic;

    impl Problem for BoxedQuadratic {
        fn value(&self, x: &[f64]) -> f64 {
            (x[0] - 2.0).powi(2) + (x[1] + 1.0).powi(2)
        }
        fn gradient(&self, x: &[f64], g: &mut [f64]) {
            g[0] = 2.0 * (x[0] - 2.0);
            g[1] = 2.0 * (x[1] + 1.0);
        }
        fn project(&self, x: &mut [f64]) {
            x[0] = x[0].clamp(-1.0, 1.0);
        }
        fn mask(&self, x: &[f64], g: &mut [f64]) {
            if (x[0] >= 1.0 && g[0] < 0.0) || (x[0] <= -1.0 && g[0] > 0.0) {
                g[0] = 0.0;
            }
        }
    }

    fn opts() -> SolverOptions {
        SolverOptions {
            gtol_abs: 1e-9,
            gtol_rel: 0.0,
            max_iterations: 1000,
            ..SolverOptions::default()
        }
    }

    #[test]
    fn solves_rosenbrock() {
        let out = minimize(&Rosenbrock, vec![-1.2, 1.0], &opts());
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6, "{:?}", out.x);
    }

    #[test]
    fn respects_the_box() {
        let out = minimize(&BoxedQuadratic, vec![0.0, 0.0], &opts());
        assert_eq!(out.x[0], 1.0);
        assert!((out.x[1] + 1.0).abs() < 1e-8);
        assert!(out.converged);
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let out = minimize(&Rosenbrock, vec![1.0, 1.0], &opts());
        assert_eq!(out.iterations, 0);
        assert_eq!(out.f, 0.0);
    }
}
