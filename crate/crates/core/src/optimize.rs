//! Small dense minimizers for low-dimensional, piecewise-smooth costs:
//! L-BFGS on central finite-difference gradients, and a compass search used
//! to polish where the gradient carries no information (flat or stepped
//! pieces of the cost).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbfgsParams {
    /// Number of stored curvature pairs.
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop once an iteration improves the cost by less than
    /// `tolerance·(1 + |f|)`.
    pub tolerance: f64,
    /// Central-difference step.
    pub fd_step: f64,
}

impl Default for LbfgsParams {
    fn default() -> Self {
        Self {
            memory: 6,
            max_iterations: 200,
            tolerance: 1e-8,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

pub fn central_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// L-BFGS with Armijo backtracking. `initial_step` bounds the length of the
/// first trial step of each line search.
pub fn lbfgs<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    initial_step: f64,
    params: &LbfgsParams,
) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut evals = 1;
    let mut g = central_gradient(f, &x, params.fd_step);
    evals += 2 * n;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    while iterations < params.max_iterations {
        iterations += 1;
        let gnorm = dot(&g, &g).sqrt();
        if !(gnorm > 0.0) || !gnorm.is_finite() {
            break;
        }
        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            for i in 0..n {
                q[i] -= a * y[i];
            }
            alphas.push(a);
        }
        let gamma = history
            .back()
            .map(|(s, y, _)| dot(s, y) / dot(y, y))
            .unwrap_or(1.0);
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for i in 0..n {
                q[i] += (a - b) * s[i];
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        let dnorm = dot(&dir, &dir).sqrt();
        let mut step = if history.is_empty() {
            initial_step / dnorm
        } else {
            (initial_step / dnorm).min(1.0)
        };
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = (0..n).map(|i| x[i] + step * dir[i]).collect();
            let ft = f(&trial);
            evals += 1;
            if ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if history.is_empty() {
                break;
            }
            history.clear();
            continue;
        };
        let gn = central_gradient(f, &xn, params.fd_step);
        evals += 2 * n;
        let s: Vec<f64> = (0..n).map(|i| xn[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| gn[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            history.push_back((s, y, 1.0 / sy));
            if history.len() > params.memory {
                history.pop_front();
            }
        }
        let improvement = fx - fnew;
        x = xn;
        fx = fnew;
        g = gn;
        if improvement < params.tolerance * (1.0 + fx.abs()) {
            break;
        }
    }
    Minimum {
        x,
        value: fx,
        iterations,
        evaluations: evals,
    }
}

/// Compass search: try `±step` along each axis, move on strict improvement,
/// halve the step when no move helps, stop below `min_step`.
pub fn compass_search<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    initial_step: f64,
    min_step: f64,
    max_evaluations: usize,
) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut evals = 1;
    let mut step = initial_step;
    let mut iterations = 0;
    while step >= min_step && evals < max_evaluations {
        iterations += 1;
        let mut best: Option<(Vec<f64>, f64)> = None;
        for i in 0..n {
            for sign in [1.0, -1.0] {
                let mut t = x.clone();
                t[i] += sign * step;
                let ft = f(&t);
                evals += 1;
                let cur = best.as_ref().map_or(fx, |b| b.1);
                if ft < cur {
                    best = Some((t, ft));
                }
            }
        }
        match best {
            Some((t, ft)) => {
                x = t;
                fx = ft;
            }
            None => step *= 0.5,
        }
    }
    Minimum {
        x,
        value: fx,
        iterations,
        evaluations: evals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn gradient_of_quadratic() {
        let f = |x: &[f64]| 3.0 * x[0] * x[0] + x[0] * x[1];
        let g = central_gradient(&f, &[1.0, 2.0], 1e-6);
        assert!((g[0] - 8.0).abs() < 1e-6);
        assert!((g[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn lbfgs_solves_rosenbrock() {
        let m = lbfgs(&rosenbrock, &[-1.2, 1.0], 0.5, &LbfgsParams::default());
        assert!((m.x[0] - 1.0).abs() < 1e-3 && (m.x[1] - 1.0).abs() < 1e-3, "{m:?}");
    }

    #[test]
    fn compass_finds_kink_minimum() {
        let f = |x: &[f64]| (x[0] - 0.3).abs() + 2.0 * (x[1] + 0.7).abs();
        let m = compass_search(&f, &[0.0, 0.0], 0.25, 1e-9, 10_000);
        assert!((m.x[0] - 0.3).abs() < 1e-8 && (m.x[1] + 0.7).abs() < 1e-8);
    }
}
