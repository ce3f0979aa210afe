//! Limited-memory BFGS with a backtracking Armijo line search.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop as soon as the objective drops to this value.
    pub f_target: f64,
    /// Stop when the largest gradient component drops below this value.
    pub gtol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 8,
            max_iterations: 5000,
            f_target: 0.0,
            gtol: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stop {
    Target,
    Gradient,
    Iterations,
    LineSearch,
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop: Stop,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f`, which returns the objective and writes the gradient into its second argument.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: LbfgsOptions) -> LbfgsOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut evaluations = 1;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut alpha = vec![0.0; opts.memory.max(1)];

    for it in 0..opts.max_iterations {
        if fx <= opts.f_target {
            return LbfgsOutcome { x, f: fx, iterations: it, evaluations, stop: Stop::Target };
        }
        let gmax = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if gmax <= opts.gtol {
            return LbfgsOutcome { x, f: fx, iterations: it, evaluations, stop: Stop::Gradient };
        }

        // two-loop recursion
        p.iter_mut().zip(&g).for_each(|(pi, gi)| *pi = -gi);
        for (i, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &p);
            alpha[i] = a;
            p.iter_mut().zip(y).for_each(|(pi, yi)| *pi -= a * yi);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            p.iter_mut().for_each(|pi| *pi *= gamma);
        } else {
            let scale = 1.0 / gmax.max(1e-300);
            p.iter_mut().for_each(|pi| *pi *= scale.min(1.0));
        }
        for (i, (s, y, rho)) in history.iter().enumerate() {
            let b = rho * dot(y, &p);
            p.iter_mut().zip(s).for_each(|(pi, si)| *pi += (alpha[i] - b) * si);
        }
        let mut slope = dot(&g, &p);
        if slope >= 0.0 {
            history.clear();
            p.iter_mut().zip(&g).for_each(|(pi, gi)| *pi = -gi / gmax.max(1e-300));
            slope = dot(&g, &p);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            for i in 0..n {
                x_new[i] = x[i] + step * p[i];
            }
            let f_new = f(&x_new, &mut g_new);
            evaluations += 1;
            if f_new.is_finite() && f_new <= fx + 1e-4 * step * slope {
                accepted = Some(f_new);
                break;
            }
            step *= 0.5;
        }
        let Some(f_new) = accepted else {
            if history.is_empty() {
                return LbfgsOutcome { x, f: fx, iterations: it, evaluations, stop: Stop::LineSearch };
            }
            history.clear();
            continue;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 0.0 {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_new;
    }
    LbfgsOutcome {
        x,
        f: fx,
        iterations: opts.max_iterations,
        evaluations,
        stop: Stop::Iterations,
    }
}
