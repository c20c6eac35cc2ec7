//! Limited-memory BFGS with a strong Wolfe line search.
//!
//! Minimizes a smooth unconstrained objective given by a closure that
//! returns the value and gradient at a point. The implementation is
//! the standard two-loop recursion over the last `memory` curvature
//! pairs with gamma-scaled initial Hessian, plus a bracket-and-zoom
//! line search enforcing the strong Wolfe conditions.

use ndarray::Array1;

/// Why the optimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Gradient norm fell below `grad_tol`.
    Converged,
    /// Iteration budget exhausted.
    MaxIterations,
    /// The line search could not find an acceptable step; the best
    /// point seen so far is returned.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Array1<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub n_evals: usize,
    pub reason: StopReason,
}

#[derive(Debug, Clone)]
pub struct LbfgsConfig {
    pub max_iterations: usize,
    /// History length of the inverse-Hessian approximation.
    pub memory: usize,
    /// Stop when the gradient's Euclidean norm drops below this.
    pub grad_tol: f64,
    /// Sufficient-decrease constant (Armijo).
    pub c1: f64,
    /// Curvature constant; must satisfy c1 < c2 < 1.
    pub c2: f64,
    /// Cap on line-search evaluations per iteration.
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            max_iterations: 70,
            memory: 10,
            grad_tol: 1e-8,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

struct Pair {
    s: Array1<f64>,
    y: Array1<f64>,
    rho: f64,
}

/// Minimize `f`, starting from `x0`.
///
/// `f(x)` must return `(value, gradient)`. `on_iter` runs after every
/// accepted step with `(iteration, value, grad_norm, x)`; it can stop
/// the run early by returning `false` (reported as `MaxIterations`).
pub fn minimize<F, C>(mut f: F, x0: Array1<f64>, config: &LbfgsConfig, mut on_iter: C) -> Solution
where
    F: FnMut(&Array1<f64>) -> (f64, Array1<f64>),
    C: FnMut(usize, f64, f64, &Array1<f64>) -> bool,
{
    let mut n_evals = 0usize;
    let mut eval = |x: &Array1<f64>, n_evals: &mut usize| {
        *n_evals += 1;
        f(x)
    };

    let mut x = x0;
    let (mut value, mut grad) = eval(&x, &mut n_evals);
    let mut history: Vec<Pair> = Vec::with_capacity(config.memory);
    let mut reason = StopReason::MaxIterations;
    let mut iterations = 0;

    for iter in 0..config.max_iterations {
        let grad_norm = norm(&grad);
        if grad_norm < config.grad_tol {
            reason = StopReason::Converged;
            break;
        }

        let direction = two_loop(&grad, &history);
        let mut dg = direction.dot(&grad);
        let direction = if dg < 0.0 {
            direction
        } else {
            // history produced a non-descent direction; fall back to
            // steepest descent and drop the stale pairs
            history.clear();
            dg = -grad.dot(&grad);
            -&grad
        };

        let t0 = if history.is_empty() && iter == 0 {
            // conservative first step before any curvature is known
            (1.0 / grad_norm).min(1.0)
        } else {
            1.0
        };

        match line_search(
            |x, n| eval(x, n),
            &x,
            value,
            &direction,
            dg,
            t0,
            config,
            &mut n_evals,
        ) {
            Some((t, new_value, new_grad)) => {
                let step = t * &direction;
                let y = &new_grad - &grad;
                let sy = step.dot(&y);
                if sy > 1e-10 * norm(&step) * norm(&y) {
                    if history.len() == config.memory {
                        history.remove(0);
                    }
                    history.push(Pair {
                        rho: 1.0 / sy,
                        s: step.clone(),
                        y,
                    });
                }
                x += &step;
                value = new_value;
                grad = new_grad;
                iterations = iter + 1;
                if !on_iter(iterations, value, norm(&grad), &x) {
                    break;
                }
            }
            None => {
                reason = StopReason::LineSearchFailed;
                break;
            }
        }
    }

    if reason != StopReason::LineSearchFailed && norm(&grad) < config.grad_tol {
        reason = StopReason::Converged;
    }

    Solution {
        grad_norm: norm(&grad),
        x,
        value,
        iterations,
        n_evals,
        reason,
    }
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// Two-loop recursion: returns the descent direction -H grad.
fn two_loop(grad: &Array1<f64>, history: &[Pair]) -> Array1<f64> {
    let mut q = -grad;
    if history.is_empty() {
        return q;
    }
    let mut alphas = vec![0.0; history.len()];
    for (i, pair) in history.iter().enumerate().rev() {
        let alpha = pair.rho * pair.s.dot(&q);
        q -= &(alpha * &pair.y);
        alphas[i] = alpha;
    }
    let last = history.last().expect("non-empty history");
    let gamma = last.s.dot(&last.y) / last.y.dot(&last.y);
    q *= gamma;
    for (i, pair) in history.iter().enumerate() {
        let beta = pair.rho * pair.y.dot(&q);
        q += &((alphas[i] - beta) * &pair.s);
    }
    q
}

/// Strong Wolfe line search (bracket then zoom). Returns the accepted
/// step length with the value and gradient at the new point.
#[allow(clippy::too_many_arguments)]
fn line_search<F>(
    mut eval: F,
    x: &Array1<f64>,
    f0: f64,
    d: &Array1<f64>,
    dg0: f64,
    t0: f64,
    config: &LbfgsConfig,
    n_evals: &mut usize,
) -> Option<(f64, f64, Array1<f64>)>
where
    F: FnMut(&Array1<f64>, &mut usize) -> (f64, Array1<f64>),
{
    debug_assert!(dg0 < 0.0);
    let phi = |t: f64, n: &mut usize, eval: &mut F| {
        let xt = x + &(t * d);
        let (v, g) = eval(&xt, n);
        let slope = g.dot(d);
        (v, g, slope)
    };

    let mut budget = config.max_line_search;
    let mut t_prev = 0.0;
    let mut f_prev = f0;
    let mut t = t0;

    // bracketing phase; `lo` always satisfies sufficient decrease
    let mut bracket: Option<(f64, f64, f64)> = None; // (lo, f_lo, hi)
    let mut accepted: Option<(f64, f64, Array1<f64>)> = None;
    let mut first = true;
    while budget > 0 {
        budget -= 1;
        let (ft, gt, dgt) = phi(t, n_evals, &mut eval);
        if !ft.is_finite() {
            // overshot into a bad region; back off and treat as a bracket
            bracket = Some((t_prev, f_prev, t));
            break;
        }
        if ft > f0 + config.c1 * t * dg0 || (!first && ft >= f_prev) {
            bracket = Some((t_prev, f_prev, t));
            break;
        }
        if dgt.abs() <= -config.c2 * dg0 {
            accepted = Some((t, ft, gt));
            break;
        }
        if dgt >= 0.0 {
            bracket = Some((t, ft, t_prev));
            break;
        }
        t_prev = t;
        f_prev = ft;
        t *= 2.0;
        first = false;
    }

    if let Some(acc) = accepted {
        return Some(acc);
    }
    let (mut lo, mut f_lo, mut hi) = bracket?;

    // zoom phase: bisect the bracket, keeping the Wolfe invariants
    while budget > 0 {
        budget -= 1;
        let t = 0.5 * (lo + hi);
        if (hi - lo).abs() < 1e-16 * (1.0 + lo.abs()) {
            break;
        }
        let (ft, gt, dgt) = phi(t, n_evals, &mut eval);
        if !ft.is_finite() || ft > f0 + config.c1 * t * dg0 || ft >= f_lo {
            hi = t;
        } else {
            if dgt.abs() <= -config.c2 * dg0 {
                return Some((t, ft, gt));
            }
            if dgt * (hi - lo) >= 0.0 {
                hi = lo;
            }
            lo = t;
            f_lo = ft;
        }
    }

    // no strong-Wolfe point within budget: fall back to the best
    // sufficient-decrease point if one exists
    if lo > 0.0 && f_lo < f0 + config.c1 * lo * dg0 {
        let xt = x + &(lo * d);
        let (v, g) = eval(&xt, n_evals);
        return Some((lo, v, g));
    }
    None
}
