//! Smooth unconstrained minimization: limited-memory BFGS with a backtracking
//! line search, and plain gradient descent using the same line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm2, norm_inf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Lbfgs,
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Options {
    pub method: Method,
    pub memory: usize,
    /// Stop once the largest absolute gradient entry is at most this.
    pub grad_tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub iterations: usize,
    pub evaluations: usize,
    pub value: f64,
    pub grad_inf_norm: f64,
    pub converged: bool,
    /// True if the line search could not make progress before convergence.
    pub stalled: bool,
}

const ARMIJO_C1: f64 = 1e-4;
const MIN_STEP: f64 = 1e-20;

/// Minimizes `f` from `x0`. `f` returns the value and gradient at a point.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: &Options) -> Result<(Vec<f64>, Report)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut evaluations = 0;
    let mut eval = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        evaluations += 1;
        let (v, g) = f(x)?;
        if !v.is_finite() || g.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("objective"));
        }
        Ok((v, g))
    };

    let mut x = x0;
    let (mut fx, mut g) = eval(&x)?;
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut last_step: f64 = 1.0;
    let mut stalled = false;
    let mut iterations = 0;

    while norm_inf(&g) > opts.grad_tol && iterations < opts.max_iter {
        iterations += 1;
        let mut dir = match opts.method {
            Method::Lbfgs => two_loop(&g, &pairs),
            Method::GradientDescent => g.iter().map(|v| -v).collect(),
        };
        let mut gtd = dot(&g, &dir);
        if !(gtd < 0.0) {
            pairs.clear();
            dir = g.iter().map(|v| -v).collect();
            gtd = dot(&g, &dir);
        }
        let mut alpha = if pairs.is_empty() {
            match opts.method {
                // unit-length first step, then grow from the last accepted one
                Method::Lbfgs => 1.0 / norm2(&dir).max(1e-300),
                Method::GradientDescent => (2.0 * last_step).min(1e6),
            }
        } else {
            1.0
        };

        let mut trial = x.clone();
        let accepted = loop {
            trial.copy_from_slice(&x);
            axpy(alpha, &dir, &mut trial);
            let (ft, gt) = eval(&trial)?;
            if ft <= fx + ARMIJO_C1 * alpha * gtd {
                break Some((ft, gt));
            }
            // safeguarded quadratic interpolation
            let denom = 2.0 * (ft - fx - gtd * alpha);
            let next = if denom > 0.0 { -gtd * alpha * alpha / denom } else { 0.5 * alpha };
            alpha = next.clamp(0.1 * alpha, 0.5 * alpha);
            if alpha < MIN_STEP {
                break None;
            }
        };
        let Some((f_new, g_new)) = accepted else {
            stalled = true;
            break;
        };
        last_step = alpha;

        if opts.method == Method::Lbfgs {
            let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-12 * norm2(&s) * norm2(&y) && sy > 0.0 {
                if pairs.len() == opts.memory.max(1) {
                    pairs.pop_front();
                }
                pairs.push_back((s, y, 1.0 / sy));
            }
        }
        x = trial;
        fx = f_new;
        g = g_new;
    }

    let grad_inf_norm = norm_inf(&g);
    Ok((
        x,
        Report {
            iterations,
            evaluations,
            value: fx,
            grad_inf_norm,
            converged: grad_inf_norm <= opts.grad_tol,
            stalled,
        },
    ))
}

/// Two-loop recursion: returns `-H g` for the current inverse-Hessian estimate.
fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        axpy(-a, y, &mut q);
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        axpy(a - b, s, &mut q);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
