//! Bijections between constrained parameters and ℝ^d, with log-Jacobians and
//! reverse-mode gradient pull-backs.
//!
//! * ordered vector: `x_0 = y_0`, `x_k = x_{k-1} + exp(y_k)`
//! * stick-breaking simplex: `z_k = logistic(y_k - ln(K - 1 - k))`,
//!   `x_k = rem_k · z_k`; `y = 0` maps to the uniform simplex.

use crate::stats::softplus;

pub fn ordered_constrain(raw: &[f64]) -> (Vec<f64>, f64) {
    let mut out = Vec::with_capacity(raw.len());
    let mut log_jac = 0.0;
    for (k, &r) in raw.iter().enumerate() {
        if k == 0 {
            out.push(r);
        } else {
            out.push(out[k - 1] + r.exp());
            log_jac += r;
        }
    }
    (out, log_jac)
}

pub fn ordered_unconstrain(x: &[f64]) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(k, &v)| if k == 0 { v } else { (v - x[k - 1]).ln() })
        .collect()
}

/// Pulls `grad_x` (∂f/∂x) back to ∂(f + log|J|)/∂y.
pub fn ordered_grad(raw: &[f64], grad_x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; raw.len()];
    let mut tail = 0.0;
    for k in (0..raw.len()).rev() {
        tail += grad_x[k];
        out[k] = if k == 0 { tail } else { tail * raw[k].exp() + 1.0 };
    }
    out
}

/// Stick-breaking constrain in log space: returns `ln x` (length `y.len() + 1`)
/// and the log-Jacobian.
pub fn stick_constrain_log(y: &[f64]) -> (Vec<f64>, f64) {
    let k_total = y.len() + 1;
    let mut log_x = Vec::with_capacity(k_total);
    let mut log_rem = 0.0;
    let mut log_jac = 0.0;
    for (k, &yk) in y.iter().enumerate() {
        let a = yk - ((k_total - 1 - k) as f64).ln();
        let log_z = -softplus(-a);
        let log_1mz = -softplus(a);
        log_x.push(log_rem + log_z);
        log_jac += log_rem + log_z + log_1mz;
        log_rem += log_1mz;
    }
    log_x.push(log_rem);
    (log_x, log_jac)
}

pub fn stick_constrain(y: &[f64]) -> (Vec<f64>, f64) {
    let (log_x, log_jac) = stick_constrain_log(y);
    (log_x.into_iter().map(f64::exp).collect(), log_jac)
}

pub fn stick_unconstrain(x: &[f64]) -> Vec<f64> {
    let k_total = x.len();
    // suffix sums give each remaining stick without cancellation
    let mut suffix = vec![0.0; k_total + 1];
    for k in (0..k_total).rev() {
        suffix[k] = suffix[k + 1] + x[k];
    }
    (0..k_total - 1)
        .map(|k| (x[k].ln() - suffix[k + 1].ln()) + ((k_total - 1 - k) as f64).ln())
        .collect()
}

/// Pulls log-space adjoints `grad_log_x[k] = ∂f/∂ln x_k` back to
/// ∂(f + log|J|)/∂y. Working with `∂/∂ln x` keeps the recursion free of
/// divisions by vanishing weights.
pub fn stick_grad_from_log(y: &[f64], grad_log_x: &[f64]) -> Vec<f64> {
    let k_total = y.len() + 1;
    debug_assert_eq!(grad_log_x.len(), k_total);
    let mut out = vec![0.0; y.len()];
    // h = rem_k · ∂/∂rem_k, accumulated from the last stick backwards
    let mut h = grad_log_x[k_total - 1];
    for k in (0..y.len()).rev() {
        let a = y[k] - ((k_total - 1 - k) as f64).ln();
        let z = 1.0 / (1.0 + (-a).exp());
        let g = grad_log_x[k];
        out[k] = g * (1.0 - z) - h * z + 1.0 - 2.0 * z;
        h += g + 1.0;
    }
    out
}
