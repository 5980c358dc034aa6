//! K-component Gaussian mixture with a shared standard deviation.
//!
//! Priors: `π ~ Dirichlet(1)`, `σ ~ Lognormal(0, 1)`, `μ_1 ~ N(0, 10²)` and
//! `μ_k ~ N(0, 10²)` truncated below at `μ_{k-1}`. The truncation keeps the
//! component means ordered, which removes label switching.

use crate::error::{Error, Result};
use crate::model::{LogDensity, MarginalPosterior};
use crate::stats::{
    dirichlet_kernel, ln_multivariate_beta, log_lognormal_pdf, lse, normal_log_ccdf, normal_lpdf, Simplex,
    HALF_LN_2PI,
};
use crate::transform::{ordered_constrain, ordered_grad, ordered_unconstrain, stick_constrain_log, stick_grad_from_log, stick_unconstrain};

/// Prior standard deviation of the component means (variance 10²).
pub const MU_PRIOR_SD: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureParams {
    pub mu: Vec<f64>,
    pub sigma: f64,
    pub pi: Simplex,
}

impl MixtureParams {
    pub fn new(mu: Vec<f64>, sigma: f64, pi: Simplex) -> Result<Self> {
        let p = Self { mu, sigma, pi };
        p.validate()?;
        Ok(p)
    }

    pub fn k(&self) -> usize {
        self.mu.len()
    }

    /// Checks shape, ordering and positivity (prior support).
    pub fn validate(&self) -> Result<()> {
        if self.mu.is_empty() || self.mu.len() != self.pi.len() {
            return Err(Error::InvalidArgument(format!(
                "{} means but {} mixture weights",
                self.mu.len(),
                self.pi.len()
            )));
        }
        if self.mu.iter().any(|m| !m.is_finite()) || !self.mu.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::OutsideSupport(format!("means must be finite and increasing: {:?}", self.mu)));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::OutsideSupport(format!("sigma = {}", self.sigma)));
        }
        Ok(())
    }

    /// `[mu_1..mu_K, sigma, pi_1..pi_K]`
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.mu.clone();
        v.push(self.sigma);
        v.extend_from_slice(self.pi.as_slice());
        v
    }

    pub fn param_names(k: usize) -> Vec<String> {
        let mut names: Vec<String> = (1..=k).map(|i| format!("mu[{i}]")).collect();
        names.push("sigma".into());
        names.extend((1..=k).map(|i| format!("pi[{i}]")));
        names
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureData {
    x: Vec<f64>,
}

impl MixtureData {
    /// Observations must be finite. An empty vector is accepted so that the
    /// posterior degenerates to the prior.
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite observation {bad}")));
        }
        Ok(Self { x })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Component labels, zero-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixtureLatent {
    pub z: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnconstrainedMixtureParams {
    /// First mean, then log-increments between consecutive means.
    pub mu_raw: Vec<f64>,
    pub log_sigma: f64,
    /// Stick-breaking coordinates, length K - 1.
    pub pi_raw: Vec<f64>,
}

impl UnconstrainedMixtureParams {
    pub fn dim(k: usize) -> usize {
        2 * k
    }

    /// Flat layout `[mu_raw.., log_sigma, pi_raw..]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.mu_raw.clone();
        v.push(self.log_sigma);
        v.extend_from_slice(&self.pi_raw);
        v
    }

    pub fn from_slice(v: &[f64], k: usize) -> Self {
        assert_eq!(v.len(), Self::dim(k), "unconstrained mixture vector length");
        Self { mu_raw: v[..k].to_vec(), log_sigma: v[k], pi_raw: v[k + 1..].to_vec() }
    }
}

pub fn constrain(u: &UnconstrainedMixtureParams) -> (MixtureParams, f64) {
    let (mu, lj_mu) = ordered_constrain(&u.mu_raw);
    let (log_pi, lj_pi) = stick_constrain_log(&u.pi_raw);
    let pi = Simplex::from_raw(log_pi.iter().map(|l| l.exp()).collect());
    (MixtureParams { mu, sigma: u.log_sigma.exp(), pi }, lj_mu + u.log_sigma + lj_pi)
}

pub fn unconstrain(p: &MixtureParams) -> UnconstrainedMixtureParams {
    UnconstrainedMixtureParams {
        mu_raw: ordered_unconstrain(&p.mu),
        log_sigma: p.sigma.ln(),
        pi_raw: stick_unconstrain(p.pi.as_slice()),
    }
}

/// Log prior of the component means alone (ordering enforced).
pub fn mu_log_prior(mu: &[f64]) -> f64 {
    let mut lp = 0.0;
    for (k, &m) in mu.iter().enumerate() {
        if k > 0 {
            if m <= mu[k - 1] {
                return f64::NEG_INFINITY;
            }
            lp -= normal_log_ccdf(mu[k - 1] / MU_PRIOR_SD);
        }
        lp += normal_lpdf(m, 0.0, MU_PRIOR_SD);
    }
    lp
}

/// `ln Lognormal(sigma | 0, 1)`.
pub fn sigma_log_prior(sigma: f64) -> f64 {
    log_lognormal_pdf(sigma, 0.0, 1.0)
}

/// `ln Dirichlet(pi | 1, ..., 1)` from log weights.
pub fn pi_log_prior(log_pi: &[f64]) -> f64 {
    let alpha = vec![1.0; log_pi.len()];
    dirichlet_kernel(log_pi.iter().copied(), &alpha) - ln_multivariate_beta(&alpha)
}

pub fn mix_log_prior(params: &MixtureParams) -> f64 {
    let log_pi: Vec<f64> = params.pi.as_slice().iter().map(|p| p.ln()).collect();
    mu_log_prior(&params.mu) + sigma_log_prior(params.sigma) + pi_log_prior(&log_pi)
}

fn check_dims(params: &MixtureParams) -> Result<()> {
    if params.mu.is_empty() || params.mu.len() != params.pi.len() {
        return Err(Error::InvalidArgument(format!(
            "{} means but {} mixture weights",
            params.mu.len(),
            params.pi.len()
        )));
    }
    if !(params.sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma = {}", params.sigma)));
    }
    Ok(())
}

/// `Σ_i ln[π_{z_i} f(x_i | μ_{z_i}, σ²)]`, no priors.
pub fn mix_full_log_lik(data: &MixtureData, latent: &MixtureLatent, params: &MixtureParams) -> Result<f64> {
    check_dims(params)?;
    if latent.z.len() != data.len() {
        return Err(Error::InvalidArgument(format!("{} labels for {} observations", latent.z.len(), data.len())));
    }
    let k = params.k();
    let mut total = 0.0;
    for (&x, &z) in data.x.iter().zip(&latent.z) {
        if z >= k {
            return Err(Error::InvalidArgument(format!("label {z} out of range for K = {k}")));
        }
        total += params.pi[z].ln() + normal_lpdf(x, params.mu[z], params.sigma);
    }
    Ok(total)
}

pub fn mix_full_log_joint(data: &MixtureData, latent: &MixtureLatent, params: &MixtureParams) -> Result<f64> {
    let prior = mix_log_prior(params);
    let lik = mix_full_log_lik(data, latent, params)?;
    if prior == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(lik + prior)
}

/// `Σ_i ln Σ_k π_k f(x_i | μ_k, σ²)`.
pub fn mix_marginal_log_lik(data: &MixtureData, params: &MixtureParams) -> f64 {
    let log_pi: Vec<f64> = params.pi.as_slice().iter().map(|p| p.ln()).collect();
    marginal_log_lik_impl(data.x(), &params.mu, params.sigma.ln(), &log_pi)
}

pub(crate) fn marginal_log_lik_impl(x: &[f64], mu: &[f64], log_sigma: f64, log_pi: &[f64]) -> f64 {
    let inv_sigma = (-log_sigma).exp();
    // constant part of each log-weight: ln π_k - ln σ - ½ ln 2π
    let base: Vec<f64> = log_pi.iter().map(|lp| lp - log_sigma - HALF_LN_2PI).collect();
    let mut w = vec![0.0; mu.len()];
    let mut total = 0.0;
    for &xi in x {
        for (k, wk) in w.iter_mut().enumerate() {
            let z = (xi - mu[k]) * inv_sigma;
            *wk = base[k] - 0.5 * z * z;
        }
        total += lse(&w);
    }
    total
}

pub fn mix_marginal_log_joint(data: &MixtureData, params: &MixtureParams) -> f64 {
    let prior = mix_log_prior(params);
    if prior == f64::NEG_INFINITY {
        return prior;
    }
    mix_marginal_log_lik(data, params) + prior
}

/// Marginal log posterior in unconstrained space, log-Jacobian included.
pub fn mix_marginal_log_density(data: &MixtureData, u: &UnconstrainedMixtureParams) -> f64 {
    let (mu, lj_mu) = ordered_constrain(&u.mu_raw);
    let (log_pi, lj_pi) = stick_constrain_log(&u.pi_raw);
    let sigma = u.log_sigma.exp();
    let lik = marginal_log_lik_impl(data.x(), &mu, u.log_sigma, &log_pi);
    lik + mu_log_prior(&mu) + sigma_log_prior(sigma) + pi_log_prior(&log_pi) + lj_mu + u.log_sigma + lj_pi
}

/// Gradient of [`mix_marginal_log_density`] in the flat layout of
/// [`UnconstrainedMixtureParams::to_vec`].
pub fn mix_marginal_grad(data: &MixtureData, u: &UnconstrainedMixtureParams) -> Vec<f64> {
    let mut grad = vec![0.0; UnconstrainedMixtureParams::dim(u.mu_raw.len())];
    marginal_value_and_grad(data.x(), &u.to_vec(), &mut grad);
    grad
}

fn marginal_value_and_grad(x: &[f64], flat: &[f64], grad: &mut [f64]) -> f64 {
    let k = flat.len() / 2;
    let mu_raw = &flat[..k];
    let log_sigma = flat[k];
    let pi_raw = &flat[k + 1..];
    let (mu, lj_mu) = ordered_constrain(mu_raw);
    let (log_pi, lj_pi) = stick_constrain_log(pi_raw);
    let sigma = log_sigma.exp();
    let inv_sigma = 1.0 / sigma;

    let base: Vec<f64> = log_pi.iter().map(|lp| lp - log_sigma - HALF_LN_2PI).collect();
    let mut w = vec![0.0; k];
    let mut zs = vec![0.0; k];
    let mut g_mu = vec![0.0; k];
    let mut g_log_pi = vec![0.0; k];
    let mut g_log_sigma = 0.0;
    let mut lik = 0.0;
    for &xi in x {
        for j in 0..k {
            zs[j] = (xi - mu[j]) * inv_sigma;
            w[j] = base[j] - 0.5 * zs[j] * zs[j];
        }
        let norm = lse(&w);
        lik += norm;
        for j in 0..k {
            let r = (w[j] - norm).exp();
            g_mu[j] += r * zs[j] * inv_sigma;
            g_log_sigma += r * (zs[j] * zs[j] - 1.0);
            g_log_pi[j] += r;
        }
    }

    // μ prior: N(0, s²) densities and the truncation normalisers
    let var = MU_PRIOR_SD * MU_PRIOR_SD;
    let mut prior_mu = 0.0;
    for j in 0..k {
        prior_mu += normal_lpdf(mu[j], 0.0, MU_PRIOR_SD);
        g_mu[j] -= mu[j] / var;
        if j > 0 {
            let zc = mu[j - 1] / MU_PRIOR_SD;
            let log_tail = normal_log_ccdf(zc);
            prior_mu -= log_tail;
            let hazard = (-0.5 * zc * zc - HALF_LN_2PI - log_tail).exp();
            g_mu[j - 1] += hazard / MU_PRIOR_SD;
        }
    }
    // Lognormal(0,1) on σ plus the exp Jacobian: d/ds = -s
    let prior_sigma = log_lognormal_pdf(sigma, 0.0, 1.0);
    g_log_sigma -= log_sigma;
    // Dirichlet(1) contributes nothing to the kernel
    let prior_pi = pi_log_prior(&log_pi);

    let g_mu_raw = ordered_grad(mu_raw, &g_mu);
    let g_pi_raw = stick_grad_from_log(pi_raw, &g_log_pi);
    grad[..k].copy_from_slice(&g_mu_raw);
    grad[k] = g_log_sigma;
    grad[k + 1..].copy_from_slice(&g_pi_raw);

    lik + prior_mu + prior_sigma + prior_pi + lj_mu + log_sigma + lj_pi
}

/// `P(z_i = k | x_i, params) ∝ π_k f(x_i | μ_k, σ²)`.
pub fn mix_z_full_conditional(data: &MixtureData, params: &MixtureParams, i: usize) -> Result<Simplex> {
    let x = *data
        .x
        .get(i)
        .ok_or_else(|| Error::InvalidArgument(format!("observation index {i} out of range")))?;
    let log_w: Vec<f64> =
        (0..params.k()).map(|k| params.pi[k].ln() + normal_lpdf(x, params.mu[k], params.sigma)).collect();
    Simplex::from_log_weights(&log_w)
}

/// Marginalised mixture posterior over unconstrained coordinates.
#[derive(Clone, Debug)]
pub struct MixtureModel {
    pub data: MixtureData,
    pub k: usize,
}

impl MixtureModel {
    pub fn new(data: MixtureData, k: usize) -> Self {
        assert!(k >= 1);
        Self { data, k }
    }
}

impl LogDensity for MixtureModel {
    fn dim(&self) -> usize {
        UnconstrainedMixtureParams::dim(self.k)
    }

    fn log_density(&self, position: &[f64]) -> f64 {
        mix_marginal_log_density(&self.data, &UnconstrainedMixtureParams::from_slice(position, self.k))
    }

    fn log_density_and_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        marginal_value_and_grad(self.data.x(), position, grad)
    }
}

impl MarginalPosterior for MixtureModel {
    fn param_names(&self) -> Vec<String> {
        MixtureParams::param_names(self.k)
    }

    fn constrained(&self, position: &[f64]) -> Vec<f64> {
        constrain(&UnconstrainedMixtureParams::from_slice(position, self.k)).0.flatten()
    }
}
