//! Dawid–Skene model for repeated categorical ratings.
//!
//! Every item has a latent true category `z_i ~ Categorical(π)`; rater `j`
//! reports `y_ij ~ Categorical(θ_{j, z_i, ·})`. Priors are
//! `π ~ Dirichlet(α)` and `θ_{j,k,·} ~ Dirichlet(β_k)` where `β` puts `N p`
//! on the diagonal and `N (1 - p) / (K - 1)` elsewhere.

use crate::error::{Error, Result};
use crate::model::{LogDensity, MarginalPosterior};
use crate::stats::{dirichlet_kernel, ln_multivariate_beta, log_dirichlet_pdf, lse, Simplex};
use crate::transform::{stick_constrain_log, stick_grad_from_log, stick_unconstrain};

/// Complete I×J rating matrix, row-major by item. Categories are zero-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DSData {
    ratings: Vec<usize>,
    items: usize,
    raters: usize,
    categories: usize,
}

impl DSData {
    pub fn new(ratings: Vec<usize>, items: usize, raters: usize, categories: usize) -> Result<Self> {
        if ratings.len() != items * raters {
            return Err(Error::InvalidArgument(format!(
                "{} ratings for a {items}x{raters} design",
                ratings.len()
            )));
        }
        if categories == 0 {
            return Err(Error::InvalidArgument("zero categories".into()));
        }
        if let Some(bad) = ratings.iter().find(|&&y| y >= categories) {
            return Err(Error::InvalidArgument(format!("rating {bad} outside 0..{categories}")));
        }
        Ok(Self { ratings, items, raters, categories })
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn raters(&self) -> usize {
        self.raters
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn rating(&self, item: usize, rater: usize) -> usize {
        self.ratings[item * self.raters + rater]
    }

    pub fn item_ratings(&self, item: usize) -> &[usize] {
        &self.ratings[item * self.raters..(item + 1) * self.raters]
    }

    pub fn ratings(&self) -> &[usize] {
        &self.ratings
    }
}

/// Rater confusion rows stored by (rater, true category), each row a simplex
/// over reported categories: `theta[(j * K + k) * K + c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DSParams {
    pub pi: Simplex,
    theta: Vec<f64>,
    raters: usize,
}

impl DSParams {
    pub fn new(pi: Simplex, rows: Vec<Vec<Simplex>>) -> Result<Self> {
        let k = pi.len();
        let raters = rows.len();
        let mut theta = Vec::with_capacity(raters * k * k);
        for (j, rater_rows) in rows.iter().enumerate() {
            if rater_rows.len() != k || rater_rows.iter().any(|r| r.len() != k) {
                return Err(Error::InvalidArgument(format!("rater {j} confusion matrix is not {k}x{k}")));
            }
            for r in rater_rows {
                theta.extend_from_slice(r.as_slice());
            }
        }
        Ok(Self { pi, theta, raters })
    }

    /// Builds from a flat row-major theta buffer whose rows are simplexes.
    pub(crate) fn from_flat(pi: Simplex, theta: Vec<f64>, raters: usize) -> Self {
        debug_assert_eq!(theta.len(), raters * pi.len() * pi.len());
        Self { pi, theta, raters }
    }

    /// Every rater shares `accuracy` on the diagonal and splits the rest evenly.
    pub fn symmetric(pi: Simplex, raters: usize, accuracy: f64) -> Result<Self> {
        let k = pi.len();
        if !(0.0..=1.0).contains(&accuracy) || k < 2 {
            return Err(Error::InvalidParameter(format!("accuracy {accuracy} with K = {k}")));
        }
        let off = (1.0 - accuracy) / (k - 1) as f64;
        let mut theta = Vec::with_capacity(raters * k * k);
        for _ in 0..raters {
            for t in 0..k {
                theta.extend((0..k).map(|c| if c == t { accuracy } else { off }));
            }
        }
        Ok(Self { pi, theta, raters })
    }

    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn raters(&self) -> usize {
        self.raters
    }

    pub fn theta_row(&self, rater: usize, truth: usize) -> &[f64] {
        let k = self.k();
        let start = (rater * k + truth) * k;
        &self.theta[start..start + k]
    }

    pub fn theta(&self, rater: usize, truth: usize, reported: usize) -> f64 {
        self.theta_row(rater, truth)[reported]
    }

    pub fn theta_flat(&self) -> &[f64] {
        &self.theta
    }

    pub(crate) fn theta_row_mut(&mut self, rater: usize, truth: usize) -> &mut [f64] {
        let k = self.k();
        let start = (rater * k + truth) * k;
        &mut self.theta[start..start + k]
    }

    /// `[pi_1..pi_K, theta[1,1,1], theta[1,1,2], ...]`
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.pi.as_slice().to_vec();
        v.extend_from_slice(&self.theta);
        v
    }

    pub fn param_names(raters: usize, k: usize) -> Vec<String> {
        let mut names: Vec<String> = (1..=k).map(|i| format!("pi[{i}]")).collect();
        for j in 1..=raters {
            for t in 1..=k {
                for c in 1..=k {
                    names.push(format!("theta[{j},{t},{c}]"));
                }
            }
        }
        names
    }

    pub(crate) fn check(&self, data: &DSData) -> Result<()> {
        if self.k() != data.categories || self.raters != data.raters {
            return Err(Error::InvalidArgument(format!(
                "params for {} raters / {} categories, data has {} / {}",
                self.raters,
                self.k(),
                data.raters,
                data.categories
            )));
        }
        Ok(())
    }
}

/// Item true categories, zero-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DSLatent {
    pub z: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DSHyper {
    pub alpha: Vec<f64>,
    pub n: f64,
    pub p: f64,
}

impl DSHyper {
    /// `α = (3, ..., 3)`, `N = 8`, `p = 0.6`.
    pub fn defaults(k: usize) -> Self {
        Self { alpha: vec![3.0; k], n: 8.0, p: 0.6 }
    }
}

pub fn ds_beta_matrix(hyper: &DSHyper, k: usize) -> Result<Vec<Vec<f64>>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("beta matrix needs K >= 2, got {k}")));
    }
    if !(hyper.n > 0.0) || !(hyper.p > 0.0 && hyper.p < 1.0) {
        return Err(Error::InvalidParameter(format!("N = {}, p = {}", hyper.n, hyper.p)));
    }
    let diag = hyper.n * hyper.p;
    let off = hyper.n * (1.0 - hyper.p) / (k - 1) as f64;
    Ok((0..k).map(|r| (0..k).map(|c| if r == c { diag } else { off }).collect()).collect())
}

pub fn ds_log_prior(params: &DSParams, hyper: &DSHyper) -> Result<f64> {
    let k = params.k();
    let beta = ds_beta_matrix(hyper, k)?;
    let mut lp = log_dirichlet_pdf(&params.pi, &hyper.alpha)?;
    let beta_norm: Vec<f64> = beta.iter().map(|b| ln_multivariate_beta(b)).collect();
    for j in 0..params.raters {
        for t in 0..k {
            let row = params.theta_row(j, t);
            lp += dirichlet_kernel(row.iter().map(|v| v.ln()), &beta[t]) - beta_norm[t];
        }
    }
    Ok(lp)
}

/// `Σ_i [ln π_{z_i} + Σ_j ln θ_{j, z_i, y_ij}]`.
pub fn ds_full_log_lik(data: &DSData, latent: &DSLatent, params: &DSParams) -> Result<f64> {
    params.check(data)?;
    if latent.z.len() != data.items {
        return Err(Error::InvalidArgument(format!("{} labels for {} items", latent.z.len(), data.items)));
    }
    let mut total = 0.0;
    for (i, &z) in latent.z.iter().enumerate() {
        if z >= params.k() {
            return Err(Error::InvalidArgument(format!("label {z} out of range")));
        }
        total += params.pi[z].ln();
        for (j, &y) in data.item_ratings(i).iter().enumerate() {
            total += params.theta(j, z, y).ln();
        }
    }
    Ok(total)
}

pub fn ds_full_log_joint(data: &DSData, latent: &DSLatent, params: &DSParams, hyper: &DSHyper) -> Result<f64> {
    Ok(ds_full_log_lik(data, latent, params)? + ds_log_prior(params, hyper)?)
}

/// `Σ_i ln Σ_k π_k Π_j θ_{j,k,y_ij}`.
pub fn ds_marginal_log_lik(data: &DSData, params: &DSParams) -> Result<f64> {
    params.check(data)?;
    let log_pi: Vec<f64> = params.pi.as_slice().iter().map(|p| p.ln()).collect();
    let log_theta: Vec<f64> = params.theta.iter().map(|t| t.ln()).collect();
    Ok(marginal_impl(data, &log_pi, &log_theta, None))
}

/// Shared hot loop; when `resp` is given it receives the per-item
/// responsibilities, `resp[i * K + k]`.
fn marginal_impl(data: &DSData, log_pi: &[f64], log_theta: &[f64], mut resp: Option<&mut [f64]>) -> f64 {
    let k = log_pi.len();
    let mut w = vec![0.0; k];
    let mut total = 0.0;
    for i in 0..data.items {
        w.copy_from_slice(log_pi);
        for (j, &y) in data.item_ratings(i).iter().enumerate() {
            let base = j * k * k + y;
            for (t, wt) in w.iter_mut().enumerate() {
                *wt += log_theta[base + t * k];
            }
        }
        let norm = lse(&w);
        total += norm;
        if let Some(r) = resp.as_deref_mut() {
            for t in 0..k {
                r[i * k + t] = (w[t] - norm).exp();
            }
        }
    }
    total
}

pub fn ds_marginal_log_joint(data: &DSData, params: &DSParams, hyper: &DSHyper) -> Result<f64> {
    Ok(ds_marginal_log_lik(data, params)? + ds_log_prior(params, hyper)?)
}

/// `P(z_i = k | y_i, params) ∝ π_k Π_j θ_{j,k,y_ij}`.
pub fn ds_z_full_conditional(data: &DSData, params: &DSParams, i: usize) -> Result<Simplex> {
    params.check(data)?;
    if i >= data.items {
        return Err(Error::InvalidArgument(format!("item index {i} out of range")));
    }
    let log_w: Vec<f64> = (0..params.k())
        .map(|t| {
            params.pi[t].ln()
                + data.item_ratings(i).iter().enumerate().map(|(j, &y)| params.theta(j, t, y).ln()).sum::<f64>()
        })
        .collect();
    Simplex::from_log_weights(&log_w)
}

/// Unconstrained coordinates: `K - 1` stick coordinates for π, then
/// `K - 1` for every confusion row in (rater, true category) order.
#[derive(Clone, Debug, PartialEq)]
pub struct UnconstrainedDSParams(pub Vec<f64>);

impl UnconstrainedDSParams {
    pub fn dim(raters: usize, k: usize) -> usize {
        (k - 1) * (1 + raters * k)
    }
}

pub fn ds_constrain(u: &[f64], raters: usize, k: usize) -> (DSParams, f64) {
    let (log_pi, log_theta, lj) = constrain_log(u, raters, k);
    let pi = Simplex::from_raw(log_pi.iter().map(|l| l.exp()).collect());
    (DSParams::from_flat(pi, log_theta.iter().map(|l| l.exp()).collect(), raters), lj)
}

fn constrain_log(u: &[f64], raters: usize, k: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let s = k - 1;
    let (log_pi, mut lj) = stick_constrain_log(&u[..s]);
    let mut log_theta = Vec::with_capacity(raters * k * k);
    for row in 0..raters * k {
        let start = s * (1 + row);
        let (lr, l) = stick_constrain_log(&u[start..start + s]);
        log_theta.extend(lr);
        lj += l;
    }
    (log_pi, log_theta, lj)
}

pub fn ds_unconstrain(params: &DSParams) -> UnconstrainedDSParams {
    let k = params.k();
    let mut v = stick_unconstrain(params.pi.as_slice());
    for j in 0..params.raters {
        for t in 0..k {
            v.extend(stick_unconstrain(params.theta_row(j, t)));
        }
    }
    UnconstrainedDSParams(v)
}

/// Marginalised Dawid–Skene posterior over unconstrained coordinates.
#[derive(Clone, Debug)]
pub struct DSModel {
    pub data: DSData,
    pub hyper: DSHyper,
    beta: Vec<Vec<f64>>,
    beta_norm: Vec<f64>,
    alpha_norm: f64,
}

impl DSModel {
    pub fn new(data: DSData, hyper: DSHyper) -> Result<Self> {
        let k = data.categories;
        if hyper.alpha.len() != k || hyper.alpha.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::InvalidParameter(format!("alpha {:?} for K = {k}", hyper.alpha)));
        }
        let beta = ds_beta_matrix(&hyper, k)?;
        let beta_norm = beta.iter().map(|b| ln_multivariate_beta(b)).collect();
        let alpha_norm = ln_multivariate_beta(&hyper.alpha);
        Ok(Self { data, hyper, beta, beta_norm, alpha_norm })
    }

    pub fn k(&self) -> usize {
        self.data.categories
    }

    pub fn beta(&self) -> &[Vec<f64>] {
        &self.beta
    }

    fn log_prior_from_logs(&self, log_pi: &[f64], log_theta: &[f64]) -> f64 {
        let k = self.k();
        let mut lp = dirichlet_kernel(log_pi.iter().copied(), &self.hyper.alpha) - self.alpha_norm;
        for (row, chunk) in log_theta.chunks(k).enumerate() {
            let t = row % k;
            lp += dirichlet_kernel(chunk.iter().copied(), &self.beta[t]) - self.beta_norm[t];
        }
        lp
    }

    pub fn log_prior(&self, params: &DSParams) -> f64 {
        let log_pi: Vec<f64> = params.pi.as_slice().iter().map(|p| p.ln()).collect();
        let log_theta: Vec<f64> = params.theta.iter().map(|t| t.ln()).collect();
        self.log_prior_from_logs(&log_pi, &log_theta)
    }
}

/// Gradient of the marginal log posterior (log-Jacobian included) in the
/// layout of [`UnconstrainedDSParams`].
pub fn ds_marginal_grad(model: &DSModel, u: &UnconstrainedDSParams) -> Vec<f64> {
    let mut g = vec![0.0; u.0.len()];
    model.log_density_and_grad(&u.0, &mut g);
    g
}

impl LogDensity for DSModel {
    fn dim(&self) -> usize {
        UnconstrainedDSParams::dim(self.data.raters, self.k())
    }

    fn log_density(&self, position: &[f64]) -> f64 {
        let (log_pi, log_theta, lj) = constrain_log(position, self.data.raters, self.k());
        marginal_impl(&self.data, &log_pi, &log_theta, None) + self.log_prior_from_logs(&log_pi, &log_theta) + lj
    }

    fn log_density_and_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        let k = self.k();
        let s = k - 1;
        let raters = self.data.raters;
        let (log_pi, log_theta, lj) = constrain_log(position, raters, k);
        let mut resp = vec![0.0; self.data.items * k];
        let lik = marginal_impl(&self.data, &log_pi, &log_theta, Some(&mut resp));

        // adjoints with respect to log weights: responsibility counts + prior
        let mut g_log_pi: Vec<f64> = self.hyper.alpha.iter().map(|a| a - 1.0).collect();
        let mut g_log_theta = Vec::with_capacity(raters * k * k);
        for _ in 0..raters {
            for b in &self.beta {
                g_log_theta.extend(b.iter().map(|v| v - 1.0));
            }
        }
        for i in 0..self.data.items {
            let r = &resp[i * k..(i + 1) * k];
            for t in 0..k {
                g_log_pi[t] += r[t];
            }
            for (j, &y) in self.data.item_ratings(i).iter().enumerate() {
                let base = j * k * k + y;
                for t in 0..k {
                    g_log_theta[base + t * k] += r[t];
                }
            }
        }

        grad[..s].copy_from_slice(&stick_grad_from_log(&position[..s], &g_log_pi));
        for row in 0..raters * k {
            let start = s * (1 + row);
            let g = stick_grad_from_log(&position[start..start + s], &g_log_theta[row * k..(row + 1) * k]);
            grad[start..start + s].copy_from_slice(&g);
        }
        lik + self.log_prior_from_logs(&log_pi, &log_theta) + lj
    }
}

impl MarginalPosterior for DSModel {
    fn param_names(&self) -> Vec<String> {
        DSParams::param_names(self.data.raters, self.k())
    }

    fn constrained(&self, position: &[f64]) -> Vec<f64> {
        ds_constrain(position, self.data.raters, self.k()).0.flatten()
    }
}
