use super::{
    sample_from_log_weights, slice_stick, update_pi_conjugate, GibbsConfig, GibbsMode, GibbsModel, Tracer, UpdateKind,
};
use crate::dawid_skene::{ds_beta_matrix, DSData, DSHyper, DSModel, DSParams};
use crate::error::{Error, Result};
use crate::stats::{dirichlet_kernel, log_add_exp, lse, sample_dirichlet, Rng, Simplex};
use crate::transform::{stick_constrain_log, stick_unconstrain};

/// Draws every confusion row from `Dirichlet(beta_t + counts)` given labels
/// `z`. Returns the flat row-major buffer `[(j * K + t) * K + c]`.
pub fn update_theta_conjugate(data: &DSData, z: &[usize], hyper: &DSHyper, rng: &mut Rng) -> Result<Vec<f64>> {
    let k = data.categories();
    if z.len() != data.items() || z.iter().any(|&t| t >= k) {
        return Err(Error::InvalidArgument(format!("{} labels for {} items", z.len(), data.items())));
    }
    let beta = ds_beta_matrix(hyper, k)?;
    let counts = rating_counts(data, z);
    let mut theta = Vec::with_capacity(counts.len());
    let mut post = vec![0.0; k];
    for (row, c) in counts.chunks_exact(k).enumerate() {
        let t = row % k;
        for (p, (b, &n)) in post.iter_mut().zip(beta[t].iter().zip(c)) {
            *p = b + n as f64;
        }
        theta.extend_from_slice(sample_dirichlet(rng, &post)?.as_slice());
    }
    Ok(theta)
}

/// `n[(j * K + t) * K + c]` = #items labelled `t` that rater `j` rated `c`.
fn rating_counts(data: &DSData, z: &[usize]) -> Vec<usize> {
    let k = data.categories();
    let mut counts = vec![0usize; data.raters() * k * k];
    for (i, &t) in z.iter().enumerate() {
        for (j, &y) in data.item_ratings(i).iter().enumerate() {
            counts[(j * k + t) * k + y] += 1;
        }
    }
    counts
}

fn label_counts(z: &[usize], k: usize) -> Vec<usize> {
    let mut n = vec![0usize; k];
    for &t in z {
        n[t] += 1;
    }
    n
}

fn log_vec(v: &[f64]) -> Vec<f64> {
    v.iter().map(|p| p.ln()).collect()
}

fn exp_into(dst: &mut [f64], log_x: &[f64]) {
    for (d, l) in dst.iter_mut().zip(log_x) {
        *d = l.exp();
    }
}

fn pi_coord_name(m: usize) -> String {
    format!("pi_raw[{}]", m + 1)
}

impl GibbsModel for DSModel {
    type Params = DSParams;

    fn param_names(&self) -> Vec<String> {
        DSParams::param_names(self.data.raters(), self.k())
    }

    fn flatten(&self, params: &DSParams) -> Vec<f64> {
        params.flatten()
    }

    fn prior_draw(&self, rng: &mut Rng) -> DSParams {
        let k = self.k();
        let pi = sample_dirichlet(rng, &self.hyper.alpha).expect("validated concentrations");
        let mut theta = Vec::with_capacity(self.data.raters() * k * k);
        for _ in 0..self.data.raters() {
            for t in 0..k {
                theta.extend_from_slice(sample_dirichlet(rng, &self.beta()[t]).expect("validated beta").as_slice());
            }
        }
        DSParams::from_flat(pi, theta, self.data.raters())
    }

    fn check_support(&self, params: &DSParams) -> Result<()> {
        params.check(&self.data)?;
        let k = self.k();
        let row_ok = |r: &[f64]| r.iter().all(|&v| v > 0.0) && ((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        if !row_ok(params.pi.as_slice()) || !params.theta_flat().chunks(k).all(row_ok) {
            return Err(Error::OutsideSupport("class weights and confusion rows must be interior simplex points".into()));
        }
        Ok(())
    }

    fn sample_latent(&self, params: &DSParams, z: &mut Vec<usize>, rng: &mut Rng) {
        let k = self.k();
        let log_pi = log_vec(params.pi.as_slice());
        let log_theta = log_vec(params.theta_flat());
        let mut w = vec![0.0; k];
        z.clear();
        for i in 0..self.data.items() {
            w.copy_from_slice(&log_pi);
            for (j, &y) in self.data.item_ratings(i).iter().enumerate() {
                for (t, wt) in w.iter_mut().enumerate() {
                    *wt += log_theta[(j * k + t) * k + y];
                }
            }
            z.push(sample_from_log_weights(rng, &mut w));
        }
    }

    fn update_continuous(
        &self,
        params: &mut DSParams,
        latent: Option<&[usize]>,
        config: &GibbsConfig,
        rng: &mut Rng,
        tracer: &mut Tracer,
    ) -> Result<()> {
        match latent {
            Some(z) => self.full_update(params, z, config, rng, tracer),
            None => self.marginal_update(params, config, rng, tracer),
        }
    }
}

impl DSModel {
    fn full_update(
        &self,
        params: &mut DSParams,
        z: &[usize],
        config: &GibbsConfig,
        rng: &mut Rng,
        tracer: &mut Tracer,
    ) -> Result<()> {
        let k = self.k();
        let alpha = &self.hyper.alpha;
        let n_label = label_counts(z, k);
        let counts = rating_counts(&self.data, z);

        if config.mode == GibbsMode::FullConjugate {
            tracer.record(|| "pi".into(), UpdateKind::ConjugateDirichlet);
            params.pi = update_pi_conjugate(&n_label, alpha, rng)?;
            let mut post = vec![0.0; k];
            for j in 0..self.data.raters() {
                for t in 0..k {
                    tracer.record(|| format!("theta[{},{}]", j + 1, t + 1), UpdateKind::ConjugateDirichlet);
                    let c = &counts[(j * k + t) * k..][..k];
                    for (p, (b, &n)) in post.iter_mut().zip(self.beta()[t].iter().zip(c)) {
                        *p = b + n as f64;
                    }
                    params.theta_row_mut(j, t).copy_from_slice(sample_dirichlet(rng, &post)?.as_slice());
                }
            }
            return Ok(());
        }

        let mut y = stick_unconstrain(params.pi.as_slice());
        slice_stick(&mut y, config, rng, tracer, &pi_coord_name, |lx| {
            n_label.iter().zip(lx).map(|(&n, l)| n as f64 * l).sum::<f64>() + dirichlet_kernel(lx.iter().copied(), alpha)
        })?;
        params.pi = Simplex::from_raw(stick_constrain_log(&y).0.into_iter().map(f64::exp).collect());

        for j in 0..self.data.raters() {
            for t in 0..k {
                let c = &counts[(j * k + t) * k..][..k];
                let beta_t = &self.beta()[t];
                let mut y = stick_unconstrain(params.theta_row(j, t));
                let name = |m: usize| format!("theta_raw[{},{},{}]", j + 1, t + 1, m + 1);
                slice_stick(&mut y, config, rng, tracer, &name, |lx| {
                    c.iter().zip(lx).map(|(&n, l)| n as f64 * l).sum::<f64>()
                        + dirichlet_kernel(lx.iter().copied(), beta_t)
                })?;
                exp_into(params.theta_row_mut(j, t), &stick_constrain_log(&y).0);
            }
        }
        Ok(())
    }

    /// Slice updates against the summed-out likelihood. `score[i * K + t]`
    /// caches `ln π_t + Σ_j ln θ_{j,t,y_ij}` so a single confusion row moves
    /// at O(items) per evaluation.
    fn marginal_update(&self, params: &mut DSParams, config: &GibbsConfig, rng: &mut Rng, tracer: &mut Tracer) -> Result<()> {
        let k = self.k();
        let items = self.data.items();
        let alpha = &self.hyper.alpha;
        let mut log_pi = log_vec(params.pi.as_slice());
        let log_theta = log_vec(params.theta_flat());

        // rating part of each score, then the weights on top
        let mut score = vec![0.0; items * k];
        for (i, s) in score.chunks_exact_mut(k).enumerate() {
            for (j, &y) in self.data.item_ratings(i).iter().enumerate() {
                for (t, st) in s.iter_mut().enumerate() {
                    *st += log_theta[(j * k + t) * k + y];
                }
            }
        }

        let mut y = stick_unconstrain(params.pi.as_slice());
        let mut w = vec![0.0; k];
        slice_stick(&mut y, config, rng, tracer, &pi_coord_name, |lx| {
            let mut total = dirichlet_kernel(lx.iter().copied(), alpha);
            for s in score.chunks_exact(k) {
                for t in 0..k {
                    w[t] = s[t] + lx[t];
                }
                total += lse(&w);
            }
            total
        })?;
        log_pi.copy_from_slice(&stick_constrain_log(&y).0);
        params.pi = Simplex::from_raw(log_pi.iter().map(|l| l.exp()).collect());
        for s in score.chunks_exact_mut(k) {
            for (st, lp) in s.iter_mut().zip(&log_pi) {
                *st += lp;
            }
        }

        let mut others = vec![0.0; items];
        let mut own = vec![0.0; items];
        for j in 0..self.data.raters() {
            for t in 0..k {
                let row = (j * k + t) * k;
                for i in 0..items {
                    let s = &score[i * k..][..k];
                    others[i] = s
                        .iter()
                        .enumerate()
                        .filter(|&(u, _)| u != t)
                        .fold(f64::NEG_INFINITY, |acc, (_, &v)| log_add_exp(acc, v));
                    own[i] = s[t] - log_theta[row + self.data.rating(i, j)];
                }
                let beta_t = &self.beta()[t];
                let mut y = stick_unconstrain(params.theta_row(j, t));
                let name = |m: usize| format!("theta_raw[{},{},{}]", j + 1, t + 1, m + 1);
                slice_stick(&mut y, config, rng, tracer, &name, |lx| {
                    let lik: f64 = (0..items)
                        .map(|i| log_add_exp(others[i], own[i] + lx[self.data.rating(i, j)]))
                        .sum();
                    lik + dirichlet_kernel(lx.iter().copied(), beta_t)
                })?;
                let lx = stick_constrain_log(&y).0;
                for i in 0..items {
                    score[i * k + t] = own[i] + lx[self.data.rating(i, j)];
                }
                exp_into(params.theta_row_mut(j, t), &lx);
            }
        }
        Ok(())
    }
}
