use super::{
    sample_from_log_weights, slice_1d, slice_bounded, slice_stick, update_pi_conjugate, GibbsConfig, GibbsMode,
    GibbsModel, Tracer, UpdateKind,
};
use crate::error::{Error, Result};
use crate::mixture::{
    marginal_log_lik_impl, mu_log_prior, pi_log_prior, sigma_log_prior, MixtureModel, MixtureParams, MU_PRIOR_SD,
};
use crate::stats::{log_add_exp, lse, sample_dirichlet, Rng, Simplex, HALF_LN_2PI};
use crate::transform::stick_unconstrain;

/// Per-component label counts and data means.
struct ComponentStats {
    count: Vec<usize>,
    mean: Vec<f64>,
}

impl ComponentStats {
    fn new(x: &[f64], z: &[usize], k: usize) -> Self {
        let mut count = vec![0usize; k];
        let mut sum = vec![0.0; k];
        for (&xi, &zi) in x.iter().zip(z) {
            count[zi] += 1;
            sum[zi] += xi;
        }
        let mean = sum.iter().zip(&count).map(|(s, &n)| if n > 0 { s / n as f64 } else { 0.0 }).collect();
        Self { count, mean }
    }
}

fn mu_bounds(mu: &[f64], m: usize) -> (f64, f64) {
    let lo = if m > 0 { mu[m - 1] } else { f64::NEG_INFINITY };
    let hi = mu.get(m + 1).copied().unwrap_or(f64::INFINITY);
    (lo, hi)
}

impl GibbsModel for MixtureModel {
    type Params = MixtureParams;

    fn param_names(&self) -> Vec<String> {
        MixtureParams::param_names(self.k)
    }

    fn flatten(&self, params: &MixtureParams) -> Vec<f64> {
        params.flatten()
    }

    fn prior_draw(&self, rng: &mut Rng) -> MixtureParams {
        let mut mu: Vec<f64> = (0..self.k).map(|_| MU_PRIOR_SD * rng.std_normal()).collect();
        mu.sort_by(f64::total_cmp);
        let sigma = rng.std_normal().exp();
        let pi = sample_dirichlet(rng, &vec![1.0; self.k]).expect("unit concentrations");
        MixtureParams { mu, sigma, pi }
    }

    fn check_support(&self, params: &MixtureParams) -> Result<()> {
        params.validate()?;
        if params.k() != self.k {
            return Err(Error::InvalidArgument(format!("{} components, model has {}", params.k(), self.k)));
        }
        if params.pi.as_slice().iter().any(|&p| !(p > 0.0)) {
            return Err(Error::OutsideSupport(format!("mixture weight on the boundary: {:?}", params.pi.as_slice())));
        }
        Ok(())
    }

    fn sample_latent(&self, params: &MixtureParams, z: &mut Vec<usize>, rng: &mut Rng) {
        let x = self.data.x();
        let log_pi: Vec<f64> = params.pi.as_slice().iter().map(|p| p.ln()).collect();
        let inv_sigma = 1.0 / params.sigma;
        let mut w = vec![0.0; self.k];
        z.clear();
        z.extend(x.iter().map(|&xi| {
            for (k, wk) in w.iter_mut().enumerate() {
                let r = (xi - params.mu[k]) * inv_sigma;
                *wk = log_pi[k] - 0.5 * r * r;
            }
            sample_from_log_weights(rng, &mut w)
        }));
    }

    fn update_continuous(
        &self,
        params: &mut MixtureParams,
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

fn pi_coord_name(m: usize) -> String {
    format!("pi_raw[{}]", m + 1)
}

impl MixtureModel {
    fn full_update(
        &self,
        params: &mut MixtureParams,
        z: &[usize],
        config: &GibbsConfig,
        rng: &mut Rng,
        tracer: &mut Tracer,
    ) -> Result<()> {
        let x = self.data.x();
        let k = self.k;
        let stats = ComponentStats::new(x, z, k);

        if config.mode == GibbsMode::FullConjugate {
            tracer.record(|| "pi".into(), UpdateKind::ConjugateDirichlet);
            params.pi = update_pi_conjugate(&stats.count, &vec![1.0; k], rng)?;
        } else {
            let counts: Vec<f64> = stats.count.iter().map(|&c| c as f64).collect();
            let mut y = stick_unconstrain(params.pi.as_slice());
            slice_stick(&mut y, config, rng, tracer, &pi_coord_name, |lx| {
                counts.iter().zip(lx).map(|(c, l)| c * l).sum::<f64>() + pi_log_prior(lx)
            })?;
            params.pi = pi_from_stick(&y);
        }

        let inv_two_var = 0.5 / (params.sigma * params.sigma);
        for m in 0..k {
            tracer.record(|| format!("mu[{}]", m + 1), UpdateKind::Slice);
            let (lo, hi) = mu_bounds(&params.mu, m);
            let (n, xbar) = (stats.count[m] as f64, stats.mean[m]);
            let mut mu = params.mu.clone();
            params.mu[m] = slice_bounded(config, rng, params.mu[m], lo, hi, |v| {
                mu[m] = v;
                -n * (v - xbar) * (v - xbar) * inv_two_var + mu_log_prior(&mu)
            })?;
        }

        tracer.record(|| "log_sigma".into(), UpdateKind::Slice);
        let ss: f64 = x.iter().zip(z).map(|(&xi, &zi)| (xi - params.mu[zi]).powi(2)).sum();
        let n = x.len() as f64;
        let s = slice_1d(config, rng, params.sigma.ln(), |s| {
            -n * s - 0.5 * ss * (-2.0 * s).exp() + sigma_log_prior(s.exp()) + s
        })?;
        params.sigma = s.exp();
        Ok(())
    }

    fn marginal_update(
        &self,
        params: &mut MixtureParams,
        config: &GibbsConfig,
        rng: &mut Rng,
        tracer: &mut Tracer,
    ) -> Result<()> {
        let x = self.data.x();
        let k = self.k;
        let log_norm = -params.sigma.ln() - HALF_LN_2PI;
        let inv_sigma = 1.0 / params.sigma;
        let component_ld = |xi: f64, mu: f64| {
            let r = (xi - mu) * inv_sigma;
            log_norm - 0.5 * r * r
        };

        // weights: component densities are fixed while pi moves
        let dens: Vec<f64> = x.iter().flat_map(|&xi| params.mu.iter().map(move |&m| (xi, m))).map(|(xi, m)| component_ld(xi, m)).collect();
        let mut y = stick_unconstrain(params.pi.as_slice());
        let mut w = vec![0.0; k];
        slice_stick(&mut y, config, rng, tracer, &pi_coord_name, |lx| {
            let mut total = pi_log_prior(lx);
            for row in dens.chunks_exact(k) {
                for c in 0..k {
                    w[c] = row[c] + lx[c];
                }
                total += lse(&w);
            }
            total
        })?;
        params.pi = pi_from_stick(&y);
        let log_pi: Vec<f64> = params.pi.as_slice().iter().map(|p| p.ln()).collect();

        // means: fold every other component into one log term per observation
        let mut weighted: Vec<f64> = dens.chunks_exact(k).flat_map(|row| row.iter().zip(&log_pi).map(|(d, l)| d + l)).collect();
        let mut rest = vec![0.0; x.len()];
        for m in 0..k {
            tracer.record(|| format!("mu[{}]", m + 1), UpdateKind::Slice);
            for (r, row) in rest.iter_mut().zip(weighted.chunks_exact(k)) {
                *r = row
                    .iter()
                    .enumerate()
                    .filter(|&(c, _)| c != m)
                    .fold(f64::NEG_INFINITY, |acc, (_, &v)| log_add_exp(acc, v));
            }
            let (lo, hi) = mu_bounds(&params.mu, m);
            let mut mu = params.mu.clone();
            let lp = log_pi[m];
            params.mu[m] = slice_bounded(config, rng, params.mu[m], lo, hi, |v| {
                mu[m] = v;
                let lik: f64 = x.iter().zip(&rest).map(|(&xi, &r)| log_add_exp(r, lp + component_ld(xi, v))).sum();
                lik + mu_log_prior(&mu)
            })?;
            for (row, &xi) in weighted.chunks_exact_mut(k).zip(x) {
                row[m] = lp + component_ld(xi, params.mu[m]);
            }
        }

        tracer.record(|| "log_sigma".into(), UpdateKind::Slice);
        let s = slice_1d(config, rng, params.sigma.ln(), |s| {
            marginal_log_lik_impl(x, &params.mu, s, &log_pi) + sigma_log_prior(s.exp()) + s
        })?;
        params.sigma = s.exp();
        Ok(())
    }
}

fn pi_from_stick(y: &[f64]) -> Simplex {
    let (log_x, _) = crate::transform::stick_constrain_log(y);
    Simplex::from_raw(log_x.into_iter().map(f64::exp).collect())
}
