//! Within-Gibbs samplers for the full (latent-label) and marginalised models.
//!
//! Each sweep updates, in order: the label block (full modes only), the
//! weights, then the remaining continuous blocks. Continuous coordinates are
//! moved one at a time by doubling slice updates unless the mode allows a
//! conjugate Dirichlet draw.

mod dawid_skene;
mod mixture;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use self::dawid_skene::update_theta_conjugate;

use crate::chain::ChainDraws;
use crate::error::{Error, Result};
use crate::slice::{slice_sample_1d, slice_sample_bounded};
use crate::stats::{categorical_from_weights, sample_dirichlet, Rng, Simplex};
use crate::transform::stick_constrain_log;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GibbsMode {
    /// Latent labels sampled; weights (and confusion rows) drawn from their
    /// Dirichlet full conditionals; everything else by slice.
    FullConjugate,
    /// Latent labels sampled; every continuous coordinate by slice.
    FullRestricted,
    /// Labels summed out; every continuous coordinate by slice.
    MarginalSlice,
}

impl GibbsMode {
    pub fn samples_latent(self) -> bool {
        !matches!(self, GibbsMode::MarginalSlice)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GibbsConfig {
    pub mode: GibbsMode,
    pub slice_width: f64,
    pub slice_max_doublings: usize,
    pub iterations: usize,
    pub warmup: usize,
    /// Keep post-warmup label draws (full modes only).
    pub keep_latent: bool,
}

impl GibbsConfig {
    pub fn new(mode: GibbsMode, iterations: usize, warmup: usize) -> Result<Self> {
        let cfg = Self { mode, slice_width: 1.0, slice_max_doublings: 10, iterations, warmup, keep_latent: false };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup >= self.iterations {
            return Err(Error::InvalidArgument(format!(
                "warmup {} must be below iterations {}",
                self.warmup, self.iterations
            )));
        }
        if !(self.slice_width > 0.0) || !self.slice_width.is_finite() {
            return Err(Error::InvalidParameter(format!("slice width {}", self.slice_width)));
        }
        Ok(())
    }
}

/// Which kernel moved a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UpdateKind {
    Categorical,
    ConjugateDirichlet,
    Slice,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub block: String,
    pub kind: UpdateKind,
}

/// Optional recorder of the per-coordinate update sequence.
#[derive(Debug, Default)]
pub struct Tracer(Option<Vec<TraceEntry>>);

impl Tracer {
    pub fn off() -> Self {
        Self(None)
    }

    pub fn on() -> Self {
        Self(Some(Vec::new()))
    }

    #[inline]
    pub(crate) fn record(&mut self, block: impl FnOnce() -> String, kind: UpdateKind) {
        if let Some(v) = &mut self.0 {
            v.push(TraceEntry { block: block(), kind });
        }
    }

    pub fn into_entries(self) -> Vec<TraceEntry> {
        self.0.unwrap_or_default()
    }
}

/// A model the Gibbs driver can sweep over.
pub trait GibbsModel: Sync {
    type Params: Clone + Send;

    fn param_names(&self) -> Vec<String>;

    fn flatten(&self, params: &Self::Params) -> Vec<f64>;

    fn prior_draw(&self, rng: &mut Rng) -> Self::Params;

    /// Errors unless `params` lies in the prior support and matches the data.
    fn check_support(&self, params: &Self::Params) -> Result<()>;

    /// Draws every label from its full conditional into `z`.
    fn sample_latent(&self, params: &Self::Params, z: &mut Vec<usize>, rng: &mut Rng);

    /// Updates all continuous parameters once, weights first.
    fn update_continuous(
        &self,
        params: &mut Self::Params,
        latent: Option<&[usize]>,
        config: &GibbsConfig,
        rng: &mut Rng,
        tracer: &mut Tracer,
    ) -> Result<()>;
}

/// Draws fresh labels given the current continuous parameters.
pub fn update_z_block<M: GibbsModel>(model: &M, params: &M::Params, rng: &mut Rng) -> Vec<usize> {
    let mut z = Vec::new();
    model.sample_latent(params, &mut z, rng);
    z
}

/// `Dirichlet(alpha + counts)`.
pub fn update_pi_conjugate(counts: &[usize], alpha: &[f64], rng: &mut Rng) -> Result<Simplex> {
    if counts.len() != alpha.len() {
        return Err(Error::InvalidArgument(format!("{} counts for {} concentrations", counts.len(), alpha.len())));
    }
    let post: Vec<f64> = alpha.iter().zip(counts).map(|(a, &c)| a + c as f64).collect();
    sample_dirichlet(rng, &post)
}

pub fn update_continuous_block<M: GibbsModel>(
    model: &M,
    latent: Option<&[usize]>,
    params: &mut M::Params,
    config: &GibbsConfig,
    rng: &mut Rng,
) -> Result<()> {
    model.update_continuous(params, latent, config, rng, &mut Tracer::off())
}

/// One sweep from `init` with the update sequence recorded.
pub fn gibbs_sweep_trace<M: GibbsModel>(
    model: &M,
    config: &GibbsConfig,
    init: &M::Params,
    rng: &mut Rng,
) -> Result<Vec<TraceEntry>> {
    let mut params = init.clone();
    model.check_support(&params)?;
    let mut tracer = Tracer::on();
    let mut z = Vec::new();
    let latent = if config.mode.samples_latent() {
        tracer.record(|| "z".into(), UpdateKind::Categorical);
        model.sample_latent(&params, &mut z, rng);
        Some(z.as_slice())
    } else {
        None
    };
    model.update_continuous(&mut params, latent, config, rng, &mut tracer)?;
    Ok(tracer.into_entries())
}

/// Runs one chain. `init = None` draws the starting point from the prior.
pub fn gibbs_run<M: GibbsModel>(
    model: &M,
    config: &GibbsConfig,
    rng: &mut Rng,
    init: Option<M::Params>,
) -> Result<ChainDraws> {
    config.validate()?;
    let mut params = match init {
        Some(p) => p,
        None => model.prior_draw(rng),
    };
    model.check_support(&params)?;

    let full = config.mode.samples_latent();
    let kept = config.iterations - config.warmup;
    let mut out = ChainDraws {
        param_names: model.param_names(),
        draws: Vec::with_capacity(kept),
        latent_draws: (full && config.keep_latent).then(|| Vec::with_capacity(kept)),
        ..Default::default()
    };
    let mut z = Vec::new();
    let mut tracer = Tracer::off();
    let start = Instant::now();
    let mut sampling_start = start;

    for it in 0..config.iterations {
        if it == config.warmup {
            sampling_start = Instant::now();
            out.warmup_seconds = (sampling_start - start).as_secs_f64();
        }
        if full {
            model.sample_latent(&params, &mut z, rng);
        }
        let latent = full.then_some(z.as_slice());
        model
            .update_continuous(&mut params, latent, config, rng, &mut tracer)
            .and_then(|_| model.check_support(&params))
            .map_err(|e| e.at_iteration(it))?;
        if it >= config.warmup {
            out.draws.push(model.flatten(&params));
            if let Some(l) = &mut out.latent_draws {
                l.push(z.clone());
            }
        }
    }
    out.sampling_seconds = sampling_start.elapsed().as_secs_f64();
    Ok(out)
}

fn slice_1d(config: &GibbsConfig, rng: &mut Rng, current: f64, f: impl FnMut(f64) -> f64) -> Result<f64> {
    slice_sample_1d(f, current, config.slice_width, config.slice_max_doublings, rng)
}

fn slice_bounded(
    config: &GibbsConfig,
    rng: &mut Rng,
    current: f64,
    lower: f64,
    upper: f64,
    f: impl FnMut(f64) -> f64,
) -> Result<f64> {
    slice_sample_bounded(f, current, config.slice_width, config.slice_max_doublings, lower, upper, rng)
}

/// Slice-updates each stick-breaking coordinate of `y` in turn. `target`
/// receives the log weights; the Jacobian is added here.
fn slice_stick(
    y: &mut [f64],
    config: &GibbsConfig,
    rng: &mut Rng,
    tracer: &mut Tracer,
    name: &dyn Fn(usize) -> String,
    mut target: impl FnMut(&[f64]) -> f64,
) -> Result<()> {
    let mut work = y.to_vec();
    for m in 0..y.len() {
        tracer.record(|| name(m), UpdateKind::Slice);
        work.copy_from_slice(y);
        y[m] = slice_1d(config, rng, y[m], |v| {
            work[m] = v;
            let (log_x, log_jac) = stick_constrain_log(&work);
            target(&log_x) + log_jac
        })?;
    }
    Ok(())
}

/// Samples a label from unnormalised log weights, overwriting them.
fn sample_from_log_weights(rng: &mut Rng, w: &mut [f64]) -> usize {
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for v in w.iter_mut() {
        *v = (*v - max).exp();
    }
    categorical_from_weights(rng, w)
}
