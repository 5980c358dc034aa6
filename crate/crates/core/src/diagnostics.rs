//! Effective sample size, split-R̂ and the per-run efficiency summary.
//!
//! Every sampler is scored with the same two estimators.

use std::collections::BTreeMap;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::chain::{by_parameter, ChainDraws};
use crate::error::{Error, Result};

fn check_shape(chains: &[Vec<f64>], min_len: usize) -> Result<usize> {
    let Some(first) = chains.first() else {
        return Err(Error::InvalidArgument("no chains".into()));
    };
    let n = first.len();
    if n < min_len || chains.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidArgument(format!("chains must share a length of at least {min_len}")));
    }
    if chains.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("draw in chain".into()));
    }
    Ok(n)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with an `n - 1` denominator.
fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// Biased autocovariance at every lag, via zero-padded FFT.
pub fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let m = mean(x);
    let len = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - m, 0.0)).collect();
    buf.resize(len, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let scale = 1.0 / (len as f64 * n as f64);
    buf[..n].iter().map(|c| c.re * scale).collect()
}

/// Multi-chain effective sample size: autocorrelations from the pooled
/// within/between variance, truncated by Geyer's initial monotone sequence,
/// capped at `M * N`.
pub fn ess(chains: &[Vec<f64>]) -> Result<f64> {
    let n = check_shape(chains, 4)?;
    let m = chains.len();
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(c)).collect();
    let nf = n as f64;
    let chain_var: Vec<f64> = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).collect();
    let within = mean(&chain_var);
    if !(within > 0.0) {
        return Err(Error::ZeroVariance("all chains are constant".into()));
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let between_over_n = if m > 1 { sample_var(&means) } else { 0.0 };
    let var_plus = within * (nf - 1.0) / nf + between_over_n;

    let rho = |t: usize| 1.0 - (within - acov.iter().map(|a| a[t]).sum::<f64>() / m as f64) / var_plus;

    // pairs (rho_2k + rho_2k+1) while positive, forced non-increasing
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if !(pair > 0.0) {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        t += 2;
    }
    let total = (m * n) as f64;
    Ok(if tau > 0.0 { (total / tau).min(total) } else { total })
}

/// Split-R̂ over the `2M` half-chains. Odd lengths drop the middle draw.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    let n = check_shape(chains, 4)?;
    let half = n / 2;
    let halves: Vec<&[f64]> = chains.iter().flat_map(|c| [&c[..half], &c[n - half..]]).collect();
    let within = halves.iter().map(|h| sample_var(h)).sum::<f64>() / halves.len() as f64;
    if !(within > 0.0) {
        return Err(Error::ZeroVariance("zero within-chain variance".into()));
    }
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let hf = half as f64;
    let between_over_n = sample_var(&means);
    let var_plus = within * (hf - 1.0) / hf + between_over_n;
    Ok((var_plus / within).sqrt())
}

/// Monte Carlo standard error of the posterior mean.
pub fn mcse_mean(chains: &[Vec<f64>]) -> Result<f64> {
    let pooled: Vec<f64> = chains.concat();
    Ok((sample_var(&pooled) / ess(chains)?).sqrt())
}

/// Monte Carlo standard error of the posterior variance, from the ESS of the
/// squared deviations.
pub fn mcse_variance(chains: &[Vec<f64>]) -> Result<f64> {
    let pooled: Vec<f64> = chains.concat();
    let m = mean(&pooled);
    let sq: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|v| (v - m) * (v - m)).collect()).collect();
    let flat = sq.concat();
    Ok((sample_var(&flat) / ess(&sq)?).sqrt())
}

/// Pooled posterior variance across chains.
pub fn pooled_variance(chains: &[Vec<f64>]) -> f64 {
    sample_var(&chains.concat())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub computation_time_seconds: f64,
    pub min_ess: f64,
    pub time_per_min_ess: f64,
    pub max_rhat: f64,
    pub ess: BTreeMap<String, f64>,
    pub rhat: BTreeMap<String, f64>,
}

impl EfficiencyReport {
    /// Name of the parameter attaining the minimum ESS.
    pub fn slowest_parameter(&self) -> Option<&str> {
        self.ess.iter().min_by(|a, b| a.1.total_cmp(b.1)).map(|(k, _)| k.as_str())
    }
}

/// `params[p][c]` is chain `c`'s trace of parameter `names[p]`.
pub fn efficiency_report(names: &[String], params: &[Vec<Vec<f64>>], computation_time_seconds: f64) -> Result<EfficiencyReport> {
    if params.is_empty() || names.len() != params.len() {
        return Err(Error::InvalidArgument(format!("{} names for {} parameters", names.len(), params.len())));
    }
    if !(computation_time_seconds >= 0.0) {
        return Err(Error::InvalidArgument(format!("computation time {computation_time_seconds}")));
    }
    let mut ess_map = BTreeMap::new();
    let mut rhat_map = BTreeMap::new();
    for (name, chains) in names.iter().zip(params) {
        ess_map.insert(name.clone(), ess(chains)?);
        rhat_map.insert(name.clone(), split_rhat(chains)?);
    }
    let min_ess = ess_map.values().copied().fold(f64::INFINITY, f64::min);
    let max_rhat = rhat_map.values().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(EfficiencyReport {
        computation_time_seconds,
        min_ess,
        time_per_min_ess: computation_time_seconds / min_ess,
        max_rhat,
        ess: ess_map,
        rhat: rhat_map,
    })
}

/// Report over every continuous parameter of a set of chains; time is summed
/// over chains, warmup plus sampling.
pub fn report_for_chains(chains: &[ChainDraws]) -> Result<EfficiencyReport> {
    let Some(first) = chains.first() else {
        return Err(Error::InvalidArgument("no chains".into()));
    };
    let time = chains.iter().map(ChainDraws::wall_time_seconds).sum();
    efficiency_report(&first.param_names, &by_parameter(chains), time)
}
