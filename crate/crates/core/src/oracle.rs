//! Self-check suite behind the `check` command: marginal likelihoods against
//! brute-force enumeration, analytic gradients against central differences,
//! and the ESS / R-hat estimators against processes with known answers.

use crate::dawid_skene::{ds_full_log_lik, ds_marginal_log_lik, DSData, DSHyper, DSLatent, DSModel, DSParams};
use crate::diagnostics::{ess, split_rhat};
use crate::error::Result;
use crate::mixture::{mix_full_log_lik, mix_marginal_log_lik, MixtureData, MixtureLatent, MixtureModel, MixtureParams};
use crate::model::LogDensity;
use crate::simulate::{find_scenario, generate, DatasetBody};
use crate::stats::{lse, sample_dirichlet, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// All assignments of `n` labels in `0..k`, in lexicographic order.
pub fn assignments(n: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = k.pow(n as u32);
    (0..total).map(move |mut code| {
        let mut z = vec![0; n];
        for slot in z.iter_mut() {
            *slot = code % k;
            code /= k;
        }
        z
    })
}

fn random_mixture(rng: &mut Rng, n: usize, k: usize) -> Result<(MixtureData, MixtureParams)> {
    let mut mu: Vec<f64> = (0..k).map(|_| 3.0 * rng.std_normal()).collect();
    mu.sort_by(f64::total_cmp);
    let sigma = (0.5 * rng.std_normal()).exp();
    let pi = sample_dirichlet(rng, &vec![1.0; k])?;
    let x = (0..n).map(|_| 4.0 * rng.std_normal()).collect();
    Ok((MixtureData::new(x)?, MixtureParams::new(mu, sigma, pi)?))
}

/// Largest `|exp(marginal - enumerated) - 1|` over random mixtures with
/// `n <= 6` and `K` in {2, 3}.
pub fn mixture_enumeration_error(draws: usize, rng: &mut Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for d in 0..draws {
        for k in [2, 3] {
            let n = 1 + d % 6;
            let (data, params) = random_mixture(rng, n, k)?;
            let terms = assignments(n, k)
                .map(|z| mix_full_log_lik(&data, &MixtureLatent { z }, &params))
                .collect::<Result<Vec<_>>>()?;
            let brute = lse(&terms);
            worst = worst.max(((mix_marginal_log_lik(&data, &params) - brute).exp() - 1.0).abs());
        }
    }
    Ok(worst)
}

fn random_ds(rng: &mut Rng, items: usize, raters: usize, k: usize) -> Result<(DSData, DSParams)> {
    let ratings = (0..items * raters).map(|_| (rng.uniform_open() * k as f64) as usize % k).collect();
    let pi = sample_dirichlet(rng, &vec![1.0; k])?;
    let rows = (0..raters)
        .map(|_| (0..k).map(|_| sample_dirichlet(rng, &vec![1.0; k])).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok((DSData::new(ratings, items, raters, k)?, DSParams::new(pi, rows)?))
}

/// Same as [`mixture_enumeration_error`] for rating designs with `I <= 4`,
/// `J <= 3`, `K <= 3`.
pub fn ds_enumeration_error(draws: usize, rng: &mut Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for d in 0..draws {
        let items = 1 + d % 4;
        let raters = 1 + (d / 4) % 3;
        let k = 2 + d % 2;
        let (data, params) = random_ds(rng, items, raters, k)?;
        let terms = assignments(items, k)
            .map(|z| ds_full_log_lik(&data, &DSLatent { z }, &params))
            .collect::<Result<Vec<_>>>()?;
        let brute = lse(&terms);
        worst = worst.max(((ds_marginal_log_lik(&data, &params)? - brute).exp() - 1.0).abs());
    }
    Ok(worst)
}

/// Largest component-wise `|analytic - central difference| / max(|analytic|, 1)`
/// over `points` standard-normal positions.
pub fn gradient_error<M: LogDensity>(model: &M, points: usize, rng: &mut Rng) -> f64 {
    let d = model.dim();
    let mut worst: f64 = 0.0;
    let mut grad = vec![0.0; d];
    for _ in 0..points {
        let q: Vec<f64> = (0..d).map(|_| rng.std_normal()).collect();
        model.log_density_and_grad(&q, &mut grad);
        for i in 0..d {
            let h = 1e-5 * q[i].abs().max(1.0);
            let mut up = q.clone();
            let mut down = q.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (model.log_density(&up) - model.log_density(&down)) / (2.0 * h);
            worst = worst.max((grad[i] - fd).abs() / grad[i].abs().max(1.0));
        }
    }
    worst
}

pub fn reference_mixture_model() -> Result<MixtureModel> {
    let data = generate(&find_scenario("three-comp-5")?, 1, 0)?;
    let DatasetBody::Mixture { data, .. } = data.body else { unreachable!("three-comp-5 is a mixture") };
    Ok(MixtureModel::new(data, 3))
}

pub fn reference_ds_model() -> Result<DSModel> {
    let data = generate(&find_scenario("ds")?, 1, 0)?;
    let DatasetBody::DawidSkene { data, .. } = data.body else { unreachable!("ds is a rating scenario") };
    DSModel::new(data, DSHyper::defaults(5))
}

fn ar1(rng: &mut Rng, n: usize, rho: f64) -> Vec<f64> {
    let innov = (1.0 - rho * rho).sqrt();
    let mut x = rng.std_normal();
    (0..n)
        .map(|_| {
            x = rho * x + innov * rng.std_normal();
            x
        })
        .collect()
}

/// `(iid ESS / N, AR(1) ESS / (N/19), split R-hat of two chains 10 apart)`.
pub fn diagnostics_oracles(rng: &mut Rng) -> Result<(f64, f64, f64)> {
    let iid: Vec<f64> = (0..10_000).map(|_| rng.std_normal()).collect();
    let iid_ratio = ess(&[iid])? / 10_000.0;
    let ar_ratio = ess(&[ar1(rng, 100_000, 0.9)])? / (100_000.0 / 19.0);
    let a: Vec<f64> = (0..1000).map(|_| rng.std_normal()).collect();
    let b: Vec<f64> = (0..1000).map(|_| 10.0 + rng.std_normal()).collect();
    Ok((iid_ratio, ar_ratio, split_rhat(&[a, b])?))
}

fn outcome(name: &'static str, result: Result<(bool, String)>) -> CheckOutcome {
    match result {
        Ok((passed, detail)) => CheckOutcome { name, passed, detail },
        Err(e) => CheckOutcome { name, passed: false, detail: format!("error: {e}") },
    }
}

/// Runs every check with streams derived from `seed`.
pub fn run_checks(seed: u64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    out.push(outcome("mixture marginal = enumeration", (|| {
        let e = mixture_enumeration_error(50, &mut Rng::new(seed, 1))?;
        Ok((e <= 1e-10, format!("max relative error {e:.2e} (tolerance 1e-10)")))
    })()));
    out.push(outcome("rating-model marginal = enumeration", (|| {
        let e = ds_enumeration_error(50, &mut Rng::new(seed, 2))?;
        Ok((e <= 1e-10, format!("max relative error {e:.2e} (tolerance 1e-10)")))
    })()));
    out.push(outcome("mixture gradient", (|| {
        let e = gradient_error(&reference_mixture_model()?, 20, &mut Rng::new(seed, 3));
        Ok((e <= 1e-6, format!("max relative error {e:.2e} (tolerance 1e-6)")))
    })()));
    out.push(outcome("rating-model gradient", (|| {
        let e = gradient_error(&reference_ds_model()?, 20, &mut Rng::new(seed, 4));
        Ok((e <= 1e-6, format!("max relative error {e:.2e} (tolerance 1e-6)")))
    })()));
    out.push(outcome("ESS and R-hat oracles", (|| {
        let (iid, ar, rhat) = diagnostics_oracles(&mut Rng::new(seed, 5))?;
        let ok = (iid - 1.0).abs() <= 0.15 && (ar - 1.0).abs() <= 0.2 && rhat > 3.0;
        Ok((ok, format!("iid ESS/N {iid:.3}, AR(1) ESS/(N/19) {ar:.3}, split R-hat {rhat:.2}")))
    })()));
    out
}
