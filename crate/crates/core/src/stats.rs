//! Log densities, primitive samplers and numerically stable reductions shared
//! by the models and samplers.
//!
//! Everything here works in log space. Category indices are zero-based
//! (`0..K`); the one-based convention only appears in the dataset files.

use std::f64::consts::SQRT_2;

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// `0.5 * ln(2π)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Absolute tolerance on the sum of simplex weights.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Deterministic random stream identified by `(seed, stream)`.
///
/// Backed by ChaCha8, whose 64-bit stream selector gives independent
/// sequences for every `stream` under the same `seed`. One handle per chain;
/// handles are never shared between threads.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u: f64 = self.inner.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn std_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Probability vector: entries in `[0, 1]` summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct Simplex(Vec<f64>);

impl Simplex {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("empty simplex".into()));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::InvalidParameter(format!("simplex weight outside [0, 1]: {weights:?}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidParameter(format!("simplex weights sum to {total}")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0, "uniform simplex needs at least one category");
        Self(vec![1.0 / k as f64; k])
    }

    /// Unit vector on category `k`.
    pub fn vertex(len: usize, k: usize) -> Self {
        let mut w = vec![0.0; len];
        w[k] = 1.0;
        Self(w)
    }

    /// Normalises unnormalised log weights (softmax) into a simplex.
    pub fn from_log_weights(log_w: &[f64]) -> Result<Self> {
        let norm = log_sum_exp(log_w)?;
        if !norm.is_finite() {
            return Err(Error::InvalidParameter(format!("cannot normalise log weights {log_w:?}")));
        }
        Ok(Self(normalise_log_weights(log_w, norm)))
    }

    /// Wraps weights that are a simplex by construction (skips validation).
    pub(crate) fn from_raw(weights: Vec<f64>) -> Self {
        debug_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        Self(weights)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for Simplex {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

/// `exp(log_w - norm)` with the result renormalised to absorb rounding.
fn normalise_log_weights(log_w: &[f64], norm: f64) -> Vec<f64> {
    let mut w: Vec<f64> = log_w.iter().map(|&l| (l - norm).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

#[inline]
pub(crate) fn normal_lpdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - HALF_LN_2PI
}

pub fn log_normal_pdf(x: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(x.is_finite() && mu.is_finite() && sigma.is_finite()) || sigma <= 0.0 {
        return Err(Error::InvalidParameter(format!("normal(x={x}, mu={mu}, sigma={sigma})")));
    }
    Ok(normal_lpdf(x, mu, sigma))
}

/// `ln(1 - Φ(z))` for the standard normal, accurate far into the upper tail.
pub fn normal_log_ccdf(z: f64) -> f64 {
    if z == f64::NEG_INFINITY {
        0.0
    } else if z < 30.0 {
        (0.5 * erfc(z / SQRT_2)).ln()
    } else {
        // asymptotic series; erfc underflows past ~37
        let z2 = z * z;
        -0.5 * z2 - z.ln() - HALF_LN_2PI + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

/// `ln Φ(z)`.
pub fn normal_log_cdf(z: f64) -> f64 {
    normal_log_ccdf(-z)
}

/// Normal density left-truncated at `lower` (`lower = -inf` means no truncation).
pub fn log_truncated_normal_pdf(x: f64, mu: f64, sigma: f64, lower: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("truncated normal sigma = {sigma}")));
    }
    if x <= lower {
        return Ok(f64::NEG_INFINITY);
    }
    let lp = log_normal_pdf(x, mu, sigma)?;
    Ok(lp - normal_log_ccdf((lower - mu) / sigma))
}

pub fn log_lognormal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    let lx = x.ln();
    normal_lpdf(lx, mu, sigma) - lx
}

/// `ln B(alpha)`, the log multivariate beta function.
pub fn ln_multivariate_beta(alpha: &[f64]) -> f64 {
    alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(alpha.iter().sum())
}

pub fn log_dirichlet_pdf(p: &Simplex, alpha: &[f64]) -> Result<f64> {
    if p.len() != alpha.len() {
        return Err(Error::InvalidArgument(format!(
            "dirichlet dimension mismatch: {} weights, {} concentrations",
            p.len(),
            alpha.len()
        )));
    }
    if alpha.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::InvalidParameter(format!("dirichlet concentration {alpha:?}")));
    }
    Ok(dirichlet_kernel(p.as_slice().iter().map(|w| w.ln()), alpha) - ln_multivariate_beta(alpha))
}

/// `Σ (alpha_k - 1) ln p_k` from log weights, treating `0 · ln 0` as zero.
pub(crate) fn dirichlet_kernel(log_p: impl Iterator<Item = f64>, alpha: &[f64]) -> f64 {
    log_p
        .zip(alpha)
        .map(|(lp, &a)| if a == 1.0 { 0.0 } else { (a - 1.0) * lp })
        .sum()
}

/// Stable `ln Σ exp(v_i)`.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("log_sum_exp of an empty vector".into()));
    }
    Ok(lse(v))
}

/// Infallible `log_sum_exp` for hot loops; the caller guarantees `v` is non-empty.
#[inline]
pub(crate) fn lse(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

#[inline]
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let max = a.max(b);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + ((a - max).exp() + (b - max).exp()).ln()
}

/// Draws a category index in `0..K` with probability `p[k]`.
pub fn sample_categorical(rng: &mut Rng, p: &Simplex) -> usize {
    categorical_from_weights(rng, p.as_slice())
}

pub(crate) fn categorical_from_weights(rng: &mut Rng, w: &[f64]) -> usize {
    let total: f64 = w.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &wk) in w.iter().enumerate() {
        if wk > 0.0 {
            acc += wk;
            last_positive = k;
            if u < acc {
                return k;
            }
        }
    }
    last_positive
}

/// Log of a Gamma(shape, 1) variate. Small shapes use the boost
/// `G(a) = G(a + 1) · U^(1/a)` evaluated in log space so draws never underflow.
fn log_gamma_variate(rng: &mut Rng, shape: f64) -> f64 {
    if shape < 1.0 {
        let g = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        g.ln() + rng.uniform_open().ln() / shape
    } else {
        Gamma::new(shape, 1.0).expect("positive shape").sample(rng).ln()
    }
}

pub fn sample_dirichlet(rng: &mut Rng, alpha: &[f64]) -> Result<Simplex> {
    if alpha.is_empty() || alpha.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
        return Err(Error::InvalidParameter(format!("dirichlet concentration {alpha:?}")));
    }
    let log_g: Vec<f64> = alpha.iter().map(|&a| log_gamma_variate(rng, a)).collect();
    let norm = lse(&log_g);
    Ok(Simplex(normalise_log_weights(&log_g, norm)))
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Draw from N(mu, sigma²) restricted to `(lower, upper)`.
///
/// Inverse CDF on whichever tail the interval lies in, switching to
/// rejection samplers once the interval sits more than 5 sd out.
pub fn sample_truncated_normal(rng: &mut Rng, mu: f64, sigma: f64, lower: f64, upper: f64) -> Result<f64> {
    if !(sigma > 0.0) || !(lower < upper) || mu.is_nan() {
        return Err(Error::InvalidParameter(format!(
            "truncated normal(mu={mu}, sigma={sigma}, lower={lower}, upper={upper})"
        )));
    }
    let a = (lower - mu) / sigma;
    let b = (upper - mu) / sigma;
    // reflect so the interval is never entirely in the lower tail
    let z = if b <= 0.0 { -std_truncated_normal(rng, -b, -a) } else { std_truncated_normal(rng, a, b) };
    Ok((mu + sigma * z).clamp(lower.max(f64::MIN), upper.min(f64::MAX)))
}

/// Standard normal truncated to `(a, b)` with `b > 0`.
fn std_truncated_normal(rng: &mut Rng, a: f64, b: f64) -> f64 {
    if a < 0.0 {
        // interval straddles the mode: inverse CDF on the lower-tail scale
        let pa = 0.5 * erfc(-a / SQRT_2);
        let pb = 0.5 * erfc(-b / SQRT_2);
        let u = pa + rng.uniform_open() * (pb - pa);
        return normal_quantile(u).clamp(a, b);
    }
    if a < 5.0 {
        // upper tail: inverse of the complementary CDF keeps precision
        let qa = 0.5 * erfc(a / SQRT_2);
        let qb = 0.5 * erfc(b / SQRT_2);
        let u = qb + rng.uniform_open() * (qa - qb);
        return (SQRT_2 * erfc_inv(2.0 * u)).clamp(a, b);
    }
    if (b - a) * a < 1.0 {
        // narrow far-tail interval: uniform proposal, acceptance >= e^-1
        loop {
            let x = a + rng.random::<f64>() * (b - a);
            if rng.uniform_open().ln() <= -0.5 * (x * x - a * a) {
                return x;
            }
        }
    }
    // exponential proposal with optimal rate
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let x = a - rng.uniform_open().ln() / rate;
        if x < b && rng.uniform_open().ln() <= -0.5 * (x - rate) * (x - rate) {
            return x;
        }
    }
}

/// Softplus `ln(1 + e^x)`.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{LN_2, PI};
    use statrs::distribution::{Beta, ChiSquared, ContinuousCDF, Normal};

    fn chi_square_critical(df: usize) -> f64 {
        ChiSquared::new(df as f64).unwrap().inverse_cdf(1.0 - 1e-6)
    }

    fn chi_square(observed: &[usize], expected: &[f64]) -> f64 {
        observed.iter().zip(expected).map(|(&o, &e)| (o as f64 - e).powi(2) / e).sum()
    }

    /// Simpson's rule on `[lo, hi]` with `n` (even) panels.
    fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(lo + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn normal_density_values() {
        assert!((log_normal_pdf(0.0, 0.0, 1.0).unwrap() + 0.918_938_533_2).abs() < 1e-10);
        for &(mu, s) in &[(3.0, 0.5), (-7.0, 2.0), (0.0, 10.0)] {
            let expect = -f64::ln(s) - 0.5 * (2.0 * PI).ln();
            assert!((log_normal_pdf(mu, mu, s).unwrap() - expect).abs() < 1e-14);
        }
        // quadrature-normalised kernel
        let kernel = |x: f64| (-(x + 5.0) * (x + 5.0) / 8.0).exp();
        let z = simpson(kernel, -45.0, 35.0, 20_000);
        let reference = kernel(5.0).ln() - z.ln();
        assert!((log_normal_pdf(5.0, -5.0, 2.0).unwrap() - reference).abs() < 1e-9);
    }

    #[test]
    fn normal_density_rejects_bad_input() {
        assert!(log_normal_pdf(f64::NAN, 0.0, 1.0).is_err());
        assert!(log_normal_pdf(0.0, f64::INFINITY, 1.0).is_err());
        assert!(log_normal_pdf(0.0, 0.0, 0.0).is_err());
        assert!(log_normal_pdf(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn truncated_normal_density() {
        for &x in &[-3.0, 0.0, 12.5] {
            assert_eq!(
                log_truncated_normal_pdf(x, 0.0, 10.0, f64::NEG_INFINITY).unwrap(),
                log_normal_pdf(x, 0.0, 10.0).unwrap()
            );
        }
        assert_eq!(log_truncated_normal_pdf(-1.0, 0.0, 1.0, 0.0).unwrap(), f64::NEG_INFINITY);
        assert_eq!(log_truncated_normal_pdf(0.0, 0.0, 1.0, 0.0).unwrap(), f64::NEG_INFINITY);
        // upper-tail mass at 0 by quadrature
        let mass = simpson(|x| log_normal_pdf(x, 0.0, 1.0).unwrap().exp(), 0.0, 40.0, 40_000);
        let expect = log_normal_pdf(1.0, 0.0, 1.0).unwrap() - mass.ln();
        let got = log_truncated_normal_pdf(1.0, 0.0, 1.0, 0.0).unwrap();
        assert!((got - expect).abs() < 1e-9);
        assert!((got - (log_normal_pdf(1.0, 0.0, 1.0).unwrap() - 0.5f64.ln())).abs() < 1e-12);
        assert!(log_truncated_normal_pdf(1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn truncated_density_integrates_to_one() {
        let mass = simpson(|x| log_truncated_normal_pdf(x, 1.0, 3.0, 4.0).unwrap().exp(), 4.0 + 1e-12, 60.0, 40_000);
        assert!((mass - 1.0).abs() < 1e-8);
    }

    #[test]
    fn log_ccdf_tail_is_continuous() {
        let below = normal_log_ccdf(30.0 - 1e-9);
        let above = normal_log_ccdf(30.0 + 1e-9);
        assert!((below - above).abs() < 1e-6, "{below} vs {above}");
        assert!(normal_log_ccdf(50.0).is_finite());
        assert!((normal_log_ccdf(0.0) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn lognormal_density() {
        assert!((log_lognormal_pdf(1.0, 0.0, 1.0) + 0.918_938_533_2).abs() < 1e-10);
        let e = std::f64::consts::E;
        assert!((log_lognormal_pdf(e, 0.0, 1.0) - (-0.918_938_533_2 - 1.0 - 0.5)).abs() < 1e-10);
        assert_eq!(log_lognormal_pdf(0.0, 0.0, 1.0), f64::NEG_INFINITY);
        assert_eq!(log_lognormal_pdf(-2.0, 0.0, 1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn dirichlet_density() {
        // uniform Dirichlet has density (K-1)!
        for k in 2..6 {
            let p = Simplex::uniform(k);
            let fact: f64 = (1..k).map(|i| i as f64).product();
            assert!((log_dirichlet_pdf(&p, &vec![1.0; k]).unwrap() - fact.ln()).abs() < 1e-12);
        }
        let half = Simplex::new(vec![0.5, 0.5]).unwrap();
        assert!(log_dirichlet_pdf(&half, &[1.0, 1.0]).unwrap().abs() < 1e-14);
        // Beta(3,3) at 0.2: 1/B(3,3) = 5!/(2!2!) = 30
        let p = Simplex::new(vec![0.2, 0.8]).unwrap();
        let reference = (30.0 * 0.2f64.powi(2) * 0.8f64.powi(2)).ln();
        assert!((log_dirichlet_pdf(&p, &[3.0, 3.0]).unwrap() - reference).abs() < 1e-12);
        assert!(log_dirichlet_pdf(&p, &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn dirichlet_integrates_on_two_simplex() {
        let alpha = [2.0, 3.0, 1.5];
        let n = 800;
        let h = 1.0 / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n - i {
                let (a, b) = ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                let c = 1.0 - a - b;
                if c <= 0.0 {
                    continue;
                }
                let p = Simplex::from_raw(vec![a, b, c]);
                total += log_dirichlet_pdf(&p, &alpha).unwrap().exp() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-3, "mass {total}");
    }

    #[test]
    fn log_sum_exp_cases() {
        assert_eq!(log_sum_exp(&[3.5]).unwrap(), 3.5);
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - LN_2).abs() < 1e-15);
        let expect = -1000.0 + (1.0 + (-1.0f64).exp()).ln();
        assert!((log_sum_exp(&[-1000.0, -1001.0]).unwrap() - expect).abs() < 1e-12);
        assert!((expect + 999.6867).abs() < 1e-4);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]).unwrap(), f64::NEG_INFINITY);
        assert!(log_sum_exp(&[]).is_err());
        assert!((log_sum_exp(&[1e308, -1e308]).unwrap() - 1e308).abs() < 1e292);
    }

    #[test]
    fn simplex_validation() {
        assert!(Simplex::new(vec![0.5, 0.5]).is_ok());
        assert!(Simplex::new(vec![0.5, 0.6]).is_err());
        assert!(Simplex::new(vec![1.5, -0.5]).is_err());
        assert!(Simplex::new(vec![]).is_err());
        let s = Simplex::from_log_weights(&[-1000.0, -1000.0]).unwrap();
        assert_eq!(s.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn rng_streams() {
        let draws = |seed, stream| {
            let mut r = Rng::new(seed, stream);
            (0..32).map(|_| r.next_u64()).collect::<Vec<_>>()
        };
        assert_eq!(draws(7, 0), draws(7, 0));
        assert_ne!(draws(7, 0), draws(7, 1));
        assert_ne!(draws(7, 0), draws(8, 0));
    }

    #[test]
    fn categorical_degenerate_and_frequencies() {
        let mut rng = Rng::new(1, 0);
        let point = Simplex::vertex(3, 0);
        assert!((0..1000).all(|_| sample_categorical(&mut rng, &point) == 0));

        let n = 100_000;
        let half = Simplex::new(vec![0.5, 0.5]).unwrap();
        let c = (0..n).filter(|_| sample_categorical(&mut rng, &half) == 0).count();
        let f = c as f64 / n as f64;
        assert!((0.49..=0.51).contains(&f), "{f}");

        let skew = Simplex::new(vec![0.7, 0.3]).unwrap();
        let c = (0..n).filter(|_| sample_categorical(&mut rng, &skew) == 0).count();
        let f = c as f64 / n as f64;
        assert!((f - 0.7).abs() <= 3.0 * 0.0044, "{f}");
    }

    #[test]
    fn categorical_chi_square() {
        let mut rng = Rng::new(2, 0);
        let n = 100_000;
        for p in [vec![0.2; 5], vec![0.7, 0.2, 0.1], vec![0.05, 0.45, 0.25, 0.25]] {
            let s = Simplex::new(p.clone()).unwrap();
            let mut counts = vec![0usize; p.len()];
            for _ in 0..n {
                counts[sample_categorical(&mut rng, &s)] += 1;
            }
            let expected: Vec<f64> = p.iter().map(|q| q * n as f64).collect();
            assert!(chi_square(&counts, &expected) < chi_square_critical(p.len() - 1));
        }
    }

    #[test]
    fn dirichlet_concentration_and_means() {
        let mut rng = Rng::new(3, 0);
        let d = sample_dirichlet(&mut rng, &[1e6, 1e6]).unwrap();
        assert!((d[0] - 0.5).abs() < 0.005);

        let n = 100_000;
        let mut sums = [0.0; 3];
        for _ in 0..n {
            let d = sample_dirichlet(&mut rng, &[1.0, 1.0, 1.0]).unwrap();
            assert!((d.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (s, w) in sums.iter_mut().zip(d.as_slice()) {
                *s += w;
            }
        }
        // component variance: a(a0-a)/(a0^2(a0+1)) = 2/36
        let se = (2.0f64 / 36.0 / n as f64).sqrt();
        for s in sums {
            assert!((s / n as f64 - 1.0 / 3.0).abs() < 3.0 * se);
        }
        assert!(sample_dirichlet(&mut rng, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn dirichlet_chi_square_on_first_margin() {
        // first margin of Dirichlet(alpha) is Beta(a1, a0 - a1)
        let mut rng = Rng::new(4, 0);
        let n = 100_000;
        let bins = 20;
        for alpha in [vec![1.0, 1.0], vec![0.3, 0.8, 2.0], vec![4.8, 0.8, 0.8, 0.8, 0.8]] {
            let a0: f64 = alpha.iter().sum();
            let beta = Beta::new(alpha[0], a0 - alpha[0]).unwrap();
            let mut counts = vec![0usize; bins];
            for _ in 0..n {
                let x = sample_dirichlet(&mut rng, &alpha).unwrap()[0];
                let b = ((beta.cdf(x) * bins as f64) as usize).min(bins - 1);
                counts[b] += 1;
            }
            let expected = vec![n as f64 / bins as f64; bins];
            assert!(chi_square(&counts, &expected) < chi_square_critical(bins - 1), "{alpha:?}");
        }
    }

    #[test]
    fn truncated_normal_chi_square() {
        let mut rng = Rng::new(5, 0);
        let n = 100_000;
        let bins = 20;
        let cases = [
            (0.0, 1.0, -1.0, 2.0),
            (0.0, 1.0, 2.0, f64::INFINITY),
            (1.0, 2.0, f64::NEG_INFINITY, -4.0),
            (0.0, 1.0, 6.0, 9.0),
            (0.0, 1.0, 8.0, 8.05),
        ];
        for (mu, s, lo, hi) in cases {
            let d = Normal::new(mu, s).unwrap();
            // work in survival space for the far-tail cases
            let (slo, shi) = (d.sf(lo), d.sf(hi));
            let (clo, chi) = (d.cdf(lo), d.cdf(hi));
            let use_sf = slo < 0.5;
            let mut counts = vec![0usize; bins];
            for _ in 0..n {
                let x = sample_truncated_normal(&mut rng, mu, s, lo, hi).unwrap();
                assert!(x >= lo && x <= hi);
                let q = if use_sf {
                    let z = (x - mu) / s;
                    let lsf = normal_log_ccdf(z);
                    let (llo, lhi) = (normal_log_ccdf((lo - mu) / s), normal_log_ccdf((hi - mu) / s));
                    // fraction of mass between lo and x
                    (1.0 - (lsf - llo).exp()) / (1.0 - (lhi - llo).exp())
                } else {
                    (d.cdf(x) - clo) / (chi - clo)
                };
                let _ = (slo, shi);
                counts[((q * bins as f64) as usize).min(bins - 1)] += 1;
            }
            let expected = vec![n as f64 / bins as f64; bins];
            assert!(chi_square(&counts, &expected) < chi_square_critical(bins - 1), "{mu} {s} {lo} {hi}");
        }
    }

    #[test]
    fn truncated_normal_rejects_empty_interval() {
        let mut rng = Rng::new(6, 0);
        assert!(sample_truncated_normal(&mut rng, 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(sample_truncated_normal(&mut rng, 0.0, 0.0, 0.0, 1.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn log_sum_exp_shift_invariant(v in proptest::collection::vec(-50.0f64..50.0, 1..10), c in -500.0f64..500.0) {
            let base = log_sum_exp(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let got = log_sum_exp(&shifted).unwrap();
            proptest::prop_assert!((got - (base + c)).abs() <= 1e-12 * (base + c).abs().max(1.0));
        }
    }
}
