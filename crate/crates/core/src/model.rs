//! Interfaces the samplers program against.

/// Differentiable log density on ℝ^d (unconstrained coordinates, Jacobian
/// included). Consumed by the NUTS sampler.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, position: &[f64]) -> f64;

    /// Writes the gradient into `grad` and returns the log density.
    fn log_density_and_grad(&self, position: &[f64], grad: &mut [f64]) -> f64;
}

/// A marginalised posterior that can report its draws on the constrained scale.
pub trait MarginalPosterior: LogDensity {
    /// Names of the constrained continuous parameters, in `constrained` order.
    fn param_names(&self) -> Vec<String>;

    /// Maps an unconstrained position to the flattened constrained parameters.
    fn constrained(&self, position: &[f64]) -> Vec<f64>;
}

/// Wraps a density and replaces its gradient with central differences of
/// step `h`. Slow; used to cross-check analytic gradients through a sampler.
pub struct FiniteDifference<M> {
    inner: M,
    h: f64,
}

impl<M> FiniteDifference<M> {
    pub fn new(inner: M, h: f64) -> Self {
        Self { inner, h }
    }
}

impl<M: LogDensity> LogDensity for FiniteDifference<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_density(&self, position: &[f64]) -> f64 {
        self.inner.log_density(position)
    }

    fn log_density_and_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        let mut x = position.to_vec();
        for (i, g) in grad.iter_mut().enumerate() {
            let x0 = x[i];
            x[i] = x0 + self.h;
            let up = self.inner.log_density(&x);
            x[i] = x0 - self.h;
            let down = self.inner.log_density(&x);
            x[i] = x0;
            *g = (up - down) / (2.0 * self.h);
        }
        self.inner.log_density(position)
    }
}

impl<M: MarginalPosterior> MarginalPosterior for FiniteDifference<M> {
    fn param_names(&self) -> Vec<String> {
        self.inner.param_names()
    }

    fn constrained(&self, position: &[f64]) -> Vec<f64> {
        self.inner.constrained(position)
    }
}
