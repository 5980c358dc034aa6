//! Univariate slice sampling with the doubling and shrinkage procedures
//! (Neal, 2003), including the acceptance test that keeps the doubling
//! variant reversible.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::stats::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SliceConfig {
    pub width: f64,
    pub max_doublings: usize,
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self { width: 1.0, max_doublings: 10 }
    }
}

pub fn slice_sample_1d<F: FnMut(f64) -> f64>(
    logdensity: F,
    current: f64,
    width: f64,
    max_doublings: usize,
    rng: &mut Rng,
) -> Result<f64> {
    slice_sample_bounded(logdensity, current, width, max_doublings, f64::NEG_INFINITY, f64::INFINITY, rng)
}

/// Slice update restricted to `(lower, upper)`. The doubled bracket is
/// clipped to the bounds before shrinkage; `logdensity` is never evaluated at
/// a shrinkage proposal outside them.
pub fn slice_sample_bounded<F: FnMut(f64) -> f64>(
    mut logdensity: F,
    current: f64,
    width: f64,
    max_doublings: usize,
    lower: f64,
    upper: f64,
    rng: &mut Rng,
) -> Result<f64> {
    if !(width > 0.0) {
        return Err(Error::InvalidParameter(format!("slice width {width}")));
    }
    if !(current > lower && current < upper) {
        return Err(Error::OutsideSupport(format!("slice start {current} outside ({lower}, {upper})")));
    }
    let mut f = |x: f64| if x <= lower || x >= upper { f64::NEG_INFINITY } else { logdensity(x) };

    let f0 = f(current);
    if !f0.is_finite() {
        return Err(Error::NonFinite(format!("log density {f0} at slice start {current}")));
    }
    let level = f0 + rng.uniform_open().ln();

    // doubling
    let mut left = current - width * rng.random::<f64>();
    let mut right = left + width;
    let mut f_left = f(left);
    let mut f_right = f(right);
    let mut remaining = max_doublings;
    while level < f_left || level < f_right {
        if remaining == 0 {
            // one open end is the ordinary outcome of random doubling
            // directions; both open means the slice outgrew the budget
            if level < f_left && level < f_right {
                return Err(Error::SliceBracket { x: current, doublings: max_doublings });
            }
            break;
        }
        remaining -= 1;
        let span = right - left;
        if rng.random::<f64>() < 0.5 {
            left -= span;
            f_left = f(left);
        } else {
            right += span;
            f_right = f(right);
        }
    }

    // shrinkage over the clipped bracket
    let mut lo = left.max(lower);
    let mut hi = right.min(upper);
    loop {
        let candidate = lo + rng.random::<f64>() * (hi - lo);
        if candidate > lower && candidate < upper {
            let fc = f(candidate);
            if fc.is_nan() {
                return Err(Error::NonFinite(format!("log density NaN at {candidate}")));
            }
            if level < fc && doubling_accepts(&mut f, current, candidate, level, left, right, width) {
                return Ok(candidate);
            }
        }
        if candidate < current {
            lo = candidate;
        } else {
            hi = candidate;
        }
        if hi - lo <= f64::EPSILON * current.abs().max(1.0) {
            return Err(Error::NonFinite(format!("slice collapsed onto {current} without an acceptable point")));
        }
    }
}

/// Checks that doubling from `candidate` could have produced `[left, right]`.
fn doubling_accepts<F: FnMut(f64) -> f64>(
    f: &mut F,
    current: f64,
    candidate: f64,
    level: f64,
    mut left: f64,
    mut right: f64,
    width: f64,
) -> bool {
    let mut differs = false;
    while right - left > 1.1 * width {
        let mid = 0.5 * (left + right);
        if (current < mid) != (candidate < mid) {
            differs = true;
        }
        if candidate < mid {
            right = mid;
        } else {
            left = mid;
        }
        if differs && level >= f(left) && level >= f(right) {
            return false;
        }
    }
    true
}
