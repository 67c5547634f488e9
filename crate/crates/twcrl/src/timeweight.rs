//! Time-weighted labeling function and its validation oracles.
//!
//! In an episode of horizon `T`, the weight `w(t)` is the probability that a
//! run of an absorbing chain with per-step absorption probability `f(t, T)`
//! has been absorbed by step `t`. The absorption probability is exponential
//! in `t` with steepness `alpha`, normalized so `f(0,T) = 0` and `f(T,T) = 1`:
//!
//! ```text
//! f(t, T) = (e^{alpha t} - 1) / (e^{alpha T} - 1)
//! w(t)    = 1 - (1 - f(t, T))^t
//! ```
//!
//! Both are evaluated in log domain: the textbook forms overflow `f64` already
//! at `alpha * T = 600`, a configuration the maze defaults actually use.

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::Scalar;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Steepness and horizon for the time-weighted function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWeightParams<T = crate::Real> {
    pub alpha: T,
    pub horizon: u32,
}

impl<T: Scalar> TimeWeightParams<T> {
    pub fn new(alpha: T, horizon: u32) -> Result<Self> {
        if !(alpha > T::zero()) || !alpha.is_finite() {
            return Err(Error::OutOfRange(format!("alpha must be positive and finite, got {alpha:?}")));
        }
        if horizon < 1 {
            return Err(Error::InvalidHorizon("horizon must be >= 1".into()));
        }
        Ok(Self { alpha, horizon })
    }
}

impl Default for TimeWeightParams<crate::Real> {
    /// Maze defaults: alpha 2, horizon 300.
    fn default() -> Self {
        Self { alpha: 2.0, horizon: 300 }
    }
}

fn check_range<T: Scalar>(t: u32, p: &TimeWeightParams<T>) -> Result<()> {
    if t > p.horizon {
        return Err(Error::OutOfRange(format!("t = {t} outside [0, {}]", p.horizon)));
    }
    Ok(())
}

/// Per-step absorption probability `f(t, T)`.
///
/// Evaluated as `exp(alpha (t - T)) * expm1(-alpha t) / expm1(-alpha T)`,
/// which is algebraically identical and stays finite for any `alpha * T`.
pub fn transition_prob_f<T: Scalar>(t: u32, p: &TimeWeightParams<T>) -> Result<T> {
    check_range(t, p)?;
    if t == 0 {
        return Ok(T::zero());
    }
    if t == p.horizon {
        return Ok(T::one());
    }
    let alpha = p.alpha;
    let tf = T::from_u32(t).unwrap();
    let hf = T::from_u32(p.horizon).unwrap();
    let scale = (alpha * (tf - hf)).exp();
    let num = (-alpha * tf).exp_m1();
    let den = (-alpha * hf).exp_m1();
    Ok(scale * num / den)
}

/// Time weight `w(t) = 1 - (1 - f(t,T))^t`, via `-expm1(t * ln1p(-f))`.
///
/// `w(0) = 0` and `w(T) = 1` hold exactly, and `w` is non-decreasing in `t`.
pub fn time_weight_w<T: Scalar>(t: u32, p: &TimeWeightParams<T>) -> Result<T> {
    check_range(t, p)?;
    if t == 0 {
        return Ok(T::zero());
    }
    let f = transition_prob_f(t, p)?;
    if f == T::one() {
        return Ok(T::one());
    }
    let tf = T::from_u32(t).unwrap();
    Ok(-(tf * (-f).ln_1p()).exp_m1())
}

/// Un-approximated conditional `(1 - (1-f)^t) / (1 - (1-f)^T)` with `f = f(t,T)`.
///
/// Exposed for validation only; labeling always uses [`time_weight_w`].
/// When `f` underflows to zero the ratio tends to `t / T`, which is returned
/// as the limit value.
pub fn exact_conditional<T: Scalar>(t: u32, p: &TimeWeightParams<T>) -> Result<T> {
    check_range(t, p)?;
    if t == 0 {
        return Ok(T::zero());
    }
    let f = transition_prob_f(t, p)?;
    let tf = T::from_u32(t).unwrap();
    let hf = T::from_u32(p.horizon).unwrap();
    if f == T::zero() {
        return Ok(tf / hf);
    }
    if f == T::one() {
        return Ok(T::one());
    }
    let log1mf = (-f).ln_1p();
    let num = -(tf * log1mf).exp_m1();
    let den = -(hf * log1mf).exp_m1();
    Ok(num / den)
}

/// Monte-Carlo estimate of the constant-`k` absorption conditional.
///
/// Simulates `n_samples` chains that absorb with probability `k` per step;
/// among chains absorbed by step `horizon`, returns the fraction absorbed by
/// step `t` together with the binomial standard error. Consistent estimator
/// of `(1 - (1-k)^t) / (1 - (1-k)^horizon)`.
pub fn mc_constant_k_conditional(
    k: f64,
    t: u32,
    horizon: u32,
    n_samples: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    if !(k > 0.0 && k < 1.0) {
        return Err(Error::OutOfRange(format!("k must lie in (0, 1), got {k}")));
    }
    if t < 1 || t > horizon {
        return Err(Error::OutOfRange(format!("t = {t} outside [1, {horizon}]")));
    }
    if n_samples < 1000 {
        return Err(Error::OutOfRange(format!("n_samples must be >= 1000, got {n_samples}")));
    }
    let mut rng = stream(seed, "mc-absorb", 0);
    let mut absorbed_by_t = 0u64;
    let mut absorbed_by_horizon = 0u64;
    for _ in 0..n_samples {
        for step in 1..=horizon {
            if rng.gen::<f64>() < k {
                if step <= t {
                    absorbed_by_t += 1;
                }
                absorbed_by_horizon += 1;
                break;
            }
        }
    }
    if absorbed_by_horizon == 0 {
        return Err(Error::NoData("no chain absorbed within the horizon".into()));
    }
    let m = absorbed_by_horizon as f64;
    let estimate = absorbed_by_t as f64 / m;
    let std_error = (estimate * (1.0 - estimate) / m).sqrt();
    Ok((estimate, std_error))
}

/// Closed form `(1 - (1-k)^t) / (1 - (1-k)^T)` the Monte-Carlo oracle targets.
pub fn constant_k_closed_form(k: f64, t: u32, horizon: u32) -> f64 {
    let base = 1.0 - k;
    (1.0 - base.powi(t as i32)) / (1.0 - base.powi(horizon as i32))
}
