//! Floating-point abstraction shared by every numeric kernel in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar used for probabilities, log-likelihoods and coordinates.
///
/// Implemented for `f32` and `f64`. The sampling hooks live here so that the
/// Gibbs sampler can stay generic without repeating `rand_distr` bounds at
/// every call site.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Tolerance used when validating that a stochastic row sums to one.
    const SIMPLEX_TOL: f64;

    /// Smallest value a sampled probability is allowed to take.
    fn prob_floor() -> Self;

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }

    fn ln_gamma(self) -> Self {
        Self::lit(statrs::function::gamma::ln_gamma(self.as_f64()))
    }

    fn sample_gamma<R: Rng + ?Sized>(shape: Self, rng: &mut R) -> Self;

    fn sample_std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f64 {
    const SIMPLEX_TOL: f64 = 1e-9;

    fn prob_floor() -> Self {
        1e-150
    }

    fn sample_gamma<R: Rng + ?Sized>(shape: Self, rng: &mut R) -> Self {
        Gamma::new(shape, 1.0).expect("positive shape").sample(rng)
    }

    fn sample_std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random::<f64>()
    }
}

impl Scalar for f32 {
    const SIMPLEX_TOL: f64 = 1e-5;

    fn prob_floor() -> Self {
        1e-18
    }

    fn sample_gamma<R: Rng + ?Sized>(shape: Self, rng: &mut R) -> Self {
        Gamma::new(shape, 1.0).expect("positive shape").sample(rng)
    }

    fn sample_std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random::<f32>()
    }
}

/// `log(sum(exp(xs)))`, returning `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let s: T = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// Index of the largest value; ties resolve to the smallest index.
pub fn argmax<T: Scalar>(xs: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &x) in xs.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ if x.is_nan() => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}

/// Draws an index from unnormalized log-weights.
pub fn sample_log_categorical<T: Scalar, R: Rng + ?Sized>(log_w: &[T], rng: &mut R) -> usize {
    let max = log_w.iter().copied().fold(T::neg_infinity(), T::max);
    debug_assert!(max > T::neg_infinity(), "all weights are zero");
    let w: Vec<T> = log_w.iter().map(|&x| (x - max).exp()).collect();
    let total: T = w.iter().copied().sum();
    let u = T::sample_unit(rng) * total;
    let mut acc = T::zero();
    for (i, &wi) in w.iter().enumerate() {
        acc = acc + wi;
        if u < acc {
            return i;
        }
    }
    // rounding at the top end; return the last index with mass
    w.iter().rposition(|&x| x > T::zero()).unwrap_or(0)
}
