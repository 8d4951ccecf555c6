//! Deterministic noise of exact norm.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::forward_ops::{ForwardOperator, Measurement};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel<T> {
    pub delta: T,
    pub seed: u64,
}

/// `f_true + δ·e/‖e‖` with `e` standard Gaussian drawn from `seed`, so the
/// perturbation has range norm `δ`. A zero draw is replaced by one from the
/// next seed.
pub fn add_noise<T: Scalar>(op: &ForwardOperator<T>, f_true: &Measurement<T>, nm: NoiseModel<T>) -> Result<Measurement<T>> {
    if !(nm.delta > T::zero() && nm.delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {}", nm.delta)));
    }
    let mut seed = nm.seed;
    loop {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e: Vec<T> = (0..f_true.len())
            .map(|_| T::lit(StandardNormal.sample(&mut rng)))
            .collect();
        let e = Measurement::new(e)?;
        let n = op.range_norm(&e)?;
        if n > T::zero() {
            return f_true.combine(T::one(), &e, nm.delta / n);
        }
        seed = seed.wrapping_add(1);
    }
}
