//! Smoothed total variation `J(φ) = ∫ sqrt(|∇φ|² + β)`.
//!
//! On the grid the integral becomes `cell_volume * Σ sqrt(|(∇φ)_i|² + β)` with
//! the forward-difference gradient of [`crate::grid`]. The gradient of `J` is
//! `-div(∇φ / sqrt(|∇φ|² + β))` and the Hessian acts as `Φ ↦ -div(A(φ) ∇Φ)`
//! with the per-cell tensor `A = (I (|∇φ|²+β) - ∇φ ∇φᵀ) / (|∇φ|²+β)^{3/2}`.

use crate::bregman::{LineRestriction, SmoothFunctional};
use crate::error::{Error, Result};
use crate::grid::{divergence, gradient, Field, VectorField};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedTvPenalty<T> {
    beta: T,
}

impl<T: Scalar> SmoothedTvPenalty<T> {
    /// `beta` must lie strictly between 0 and 1.
    pub fn new(beta: T) -> Result<Self> {
        if !(beta > T::zero() && beta < T::one()) {
            return Err(Error::InvalidParameter(format!(
                "beta must satisfy 0 < beta < 1, got {beta}"
            )));
        }
        Ok(Self { beta })
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    pub fn value(&self, phi: &Field<T>) -> T {
        let g = gradient(phi);
        let raw: T = (0..phi.len())
            .map(|i| (g.magnitude_sq(i) + self.beta).sqrt())
            .sum();
        phi.grid().cell_volume() * raw
    }

    /// Flux `∇φ / sqrt(|∇φ|² + β)` per cell.
    fn flux(&self, g: &VectorField<T>) -> VectorField<T> {
        let inv_s: Vec<T> = (0..g.grid().len())
            .map(|i| T::one() / (g.magnitude_sq(i) + self.beta).sqrt())
            .collect();
        let components = g
            .components()
            .iter()
            .map(|c| c.iter().zip(&inv_s).map(|(&x, &w)| x * w).collect())
            .collect();
        VectorField::from_parts(g.grid().clone(), components)
    }

    pub fn gradient(&self, phi: &Field<T>) -> Field<T> {
        divergence(&self.flux(&gradient(phi))).scale(-T::one())
    }

    pub fn hessian_vec(&self, phi: &Field<T>, dir: &Field<T>) -> Result<Field<T>> {
        phi.grid().ensure_same(dir.grid())?;
        let g = gradient(phi);
        let q = gradient(dir);
        let ndim = g.components().len();
        let mut out = vec![vec![T::zero(); phi.len()]; ndim];
        for i in 0..phi.len() {
            let s2 = g.magnitude_sq(i) + self.beta;
            let s3 = s2 * s2.sqrt();
            let gq: T = (0..ndim).map(|k| g.component(k)[i] * q.component(k)[i]).sum();
            for (k, o) in out.iter_mut().enumerate() {
                o[i] = (q.component(k)[i] * s2 - g.component(k)[i] * gq) / s3;
            }
        }
        Ok(divergence(&VectorField::from_parts(phi.grid().clone(), out)).scale(-T::one()))
    }

    /// `l(φ) = min_cells β / (|∇φ|² + β)²`.
    ///
    /// This is the modulus lower bound in the form usually quoted for the
    /// smoothed-TV Hessian. The pointwise quadratic form is actually bounded by
    /// `β / (|∇φ|² + β)^{3/2}` (see [`Self::sharp_modulus_lower_bound`]); the two
    /// agree in ordering only where `|∇φ|² + β ≥ 1`.
    pub fn modulus_lower_bound(&self, phi: &Field<T>) -> T {
        let g = gradient(phi);
        (0..phi.len())
            .map(|i| {
                let s2 = g.magnitude_sq(i) + self.beta;
                self.beta / (s2 * s2)
            })
            .fold(T::infinity(), T::min)
    }

    /// `min_cells β / (|∇φ|² + β)^{3/2}`, the smallest eigenvalue of the per-cell
    /// diffusion tensor `A(φ)`.
    pub fn sharp_modulus_lower_bound(&self, phi: &Field<T>) -> T {
        let g = gradient(phi);
        (0..phi.len())
            .map(|i| {
                let s2 = g.magnitude_sq(i) + self.beta;
                self.beta / (s2 * s2.sqrt())
            })
            .fold(T::infinity(), T::min)
    }

    /// `J(φ + t·dir) - J(φ)` evaluated per cell as
    /// `(|g + t q|² - |g|²) / (s_new + s_old)`, free of cancellation.
    pub fn value_change(&self, phi: &Field<T>, dir: &Field<T>, t: T) -> Result<T> {
        phi.grid().ensure_same(dir.grid())?;
        let g = gradient(phi);
        let q = gradient(dir);
        let ndim = g.components().len();
        let two = T::lit(2.0);
        let raw: T = (0..phi.len())
            .map(|i| {
                let mut diff = T::zero();
                let mut new_sq = self.beta;
                for k in 0..ndim {
                    let (gk, qk) = (g.component(k)[i], q.component(k)[i]);
                    diff = diff + t * qk * (two * gk + t * qk);
                    let nk = gk + t * qk;
                    new_sq = new_sq + nk * nk;
                }
                let old = (g.magnitude_sq(i) + self.beta).sqrt();
                diff / (new_sq.sqrt() + old)
            })
            .sum();
        Ok(phi.grid().cell_volume() * raw)
    }
}

impl<T: Scalar> SmoothFunctional<T> for SmoothedTvPenalty<T> {
    fn value(&self, u: &Field<T>) -> T {
        SmoothedTvPenalty::value(self, u)
    }

    fn gradient(&self, u: &Field<T>) -> Field<T> {
        SmoothedTvPenalty::gradient(self, u)
    }

    fn hessian_vec(&self, u: &Field<T>, dir: &Field<T>) -> Result<Field<T>> {
        SmoothedTvPenalty::hessian_vec(self, u, dir)
    }

    fn value_change(&self, u: &Field<T>, dir: &Field<T>, t: T) -> Result<T> {
        SmoothedTvPenalty::value_change(self, u, dir, t)
    }

    fn line_restriction<'a>(&'a self, u: &Field<T>, dir: &Field<T>) -> Result<LineRestriction<'a, T>> {
        u.grid().ensure_same(dir.grid())?;
        let g = gradient(u);
        let q = gradient(dir);
        let ndim = g.components().len();
        // Per cell: (g·q, |q|², |g|² + β, s_old).
        let cells: Vec<[T; 4]> = (0..u.len())
            .map(|i| {
                let gq: T = (0..ndim).map(|k| g.component(k)[i] * q.component(k)[i]).sum();
                let qq: T = (0..ndim).map(|k| q.component(k)[i] * q.component(k)[i]).sum();
                let s2 = g.magnitude_sq(i) + self.beta;
                [gq, qq, s2, s2.sqrt()]
            })
            .collect();
        let vol = u.grid().cell_volume();
        let two = T::lit(2.0);
        Ok(Box::new(move |t| {
            let raw: T = cells
                .iter()
                .map(|&[gq, qq, s2, s_old]| {
                    let diff = t * (two * gq + t * qq);
                    diff / ((s2 + diff).max(T::zero()).sqrt() + s_old)
                })
                .sum();
            vol * raw
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &Grid<f64>, rng: &mut ChaCha8Rng) -> Field<f64> {
        let v = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        Field::new(grid.clone(), v).unwrap()
    }

    #[test]
    fn beta_range_enforced() {
        assert!(SmoothedTvPenalty::new(0.0).is_err());
        assert!(SmoothedTvPenalty::new(1.0).is_err());
        assert!(SmoothedTvPenalty::new(f64::NAN).is_err());
        assert!(SmoothedTvPenalty::new(0.5).is_ok());
    }

    #[test]
    fn constant_field_value_gradient_modulus() {
        let g = Grid::<f64>::unit(vec![10, 10]).unwrap();
        let p = SmoothedTvPenalty::new(0.01).unwrap();
        let c = Field::constant(&g, 2.0);
        assert!((p.value(&c) - 0.1).abs() < 1e-14);
        assert!(p.gradient(&c).values().iter().all(|&x| x == 0.0));
        assert!((p.modulus_lower_bound(&c) - 100.0).abs() < 1e-10);
        assert!((p.sharp_modulus_lower_bound(&c) - 10.0).abs() < 1e-10);
    }

    #[test]
    fn ramp_value_matches_per_cell_summation() {
        // Slope-1 ramp on [0,1] with n cells: n-1 interior cells see |∇φ| = 1,
        // the last cell sees 0.
        let n = 20;
        let beta = 0.3;
        let g = Grid::<f64>::unit(vec![n]).unwrap();
        let ramp = Field::from_fn(&g, |x| x[0]).unwrap();
        let p = SmoothedTvPenalty::new(beta).unwrap();
        let h = 1.0 / n as f64;
        let mut oracle = 0.0;
        for i in 0..n {
            let d = if i + 1 < n { ((i + 1) as f64 * h - i as f64 * h) / h } else { 0.0 };
            oracle += h * (d * d + beta).sqrt();
        }
        assert!((p.value(&ramp) - oracle).abs() < 1e-14);
        let closed = (1.0 + beta).sqrt() * (n - 1) as f64 * h + beta.sqrt() * h;
        assert!((p.value(&ramp) - closed).abs() < 1e-12);
    }

    #[test]
    fn ramp_modulus_closed_form() {
        let g = Grid::<f64>::unit(vec![16]).unwrap();
        let ramp = Field::from_fn(&g, |x| x[0]).unwrap();
        let p = SmoothedTvPenalty::new(0.999_999_999).unwrap();
        // β/(1+β)² → 1/4 as β → 1.
        assert!((p.modulus_lower_bound(&ramp) - 0.25).abs() < 1e-9);
    }

    #[test]
    fn value_is_translation_invariant_and_bounded_below() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Grid::<f64>::unit(vec![9, 7]).unwrap();
        let p = SmoothedTvPenalty::new(0.05).unwrap();
        for _ in 0..20 {
            let u = random_field(&g, &mut rng);
            let shifted = u.map(|x| x + 3.7);
            assert!((p.value(&u) - p.value(&shifted)).abs() < 1e-12);
            assert!(p.value(&u) > 0.05f64.sqrt() * g.measure());
        }
    }

    #[test]
    fn gradient_matches_hand_assembled_stencil_on_hat() {
        let n = 9;
        let g = Grid::new(vec![n], vec![1.0]).unwrap();
        let hat = Field::new(g, (0..n).map(|i| 4.0 - (i as f64 - 4.0).abs()).collect()).unwrap();
        let beta = 0.2;
        let p = SmoothedTvPenalty::new(beta).unwrap();
        // Dense stencil: J = Σ_i sqrt((u_{i+1}-u_i)² + β) over i < n-1 plus const;
        // dJ/du_j = w_{j-1} - w_j with w_i = d_i / sqrt(d_i² + β).
        let u = hat.values();
        let w: Vec<f64> = (0..n - 1)
            .map(|i| {
                let d = u[i + 1] - u[i];
                d / (d * d + beta).sqrt()
            })
            .collect();
        let oracle: Vec<f64> = (0..n)
            .map(|j| {
                let left = if j > 0 { w[j - 1] } else { 0.0 };
                let right = if j < n - 1 { w[j] } else { 0.0 };
                left - right
            })
            .collect();
        let got = p.gradient(&hat);
        for (a, b) in got.values().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Grid::<f64>::unit(vec![12, 12]).unwrap();
        let p = SmoothedTvPenalty::new(0.01).unwrap();
        let phi = random_field(&g, &mut rng);
        let grad = p.gradient(&phi);
        let eps = 1e-5;
        for _ in 0..20 {
            let dir = random_field(&g, &mut rng);
            let fd = (p.value(&phi.add_scaled(eps, &dir).unwrap())
                - p.value(&phi.add_scaled(-eps, &dir).unwrap()))
                / (2.0 * eps);
            let an = grad.inner(&dir).unwrap();
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{fd} vs {an}");
        }
    }

    #[test]
    fn hessian_of_constant_is_scaled_laplacian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Grid::<f64>::unit(vec![8, 6]).unwrap();
        let beta = 0.04;
        let p = SmoothedTvPenalty::new(beta).unwrap();
        let c = Field::constant(&g, -1.0);
        let dir = random_field(&g, &mut rng);
        let h = p.hessian_vec(&c, &dir).unwrap();
        let lap = divergence(&gradient(&dir)).scale(-1.0 / beta.sqrt());
        for (a, b) in h.values().iter().zip(lap.values()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn hessian_matches_gradient_differences_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Grid::<f64>::unit(vec![10, 10]).unwrap();
        let p = SmoothedTvPenalty::new(0.1).unwrap();
        for _ in 0..10 {
            let phi = random_field(&g, &mut rng);
            let a = random_field(&g, &mut rng);
            let b = random_field(&g, &mut rng);
            let eps = 1e-6;
            let fd = p
                .gradient(&phi.add_scaled(eps, &a).unwrap())
                .sub(&p.gradient(&phi.add_scaled(-eps, &a).unwrap()))
                .unwrap()
                .scale(1.0 / (2.0 * eps));
            let ha = p.hessian_vec(&phi, &a).unwrap();
            let err = fd.sub(&ha).unwrap().norm_l2();
            assert!(err <= 1e-5 * ha.norm_l2(), "{err}");
            let hb = p.hessian_vec(&phi, &b).unwrap();
            let ab = b.inner(&ha).unwrap();
            let ba = a.inner(&hb).unwrap();
            assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(ba.abs()));
            assert!(a.inner(&ha).unwrap() >= 0.0);
        }
    }

    #[test]
    fn modulus_matches_per_cell_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Grid::new(vec![6, 5], vec![0.2, 0.25]).unwrap();
        let beta = 0.3;
        let p = SmoothedTvPenalty::new(beta).unwrap();
        let phi = random_field(&g, &mut rng);
        let u = phi.values();
        let mut oracle = f64::INFINITY;
        for r in 0..6 {
            for c in 0..5 {
                let gy = if r < 5 { (u[(r + 1) * 5 + c] - u[r * 5 + c]) / 0.2 } else { 0.0 };
                let gx = if c < 4 { (u[r * 5 + c + 1] - u[r * 5 + c]) / 0.25 } else { 0.0 };
                let s = gx * gx + gy * gy + beta;
                oracle = oracle.min(beta / (s * s));
            }
        }
        assert_eq!(p.modulus_lower_bound(&phi), oracle);
    }

    #[test]
    fn sharp_modulus_bounds_quadratic_form_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = Grid::<f64>::unit(vec![12, 12]).unwrap();
        let p = SmoothedTvPenalty::new(0.01).unwrap();
        for scale in [1e-4, 1e-2, 1.0] {
            let phi = random_field(&g, &mut rng).scale(scale);
            let dir = random_field(&g, &mut rng);
            let q = dir.inner(&p.hessian_vec(&phi, &dir).unwrap()).unwrap();
            let grad_sq = gradient(&dir).norm_l2().powi(2);
            assert!(q >= p.sharp_modulus_lower_bound(&phi) * grad_sq * (1.0 - 1e-12));
        }
    }

    #[test]
    fn quoted_modulus_overshoots_on_flat_fields() {
        // For |∇φ|² + β < 1 everywhere, β/(|∇φ|²+β)² exceeds the true
        // smallest eigenvalue β/(|∇φ|²+β)^{3/2} of the Hessian tensor.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = Grid::<f64>::unit(vec![8, 8]).unwrap();
        let p = SmoothedTvPenalty::new(0.01).unwrap();
        let c = Field::constant(&g, 0.5);
        let dir = random_field(&g, &mut rng);
        let q = dir.inner(&p.hessian_vec(&c, &dir).unwrap()).unwrap();
        let grad_sq = gradient(&dir).norm_l2().powi(2);
        assert!((q - 10.0 * grad_sq).abs() <= 1e-10 * q);
        assert!(q < p.modulus_lower_bound(&c) * grad_sq);
    }

    #[test]
    fn value_change_matches_direct_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = Grid::<f64>::unit(vec![7, 9]).unwrap();
        let p = SmoothedTvPenalty::new(0.2).unwrap();
        let phi = random_field(&g, &mut rng);
        let dir = random_field(&g, &mut rng);
        for t in [1e-3, 0.1, -0.7, 2.0] {
            let direct = p.value(&phi.add_scaled(t, &dir).unwrap()) - p.value(&phi);
            let change = p.value_change(&phi, &dir, t).unwrap();
            assert!((direct - change).abs() <= 1e-12 * (1.0 + direct.abs()));
            let line = p.line_restriction(&phi, &dir).unwrap();
            assert!((direct - line(t)).abs() <= 1e-12 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn works_in_single_precision() {
        let g = Grid::<f32>::unit(vec![8, 8]).unwrap();
        let p = SmoothedTvPenalty::new(0.01f32).unwrap();
        let c = Field::constant(&g, 1.0f32);
        assert!((p.value(&c) - 0.1).abs() < 1e-6);
        assert!((p.modulus_lower_bound(&c) - 100.0).abs() < 1e-3);
    }
}
