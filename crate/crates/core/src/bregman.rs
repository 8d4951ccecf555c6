//! Bregman distances and strong-convexity probes for smooth convex functionals.

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::scalar::Scalar;

/// Samples along the segment used by [`strong_convexity_certificate`] by default.
pub const DEFAULT_SEGMENT_SAMPLES: usize = 9;

/// A differentiable functional on grid fields. Gradients are taken with respect
/// to the cell-volume-weighted inner product.
pub trait SmoothFunctional<T: Scalar> {
    fn value(&self, u: &Field<T>) -> T;

    fn gradient(&self, u: &Field<T>) -> Field<T>;

    /// Hessian applied to `dir` at `u`.
    fn hessian_vec(&self, _u: &Field<T>, _dir: &Field<T>) -> Result<Field<T>> {
        Err(Error::Unsupported("hessian_vec"))
    }

    /// `value(u + t·dir) - value(u)`. Implementors override this when the
    /// difference can be formed without subtracting two nearly equal totals.
    fn value_change(&self, u: &Field<T>, dir: &Field<T>, t: T) -> Result<T> {
        Ok(self.value(&u.add_scaled(t, dir)?) - self.value(u))
    }

    /// `t ↦ value(u + t·dir) - value(u)` with per-line work done once, for
    /// repeated evaluation during a line search.
    fn line_restriction<'a>(&'a self, u: &Field<T>, dir: &Field<T>) -> Result<LineRestriction<'a, T>> {
        u.grid().ensure_same(dir.grid())?;
        let (u, dir) = (u.clone(), dir.clone());
        let base = self.value(&u);
        Ok(Box::new(move |t| {
            let values = u.values().iter().zip(dir.values()).map(|(&a, &d)| a + t * d).collect();
            self.value(&Field::from_parts(u.grid().clone(), values)) - base
        }))
    }
}

pub type LineRestriction<'a, T> = Box<dyn Fn(T) -> T + 'a>;

impl<T: Scalar, P: SmoothFunctional<T> + ?Sized> SmoothFunctional<T> for &P {
    fn value(&self, u: &Field<T>) -> T {
        (**self).value(u)
    }
    fn gradient(&self, u: &Field<T>) -> Field<T> {
        (**self).gradient(u)
    }
    fn hessian_vec(&self, u: &Field<T>, dir: &Field<T>) -> Result<Field<T>> {
        (**self).hessian_vec(u, dir)
    }
    fn value_change(&self, u: &Field<T>, dir: &Field<T>, t: T) -> Result<T> {
        (**self).value_change(u, dir, t)
    }
    fn line_restriction<'a>(&'a self, u: &Field<T>, dir: &Field<T>) -> Result<LineRestriction<'a, T>> {
        (**self).line_restriction(u, dir)
    }
}

/// `½‖u‖²`, the reference quadratic functional.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HalfSquaredNorm;

impl<T: Scalar> SmoothFunctional<T> for HalfSquaredNorm {
    fn value(&self, u: &Field<T>) -> T {
        let n = u.norm_l2();
        T::lit(0.5) * n * n
    }

    fn gradient(&self, u: &Field<T>) -> Field<T> {
        u.clone()
    }

    fn hessian_vec(&self, u: &Field<T>, dir: &Field<T>) -> Result<Field<T>> {
        u.grid().ensure_same(dir.grid())?;
        Ok(dir.clone())
    }

    fn value_change(&self, u: &Field<T>, dir: &Field<T>, t: T) -> Result<T> {
        let nd = dir.norm_l2();
        Ok(t * u.inner(dir)? + T::lit(0.5) * t * t * nd * nd)
    }

    fn line_restriction<'a>(&'a self, u: &Field<T>, dir: &Field<T>) -> Result<LineRestriction<'a, T>> {
        let (ud, nd) = (u.inner(dir)?, dir.norm_l2());
        Ok(Box::new(move |t| t * ud + T::lit(0.5) * t * t * nd * nd))
    }
}

/// `D_P(u, v) = P(u) - P(v) - ⟨∇P(v), u - v⟩`.
pub fn bregman<T: Scalar, P: SmoothFunctional<T> + ?Sized>(p: &P, u: &Field<T>, v: &Field<T>) -> Result<T> {
    let diff = u.sub(v)?;
    Ok(p.value(u) - p.value(v) - p.gradient(v).inner(&diff)?)
}

/// Symmetric Bregman distance `D_P(u, v) + D_P(v, u)`.
pub fn bregman_sym<T: Scalar, P: SmoothFunctional<T> + ?Sized>(p: &P, u: &Field<T>, v: &Field<T>) -> Result<T> {
    Ok(bregman(p, u, v)? + bregman(p, v, u)?)
}

/// Symmetric Bregman distance in gradient form `⟨∇P(u) - ∇P(v), u - v⟩`.
pub fn bregman_sym_gradient_form<T: Scalar, P: SmoothFunctional<T> + ?Sized>(
    p: &P,
    u: &Field<T>,
    v: &Field<T>,
) -> Result<T> {
    p.gradient(u).sub(&p.gradient(v))?.inner(&u.sub(v)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexityCertificate<T> {
    /// Certified modulus `c` with `D_P(u, v) ≥ c ‖u - v‖²`.
    pub modulus: T,
    /// Set when `u == v`; the modulus is then reported as zero.
    pub degenerate: bool,
    /// Segment parameter at which the sampled Rayleigh quotient is smallest.
    pub t_min: T,
    pub bregman: T,
    pub distance_sq: T,
    /// Whether `bregman ≥ modulus · distance_sq - 1e-8 · scale` holds.
    pub holds: bool,
}

/// Largest modulus `c` certified along the segment from `v` to `u`:
/// `c = ½ min_t ⟨d, H(v + t d) d⟩ / ‖d‖²` over `samples` equispaced `t ∈ [0, 1]`,
/// with `d = u - v`.
pub fn strong_convexity_certificate<T: Scalar, P: SmoothFunctional<T> + ?Sized>(
    p: &P,
    u: &Field<T>,
    v: &Field<T>,
    samples: usize,
) -> Result<ConvexityCertificate<T>> {
    if samples < 2 {
        return Err(Error::InvalidParameter("at least 2 segment samples required".into()));
    }
    let d = u.sub(v)?;
    let dist_sq = d.inner(&d)?;
    let breg = bregman(p, u, v)?;
    if dist_sq == T::zero() {
        return Ok(ConvexityCertificate {
            modulus: T::zero(),
            degenerate: true,
            t_min: T::zero(),
            bregman: breg,
            distance_sq: dist_sq,
            holds: true,
        });
    }
    let last = T::from_usize(samples - 1).unwrap_or_else(T::one);
    let mut best = (T::infinity(), T::zero());
    for k in 0..samples {
        let t = T::from_usize(k).unwrap_or_else(T::zero) / last;
        let point = v.add_scaled(t, &d)?;
        let q = d.inner(&p.hessian_vec(&point, &d)?)? / dist_sq;
        if q < best.0 {
            best = (q, t);
        }
    }
    let modulus = (T::lit(0.5) * best.0).max(T::zero());
    let scale = T::one() + p.value(u).abs() + p.value(v).abs();
    Ok(ConvexityCertificate {
        modulus,
        degenerate: false,
        t_min: best.1,
        bregman: breg,
        distance_sq: dist_sq,
        holds: breg >= modulus * dist_sq - T::lit(1e-8) * scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::smoothed_tv::SmoothedTvPenalty;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &Grid<f64>, rng: &mut ChaCha8Rng) -> Field<f64> {
        let v = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        Field::new(grid.clone(), v).unwrap()
    }

    #[test]
    fn bregman_vanishes_on_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Grid::<f64>::unit(vec![10, 10]).unwrap();
        let p = SmoothedTvPenalty::new(0.01).unwrap();
        let u = random_field(&g, &mut rng);
        assert_eq!(bregman(&p, &u, &u).unwrap(), 0.0);
        assert_eq!(bregman_sym(&p, &u, &u).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Grid::<f64>::unit(vec![6, 6]).unwrap();
        let u = random_field(&g, &mut rng);
        let v = random_field(&g, &mut rng);
        let half_sq = 0.5 * u.sub(&v).unwrap().norm_l2().powi(2);
        assert!((bregman(&HalfSquaredNorm, &u, &v).unwrap() - half_sq).abs() <= 1e-12);
        assert!((bregman_sym(&HalfSquaredNorm, &u, &v).unwrap() - 2.0 * half_sq).abs() <= 1e-12);
        let cert = strong_convexity_certificate(&HalfSquaredNorm, &u, &v, 9).unwrap();
        assert!((cert.modulus - 0.5).abs() < 1e-12);
        assert!(cert.holds && !cert.degenerate);
    }

    #[test]
    fn tv_bregman_matches_three_term_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Grid::<f64>::unit(vec![10, 10]).unwrap();
        let beta = 0.05;
        let p = SmoothedTvPenalty::new(beta).unwrap();
        let u = random_field(&g, &mut rng);
        let v = random_field(&g, &mut rng);
        // Independent evaluation of J(u), J(v) and ⟨∇J(v), u - v⟩ by stencil loops.
        let h = 0.1;
        let j = |f: &Field<f64>| {
            let x = f.values();
            let mut s = 0.0;
            for r in 0..10 {
                for c in 0..10 {
                    let gy = if r < 9 { (x[(r + 1) * 10 + c] - x[r * 10 + c]) / h } else { 0.0 };
                    let gx = if c < 9 { (x[r * 10 + c + 1] - x[r * 10 + c]) / h } else { 0.0 };
                    s += h * h * (gx * gx + gy * gy + beta).sqrt();
                }
            }
            s
        };
        let dj = |f: &Field<f64>, d: &Field<f64>| {
            let (x, y) = (f.values(), d.values());
            let mut s = 0.0;
            for r in 0..10 {
                for c in 0..10 {
                    let i = r * 10 + c;
                    let gy = if r < 9 { (x[i + 10] - x[i]) / h } else { 0.0 };
                    let gx = if c < 9 { (x[i + 1] - x[i]) / h } else { 0.0 };
                    let dy = if r < 9 { (y[i + 10] - y[i]) / h } else { 0.0 };
                    let dx = if c < 9 { (y[i + 1] - y[i]) / h } else { 0.0 };
                    s += h * h * (gx * dx + gy * dy) / (gx * gx + gy * gy + beta).sqrt();
                }
            }
            s
        };
        let diff = u.sub(&v).unwrap();
        let oracle = j(&u) - j(&v) - dj(&v, &diff);
        let got = bregman(&p, &u, &v).unwrap();
        assert!((got - oracle).abs() <= 1e-12 * (1.0 + oracle.abs()), "{got} vs {oracle}");
    }

    #[test]
    fn symmetric_forms_agree_and_are_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Grid::<f64>::unit(vec![12, 12]).unwrap();
        let p = SmoothedTvPenalty::new(0.01).unwrap();
        for _ in 0..50 {
            let u = random_field(&g, &mut rng);
            let v = random_field(&g, &mut rng);
            let a = bregman_sym(&p, &u, &v).unwrap();
            let b = bregman_sym_gradient_form(&p, &u, &v).unwrap();
            assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()));
            assert!((a - bregman_sym(&p, &v, &u).unwrap()).abs() <= 1e-12 * a);
            assert!(bregman(&p, &u, &v).unwrap() >= -1e-10);
        }
    }

    #[test]
    fn certificate_between_constants_is_zero() {
        let g = Grid::<f64>::unit(vec![8, 8]).unwrap();
        let p = SmoothedTvPenalty::new(0.01).unwrap();
        let u = Field::constant(&g, 1.0);
        let v = Field::constant(&g, -2.0);
        let cert = strong_convexity_certificate(&p, &u, &v, 9).unwrap();
        assert_eq!(cert.modulus, 0.0);
        assert!(cert.bregman.abs() < 1e-14);
        assert!(cert.holds);
    }

    #[test]
    fn certificate_degenerate_input() {
        let g = Grid::<f64>::unit(vec![4]).unwrap();
        let u = Field::constant(&g, 1.0);
        let cert = strong_convexity_certificate(&HalfSquaredNorm, &u, &u, 9).unwrap();
        assert!(cert.degenerate);
        assert_eq!(cert.modulus, 0.0);
        assert!(strong_convexity_certificate(&HalfSquaredNorm, &u, &u, 1).is_err());
    }

    #[test]
    fn certificate_holds_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Grid::<f64>::unit(vec![10, 10]).unwrap();
        let p = SmoothedTvPenalty::new(0.01).unwrap();
        for _ in 0..100 {
            let u = random_field(&g, &mut rng);
            let v = random_field(&g, &mut rng);
            let cert = strong_convexity_certificate(&p, &u, &v, DEFAULT_SEGMENT_SAMPLES).unwrap();
            assert!(cert.modulus > 0.0);
            assert!(cert.holds, "{cert:?}");
        }
    }

    #[test]
    fn hessian_unsupported_by_default() {
        struct ValueOnly;
        impl SmoothFunctional<f64> for ValueOnly {
            fn value(&self, u: &Field<f64>) -> f64 {
                u.values().iter().sum()
            }
            fn gradient(&self, u: &Field<f64>) -> Field<f64> {
                Field::constant(u.grid(), 1.0 / u.grid().cell_volume())
            }
        }
        let g = Grid::<f64>::unit(vec![4]).unwrap();
        let u = Field::constant(&g, 1.0);
        let v = Field::zeros(&g);
        assert!(matches!(
            strong_convexity_certificate(&ValueOnly, &u, &v, 3),
            Err(Error::Unsupported(_))
        ));
        // Linear functional: Bregman distance is identically zero.
        assert!(bregman(&ValueOnly, &u, &v).unwrap().abs() < 1e-12);
    }
}
