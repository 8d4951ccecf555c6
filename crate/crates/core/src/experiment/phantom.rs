//! Closed-form ground-truth fields.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::scalar::Scalar;

/// Width of the Gaussian bump relative to the domain extent.
const BUMP_WIDTH: f64 = 0.15;
/// Radius of the 2D disc relative to the domain extent.
const DISC_RADIUS: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    Constant,
    /// `x₀`, the node coordinate along the first axis.
    Ramp,
    /// Gaussian centred in the domain.
    Bump,
    /// Unit step at the midpoint (1D) or disc indicator (2D).
    Piecewise,
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "ramp" => Ok(Self::Ramp),
            "bump" => Ok(Self::Bump),
            "piecewise" => Ok(Self::Piecewise),
            other => Err(Error::InvalidParameter(format!(
                "unknown phantom kind {other:?} (expected constant, ramp, bump or piecewise)"
            ))),
        }
    }
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Constant => "constant",
            Self::Ramp => "ramp",
            Self::Bump => "bump",
            Self::Piecewise => "piecewise",
        })
    }
}

pub fn make_phantom<T: Scalar>(kind: PhantomKind, grid: &Grid<T>) -> Result<Field<T>> {
    let ndim = grid.ndim();
    let extent: Vec<T> = (0..ndim).map(|a| grid.extent(a)).collect();
    let centre: Vec<T> = extent.iter().map(|&e| T::lit(0.5) * e).collect();
    let rel_sq = |x: &[T]| -> T {
        x.iter()
            .zip(&centre)
            .zip(&extent)
            .map(|((&xi, &ci), &ei)| {
                let r = (xi - ci) / ei;
                r * r
            })
            .sum()
    };
    let w = T::lit(BUMP_WIDTH);
    let r = T::lit(DISC_RADIUS);
    match kind {
        PhantomKind::Constant => Ok(Field::constant(grid, T::one())),
        PhantomKind::Ramp => Field::from_fn(grid, |x| x[0]),
        PhantomKind::Bump => Field::from_fn(grid, |x| (-rel_sq(x) / (T::lit(2.0) * w * w)).exp()),
        PhantomKind::Piecewise if ndim == 1 => {
            Field::from_fn(grid, |x| if x[0] >= centre[0] { T::one() } else { T::zero() })
        }
        PhantomKind::Piecewise => Field::from_fn(grid, |x| if rel_sq(x) < r * r { T::one() } else { T::zero() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_ramp_closed_forms() {
        let g = Grid::<f64>::unit(vec![4]).unwrap();
        assert_eq!(make_phantom(PhantomKind::Ramp, &g).unwrap().values(), &[0.0, 0.25, 0.5, 0.75]);
        let g2 = Grid::<f64>::unit(vec![5, 3]).unwrap();
        let c = make_phantom(PhantomKind::Constant, &g2).unwrap();
        assert!(c.values().iter().all(|&v| v == c.values()[0]));
    }

    #[test]
    fn bump_integral_matches_quadrature() {
        let g = Grid::<f64>::unit(vec![64, 64]).unwrap();
        let b = make_phantom(PhantomKind::Bump, &g).unwrap();
        let total = g.cell_volume() * b.values().iter().sum::<f64>();
        let mut oracle = 0.0;
        for i in 0..64 {
            for j in 0..64 {
                let (x, y) = (i as f64 / 64.0 - 0.5, j as f64 / 64.0 - 0.5);
                oracle += (-(x * x + y * y) / (2.0 * 0.15 * 0.15)).exp() / 4096.0;
            }
        }
        assert!(total > 0.0);
        assert!((total - oracle).abs() < 1e-12);
        // Close to the full-plane Gaussian mass since the tails beyond 3σ are tiny.
        let plane = 2.0 * std::f64::consts::PI * 0.15 * 0.15;
        assert!((total - plane).abs() < 2e-3 * plane);
    }

    #[test]
    fn piecewise_has_a_single_jump() {
        let g = Grid::<f64>::unit(vec![10]).unwrap();
        let p = make_phantom(PhantomKind::Piecewise, &g).unwrap();
        let jumps = p.values().windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(jumps, 1);
        let g2 = Grid::<f64>::unit(vec![32, 32]).unwrap();
        let disc = make_phantom(PhantomKind::Piecewise, &g2).unwrap();
        let area = g2.cell_volume() * disc.values().iter().sum::<f64>();
        assert!((area - std::f64::consts::PI / 16.0).abs() < 0.02);
        assert!(disc.values().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn parse_kinds() {
        for k in [PhantomKind::Constant, PhantomKind::Ramp, PhantomKind::Bump, PhantomKind::Piecewise] {
            assert_eq!(k.to_string().parse::<PhantomKind>().unwrap(), k);
        }
        assert!("spiral".parse::<PhantomKind>().is_err());
    }
}
