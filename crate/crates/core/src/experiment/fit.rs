//! Empirical power-law fit `target ≈ C·δ^κ`.

use serde::{Deserialize, Serialize};

use super::RateRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitTarget {
    #[default]
    BregmanDist,
    JGap,
    L2Error,
}

impl FitTarget {
    pub fn of(self, r: &RateRecord) -> f64 {
        match self {
            Self::BregmanDist => r.bregman_dist,
            Self::JGap => r.j_gap,
            Self::L2Error => r.l2_error,
        }
    }
}

/// Least squares of `ln target` on `ln δ` over records with a positive finite
/// target. Returns `(kappa, C)`.
pub fn fit_index(records: &[RateRecord], target: FitTarget) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .map(|r| (r.delta, target.of(r)))
        .filter(|&(d, y)| d > 0.0 && y > 0.0 && y.is_finite())
        .collect();
    fit_power_law(&pts)
}

pub(crate) fn fit_power_law(pts: &[(f64, f64)]) -> Result<(f64, f64)> {
    if pts.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "power-law fit needs at least 3 records with positive target, found {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().map(|&(d, y)| (d.ln(), y.ln())).unzip();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidParameter("power-law fit needs at least two distinct delta values".into()));
    }
    let kappa = sxy / sxx;
    let c = (my - kappa * mx).exp();
    if kappa.is_finite() && c.is_finite() {
        Ok((kappa, c))
    } else {
        Err(Error::InvalidParameter("power-law fit produced non-finite values".into()))
    }
}
