//! Regularization-parameter choice: Morozov's discrepancy principle by
//! logarithmic bisection, the a-priori rule `α = δ² / (2Ψ(δ))`, and the
//! lower bound on α implied by the discrepancy band.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bregman::SmoothFunctional;
use crate::error::Error;
use crate::forward_ops::{ForwardOperator, Measurement};
use crate::grid::Field;
use crate::scalar::Scalar;
use crate::solver::{minimize, InitialGuess, Solution, SolveConfig, SolveError};

/// Relative slack (in units of `τ̄δ`) tolerated before a decrease of the
/// discrepancy along increasing α counts as non-monotone.
pub const MONOTONE_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct MdpConfig<T> {
    pub tau_low: T,
    pub tau_high: T,
    pub delta: T,
    pub alpha_bracket: (T, T),
    pub max_solves: usize,
    pub solve_cfg: SolveConfig<T>,
}

impl<T: Scalar> MdpConfig<T> {
    /// Band `[1.1δ, 1.5δ]`, bracket `(1e-8, 1e4)`, at most 60 solves.
    pub fn new(delta: T) -> Self {
        Self {
            tau_low: T::lit(1.1),
            tau_high: T::lit(1.5),
            delta,
            alpha_bracket: (T::lit(1e-8), T::lit(1e4)),
            max_solves: 60,
            solve_cfg: SolveConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.tau_low >= T::one() && self.tau_low.is_finite()) {
            return bad(format!("tau_low must be at least 1, got {}", self.tau_low));
        }
        if !(self.tau_high >= self.tau_low && self.tau_high.is_finite()) {
            return bad(format!(
                "tau ordering violated: need 1 <= tau_low <= tau_high, got tau_low = {}, tau_high = {}",
                self.tau_low, self.tau_high
            ));
        }
        if !(self.delta > T::zero() && self.delta.is_finite()) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        let (lo, hi) = self.alpha_bracket;
        if !(lo > T::zero() && hi.is_finite() && lo < hi) {
            return bad(format!("alpha_bracket must satisfy 0 < alpha_min < alpha_max, got ({lo}, {hi})"));
        }
        if self.max_solves < 2 {
            return bad("max_solves must be at least 2".into());
        }
        self.solve_cfg.validate()
    }

    fn band(&self) -> (T, T) {
        (self.tau_low * self.delta, self.tau_high * self.delta)
    }
}

/// One solve performed during the search, in evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint<T> {
    pub alpha: T,
    pub discrepancy: T,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpResult<T> {
    pub alpha: T,
    pub discrepancy: T,
    pub solves_used: usize,
    pub solution: Solution<T>,
    pub in_band: bool,
    pub trace: Vec<TracePoint<T>>,
}

#[derive(Debug, Clone, Error)]
pub enum MdpError<T: Scalar> {
    #[error("alpha bracket does not enclose the discrepancy band: {reason}")]
    Bracket { reason: String, trace: Vec<TracePoint<T>> },

    #[error("discrepancy is not monotone in alpha across {} evaluated points; tighten the solver tolerance", .trace.len())]
    NonMonotone { trace: Vec<TracePoint<T>> },

    #[error("no alpha with discrepancy in band after {} solves", .trace.len())]
    BudgetExhausted { trace: Vec<TracePoint<T>> },

    #[error("solve at alpha = {alpha:e} failed: {source}")]
    Solve {
        alpha: T,
        #[source]
        source: SolveError<T>,
    },

    #[error(transparent)]
    Model(#[from] Error),
}

impl<T: Scalar> MdpError<T> {
    pub fn trace(&self) -> &[TracePoint<T>] {
        match self {
            Self::Bracket { trace, .. } | Self::NonMonotone { trace } | Self::BudgetExhausted { trace } => trace,
            _ => &[],
        }
    }
}

/// `Ψ`, increasing with `Ψ(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum IndexFunction<T> {
    /// `c · δ^kappa`.
    PowerLaw { c: T, kappa: T },
    /// Piecewise linear through `(0, 0)` and the given `(δ, Ψ)` points.
    Tabulated { points: Vec<(T, T)> },
}

impl<T: Scalar> IndexFunction<T> {
    /// `c > 0`, `kappa ∈ (0, 2)`, and `kappa ≤ 1` when `concave`.
    pub fn power_law(c: T, kappa: T, concave: bool) -> Result<Self, Error> {
        let f = Self::PowerLaw { c, kappa };
        f.validate(concave)?;
        Ok(f)
    }

    pub fn tabulated(points: Vec<(T, T)>) -> Result<Self, Error> {
        let f = Self::Tabulated { points };
        f.validate(false)?;
        Ok(f)
    }

    pub fn validate(&self, concave: bool) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        match self {
            Self::PowerLaw { c, kappa } => {
                if !(*c > T::zero() && c.is_finite()) {
                    return bad("psi.c must be positive");
                }
                if !(*kappa > T::zero() && *kappa < T::lit(2.0)) {
                    return bad("psi.kappa must lie in (0, 2)");
                }
                if concave && *kappa > T::one() {
                    return bad("psi.kappa must be at most 1 for a concave index function");
                }
            }
            Self::Tabulated { points } => {
                if points.is_empty() {
                    return bad("tabulated index function needs at least one point");
                }
                let mut prev = (T::zero(), T::zero());
                for (k, &(d, p)) in points.iter().enumerate() {
                    if !(d.is_finite() && p.is_finite()) {
                        return bad("tabulated index function has non-finite entries");
                    }
                    if k == 0 && d == T::zero() {
                        if p != T::zero() {
                            return bad("tabulated index function must satisfy psi(0) = 0");
                        }
                    } else if !(d > prev.0 && p > prev.1) {
                        return bad("tabulated index function must be strictly increasing in both columns");
                    }
                    prev = (d, p);
                }
            }
        }
        Ok(())
    }

    /// `Ψ(delta)` for `delta ≥ 0`. Tabulated forms are not extrapolated.
    pub fn eval(&self, delta: T) -> Result<T, Error> {
        if !(delta >= T::zero() && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("delta must be nonnegative, got {delta}")));
        }
        match self {
            Self::PowerLaw { c, kappa } => Ok(*c * delta.powf(*kappa)),
            Self::Tabulated { points } => {
                let mut prev = (T::zero(), T::zero());
                for &(d, p) in points {
                    if delta <= d {
                        if d == prev.0 {
                            return Ok(p);
                        }
                        let w = (delta - prev.0) / (d - prev.0);
                        return Ok(prev.1 + w * (p - prev.1));
                    }
                    prev = (d, p);
                }
                Err(Error::InvalidParameter(format!(
                    "delta = {delta} lies beyond the tabulated range (max {})",
                    prev.0
                )))
            }
        }
    }
}

/// `‖Tφ - f‖` in the range norm.
pub fn discrepancy<T: Scalar>(op: &ForwardOperator<T>, phi: &Field<T>, f: &Measurement<T>) -> Result<T, Error> {
    op.range_norm(&op.apply(phi)?.sub(f)?)
}

/// `Φ(δ) = δ² / (2Ψ(δ))`.
pub fn phi_index<T: Scalar>(delta: T, psi: &IndexFunction<T>) -> Result<T, Error> {
    if !(delta > T::zero()) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    let p = psi.eval(delta)?;
    if !(p > T::zero()) {
        return Err(Error::InvalidParameter(format!("psi({delta}) = {p} leaves the index rule undefined")));
    }
    Ok(delta * delta / (T::lit(2.0) * p))
}

/// `½ (τ̲-1)² (τ̲²-1)/(τ̲²+1) · Φ(δ)`, a lower bound for any α in the discrepancy band.
pub fn alpha_lower_bound<T: Scalar>(delta: T, tau_low: T, psi: &IndexFunction<T>) -> Result<T, Error> {
    if !(tau_low >= T::one()) {
        return Err(Error::InvalidParameter(format!("tau_low must be at least 1, got {tau_low}")));
    }
    let t2 = tau_low * tau_low;
    let a = tau_low - T::one();
    Ok(T::lit(0.5) * a * a * (t2 - T::one()) / (t2 + T::one()) * phi_index(delta, psi)?)
}

struct Evaluated<T> {
    point: TracePoint<T>,
    solution: Solution<T>,
}

/// Searches `alpha_bracket` for an α whose discrepancy lies in
/// `[tau_low·δ, tau_high·δ]`, bisecting in `log α`. Every solve after the first
/// is warm-started from the evaluated α nearest in `log α`.
pub fn choose_alpha_mdp<T: Scalar, P: SmoothFunctional<T> + ?Sized>(
    op: &ForwardOperator<T>,
    f: &Measurement<T>,
    penalty: &P,
    cfg: &MdpConfig<T>,
) -> Result<MdpResult<T>, MdpError<T>> {
    cfg.validate()?;
    let (low, high) = cfg.band();
    let slack = T::lit(MONOTONE_SLACK) * high;
    let mut evaluated: Vec<Evaluated<T>> = Vec::new();

    let trace = |ev: &[Evaluated<T>]| ev.iter().map(|e| e.point).collect::<Vec<_>>();

    let evaluate = |alpha: T, evaluated: &mut Vec<Evaluated<T>>| -> Result<Option<MdpResult<T>>, MdpError<T>> {
        let mut solve_cfg = cfg.solve_cfg.clone();
        if let Some(near) = evaluated
            .iter()
            .min_by(|a, b| cmp(log_gap(a.point.alpha, alpha), log_gap(b.point.alpha, alpha)))
        {
            solve_cfg.initial_guess = InitialGuess::Warm(near.solution.phi.clone());
        }
        let solution = minimize(op, f, alpha, penalty, &solve_cfg).map_err(|source| MdpError::Solve { alpha, source })?;
        let d = discrepancy(op, &solution.phi, f)?;
        let point = TracePoint {
            alpha,
            discrepancy: d,
            iterations: solution.iterations,
            converged: solution.converged,
        };
        evaluated.push(Evaluated { point, solution });

        let mut sorted: Vec<TracePoint<T>> = evaluated.iter().map(|e| e.point).collect();
        sorted.sort_by(|a, b| cmp(a.alpha, b.alpha));
        if sorted.windows(2).any(|w| w[1].discrepancy < w[0].discrepancy - slack) {
            return Err(MdpError::NonMonotone { trace: trace(evaluated) });
        }
        if d >= low && d <= high {
            let last = evaluated.last().expect("just pushed");
            return Ok(Some(MdpResult {
                alpha,
                discrepancy: d,
                solves_used: evaluated.len(),
                solution: last.solution.clone(),
                in_band: true,
                trace: trace(evaluated),
            }));
        }
        Ok(None)
    };

    let (mut lo, mut hi) = cfg.alpha_bracket;
    if let Some(r) = evaluate(lo, &mut evaluated)? {
        return Ok(r);
    }
    let d_lo = evaluated[0].point.discrepancy;
    if d_lo > high {
        return Err(MdpError::Bracket {
            reason: format!(
                "discrepancy {d_lo:e} at alpha_min = {lo:e} already exceeds tau_high*delta = {high:e}; lower alpha_min"
            ),
            trace: trace(&evaluated),
        });
    }
    if let Some(r) = evaluate(hi, &mut evaluated)? {
        return Ok(r);
    }
    let d_hi = evaluated[1].point.discrepancy;
    if d_hi < low {
        return Err(MdpError::Bracket {
            reason: format!(
                "discrepancy {d_hi:e} at alpha_max = {hi:e} stays below tau_low*delta = {low:e}; raise alpha_max"
            ),
            trace: trace(&evaluated),
        });
    }

    while evaluated.len() < cfg.max_solves {
        let mid = ((lo.ln() + hi.ln()) * T::lit(0.5)).exp();
        if !(mid > lo && mid < hi) {
            break;
        }
        if let Some(r) = evaluate(mid, &mut evaluated)? {
            return Ok(r);
        }
        if evaluated.last().expect("just pushed").point.discrepancy < low {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(MdpError::BudgetExhausted { trace: trace(&evaluated) })
}

fn log_gap<T: Scalar>(a: T, b: T) -> T {
    (a.ln() - b.ln()).abs()
}

fn cmp<T: Scalar>(a: T, b: T) -> std::cmp::Ordering {
    a.partial_cmp(&b).unwrap_or(std::cmp::Ordering::Equal)
}
