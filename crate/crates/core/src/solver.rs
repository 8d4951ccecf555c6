//! Minimization of `F_α(φ) = ½‖Tφ - f‖² + α J(φ)` by gradient descent with
//! Armijo backtracking, seeded with Barzilai-Borwein step lengths.
//!
//! The sufficient-decrease test uses the objective change along the search
//! direction evaluated term by term (the data term exactly as a quadratic in
//! the step, the penalty via [`SmoothFunctional::line_restriction`]) so the test
//! stays meaningful when the change is far below the objective's roundoff.

use thiserror::Error;

use crate::bregman::SmoothFunctional;
use crate::error::Error;
use crate::forward_ops::{ForwardOperator, Measurement};
use crate::grid::Field;
use crate::scalar::Scalar;

const MAX_BACKTRACKS: usize = 80;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialGuess<T> {
    Zeros,
    /// `c · T* f` with `c` the least-squares scale of `T T* f` against `f`.
    AdjointOfData,
    Warm(Field<T>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearch<T> {
    /// Sufficient-decrease constant, in (0, 1).
    pub c1: T,
    /// Backtracking factor, in (0, 1).
    pub backtrack: T,
    pub initial_step: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig<T> {
    pub max_iters: usize,
    /// Relative gradient tolerance: stop once `‖∇F‖ ≤ grad_tol · max(1, ‖∇F(φ₀)‖)`.
    pub grad_tol: T,
    pub line_search: LineSearch<T>,
    pub initial_guess: InitialGuess<T>,
    /// Seed each line search with a Barzilai-Borwein step.
    pub bb_steps: bool,
    /// Keep the objective after every accepted step in [`Solution::history`].
    pub record_history: bool,
}

impl<T: Scalar> Default for SolveConfig<T> {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            grad_tol: T::lit(1e-8),
            line_search: LineSearch {
                c1: T::lit(1e-4),
                backtrack: T::lit(0.5),
                initial_step: T::one(),
            },
            initial_guess: InitialGuess::AdjointOfData,
            bb_steps: true,
            record_history: false,
        }
    }
}

impl<T: Scalar> SolveConfig<T> {
    pub fn validate(&self) -> Result<(), Error> {
        let ls = &self.line_search;
        let unit = |x: T| x > T::zero() && x < T::one();
        if self.max_iters < 1 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        if !unit(self.grad_tol) {
            return Err(Error::InvalidParameter("grad_tol must lie in (0, 1)".into()));
        }
        if !unit(ls.c1) {
            return Err(Error::InvalidParameter("armijo c1 must lie in (0, 1)".into()));
        }
        if !unit(ls.backtrack) {
            return Err(Error::InvalidParameter("backtrack factor must lie in (0, 1)".into()));
        }
        if !(ls.initial_step > T::zero() && ls.initial_step.is_finite()) {
            return Err(Error::InvalidParameter("initial step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution<T> {
    pub phi: Field<T>,
    pub alpha: T,
    pub iterations: usize,
    pub initial_grad_norm: T,
    pub final_grad_norm: T,
    pub objective: T,
    /// False when the iteration budget ran out before the gradient tolerance was met.
    pub converged: bool,
    pub history: Vec<T>,
}

#[derive(Debug, Clone, Error)]
pub enum SolveError<T: Scalar> {
    #[error(transparent)]
    Model(#[from] Error),

    #[error("line search failed at iteration {} (gradient norm {:e})", .best.iterations, .best.final_grad_norm)]
    LineSearch { best: Box<Solution<T>> },
}

fn check_alpha<T: Scalar>(alpha: T) -> Result<(), Error> {
    if alpha > T::zero() && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")))
    }
}

/// `½‖Tφ - f‖² + α J(φ)`.
pub fn cost<T: Scalar, P: SmoothFunctional<T> + ?Sized>(
    op: &ForwardOperator<T>,
    f: &Measurement<T>,
    phi: &Field<T>,
    alpha: T,
    penalty: &P,
) -> Result<T, Error> {
    check_alpha(alpha)?;
    let r = op.apply(phi)?.sub(f)?;
    let n = op.range_norm(&r)?;
    Ok(T::lit(0.5) * n * n + alpha * penalty.value(phi))
}

/// `T*(Tφ - f) + α ∇J(φ)`.
pub fn cost_gradient<T: Scalar, P: SmoothFunctional<T> + ?Sized>(
    op: &ForwardOperator<T>,
    f: &Measurement<T>,
    phi: &Field<T>,
    alpha: T,
    penalty: &P,
) -> Result<Field<T>, Error> {
    check_alpha(alpha)?;
    raw_gradient(op, f, phi, alpha, penalty)
}

fn raw_gradient<T: Scalar, P: SmoothFunctional<T> + ?Sized>(
    op: &ForwardOperator<T>,
    f: &Measurement<T>,
    phi: &Field<T>,
    alpha: T,
    penalty: &P,
) -> Result<Field<T>, Error> {
    let r = op.apply(phi)?.sub(f)?;
    op.adjoint(&r)?.add_scaled(alpha, &penalty.gradient(phi))
}

/// `‖T*(f - Tφ_α) - α ∇J(φ_α)‖`, the first-order optimality residual.
pub fn optimality_residual<T: Scalar, P: SmoothFunctional<T> + ?Sized>(
    op: &ForwardOperator<T>,
    f: &Measurement<T>,
    sol: &Solution<T>,
    penalty: &P,
) -> Result<T, Error> {
    Ok(raw_gradient(op, f, &sol.phi, sol.alpha, penalty)?.norm_l2())
}

/// `⟨T*(Tφ - f), φ - φ_α⟩ - α⟨∇J(φ), φ_α - φ⟩` for a comparison field `φ`.
/// Nonnegative for every `φ` when `sol` is an exact minimizer, since it equals
/// `⟨∇F_α(φ), φ - φ_α⟩`.
pub fn variational_gap<T: Scalar, P: SmoothFunctional<T> + ?Sized>(
    op: &ForwardOperator<T>,
    f: &Measurement<T>,
    sol: &Solution<T>,
    penalty: &P,
    phi: &Field<T>,
) -> Result<T, Error> {
    let diff = phi.sub(&sol.phi)?;
    let data = op.adjoint(&op.apply(phi)?.sub(f)?)?.inner(&diff)?;
    Ok(data + sol.alpha * penalty.gradient(phi).inner(&diff)?)
}

fn initial_field<T: Scalar>(
    op: &ForwardOperator<T>,
    f: &Measurement<T>,
    guess: &InitialGuess<T>,
) -> Result<Field<T>, Error> {
    match guess {
        InitialGuess::Zeros => Ok(Field::zeros(op.domain_grid())),
        InitialGuess::Warm(phi) => {
            op.domain_grid().ensure_same(phi.grid())?;
            Ok(phi.clone())
        }
        InitialGuess::AdjointOfData => {
            let x = op.adjoint(f)?;
            let tx = op.apply(&x)?;
            let denom = op.range_inner(&tx, &tx)?;
            if denom > T::zero() {
                Ok(x.scale(op.range_inner(&tx, f)? / denom))
            } else {
                Ok(Field::zeros(op.domain_grid()))
            }
        }
    }
}

/// Minimizes `F_α` for fixed `alpha > 0`.
pub fn minimize<T: Scalar, P: SmoothFunctional<T> + ?Sized>(
    op: &ForwardOperator<T>,
    f: &Measurement<T>,
    alpha: T,
    penalty: &P,
    cfg: &SolveConfig<T>,
) -> Result<Solution<T>, SolveError<T>> {
    check_alpha(alpha)?;
    cfg.validate()?;
    if f.len() != op.range_dim() {
        return Err(Error::DimensionMismatch {
            expected: op.range_dim(),
            found: f.len(),
        }
        .into());
    }
    let half = T::lit(0.5);
    let ls = cfg.line_search;

    let mut phi = initial_field(op, f, &cfg.initial_guess)?;
    let mut residual = op.apply(&phi)?.sub(f)?;
    let mut grad = op.adjoint(&residual)?.add_scaled(alpha, &penalty.gradient(&phi))?;
    let mut grad_norm = grad.norm_l2();
    let initial_grad_norm = grad_norm;
    let tol = cfg.grad_tol * initial_grad_norm.max(T::one());
    let data_norm = op.range_norm(&residual)?;
    let mut objective = half * data_norm * data_norm + alpha * penalty.value(&phi);
    let mut history = Vec::new();
    if cfg.record_history {
        history.push(objective);
    }

    let mut step = ls.initial_step;
    let mut previous: Option<(Field<T>, Field<T>)> = None;
    let mut iterations = 0;

    while grad_norm > tol && iterations < cfg.max_iters {
        if let (true, Some((phi_prev, grad_prev))) = (cfg.bb_steps, previous.as_ref()) {
            let s = phi.sub(phi_prev)?;
            let y = grad.sub(grad_prev)?;
            let sy = s.inner(&y)?;
            if sy > T::zero() {
                let ss = s.inner(&s)?;
                let yy = y.inner(&y)?;
                let long = ss / sy;
                let short = sy / yy;
                // Adaptive choice: short steps when the two estimates disagree strongly.
                step = if short < T::lit(0.8) * long { short } else { long };
            }
        }

        let dir = grad.scale(-T::one());
        let t_dir = op.apply(&dir)?;
        let r_td = op.range_inner(&residual, &t_dir)?;
        let td_td = op.range_inner(&t_dir, &t_dir)?;
        let g2 = grad_norm * grad_norm;

        let penalty_change = penalty.line_restriction(&phi, &dir)?;
        let mut t = step;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let change = t * r_td + half * t * t * td_td + alpha * penalty_change(t);
            if change <= -ls.c1 * t * g2 {
                accepted = Some((t, change));
                break;
            }
            t = t * ls.backtrack;
        }
        let Some((t, change)) = accepted else {
            return Err(SolveError::LineSearch {
                best: Box::new(Solution {
                    phi,
                    alpha,
                    iterations,
                    initial_grad_norm,
                    final_grad_norm: grad_norm,
                    objective,
                    converged: false,
                    history,
                }),
            });
        };

        let phi_next = phi.add_scaled(t, &dir)?;
        residual = op.apply(&phi_next)?.sub(f)?;
        let grad_next = op.adjoint(&residual)?.add_scaled(alpha, &penalty.gradient(&phi_next))?;
        previous = Some((std::mem::replace(&mut phi, phi_next), std::mem::replace(&mut grad, grad_next)));
        grad_norm = grad.norm_l2();
        objective = objective + change;
        if cfg.record_history {
            history.push(objective);
        }
        step = t;
        iterations += 1;
    }

    let data_norm = op.range_norm(&residual)?;
    Ok(Solution {
        objective: half * data_norm * data_norm + alpha * penalty.value(&phi),
        phi,
        alpha,
        iterations,
        initial_grad_norm,
        final_grad_norm: grad_norm,
        converged: grad_norm <= tol,
        history,
    })
}
