//! End-to-end convergence-rate experiments: synthetic truth, exact-norm noise,
//! parameter choice per noise level, metrics against the truth, certified
//! bounds, and an empirical power-law fit.

pub mod certify;
pub mod config;
pub mod fit;
pub mod noise;
pub mod output;
pub mod phantom;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bregman::{bregman, bregman_sym};
use crate::error::Error;
use crate::forward_ops::{ForwardOperator, InjectivityDiagnostic, Measurement};
use crate::grid::Field;
use crate::mdp::{alpha_lower_bound, choose_alpha_mdp, discrepancy, phi_index, MdpError, TracePoint};
use crate::smoothed_tv::SmoothedTvPenalty;
use crate::solver::{minimize, optimality_residual, Solution, SolveError};

pub use certify::{certify_bounds, BoundCheck, BoundStatus, CertifyInputs, BOUND_NAMES};
pub use config::{load_config, parse_config, ConfigError, ExperimentConfig, LoadedConfig, Strategy};
pub use fit::{fit_index, FitTarget};
pub use noise::{add_noise, NoiseModel};
pub use phantom::{make_phantom, PhantomKind};

/// Relative tolerance for the operator-norm power iteration reported with each run.
const OPERATOR_NORM_TOL: f64 = 1e-8;
const OPERATOR_NORM_MAX_ITERS: usize = 5_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRecord {
    pub delta: f64,
    pub alpha: f64,
    pub strategy: Strategy,
    pub discrepancy: f64,
    /// `‖Tφ_α - Tφ†‖`.
    pub data_error: f64,
    /// `J(φ_α) - J(φ†)`.
    pub j_gap: f64,
    /// `D_J(φ_α, φ†)`.
    pub bregman_dist: f64,
    pub bregman_sym: f64,
    /// `‖φ_α - φ†‖`.
    pub l2_error: f64,
    /// Discrepancy within `[τ̲δ, τ̄δ]` for the discrepancy principle, at most
    /// `τ̄δ` for the index rule.
    pub in_band: bool,
    pub solves_used: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Final gradient norm over `max(1, initial gradient norm)`.
    pub relative_grad_norm: f64,
    pub psi: Option<f64>,
    pub alpha_lower_bound: Option<f64>,
    pub bregman_over_psi: Option<f64>,
    pub bound_checks: Vec<BoundCheck>,
    #[serde(skip)]
    pub trace: Vec<TracePoint<f64>>,
}

impl RateRecord {
    pub fn violations(&self) -> usize {
        self.bound_checks
            .iter()
            .filter(|c| c.status == BoundStatus::Violated)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// Sorted by `delta`, largest first.
    pub records: Vec<RateRecord>,
    pub fit_target: FitTarget,
    pub fitted_kappa: Option<f64>,
    pub fitted_c: Option<f64>,
    pub fit_error: Option<String>,
    pub operator_norm: f64,
    /// `4(τ̲²+1)(3/2+τ̄) / ((τ̲-1)³(τ̲+1))`, the constant in `D_J ≤ const·Ψ(δ)`;
    /// absent when `τ̲ = 1`.
    pub rate_constant: Option<f64>,
    pub injectivity: Option<InjectivityDiagnostic>,
    pub violations: usize,
    pub config: serde_json::Value,
    pub overrides: Vec<String>,
}

impl RateReport {
    pub fn all_satisfied(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Mdp(#[from] MdpError<f64>),
    #[error(transparent)]
    Solve(#[from] SolveError<f64>),
    #[error(transparent)]
    Model(#[from] Error),
}

impl PipelineError {
    pub fn trace(&self) -> &[TracePoint<f64>] {
        match self {
            Self::Mdp(e) => e.trace(),
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Setup(#[from] Error),
    #[error("delta = {delta}: {source}")]
    Delta {
        delta: f64,
        #[source]
        source: PipelineError,
        /// Records of the noise levels that completed.
        partial: Box<RateReport>,
    },
}

/// The fixed ingredients shared by every noise level.
struct Setup {
    op: ForwardOperator<f64>,
    penalty: SmoothedTvPenalty<f64>,
    truth: Field<f64>,
    f_true: Measurement<f64>,
}

impl Setup {
    fn new(cfg: &ExperimentConfig) -> Result<Self, Error> {
        let grid = cfg.build_grid()?;
        let op = cfg.build_operator(&grid)?;
        let penalty = SmoothedTvPenalty::new(cfg.beta)?;
        let truth = make_phantom(cfg.phantom, &grid)?;
        let f_true = op.apply(&truth)?;
        Ok(Self {
            op,
            penalty,
            truth,
            f_true,
        })
    }
}

/// Result of a single parameter choice and solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ChosenSolve {
    pub alpha: f64,
    pub solution: Solution<f64>,
    pub discrepancy: f64,
    pub in_band: bool,
    pub solves_used: usize,
    pub trace: Vec<TracePoint<f64>>,
}

fn choose_and_solve(
    cfg: &ExperimentConfig,
    op: &ForwardOperator<f64>,
    penalty: &SmoothedTvPenalty<f64>,
    f: &Measurement<f64>,
    delta: f64,
) -> Result<ChosenSolve, PipelineError> {
    match cfg.strategy {
        Strategy::Mdp => {
            let r = choose_alpha_mdp(op, f, penalty, &cfg.mdp_config(delta))?;
            Ok(ChosenSolve {
                alpha: r.alpha,
                discrepancy: r.discrepancy,
                in_band: r.in_band,
                solves_used: r.solves_used,
                trace: r.trace,
                solution: r.solution,
            })
        }
        Strategy::Index => {
            let psi = cfg
                .index_function()
                .ok_or_else(|| Error::InvalidParameter("the index strategy requires psi".into()))?;
            let alpha = phi_index(delta, &psi)?;
            let solution = minimize(op, f, alpha, penalty, &cfg.solver.to_solve_config())?;
            let d = discrepancy(op, &solution.phi, f)?;
            Ok(ChosenSolve {
                alpha,
                discrepancy: d,
                in_band: d <= cfg.tau_high * delta,
                solves_used: 1,
                trace: vec![TracePoint {
                    alpha,
                    discrepancy: d,
                    iterations: solution.iterations,
                    converged: solution.converged,
                }],
                solution,
            })
        }
    }
}

fn run_delta(cfg: &ExperimentConfig, s: &Setup, index: usize, delta: f64) -> Result<RateRecord, PipelineError> {
    let noise = NoiseModel {
        delta,
        seed: cfg.seed.wrapping_add(index as u64),
    };
    let f = add_noise(&s.op, &s.f_true, noise)?;
    let chosen = choose_and_solve(cfg, &s.op, &s.penalty, &f, delta)?;
    let phi = &chosen.solution.phi;

    let data_error = s.op.range_norm(&s.op.apply(phi)?.sub(&s.f_true)?)?;
    let j_gap = s.penalty.value(phi) - s.penalty.value(&s.truth);
    let bregman_dist = bregman(&s.penalty, phi, &s.truth)?;
    let bregman_sym = bregman_sym(&s.penalty, phi, &s.truth)?;
    let l2_error = phi.sub(&s.truth)?.norm_l2();

    let psi = cfg.index_function().map(|p| p.eval(delta)).transpose()?;
    let lower = cfg
        .index_function()
        .map(|p| alpha_lower_bound(delta, cfg.tau_low, &p))
        .transpose()?;
    let sol = &chosen.solution;
    let bound_checks = certify_bounds(&CertifyInputs {
        delta,
        alpha: chosen.alpha,
        strategy: cfg.strategy,
        in_band: chosen.in_band,
        tau_high: cfg.tau_high,
        j_gap,
        data_error,
        bregman_dist,
    });
    Ok(RateRecord {
        delta,
        alpha: chosen.alpha,
        strategy: cfg.strategy,
        discrepancy: chosen.discrepancy,
        data_error,
        j_gap,
        bregman_dist,
        bregman_sym,
        l2_error,
        in_band: chosen.in_band,
        solves_used: chosen.solves_used,
        iterations: sol.iterations,
        converged: sol.converged,
        relative_grad_norm: sol.final_grad_norm / sol.initial_grad_norm.max(1.0),
        psi,
        alpha_lower_bound: lower,
        bregman_over_psi: psi.filter(|&p| p > 0.0).map(|p| bregman_dist / p),
        bound_checks,
        trace: chosen.trace,
    })
}

/// `4(τ̲²+1)(3/2+τ̄) / ((τ̲-1)³(τ̲+1))`.
pub fn rate_constant(tau_low: f64, tau_high: f64) -> Option<f64> {
    let t = tau_low;
    (t > 1.0).then(|| 4.0 * (t * t + 1.0) * (1.5 + tau_high) / ((t - 1.0).powi(3) * (t + 1.0)))
}

fn assemble(loaded: &LoadedConfig, op: &ForwardOperator<f64>, mut records: Vec<RateRecord>) -> Result<RateReport, Error> {
    let cfg = &loaded.config;
    records.sort_by(|a, b| b.delta.total_cmp(&a.delta));
    let (fitted_kappa, fitted_c, fit_error) = match fit_index(&records, cfg.fit_target) {
        Ok((k, c)) => (Some(k), Some(c), None),
        Err(e) => (None, None, Some(e.to_string())),
    };
    let operator_norm = match op.operator_norm_with(OPERATOR_NORM_TOL, OPERATOR_NORM_MAX_ITERS) {
        Ok(n) => n,
        Err(Error::NotConverged { estimate, .. }) => estimate,
        Err(e) => return Err(e),
    };
    Ok(RateReport {
        violations: records.iter().map(RateRecord::violations).sum(),
        records,
        fit_target: cfg.fit_target,
        fitted_kappa,
        fitted_c,
        fit_error,
        operator_norm,
        rate_constant: rate_constant(cfg.tau_low, cfg.tau_high),
        injectivity: op.injectivity_diagnostic()?,
        config: loaded.echo(),
        overrides: loaded.overrides.clone(),
    })
}

/// Runs every noise level of `loaded` (concurrently) and assembles the report.
/// Noise level `i` draws its noise from `seed + i`.
pub fn run_experiment(loaded: &LoadedConfig) -> Result<RateReport, ExperimentError> {
    let cfg = &loaded.config;
    let setup = Setup::new(cfg)?;
    let outcomes: Vec<Result<RateRecord, PipelineError>> = cfg
        .deltas
        .par_iter()
        .enumerate()
        .map(|(i, &d)| run_delta(cfg, &setup, i, d))
        .collect();
    let mut records = Vec::with_capacity(outcomes.len());
    let mut failure = None;
    for (outcome, &delta) in outcomes.into_iter().zip(&cfg.deltas) {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) if failure.is_none() => failure = Some((delta, e)),
            Err(_) => {}
        }
    }
    let report = assemble(loaded, &setup.op, records)?;
    match failure {
        None => Ok(report),
        Some((delta, source)) => Err(ExperimentError::Delta {
            delta,
            source,
            partial: Box::new(report),
        }),
    }
}

/// Outcome of a single-δ solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleSolve {
    pub delta: f64,
    pub strategy: Strategy,
    pub chosen: ChosenSolve,
    pub optimality_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SingleSolveSummary {
    pub delta: f64,
    pub strategy: Strategy,
    pub alpha: f64,
    pub discrepancy: f64,
    pub in_band: bool,
    pub optimality_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub solves_used: usize,
    pub config: serde_json::Value,
    pub overrides: Vec<String>,
}

impl SingleSolve {
    pub fn summary(&self, loaded: &LoadedConfig) -> SingleSolveSummary {
        SingleSolveSummary {
            delta: self.delta,
            strategy: self.strategy,
            alpha: self.chosen.alpha,
            discrepancy: self.chosen.discrepancy,
            in_band: self.chosen.in_band,
            optimality_residual: self.optimality_residual,
            iterations: self.chosen.solution.iterations,
            converged: self.chosen.solution.converged,
            solves_used: self.chosen.solves_used,
            config: loaded.echo(),
            overrides: loaded.overrides.clone(),
        }
    }
}

/// Chooses α and solves once, for a configuration with exactly one noise
/// level. Data come from the `measurement` CSV when given, otherwise from the
/// phantom with noise drawn from `seed`.
pub fn solve_single(loaded: &LoadedConfig) -> Result<SingleSolve, PipelineError> {
    let cfg = &loaded.config;
    let [delta] = cfg.deltas[..] else {
        return Err(Error::InvalidParameter(format!(
            "solve needs exactly one delta, got {} (use --set deltas=[value])",
            cfg.deltas.len()
        ))
        .into());
    };
    let grid = cfg.build_grid()?;
    let op = cfg.build_operator(&grid)?;
    let penalty = SmoothedTvPenalty::new(cfg.beta)?;
    let f = match loaded.measurement_path() {
        Some(path) => {
            let file = std::fs::File::open(&path)
                .map_err(|e| Error::Io(format!("cannot open measurement {}: {e}", path.display())))?;
            let m = Measurement::read_csv(file)?;
            if m.len() != op.range_dim() {
                return Err(Error::DimensionMismatch {
                    expected: op.range_dim(),
                    found: m.len(),
                }
                .into());
            }
            m
        }
        None => {
            let truth = make_phantom(cfg.phantom, &grid)?;
            add_noise(&op, &op.apply(&truth)?, NoiseModel { delta, seed: cfg.seed })?
        }
    };
    let chosen = choose_and_solve(cfg, &op, &penalty, &f, delta)?;
    let optimality_residual = optimality_residual(&op, &f, &chosen.solution, &penalty)?;
    Ok(SingleSolve {
        delta,
        strategy: cfg.strategy,
        chosen,
        optimality_residual,
    })
}
