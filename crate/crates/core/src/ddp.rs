//! Differential dynamic programming on `SO(3) × ℝ³`.
//!
//! The backward pass propagates the trivialized value gradient `v_g` (a row)
//! and Hessian `V_gg` through the perturbation expansion of each step; the
//! forward pass applies `δu = γ k + K ζ` with `ζ` measured on the true rolled
//! out states through the group logarithm. With [`Expansion::First`] the
//! second-order operator contractions are dropped from the `Q` terms.

use nalgebra::{DMatrix, DVector, Matrix6, Matrix6xX, MatrixXx6, RowDVector, RowVector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{running_cost, running_derivatives, terminal_cost, terminal_derivatives, total_cost, CostSpec};
use crate::model::{linearize_step, perturbation_between, rollout, step, BodyState, PerturbationError, SatelliteModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DdpError {
    #[error("regularized Quu is not positive definite at step {step}")]
    NotPositiveDefinite { step: usize },
    #[error("regularization grew past {0:e} without a positive definite Quu")]
    RegularizationExhausted(f64),
    #[error("rollout produced a non-finite cost")]
    NonFiniteCost,
    #[error("rollout left the nominal neighbourhood at step {step}: {source}")]
    Perturbation {
        step: usize,
        #[source]
        source: PerturbationError,
    },
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("expected {expected} controls of dimension {dim}, got {got}")]
    Dimension { expected: usize, dim: usize, got: usize },
}

/// Linearization scheme selected for a whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    First,
    Second,
    /// First-order until `J_i / J_0 < σ`, second-order afterwards.
    Switch,
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first" => Ok(Scheme::First),
            "second" => Ok(Scheme::Second),
            "switch" => Ok(Scheme::Switch),
            other => Err(format!("unknown scheme `{other}` (expected first, second or switch)")),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::First => "first",
            Scheme::Second => "second",
            Scheme::Switch => "switch",
        })
    }
}

/// Expansion actually used by one backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expansion {
    First,
    Second,
}

impl std::fmt::Display for Expansion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Expansion::First => "first",
            Expansion::Second => "second",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Convergence threshold on `|J_i − J_{i−1}|` of accepted iterations.
    pub tol: f64,
    pub max_iters: usize,
    /// Line-search contraction `γ ← h γ`.
    pub h: f64,
    /// First non-zero regularization tried after `λ = 0` fails.
    pub lambda0: f64,
    pub lambda_growth: f64,
    /// Regularization ceiling; exceeding it aborts the solve.
    pub lambda_max: f64,
    pub sigma: f64,
    pub scheme: Scheme,
    pub gamma_min: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let h = 1.0 / 3.0;
        SolverConfig {
            tol: 1e-8,
            max_iters: 100,
            h,
            lambda0: 1e-6,
            lambda_growth: 1.9,
            lambda_max: 1e12,
            sigma: 0.1,
            scheme: Scheme::Switch,
            gamma_min: h.powi(15),
        }
    }
}

impl SolverConfig {
    pub fn with_scheme(scheme: Scheme) -> Self {
        SolverConfig {
            scheme,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), DdpError> {
        let positive = [
            ("tol", self.tol),
            ("h", self.h),
            ("lambda0", self.lambda0),
            ("lambda_max", self.lambda_max),
            ("sigma", self.sigma),
            ("gamma_min", self.gamma_min),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(DdpError::Config(format!("{name} must be positive, got {value}")));
            }
        }
        if self.h >= 1.0 {
            return Err(DdpError::Config(format!("h must lie in (0, 1), got {}", self.h)));
        }
        if self.sigma >= 1.0 {
            return Err(DdpError::Config(format!("sigma must lie in (0, 1), got {}", self.sigma)));
        }
        if self.lambda_growth <= 1.0 {
            return Err(DdpError::Config(format!(
                "lambda_growth must exceed 1, got {}",
                self.lambda_growth
            )));
        }
        if self.max_iters == 0 {
            return Err(DdpError::Config("max_iters must be at least 1".into()));
        }
        if self.gamma_min >= 1.0 {
            return Err(DdpError::Config(format!("gamma_min must be below 1, got {}", self.gamma_min)));
        }
        Ok(())
    }
}

/// Coefficients of the quadratic `Q` expansion at one step. `quu` already
/// includes the regularization `λ I` used for the gains.
#[derive(Debug, Clone, PartialEq)]
pub struct QDerivatives {
    pub q0: f64,
    pub qg: RowVector6<f64>,
    pub qu: RowDVector<f64>,
    pub qgg: Matrix6<f64>,
    pub qgu: Matrix6xX<f64>,
    pub qug: MatrixXx6<f64>,
    pub quu: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueDerivatives {
    pub vg: RowVector6<f64>,
    pub vgg: Matrix6<f64>,
}

/// Feedforward `k = −Quu⁻¹ Quᵀ` and feedback `K = −Quu⁻¹ Qug` per step.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub feedforward: Vec<DVector<f64>>,
    pub feedback: Vec<MatrixXx6<f64>>,
}

impl GainSchedule {
    pub fn len(&self) -> usize {
        self.feedforward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feedforward.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardPass {
    pub gains: GainSchedule,
    /// `q[k]` for `k = 0 … H−1`.
    pub q: Vec<QDerivatives>,
    /// `values[k]` for `k = 0 … H`.
    pub values: Vec<ValueDerivatives>,
    pub lambda: f64,
}

impl BackwardPass {
    pub fn max_qu_norm(&self) -> f64 {
        self.q.iter().map(|q| q.qu.norm()).fold(0.0, f64::max)
    }
}

/// One line-search candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub states: Vec<BodyState>,
    pub controls: Vec<DVector<f64>>,
    pub cost: f64,
}

/// Costate `ψ^k` of the gradient recursion, `k = 0 … H`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiSequence {
    pub psi: Vec<RowVector6<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub cost: f64,
    /// `−γ Σ Qu Quu⁻¹ Quᵀ` of the step that produced this iterate.
    pub predicted_decrease: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub expansion: Expansion,
    /// `max_k ‖Qu^k‖` evaluated at this iterate.
    pub max_qu_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchExhausted,
    RegularizationExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub states: Vec<BodyState>,
    pub controls: Vec<DVector<f64>>,
    /// `records[i]` describes iterate `U_(i)`; `records[0]` is the initial guess.
    pub records: Vec<IterationRecord>,
    /// Control sequence of every accepted iterate, aligned with `records`.
    pub history: Vec<Vec<DVector<f64>>>,
    pub termination: Termination,
    /// Iteration after which the second-order expansion was enabled.
    pub switch_iteration: Option<usize>,
}

impl Solution {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    pub fn iterations(&self) -> usize {
        self.records.len() - 1
    }

    pub fn cost(&self) -> f64 {
        self.records.last().unwrap().cost
    }

    pub fn final_max_qu_norm(&self) -> f64 {
        self.records.last().unwrap().max_qu_norm
    }

    /// `‖U_(i) − U_final‖` for every iterate.
    pub fn distances_to_final(&self) -> Vec<f64> {
        self.history
            .iter()
            .map(|u| control_distance(u, &self.controls))
            .collect()
    }
}

/// Euclidean distance between two stacked control sequences.
pub fn control_distance(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm_squared())
        .sum::<f64>()
        .sqrt()
}

fn symmetrize6(m: &Matrix6<f64>) -> Matrix6<f64> {
    0.5 * (m + m.transpose())
}

pub fn backward_pass(
    model: &SatelliteModel,
    spec: &CostSpec,
    states: &[BodyState],
    controls: &[DVector<f64>],
    lambda: f64,
    expansion: Expansion,
) -> Result<BackwardPass, DdpError> {
    let horizon = controls.len();
    assert_eq!(states.len(), horizon + 1, "trajectory/control length mismatch");
    let m = model.control_dim();

    let (vg_h, vgg_h) = terminal_derivatives(spec, &states[horizon]);
    let mut values = vec![
        ValueDerivatives {
            vg: RowVector6::zeros(),
            vgg: Matrix6::zeros(),
        };
        horizon + 1
    ];
    values[horizon] = ValueDerivatives { vg: vg_h, vgg: vgg_h };
    let mut cost_to_go = terminal_cost(spec, &states[horizon]);

    let mut q = Vec::with_capacity(horizon);
    let mut feedforward = Vec::with_capacity(horizon);
    let mut feedback = Vec::with_capacity(horizon);

    for k in (0..horizon).rev() {
        let (g, u) = (&states[k], &controls[k]);
        let lin = linearize_step(model, g, u);
        let l = running_derivatives(spec, g, u);
        let next = &values[k + 1];
        let (vg, vgg) = (&next.vg, &next.vgg);

        let qg = l.lg + vg * lin.phi;
        let qu = &l.lu + vg * &lin.b;
        let mut qgg = l.lgg + lin.phi.transpose() * vgg * lin.phi;
        let mut qgu = &l.lgu + lin.phi.transpose() * vgg * &lin.b;
        let mut qug = &l.lug + lin.b.transpose() * vgg * lin.phi;
        let mut quu = &l.luu + lin.b.transpose() * vgg * &lin.b;
        if expansion == Expansion::Second {
            for i in 0..6 {
                qgg += lin.theta[i] * vg[i];
                qgu += &lin.gamma[i] * vg[i];
                qug += &lin.delta[i] * vg[i];
                quu += &lin.xi[i] * vg[i];
            }
        }
        qgg = symmetrize6(&qgg);
        quu = 0.5 * (&quu + quu.transpose());
        quu += DMatrix::identity(m, m) * lambda;

        let chol = quu
            .clone()
            .cholesky()
            .ok_or(DdpError::NotPositiveDefinite { step: k })?;
        let kff = -chol.solve(&qu.transpose());
        let gain: MatrixXx6<f64> = -chol.solve(&qug);

        let value = ValueDerivatives {
            vg: qg + kff.transpose() * &qug,
            vgg: symmetrize6(&(qgg + &qgu * &gain)),
        };

        cost_to_go += running_cost(spec, g, u);
        q.push(QDerivatives {
            q0: cost_to_go,
            qg,
            qu,
            qgg,
            qgu,
            qug,
            quu,
        });
        feedforward.push(kff);
        feedback.push(gain);
        values[k] = value;
    }
    q.reverse();
    feedforward.reverse();
    feedback.reverse();

    Ok(BackwardPass {
        gains: GainSchedule {
            feedforward,
            feedback,
        },
        q,
        values,
        lambda,
    })
}

/// Backward pass with `λ = 0` first, then `λ0, 1.9 λ0, …` until `Quu + λI` factors.
pub fn regularized_backward_pass(
    model: &SatelliteModel,
    spec: &CostSpec,
    states: &[BodyState],
    controls: &[DVector<f64>],
    expansion: Expansion,
    config: &SolverConfig,
) -> Result<BackwardPass, DdpError> {
    let mut lambda = 0.0;
    loop {
        match backward_pass(model, spec, states, controls, lambda, expansion) {
            Ok(pass) => return Ok(pass),
            Err(DdpError::NotPositiveDefinite { .. }) => {
                lambda = if lambda == 0.0 {
                    config.lambda0
                } else {
                    lambda * config.lambda_growth
                };
                if lambda > config.lambda_max {
                    return Err(DdpError::RegularizationExhausted(config.lambda_max));
                }
            }
            Err(e) => return Err(e),
        }
    }
}

pub fn forward_pass(
    model: &SatelliteModel,
    spec: &CostSpec,
    states: &[BodyState],
    controls: &[DVector<f64>],
    gains: &GainSchedule,
    gamma: f64,
) -> Result<Rollout, DdpError> {
    let horizon = controls.len();
    let mut new_states = Vec::with_capacity(horizon + 1);
    let mut new_controls = Vec::with_capacity(horizon);
    new_states.push(states[0]);
    let mut zeta = nalgebra::Vector6::zeros();
    for k in 0..horizon {
        let du = gamma * &gains.feedforward[k] + &gains.feedback[k] * zeta;
        let u = &controls[k] + du;
        let next = step(model, &new_states[k], &u);
        if k + 1 < horizon {
            zeta = perturbation_between(&states[k + 1], &next)
                .map_err(|source| DdpError::Perturbation { step: k + 1, source })?
                .to_vector();
        }
        new_states.push(next);
        new_controls.push(u);
    }
    let cost = total_cost(spec, &new_states, &new_controls);
    if !cost.is_finite() {
        return Err(DdpError::NonFiniteCost);
    }
    Ok(Rollout {
        states: new_states,
        controls: new_controls,
        cost,
    })
}

/// First-order model decrease `−γ Σ_k Qu^k (Quu^k)⁻¹ (Qu^k)ᵀ`.
pub fn predicted_decrease(q: &[QDerivatives], gamma: f64) -> f64 {
    let sum: f64 = q
        .iter()
        .map(|qk| {
            let chol = qk.quu.clone().cholesky().expect("Quu positive definite");
            qk.qu.dot(&chol.solve(&qk.qu.transpose()).transpose())
        })
        .sum();
    -gamma * sum
}

/// Exact trivialized gradient `∂J/∂u^k = ℓ_u^k + ψ^{k+1} B^k` (rows of an
/// `H × m` matrix) from the first-order costate recursion.
pub fn gradient_oracle(
    model: &SatelliteModel,
    spec: &CostSpec,
    states: &[BodyState],
    controls: &[DVector<f64>],
) -> (DMatrix<f64>, PsiSequence) {
    let horizon = controls.len();
    let m = model.control_dim();
    let mut psi = vec![RowVector6::zeros(); horizon + 1];
    psi[horizon] = terminal_derivatives(spec, &states[horizon]).0;
    let mut grad = DMatrix::zeros(horizon, m);
    for k in (0..horizon).rev() {
        let lin = linearize_step(model, &states[k], &controls[k]);
        let l = running_derivatives(spec, &states[k], &controls[k]);
        let row = &l.lu + psi[k + 1] * &lin.b;
        grad.row_mut(k).copy_from(&row);
        psi[k] = l.lg + psi[k + 1] * lin.phi;
    }
    (grad, PsiSequence { psi })
}

fn check_dimensions(model: &SatelliteModel, spec: &CostSpec, controls: &[DVector<f64>]) -> Result<(), DdpError> {
    let dim = model.control_dim();
    let bad = controls.len() != model.horizon()
        || spec.control_dim() != dim
        || controls.iter().any(|u| u.len() != dim);
    if bad {
        return Err(DdpError::Dimension {
            expected: model.horizon(),
            dim,
            got: controls.len(),
        });
    }
    Ok(())
}

pub fn solve(
    model: &SatelliteModel,
    spec: &CostSpec,
    config: &SolverConfig,
    g0: &BodyState,
    initial_controls: &[DVector<f64>],
) -> Result<Solution, DdpError> {
    config.validate()?;
    check_dimensions(model, spec, initial_controls)?;

    let mut controls = initial_controls.to_vec();
    let mut states = rollout(model, g0, &controls);
    let mut cost = total_cost(spec, &states, &controls);
    if !cost.is_finite() {
        return Err(DdpError::NonFiniteCost);
    }
    let initial_cost = cost;
    let mut second_order = config.scheme == Scheme::Second;
    let mut switch_iteration = None;
    let expansion_of = |second: bool| if second { Expansion::Second } else { Expansion::First };

    let mut records = vec![IterationRecord {
        iter: 0,
        cost,
        predicted_decrease: 0.0,
        gamma: 0.0,
        lambda: 0.0,
        expansion: expansion_of(second_order),
        max_qu_norm: f64::NAN,
    }];
    let mut history = vec![controls.clone()];
    let mut termination = Termination::MaxIterations;

    for iter in 1..=config.max_iters {
        let expansion = expansion_of(second_order);
        let pass = match regularized_backward_pass(model, spec, &states, &controls, expansion, config) {
            Ok(pass) => pass,
            Err(DdpError::RegularizationExhausted(_)) => {
                termination = Termination::RegularizationExhausted;
                break;
            }
            Err(e) => return Err(e),
        };
        records.last_mut().unwrap().max_qu_norm = pass.max_qu_norm();

        let mut gamma = 1.0;
        let accepted = loop {
            match forward_pass(model, spec, &states, &controls, &pass.gains, gamma) {
                Ok(trial) if trial.cost <= cost => break Some(trial),
                _ => {}
            }
            gamma *= config.h;
            if gamma < config.gamma_min {
                break None;
            }
        };
        let Some(trial) = accepted else {
            termination = Termination::LineSearchExhausted;
            break;
        };

        let change = trial.cost - cost;
        states = trial.states;
        controls = trial.controls;
        cost = trial.cost;
        records.push(IterationRecord {
            iter,
            cost,
            predicted_decrease: predicted_decrease(&pass.q, gamma),
            gamma,
            lambda: pass.lambda,
            expansion,
            max_qu_norm: f64::NAN,
        });
        history.push(controls.clone());

        if config.scheme == Scheme::Switch && !second_order && initial_cost > 0.0 && cost / initial_cost < config.sigma {
            second_order = true;
            switch_iteration = Some(iter);
        }
        if change.abs() <= config.tol {
            termination = Termination::Converged;
            break;
        }
    }

    // Stationarity measure at the final iterate.
    if records.last().unwrap().max_qu_norm.is_nan() {
        if let Ok(pass) =
            regularized_backward_pass(model, spec, &states, &controls, expansion_of(second_order), config)
        {
            records.last_mut().unwrap().max_qu_norm = pass.max_qu_norm();
        }
    }

    Ok(Solution {
        states,
        controls,
        records,
        history,
        termination,
        switch_iteration,
    })
}
