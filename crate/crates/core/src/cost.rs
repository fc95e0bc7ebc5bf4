//! Quadratic attitude-tracking cost and its trivialized derivatives.
//!
//! Gradients are row vectors and perturbations are columns, so every pairing
//! below is a plain matrix product.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Matrix6xX, MatrixXx6, RowDVector, RowVector6, Vector3};
use thiserror::Error;

use crate::model::BodyState;
use crate::so3::{vee, Rotation};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("control weight is not symmetric positive definite")]
    ControlWeight,
    #[error("{0} weight is not symmetric positive semidefinite")]
    StateWeight(&'static str),
}

/// Weights and target of the benchmark cost
/// `Σ ½‖u‖²_Su + ½‖I − R_dᵀR^H‖²_{SR} + ½‖Ω^H − Ω_d‖²_{SΩ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    su: DMatrix<f64>,
    sr: Matrix3<f64>,
    somega: Matrix3<f64>,
    rd: Rotation,
    omegad: Vector3<f64>,
}

fn is_symmetric_psd(m: &Matrix3<f64>) -> bool {
    let scale = m.norm().max(1.0);
    if (m - m.transpose()).norm() > 1e-12 * scale {
        return false;
    }
    m.symmetric_eigenvalues().iter().all(|&l| l >= -1e-12 * scale)
}

impl CostSpec {
    /// `SR` and `SΩ` may be singular (zero weight switches a term off); `Su`
    /// must be positive definite.
    pub fn new(
        su: DMatrix<f64>,
        sr: Matrix3<f64>,
        somega: Matrix3<f64>,
        rd: Rotation,
        omegad: Vector3<f64>,
    ) -> Result<Self, CostError> {
        if !su.is_square() || (&su - su.transpose()).norm() > 1e-12 * su.norm().max(1.0) {
            return Err(CostError::ControlWeight);
        }
        if su.clone().cholesky().is_none() {
            return Err(CostError::ControlWeight);
        }
        if !is_symmetric_psd(&sr) {
            return Err(CostError::StateWeight("attitude"));
        }
        if !is_symmetric_psd(&somega) {
            return Err(CostError::StateWeight("angular velocity"));
        }
        Ok(CostSpec {
            su,
            sr,
            somega,
            rd,
            omegad,
        })
    }

    pub fn su(&self) -> &DMatrix<f64> {
        &self.su
    }

    pub fn sr(&self) -> &Matrix3<f64> {
        &self.sr
    }

    pub fn somega(&self) -> &Matrix3<f64> {
        &self.somega
    }

    pub fn target_rotation(&self) -> &Rotation {
        &self.rd
    }

    pub fn target_omega(&self) -> &Vector3<f64> {
        &self.omegad
    }

    pub fn control_dim(&self) -> usize {
        self.su.nrows()
    }
}

/// Trivialized first and second derivatives of the running cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostDerivatives {
    pub lg: RowVector6<f64>,
    pub lu: RowDVector<f64>,
    pub lgg: Matrix6<f64>,
    pub luu: DMatrix<f64>,
    pub lgu: Matrix6xX<f64>,
    pub lug: MatrixXx6<f64>,
}

pub fn running_cost(spec: &CostSpec, _g: &BodyState, u: &DVector<f64>) -> f64 {
    0.5 * u.dot(&(&spec.su * u))
}

pub fn terminal_cost(spec: &CostSpec, g: &BodyState) -> f64 {
    let c = Matrix3::identity() - spec.rd.matrix().transpose() * g.rotation.matrix();
    let dw = g.omega - spec.omegad;
    0.5 * (c.transpose() * spec.sr * c).trace() + 0.5 * dw.dot(&(spec.somega * dw))
}

/// Total cost `Σ_k Λ(g^k, u^k) + F(g^H)` of a trajectory and its controls.
pub fn total_cost(spec: &CostSpec, states: &[BodyState], controls: &[DVector<f64>]) -> f64 {
    assert_eq!(states.len(), controls.len() + 1, "trajectory/control length mismatch");
    let running: f64 = states
        .iter()
        .zip(controls)
        .map(|(g, u)| running_cost(spec, g, u))
        .sum();
    running + terminal_cost(spec, states.last().unwrap())
}

pub fn running_derivatives(spec: &CostSpec, _g: &BodyState, u: &DVector<f64>) -> CostDerivatives {
    let m = spec.control_dim();
    CostDerivatives {
        lg: RowVector6::zeros(),
        lu: (&spec.su * u).transpose(),
        lgg: Matrix6::zeros(),
        luu: spec.su.clone(),
        lgu: Matrix6xX::zeros(m),
        lug: MatrixXx6::zeros(m),
    }
}

/// Trivialized gradient and (0)-connection Hessian of the terminal cost.
pub fn terminal_derivatives(spec: &CostSpec, g: &BodyState) -> (RowVector6<f64>, Matrix6<f64>) {
    let s = spec.sr * spec.rd.matrix().transpose() * g.rotation.matrix();
    let skew = 0.5 * (s - s.transpose());
    let grad_r = 2.0 * vee(&skew).expect("skew part is skew");
    let grad_w = spec.somega * (g.omega - spec.omegad);

    let mut vg = RowVector6::zeros();
    vg.fixed_columns_mut::<3>(0).copy_from(&grad_r.transpose());
    vg.fixed_columns_mut::<3>(3).copy_from(&grad_w.transpose());

    let h = s.trace() * Matrix3::identity() - s;
    let mut vgg = Matrix6::zeros();
    vgg.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(0.5 * (h + h.transpose())));
    vgg.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(0.5 * (spec.somega + spec.somega.transpose())));
    (vg, vgg)
}
