//! Forward-Euler rigid-body dynamics on `SO(3) × ℝ³` and the second-order
//! expansion of the state perturbation through one step.
//!
//! A perturbed state is written `ḡ exp(ζ)` with `ζ = (η, δξ)`; the expansion
//! returned by [`linearize_step`] predicts
//!
//! ```text
//! ζ' ≈ Φ ζ + B δu + ½ [ζᵀ Θ_(i) ζ + ζᵀ Γ_(i) δu + δuᵀ Δ_(i) ζ + δuᵀ Ξ_(i) δu]_i
//! ```
//!
//! The pose rows (`i ≤ 3`) come from the BCH expansion of
//! `log(exp(−Δt ξ̄) exp(η) exp(Δt ξ̄ + Δt δξ))` and the velocity rows from the
//! ordinary Taylor expansion of the Euler update.

use nalgebra::{DVector, Matrix3, Matrix3xX, Matrix6, Matrix6xX, Vector3, Vector6};
use thiserror::Error;

use crate::so3::{ad, dexp, dexp_matrix, dexpinv, exp_so3, log_so3, Rotation};

/// Distance from π beyond which two attitudes have no well-defined perturbation.
pub const INJECTIVITY_MARGIN: f64 = 1e-3;

/// Largest admissible time step.
pub const MAX_DT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("time step {0} outside (0, {MAX_DT}]")]
    TimeStep(f64),
    #[error("inertia tensor is not symmetric positive definite")]
    Inertia,
    #[error("horizon must be at least one step")]
    Horizon,
    #[error("torque axis matrix has {0} rows, expected 3")]
    TorqueAxes(usize),
    #[error("non-finite model parameter")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerturbationError {
    #[error("attitudes are {distance} rad apart, too close to π for a unique logarithm")]
    OutsideInjectivity { distance: f64 },
}

/// Attitude and body-fixed angular velocity (rad/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyState {
    pub rotation: Rotation,
    pub omega: Vector3<f64>,
}

impl BodyState {
    pub fn new(rotation: Rotation, omega: Vector3<f64>) -> Self {
        BodyState { rotation, omega }
    }

    pub fn at_rest(rotation: Rotation) -> Self {
        BodyState::new(rotation, Vector3::zeros())
    }
}

/// Exponential-coordinate perturbation `ζ = (η, δξ)`; stacked as `[η; δξ]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TangentPerturbation {
    pub eta: Vector3<f64>,
    pub dxi: Vector3<f64>,
}

impl TangentPerturbation {
    pub fn new(eta: Vector3<f64>, dxi: Vector3<f64>) -> Self {
        TangentPerturbation { eta, dxi }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.eta[0], self.eta[1], self.eta[2], self.dxi[0], self.dxi[1], self.dxi[2],
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        TangentPerturbation {
            eta: v.fixed_rows::<3>(0).into_owned(),
            dxi: v.fixed_rows::<3>(3).into_owned(),
        }
    }
}

/// Rigid satellite with body-fixed torque axes.
#[derive(Debug, Clone, PartialEq)]
pub struct SatelliteModel {
    dt: f64,
    inertia: Matrix3<f64>,
    inertia_inv: Matrix3<f64>,
    torque_axes: Matrix3xX<f64>,
    horizon: usize,
}

impl SatelliteModel {
    pub fn new(
        dt: f64,
        inertia: Matrix3<f64>,
        torque_axes: Matrix3xX<f64>,
        horizon: usize,
    ) -> Result<Self, ModelError> {
        if !(dt > 0.0 && dt <= MAX_DT) {
            return Err(ModelError::TimeStep(dt));
        }
        if inertia.iter().chain(torque_axes.iter()).any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        if (inertia - inertia.transpose()).norm() > 1e-12 * inertia.norm() {
            return Err(ModelError::Inertia);
        }
        let inertia_inv = inertia
            .cholesky()
            .ok_or(ModelError::Inertia)?
            .inverse();
        if horizon == 0 {
            return Err(ModelError::Horizon);
        }
        Ok(SatelliteModel {
            dt,
            inertia,
            inertia_inv,
            torque_axes,
            horizon,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn inertia(&self) -> &Matrix3<f64> {
        &self.inertia
    }

    pub fn inertia_inv(&self) -> &Matrix3<f64> {
        &self.inertia_inv
    }

    pub fn torque_axes(&self) -> &Matrix3xX<f64> {
        &self.torque_axes
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn control_dim(&self) -> usize {
        self.torque_axes.ncols()
    }

    /// Same model with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self, ModelError> {
        if horizon == 0 {
            return Err(ModelError::Horizon);
        }
        Ok(SatelliteModel {
            horizon,
            ..self.clone()
        })
    }

    /// `Ω + Δt 𝕀⁻¹((𝕀Ω) × Ω + ℍu)`.
    pub fn velocity_update(&self, omega: &Vector3<f64>, u: &DVector<f64>) -> Vector3<f64> {
        let gyro = (self.inertia * omega).cross(omega);
        omega + self.dt * self.inertia_inv * (gyro + &self.torque_axes * u)
    }
}

pub fn step(model: &SatelliteModel, g: &BodyState, u: &DVector<f64>) -> BodyState {
    assert_eq!(u.len(), model.control_dim(), "control dimension mismatch");
    let rotation = g.rotation.compose(&exp_so3(&(g.omega * model.dt)));
    BodyState {
        rotation,
        omega: model.velocity_update(&g.omega, u),
    }
}

/// States `g⁰ … g^H` produced by applying `controls` from `g0`.
pub fn rollout(model: &SatelliteModel, g0: &BodyState, controls: &[DVector<f64>]) -> Vec<BodyState> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(*g0);
    for u in controls {
        let next = step(model, states.last().unwrap(), u);
        states.push(next);
    }
    states
}

/// `g exp(ζ) = (R exp(η), Ω + δξ)`.
pub fn retract(g: &BodyState, zeta: &TangentPerturbation) -> BodyState {
    BodyState {
        rotation: g.rotation.compose(&exp_so3(&zeta.eta)),
        omega: g.omega + zeta.dxi,
    }
}

/// `log(ḡ⁻¹ g)`, the inverse of [`retract`].
pub fn perturbation_between(
    nominal: &BodyState,
    actual: &BodyState,
) -> Result<TangentPerturbation, PerturbationError> {
    let eta = log_so3(&nominal.rotation.inverse().compose(&actual.rotation));
    let distance = eta.norm();
    if distance >= std::f64::consts::PI - INJECTIVITY_MARGIN {
        return Err(PerturbationError::OutsideInjectivity { distance });
    }
    Ok(TangentPerturbation {
        eta,
        dxi: actual.omega - nominal.omega,
    })
}

/// Pose part of the expansion, expressed in the basis `E_i = hat(e_i)`.
///
/// `eta_next ≈ phi_xx η + phi_xxi δξ + Σ_ij (omega_quad[i][j] η_i η_j + k_quad[i][j] η_i δξ_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicsLinearization {
    pub phi_xx: Matrix3<f64>,
    pub phi_xxi: Matrix3<f64>,
    pub omega_quad: [[Vector3<f64>; 3]; 3],
    pub k_quad: [[Vector3<f64>; 3]; 3],
}

impl KinematicsLinearization {
    pub fn predict(&self, eta: &Vector3<f64>, dxi: &Vector3<f64>) -> Vector3<f64> {
        let mut out = self.phi_xx * eta + self.phi_xxi * dxi;
        for i in 0..3 {
            for j in 0..3 {
                out += self.omega_quad[i][j] * (eta[i] * eta[j]) + self.k_quad[i][j] * (eta[i] * dxi[j]);
            }
        }
        out
    }
}

pub fn linearize_kinematics(dt: f64, xi_bar: &Vector3<f64>) -> KinematicsLinearization {
    let back = -dt * xi_bar;
    let fwd = dt * xi_bar;
    let basis = [Vector3::x(), Vector3::y(), Vector3::z()];
    let rot_back = exp_so3(&back);
    let dexp_back = dexp_matrix(&back);

    let phi_xx = Matrix3::from_columns(&basis.map(|e| rot_back.rotate(&e)));
    let phi_xxi = dt * dexp_back;

    let dinv = basis.map(|e| dexpinv(&fwd, &e));
    let mut omega_quad = [[Vector3::zeros(); 3]; 3];
    let mut k_quad = [[Vector3::zeros(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (ei, ej) = (&basis[i], &basis[j]);
            let ei_ej_xi = ad(ei, &ad(ej, xi_bar));
            omega_quad[i][j] = dt / 12.0
                * (dexp(&back, &ei_ej_xi)
                    + 0.5 * dt * ad(ei, &ad(xi_bar, &ad(xi_bar, ej)))
                    + 0.5 * dt * ei_ej_xi
                    - ad(&dinv[i], &ad(&dinv[j], xi_bar)));
            k_quad[i][j] = 0.5
                * dt
                * (dexp(&back, &ad(ei, ej))
                    + dt / 6.0
                        * (ad(xi_bar, &ad(ej, ei))
                            + 2.0 * ad(ej, &ad(xi_bar, ei))
                            + ad(ei, &ad(xi_bar, ej))));
        }
    }
    KinematicsLinearization {
        phi_xx,
        phi_xxi,
        omega_quad,
        k_quad,
    }
}

/// First-order pose expansion `Ad_{exp(−Δt ξ̄)} η + Δt dexp_{−Δt ξ̄} δξ`, written
/// directly from the group operations rather than through the basis matrices.
pub fn first_order_oracle(
    dt: f64,
    xi_bar: &Vector3<f64>,
    eta: &Vector3<f64>,
    dxi: &Vector3<f64>,
) -> Vector3<f64> {
    let back = -dt * xi_bar;
    exp_so3(&back).rotate(eta) + dt * dexp(&back, dxi)
}

/// Operators of the second-order perturbation expansion at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedStep {
    pub phi: Matrix6<f64>,
    pub b: Matrix6xX<f64>,
    pub theta: [Matrix6<f64>; 6],
    pub gamma: [Matrix6xX<f64>; 6],
    pub delta: [nalgebra::MatrixXx6<f64>; 6],
    pub xi: [nalgebra::DMatrix<f64>; 6],
}

impl LinearizedStep {
    pub fn predict_first_order(&self, zeta: &Vector6<f64>, du: &DVector<f64>) -> Vector6<f64> {
        self.phi * zeta + &self.b * du
    }

    pub fn predict(&self, zeta: &Vector6<f64>, du: &DVector<f64>) -> Vector6<f64> {
        let mut out = self.predict_first_order(zeta, du);
        for i in 0..6 {
            let quad = zeta.dot(&(self.theta[i] * zeta))
                + zeta.dot(&(&self.gamma[i] * du))
                + du.dot(&(&self.delta[i] * zeta))
                + du.dot(&(&self.xi[i] * du));
            out[i] += 0.5 * quad;
        }
        out
    }
}

pub fn linearize_step(model: &SatelliteModel, g: &BodyState, _u: &DVector<f64>) -> LinearizedStep {
    let dt = model.dt;
    let m = model.control_dim();
    let omega = &g.omega;
    let kin = linearize_kinematics(dt, omega);

    let mut phi = Matrix6::zeros();
    phi.fixed_view_mut::<3, 3>(0, 0).copy_from(&kin.phi_xx);
    phi.fixed_view_mut::<3, 3>(0, 3).copy_from(&kin.phi_xxi);
    // The Euler update does not depend on attitude, so the ξχ block is zero.
    let phi_xixi = Matrix3::identity()
        + dt * model.inertia_inv * (-crate::so3::hat(omega) * model.inertia
            + crate::so3::hat(&(model.inertia * omega)));
    phi.fixed_view_mut::<3, 3>(3, 3).copy_from(&phi_xixi);

    let mut b = Matrix6xX::zeros(m);
    b.fixed_rows_mut::<3>(3)
        .copy_from(&(dt * model.inertia_inv * &model.torque_axes));

    let mut theta = [Matrix6::zeros(); 6];
    for (i, th) in theta.iter_mut().enumerate().take(3) {
        for j in 0..3 {
            for l in 0..3 {
                th[(j, l)] = kin.omega_quad[j][l][i] + kin.omega_quad[l][j][i];
                th[(j, 3 + l)] = kin.k_quad[j][l][i];
                th[(3 + l, j)] = kin.k_quad[j][l][i];
            }
        }
    }
    // Second velocity derivatives Δt 𝕀⁻¹((𝕀e_j)^ e_l + (𝕀e_l)^ e_j), row by row.
    let basis = [Vector3::x(), Vector3::y(), Vector3::z()];
    for j in 0..3 {
        for l in 0..3 {
            let d2 = dt
                * model.inertia_inv
                * ((model.inertia * basis[j]).cross(&basis[l])
                    + (model.inertia * basis[l]).cross(&basis[j]));
            for r in 0..3 {
                theta[3 + r][(3 + j, 3 + l)] = d2[r];
            }
        }
    }

    LinearizedStep {
        phi,
        b,
        theta,
        gamma: std::array::from_fn(|_| Matrix6xX::zeros(m)),
        delta: std::array::from_fn(|_| nalgebra::MatrixXx6::zeros(m)),
        xi: std::array::from_fn(|_| nalgebra::DMatrix::zeros(m, m)),
    }
}
