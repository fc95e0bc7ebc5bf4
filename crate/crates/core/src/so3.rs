//! Kernels for the rotation group SO(3) and its Lie algebra so(3).
//!
//! Algebra elements are stored as `Vector3<f64>` in the basis `E_i = hat(e_i)`,
//! so the bracket is the cross product and `Ad_R` is plain matrix-vector
//! multiplication. Closed forms (Rodrigues) are used for `exp`, `log`, `dexp`
//! and `dexp⁻¹`; each switches to a Taylor expansion below
//! [`SMALL_ANGLE`] so the `0/0` limits are never evaluated.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Angle below which the closed forms are replaced by their Taylor series.
pub const SMALL_ANGLE: f64 = 1e-4;

/// Orthogonality and determinant tolerance for [`Rotation`].
pub const ROTATION_TOL: f64 = 1e-9;

/// Tolerance on `‖M + Mᵀ‖_F` accepted by [`vee`].
pub const SKEW_TOL: f64 = 1e-9;

/// Magnitude bound enforced by [`bch_quadratic`] on each argument.
pub const BCH_RADIUS: f64 = 1.0;

/// Orthogonality drift tolerated by [`Rotation::compose`] before re-projection.
pub const DRIFT_TOL: f64 = 1e-13;

// Distance from π below which `log` reads the axis off the symmetric part.
const NEAR_PI: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LieError {
    #[error("matrix is not skew-symmetric: ‖M + Mᵀ‖_F = {residual:e}")]
    NotSkew { residual: f64 },
    #[error("matrix is not orthogonal: ‖RᵀR − I‖_F = {residual:e}")]
    NotOrthogonal { residual: f64 },
    #[error("rotation determinant {det} is not +1")]
    BadDeterminant { det: f64 },
    #[error("non-finite entry")]
    NonFinite,
    #[error("argument norm {norm} exceeds the series bound {bound}")]
    OutOfRange { norm: f64, bound: f64 },
}

/// An element of SO(3).
///
/// Constructed only through validating constructors, so every value satisfies
/// `‖RᵀR − I‖_F ≤ 1e-9` and `|det R − 1| ≤ 1e-9`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates `m` against the orthogonality and determinant tolerances.
    pub fn new(m: Matrix3<f64>) -> Result<Self, LieError> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(LieError::NonFinite);
        }
        let residual = (m.transpose() * m - Matrix3::identity()).norm();
        if residual > ROTATION_TOL {
            return Err(LieError::NotOrthogonal { residual });
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(LieError::BadDeterminant { det });
        }
        Ok(Rotation(m))
    }

    /// Projects `m` onto SO(3) through its polar factor `U Vᵀ`.
    ///
    /// Fails for non-finite input or when `det m ≤ 0`, where the nearest
    /// proper rotation is not the polar factor.
    pub fn project(m: &Matrix3<f64>) -> Result<Self, LieError> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(LieError::NonFinite);
        }
        let det = m.determinant();
        if det <= 0.0 {
            return Err(LieError::BadDeterminant { det });
        }
        let svd = m.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        Rotation::new(u * v_t)
    }

    pub fn about_x(angle: f64) -> Self {
        exp_so3(&Vector3::new(angle, 0.0, 0.0))
    }

    pub fn about_y(angle: f64) -> Self {
        exp_so3(&Vector3::new(0.0, angle, 0.0))
    }

    pub fn about_z(angle: f64) -> Self {
        exp_so3(&Vector3::new(0.0, 0.0, angle))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Group product, re-projected once its orthogonality drift exceeds
    /// [`DRIFT_TOL`] so long chains stay on SO(3).
    pub fn compose(&self, other: &Rotation) -> Self {
        let m = self.0 * other.0;
        if (m.transpose() * m - Matrix3::identity()).norm() <= DRIFT_TOL {
            return Rotation(m);
        }
        Rotation::project(&m).unwrap_or(Rotation(m))
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Geodesic distance `‖log(selfᵀ other)‖`.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        log_so3(&self.inverse().compose(other)).norm()
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        self.compose(&rhs)
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;

    fn mul(self, rhs: &Rotation) -> Rotation {
        self.compose(rhs)
    }
}

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Result<Vector3<f64>, LieError> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(LieError::NonFinite);
    }
    let residual = (m + m.transpose()).norm();
    if residual > SKEW_TOL {
        return Err(LieError::NotSkew { residual });
    }
    Ok(skew_vector(m))
}

// vee of the skew part, no validation.
fn skew_vector(m: &Matrix3<f64>) -> Vector3<f64> {
    0.5 * Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
}

/// `sin θ / θ`, `(1 − cos θ) / θ²` and `(θ − sin θ) / θ³`.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        (
            1.0 - t2 / 6.0 + t4 / 120.0,
            0.5 - t2 / 24.0 + t4 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        (s / theta, (1.0 - c) / t2, (theta - s) / (t2 * theta))
    }
}

pub fn exp_so3(v: &Vector3<f64>) -> Rotation {
    let (a, b, _) = rodrigues_coefficients(v.norm());
    let k = hat(v);
    Rotation(Matrix3::identity() + a * k + b * k * k)
}

/// Principal logarithm; the result has norm in `[0, π]`.
pub fn log_so3(r: &Rotation) -> Vector3<f64> {
    let m = r.matrix();
    let w = skew_vector(m);
    let sin_theta = w.norm();
    let cos_theta = 0.5 * (m.trace() - 1.0);
    let theta = sin_theta.atan2(cos_theta);

    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        return w * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0);
    }
    if PI - theta > NEAR_PI {
        return w * (theta / sin_theta);
    }

    // Near π the skew part vanishes; the axis comes from the dominant
    // diagonal entry of (R + I)/2 and the skew part only fixes its sign.
    let b = 0.5 * (m + Matrix3::identity());
    let sym = 0.5 * (b + b.transpose());
    let half_one_minus_cos = 0.5 * (1.0 - cos_theta);
    let half_one_plus_cos = 0.5 * (1.0 + cos_theta);
    let i = (0..3)
        .max_by(|&a, &c| sym[(a, a)].total_cmp(&sym[(c, c)]))
        .unwrap();
    let ni = ((sym[(i, i)] - half_one_plus_cos) / half_one_minus_cos).max(0.0).sqrt();
    let mut axis = Vector3::zeros();
    for j in 0..3 {
        axis[j] = if j == i {
            ni
        } else {
            sym[(i, j)] / (half_one_minus_cos * ni)
        };
    }
    axis.normalize_mut();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Lie bracket `ad_x y = [x, y]`.
pub fn ad(x: &Vector3<f64>, y: &Vector3<f64>) -> Vector3<f64> {
    x.cross(y)
}

/// Adjoint action `Ad_R y`.
pub fn ad_group(r: &Rotation, y: &Vector3<f64>) -> Vector3<f64> {
    r.rotate(y)
}

/// Matrix of `ζ ↦ dexp_η(ζ) = Σ ad_η^j ζ / (j+1)!`.
pub fn dexp_matrix(eta: &Vector3<f64>) -> Matrix3<f64> {
    let (_, b, c) = rodrigues_coefficients(eta.norm());
    let k = hat(eta);
    Matrix3::identity() + b * k + c * k * k
}

pub fn dexp(eta: &Vector3<f64>, zeta: &Vector3<f64>) -> Vector3<f64> {
    dexp_matrix(eta) * zeta
}

/// Matrix of `ζ ↦ dexp_η⁻¹(ζ) = Σ B_j ad_η^j ζ / j!`, valid for `‖η‖ < 2π`.
pub fn dexpinv_matrix(eta: &Vector3<f64>) -> Matrix3<f64> {
    let theta = eta.norm();
    let c = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half / half.tan()) / (theta * theta)
    };
    let k = hat(eta);
    Matrix3::identity() - 0.5 * k + c * k * k
}

pub fn dexpinv(eta: &Vector3<f64>, zeta: &Vector3<f64>) -> Vector3<f64> {
    dexpinv_matrix(eta) * zeta
}

/// BCH series `log(exp x exp y)` through the fourth-order bracket
/// `x + y + ½[x,y] + (1/12)([x,[x,y]] + [y,[y,x]]) + (1/24)[x,[y,[y,x]]]`.
pub fn bch_quadratic(x: &Vector3<f64>, y: &Vector3<f64>) -> Result<Vector3<f64>, LieError> {
    for v in [x, y] {
        let norm = v.norm();
        if !norm.is_finite() {
            return Err(LieError::NonFinite);
        }
        if norm > BCH_RADIUS {
            return Err(LieError::OutOfRange {
                norm,
                bound: BCH_RADIUS,
            });
        }
    }
    let xy = ad(x, y);
    let yx = -xy;
    Ok(x + y
        + 0.5 * xy
        + (ad(x, &xy) + ad(y, &yx)) / 12.0
        + ad(x, &ad(y, &yx)) / 24.0)
}
