//! Closed-form operations of the unified κ-stereographic model.
//!
//! A single parametric family covers hyperbolic (κ < 0), Euclidean (κ = 0)
//! and spherical (κ > 0) geometry. Points live in ℝ^d; for κ < 0 the valid
//! domain is the open ball ‖x‖ < 1/√(−κ). All math is `f64`; near κ = 0 the
//! trigonometric pair switches to a cubic Taylor branch so every operation
//! stays C¹ in both its argument and κ across the branch boundary.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Mat};

/// Ball-clamp margin: points with κ < 0 are kept at norm ≤ (1−ε)/√(−κ).
pub const EPS_BALL: f64 = 1e-5;
/// Machine-level margin used inside the closed-form operations: wide enough
/// to stop floating-point escape from the open ball, narrow enough not to
/// truncate legitimately deep points.
pub const EPS_BOUNDARY: f64 = 1e-12;
/// Norm below which a tangent vector is treated as zero.
pub const EPS_NORM: f64 = 1e-12;
/// Möbius-addition denominators below this magnitude are degenerate.
pub const EPS_DEN: f64 = 1e-12;
/// Guard distance from the tan singularity at π/2 for κ > 0.
pub const EPS_TRIG: f64 = 1e-6;
/// |κ| below this uses the cubic Taylor branch of tan_κ / tan_κ⁻¹.
pub const KAPPA_TAYLOR: f64 = 1e-6;

/// Sectional curvature of one subspace. `trainable` marks whether the
/// training loop updates it or keeps it pinned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Curvature {
    pub value: f64,
    pub trainable: bool,
}

impl Curvature {
    pub fn trainable(value: f64) -> Self {
        Curvature { value, trainable: true }
    }

    pub fn pinned(value: f64) -> Self {
        Curvature { value, trainable: false }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GeometryError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("numerical degeneracy: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

fn check_same_dim(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(GeometryError::DimensionMismatch { left: x.len(), right: y.len() });
    }
    Ok(())
}

/// True when `x` is a valid point under `kappa` (strictly inside the ball
/// for κ < 0; everywhere for κ ≥ 0).
pub fn in_domain(x: &[f64], kappa: f64) -> bool {
    if kappa < 0.0 {
        linalg::norm(x) < 1.0 / (-kappa).sqrt()
    } else {
        true
    }
}

fn require_domain(x: &[f64], kappa: f64, who: &str) -> Result<()> {
    if !in_domain(x, kappa) {
        return Err(GeometryError::Domain(format!(
            "{who}: point norm {} outside open ball of radius {}",
            linalg::norm(x),
            1.0 / (-kappa).sqrt()
        )));
    }
    Ok(())
}

/// Curvature-generalized tangent:
/// tanh-scaled for κ < 0, tan-scaled for κ > 0, cubic Taylor near κ = 0.
pub fn tan_k(u: f64, kappa: f64) -> Result<f64> {
    if kappa < -KAPPA_TAYLOR {
        let s = (-kappa).sqrt();
        Ok((s * u).tanh() / s)
    } else if kappa > KAPPA_TAYLOR {
        let s = kappa.sqrt();
        if (s * u).abs() >= std::f64::consts::FRAC_PI_2 - EPS_TRIG {
            return Err(GeometryError::Domain(format!(
                "tan_k: |√κ·u| = {} at the tan singularity",
                (s * u).abs()
            )));
        }
        Ok((s * u).tan() / s)
    } else {
        // Signed cubic keeps the branch C¹ against both tanh and tan sides.
        Ok(u + kappa * u * u * u / 3.0)
    }
}

/// Inverse of [`tan_k`] on its domain.
pub fn arctan_k(u: f64, kappa: f64) -> Result<f64> {
    if kappa < -KAPPA_TAYLOR {
        let s = (-kappa).sqrt();
        if (s * u).abs() >= 1.0 {
            return Err(GeometryError::Domain(format!(
                "arctan_k: |√(−κ)·u| = {} outside atanh domain",
                (s * u).abs()
            )));
        }
        Ok((s * u).atanh() / s)
    } else if kappa > KAPPA_TAYLOR {
        let s = kappa.sqrt();
        Ok((s * u).atan() / s)
    } else {
        Ok(u - kappa * u * u * u / 3.0)
    }
}

/// Conformal factor λ_x^κ = 2 / (1 + κ‖x‖²).
pub fn conformal_factor(x: &[f64], kappa: f64) -> Result<f64> {
    require_domain(x, kappa, "conformal_factor")?;
    Ok(2.0 / (1.0 + kappa * linalg::dot(x, x)))
}

/// Möbius addition x ⊕_κ y.
pub fn mobius_add(x: &[f64], y: &[f64], kappa: f64) -> Result<Vec<f64>> {
    check_same_dim(x, y)?;
    let xy = linalg::dot(x, y);
    let x2 = linalg::dot(x, x);
    let y2 = linalg::dot(y, y);
    let den = 1.0 - 2.0 * kappa * xy + kappa * kappa * x2 * y2;
    if den.abs() < EPS_DEN {
        return Err(GeometryError::Degenerate(format!(
            "mobius_add: denominator {den} below threshold (near-antipodal points)"
        )));
    }
    let cx = (1.0 - 2.0 * kappa * xy - kappa * y2) / den;
    let cy = (1.0 + kappa * x2) / den;
    let mut out: Vec<f64> = x.iter().zip(y).map(|(a, b)| cx * a + cy * b).collect();
    clamp_boundary_in_place(&mut out, kappa);
    Ok(out)
}

/// exp_x^κ(v) = x ⊕_κ ( tan_κ(λ_x^κ‖v‖/2) · v/‖v‖ ).
pub fn exp_map(x: &[f64], v: &[f64], kappa: f64) -> Result<Vec<f64>> {
    check_same_dim(x, v)?;
    let n = linalg::norm(v);
    if n < EPS_NORM {
        return Ok(x.to_vec());
    }
    let lam = conformal_factor(x, kappa)?;
    let t = tan_k(lam * n / 2.0, kappa)?;
    let step = linalg::scale(v, t / n);
    mobius_add(x, &step, kappa)
}

/// exp at the origin (λ_0 = 2): the common case in the model equations.
pub fn exp_map_zero(v: &[f64], kappa: f64) -> Result<Vec<f64>> {
    let n = linalg::norm(v);
    if n < EPS_NORM {
        return Ok(vec![0.0; v.len()]);
    }
    let t = tan_k(n, kappa)?;
    let mut out = linalg::scale(v, t / n);
    clamp_boundary_in_place(&mut out, kappa);
    Ok(out)
}

/// log_x^κ(y) = (2/λ_x^κ) tan_κ⁻¹(‖−x ⊕_κ y‖) · (−x ⊕_κ y)/‖−x ⊕_κ y‖.
pub fn log_map(x: &[f64], y: &[f64], kappa: f64) -> Result<Vec<f64>> {
    check_same_dim(x, y)?;
    let neg_x: Vec<f64> = x.iter().map(|a| -a).collect();
    let w = mobius_add(&neg_x, y, kappa)?;
    let n = linalg::norm(&w);
    if n < EPS_NORM {
        return Ok(vec![0.0; x.len()]);
    }
    let lam = conformal_factor(x, kappa)?;
    let a = arctan_k(n, kappa)?;
    Ok(linalg::scale(&w, (2.0 / lam) * a / n))
}

/// log at the origin.
pub fn log_map_zero(y: &[f64], kappa: f64) -> Result<Vec<f64>> {
    let n = linalg::norm(y);
    if n < EPS_NORM {
        return Ok(vec![0.0; y.len()]);
    }
    let a = arctan_k(n, kappa)?;
    Ok(linalg::scale(y, a / n))
}

/// M ⊗_κ x = exp_0^κ(M · log_0^κ(x)).
pub fn mobius_matvec(m: &Mat, x: &[f64], kappa: f64) -> Result<Vec<f64>> {
    if m.cols != x.len() {
        return Err(GeometryError::DimensionMismatch { left: m.cols, right: x.len() });
    }
    let t = log_map_zero(x, kappa)?;
    exp_map_zero(&m.matvec(&t), kappa)
}

/// σ^{κ1→κ2}(x) = exp_0^{κ2}( σ(log_0^{κ1}(x)) ). With `f` = identity this
/// is the curvature-change map.
pub fn kappa_activation(
    x: &[f64],
    kappa_in: f64,
    kappa_out: f64,
    f: impl Fn(f64) -> f64,
) -> Result<Vec<f64>> {
    let t = log_map_zero(x, kappa_in)?;
    let activated: Vec<f64> = t.into_iter().map(f).collect();
    exp_map_zero(&activated, kappa_out)
}

/// Geodesic distance d_κ(x, y) = 2 tan_κ⁻¹(‖−x ⊕_κ y‖).
pub fn geodesic_distance(x: &[f64], y: &[f64], kappa: f64) -> Result<f64> {
    check_same_dim(x, y)?;
    let neg_x: Vec<f64> = x.iter().map(|a| -a).collect();
    let w = mobius_add(&neg_x, y, kappa)?;
    Ok(2.0 * arctan_k(linalg::norm(&w), kappa)?)
}

/// Rescale a κ < 0 point onto norm (1−ε)/√(−κ) when it has left the open
/// ball; identity otherwise.
pub fn clamp_to_domain(x: &[f64], kappa: f64) -> Vec<f64> {
    let mut out = x.to_vec();
    clamp_in_place(&mut out, kappa);
    out
}

pub fn clamp_in_place(x: &mut [f64], kappa: f64) {
    clamp_with_margin(x, kappa, EPS_BALL);
}

/// Minimal rescue used inside the closed forms: only reins in points that
/// floating-point rounding pushed onto or past the boundary itself.
pub(crate) fn clamp_boundary_in_place(x: &mut [f64], kappa: f64) {
    clamp_with_margin(x, kappa, EPS_BOUNDARY);
}

fn clamp_with_margin(x: &mut [f64], kappa: f64, margin: f64) {
    if kappa >= 0.0 {
        return;
    }
    let limit = (1.0 - margin) / (-kappa).sqrt();
    let n = linalg::norm(x);
    if n >= limit {
        let s = limit / n;
        for v in x.iter_mut() {
            *v *= s;
        }
    }
}
