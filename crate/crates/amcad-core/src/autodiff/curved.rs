//! κ-stereographic operations expressed through an [`Engine`], so the same
//! formulas run as plain numbers or as tape records with gradients flowing
//! into points, matrices and the curvature itself. Mirrors the closed forms
//! in [`crate::geometry`]; an equality test over random inputs keeps the two
//! in lock-step.

use super::engine::Engine;
use crate::geometry::{GeometryError, EPS_BOUNDARY, EPS_DEN, EPS_NORM, EPS_TRIG, KAPPA_TAYLOR};

type Result<T> = std::result::Result<T, GeometryError>;

/// ‖x‖ as an engine value, or `None` when numerically zero (callers branch
/// instead of recording a sqrt at zero).
fn norm_opt<E: Engine>(e: &mut E, x: &E::Val) -> Option<E::Val> {
    let d = e.dot(x, x);
    if e.scalar_value(&d).sqrt() < EPS_NORM {
        return None;
    }
    Some(e.sqrt(&d))
}

pub fn tan_k_e<E: Engine>(e: &mut E, u: &E::Val, kappa: &E::Val) -> Result<E::Val> {
    let kv = e.scalar_value(kappa);
    if kv < -KAPPA_TAYLOR {
        let nk = e.neg(kappa);
        let s = e.sqrt(&nk);
        let su = e.mul(&s, u);
        let t = e.tanh(&su);
        Ok(e.div(&t, &s))
    } else if kv > KAPPA_TAYLOR {
        let sv = kv.sqrt();
        let uv = e.scalar_value(u);
        if (sv * uv).abs() >= std::f64::consts::FRAC_PI_2 - EPS_TRIG {
            return Err(GeometryError::Domain(format!(
                "tan_k: |√κ·u| = {} at the tan singularity",
                (sv * uv).abs()
            )));
        }
        let s = e.sqrt(kappa);
        let su = e.mul(&s, u);
        let t = e.tan(&su);
        Ok(e.div(&t, &s))
    } else {
        let u2 = e.mul(u, u);
        let u3 = e.mul(&u2, u);
        let ku3 = e.mul(kappa, &u3);
        let third = e.scalar(1.0 / 3.0);
        let term = e.mul(&ku3, &third);
        Ok(e.add(u, &term))
    }
}

pub fn arctan_k_e<E: Engine>(e: &mut E, u: &E::Val, kappa: &E::Val) -> Result<E::Val> {
    let kv = e.scalar_value(kappa);
    if kv < -KAPPA_TAYLOR {
        let sv = (-kv).sqrt();
        let uv = e.scalar_value(u);
        if (sv * uv).abs() >= 1.0 {
            return Err(GeometryError::Domain(format!(
                "arctan_k: |√(−κ)·u| = {} outside atanh domain",
                (sv * uv).abs()
            )));
        }
        let nk = e.neg(kappa);
        let s = e.sqrt(&nk);
        let su = e.mul(&s, u);
        let t = e.atanh(&su);
        Ok(e.div(&t, &s))
    } else if kv > KAPPA_TAYLOR {
        let s = e.sqrt(kappa);
        let su = e.mul(&s, u);
        let t = e.atan(&su);
        Ok(e.div(&t, &s))
    } else {
        let u2 = e.mul(u, u);
        let u3 = e.mul(&u2, u);
        let ku3 = e.mul(kappa, &u3);
        let third = e.scalar(1.0 / 3.0);
        let term = e.mul(&ku3, &third);
        Ok(e.sub(u, &term))
    }
}

/// Rescale onto the ball boundary when a κ < 0 value escaped it through
/// floating-point rounding. Records nothing when the point is inside.
pub fn clamp_e<E: Engine>(e: &mut E, x: E::Val, kappa: &E::Val) -> E::Val {
    let kv = e.scalar_value(kappa);
    if kv >= 0.0 {
        return x;
    }
    let limit = (1.0 - EPS_BOUNDARY) / (-kv).sqrt();
    let nv = {
        let xs = e.val(&x);
        xs.iter().map(|v| v * v).sum::<f64>().sqrt()
    };
    if nv < limit {
        return x;
    }
    let nk = e.neg(kappa);
    let sk = e.sqrt(&nk);
    let margin = e.scalar(1.0 - EPS_BOUNDARY);
    let lim = e.div(&margin, &sk);
    let n = norm_opt(e, &x).expect("norm above limit is nonzero");
    let s = e.div(&lim, &n);
    e.scale(&x, &s)
}

pub fn mobius_add_e<E: Engine>(
    e: &mut E,
    x: &E::Val,
    y: &E::Val,
    kappa: &E::Val,
) -> Result<E::Val> {
    let xy = e.dot(x, y);
    let x2 = e.dot(x, x);
    let y2 = e.dot(y, y);
    let one = e.scalar(1.0);
    let two = e.scalar(2.0);
    let kxy = e.mul(kappa, &xy);
    let two_kxy = e.mul(&two, &kxy);
    let k2 = e.mul(kappa, kappa);
    let k2x2 = e.mul(&k2, &x2);
    let k2x2y2 = e.mul(&k2x2, &y2);
    let den = {
        let a = e.sub(&one, &two_kxy);
        e.add(&a, &k2x2y2)
    };
    if e.scalar_value(&den).abs() < EPS_DEN {
        return Err(GeometryError::Degenerate(format!(
            "mobius_add: denominator {} below threshold",
            e.scalar_value(&den)
        )));
    }
    let ky2 = e.mul(kappa, &y2);
    let cx_num = {
        let a = e.sub(&one, &two_kxy);
        e.sub(&a, &ky2)
    };
    let kx2 = e.mul(kappa, &x2);
    let cy_num = e.add(&one, &kx2);
    let cx = e.div(&cx_num, &den);
    let cy = e.div(&cy_num, &den);
    let sx = e.scale(x, &cx);
    let sy = e.scale(y, &cy);
    let out = e.add(&sx, &sy);
    Ok(clamp_e(e, out, kappa))
}

/// exp at the origin: tan_κ(‖v‖)·v/‖v‖; identity-like passthrough for
/// numerically zero v (the correct limit of both value and gradient).
pub fn exp0_e<E: Engine>(e: &mut E, v: &E::Val, kappa: &E::Val) -> Result<E::Val> {
    let n = match norm_opt(e, v) {
        Some(n) => n,
        None => return Ok(v.clone()),
    };
    let t = tan_k_e(e, &n, kappa)?;
    let s = e.div(&t, &n);
    let out = e.scale(v, &s);
    Ok(clamp_e(e, out, kappa))
}

/// log at the origin: tan_κ⁻¹(‖y‖)·y/‖y‖.
pub fn log0_e<E: Engine>(e: &mut E, y: &E::Val, kappa: &E::Val) -> Result<E::Val> {
    let n = match norm_opt(e, y) {
        Some(n) => n,
        None => return Ok(y.clone()),
    };
    let a = arctan_k_e(e, &n, kappa)?;
    let s = e.div(&a, &n);
    Ok(e.scale(y, &s))
}

pub fn geodesic_distance_e<E: Engine>(
    e: &mut E,
    x: &E::Val,
    y: &E::Val,
    kappa: &E::Val,
) -> Result<E::Val> {
    let nx = e.neg(x);
    let w = mobius_add_e(e, &nx, y, kappa)?;
    distance_to_origin_e(e, &w, kappa)
}

/// d_κ(x, 0) = 2·tan_κ⁻¹(‖x‖).
pub fn distance_to_origin_e<E: Engine>(
    e: &mut E,
    x: &E::Val,
    kappa: &E::Val,
) -> Result<E::Val> {
    let n = match norm_opt(e, x) {
        Some(n) => n,
        None => return Ok(e.scalar(0.0)),
    };
    let a = arctan_k_e(e, &n, kappa)?;
    let two = e.scalar(2.0);
    Ok(e.mul(&two, &a))
}

pub fn mobius_matvec_e<E: Engine>(
    e: &mut E,
    w: &E::Val,
    rows: usize,
    cols: usize,
    x: &E::Val,
    kappa: &E::Val,
) -> Result<E::Val> {
    let t = log0_e(e, x, kappa)?;
    let wx = e.matvec(w, rows, cols, &t);
    exp0_e(e, &wx, kappa)
}

/// σ^{κ1→κ2}: tangent at the origin under κ1, optional ReLU, back under κ2.
pub fn activation_e<E: Engine>(
    e: &mut E,
    x: &E::Val,
    kappa_in: &E::Val,
    kappa_out: &E::Val,
    relu: bool,
) -> Result<E::Val> {
    let t = log0_e(e, x, kappa_in)?;
    let t = if relu { e.relu(&t) } else { t };
    exp0_e(e, &t, kappa_out)
}

/// Fraction of the κ > 0 injectivity radius (π/2)/√κ that model tangents
/// may use. Keeps exp away from the tan singularity and stops geodesics
/// from wrapping past the equator, where pushing points "further apart"
/// would bring them closer again.
pub const SPHERICAL_TANGENT_CAP: f64 = 0.9;

/// Rescale a κ > 0 tangent onto the capped injectivity radius when it is
/// about to leave it; identity elsewhere. The rescale is recorded, so
/// gradients (including through κ) stay defined.
pub fn cap_spherical_tangent_e<E: Engine>(e: &mut E, v: E::Val, kappa: &E::Val) -> E::Val {
    let kv = e.scalar_value(kappa);
    if kv <= KAPPA_TAYLOR {
        return v;
    }
    let limit = SPHERICAL_TANGENT_CAP * std::f64::consts::FRAC_PI_2 / kv.sqrt();
    let nv = {
        let vs = e.val(&v);
        vs.iter().map(|x| x * x).sum::<f64>().sqrt()
    };
    if nv < limit {
        return v;
    }
    let sk = e.sqrt(kappa);
    let cap = e.scalar(SPHERICAL_TANGENT_CAP * std::f64::consts::FRAC_PI_2);
    let lim = e.div(&cap, &sk);
    let n = norm_opt(e, &v).expect("norm at the cap is nonzero");
    let s = e.div(&lim, &n);
    e.scale(&v, &s)
}

/// exp at the origin with the spherical tangent cap applied first: the
/// stability guard the model forward uses everywhere it leaves tangent
/// space (drifting embeddings would otherwise hit the tan singularity and
/// abort training steps).
pub fn exp0_stable_e<E: Engine>(e: &mut E, v: &E::Val, kappa: &E::Val) -> Result<E::Val> {
    let capped = cap_spherical_tangent_e(e, v.clone(), kappa);
    exp0_e(e, &capped, kappa)
}

pub fn mobius_matvec_stable_e<E: Engine>(
    e: &mut E,
    w: &E::Val,
    rows: usize,
    cols: usize,
    x: &E::Val,
    kappa: &E::Val,
) -> Result<E::Val> {
    let t = log0_e(e, x, kappa)?;
    let wx = e.matvec(w, rows, cols, &t);
    exp0_stable_e(e, &wx, kappa)
}

pub fn activation_stable_e<E: Engine>(
    e: &mut E,
    x: &E::Val,
    kappa_in: &E::Val,
    kappa_out: &E::Val,
    relu: bool,
) -> Result<E::Val> {
    let t = log0_e(e, x, kappa_in)?;
    let t = if relu { e.relu(&t) } else { t };
    exp0_stable_e(e, &t, kappa_out)
}
