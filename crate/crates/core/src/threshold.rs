//! Adaptive inlier threshold for approximating a sphere's elliptical image by a circle.
//!
//! The silhouette of a sphere is the section of a right circular cone (apex at
//! the camera centre, half-angle `β`) by the image plane. Its axis ratio is fixed
//! by `β` and by the angle `α` between the cone axis and the image plane, so a
//! fitted circle of radius `R` can only miss the true contour by
//! `t = (s − 1) R / (s + 1)`, where `s` is the axis ratio seen in pixels.

use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PixelPoint};

/// Localization noise added on top of the geometric threshold.
pub const NOISE_SLACK_PX: f64 = 1.0;

/// Threshold used when the cone configuration is degenerate, as a fraction of `R`.
pub const FALLBACK_THRESHOLD_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleHypothesis {
    pub u: f64,
    pub v: f64,
    pub radius: f64,
}

impl CircleHypothesis {
    pub fn new(u: f64, v: f64, radius: f64) -> Self {
        Self { u, v, radius }
    }

    pub fn center(&self) -> PixelPoint {
        PixelPoint::new(self.u, self.v)
    }
}

/// Every intermediate quantity of the threshold computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdContext {
    pub alpha: f64,
    pub beta: f64,
    /// `None` when the circle is centred on the principal point.
    pub theta: Option<f64>,
    pub distance: f64,
    pub scaled_ratio: f64,
    /// Final threshold in pixels, noise slack included.
    pub t: f64,
}

/// Sphere distance from its apparent radius: `d = r f / R`.
pub fn estimate_distance(image_radius: f64, sphere_radius: f64, focal: f64) -> f64 {
    sphere_radius * focal / image_radius
}

/// Angle between the viewing ray through `x` (the cone axis) and the image plane.
///
/// `π/2` at the principal point, decreasing towards the image border.
pub fn compute_alpha(x: PixelPoint, k: &CameraIntrinsics) -> f64 {
    let n = k.normalize(x);
    if n.u == 0.0 && n.v == 0.0 {
        return FRAC_PI_2;
    }
    // X sits on the z = 1 plane; v points from X to the camera centre, p from X
    // to the principal point.
    let to_camera = Vector3::new(-n.u, -n.v, -1.0);
    let to_principal = Vector3::new(-n.u, -n.v, 0.0);
    to_camera.cross(&to_principal).norm().atan2(to_camera.dot(&to_principal))
}

/// Cone half-angle `β = asin(r / d)`.
pub fn compute_beta(sphere_radius: f64, distance: f64) -> Result<f64> {
    if !(distance > sphere_radius) || !(sphere_radius > 0.0) {
        return Err(Error::SphereTooClose { distance, radius: sphere_radius });
    }
    Ok((sphere_radius / distance).asin())
}

/// Major/minor axis ratio of the section of a cone with half-angle `beta`
/// by a plane making angle `alpha` with the cone axis.
///
/// `a/b = cos β / sqrt(cos²β − cos²α)`, written with
/// `cos²β − cos²α = sin(α + β) sin(α − β)` for accuracy near `α = β`.
pub fn axis_ratio(alpha: f64, beta: f64) -> Result<f64> {
    let gap = cone_gap(alpha, beta)?;
    if alpha >= FRAC_PI_2 {
        return Ok(1.0);
    }
    Ok((beta.cos() / gap.sqrt()).max(1.0))
}

/// Closed-form ratio `sin α cos²β / (sin²α cos²β − cos²α sin²β)` from the
/// angle-bisector construction on the two axial cone sections.
///
/// It never undershoots [`axis_ratio`] (equality at `α = π/2`), so it can be
/// used as a conservative bound.
pub fn bisector_axis_ratio(alpha: f64, beta: f64) -> Result<f64> {
    let gap = cone_gap(alpha, beta)?;
    if alpha >= FRAC_PI_2 {
        return Ok(1.0);
    }
    let cb = beta.cos();
    Ok((alpha.sin() * cb * cb / gap).max(1.0))
}

fn cone_gap(alpha: f64, beta: f64) -> Result<f64> {
    let gap = (alpha + beta).sin() * (alpha - beta).sin();
    if !(alpha > beta) || !(gap > 0.0) {
        return Err(Error::ConeDegenerate { alpha, beta });
    }
    Ok(gap)
}

/// Angle in `[0, π]` between the image x-axis and the major axis of the
/// ellipse centred at `x`. The major axis points at the principal point.
pub fn compute_theta(x: PixelPoint, k: &CameraIntrinsics) -> Result<f64> {
    let n = k.normalize(x);
    let rho = n.u.hypot(n.v);
    if rho == 0.0 {
        return Err(Error::UndefinedAtPrincipalPoint);
    }
    // −p̂ · x̂ with p the in-plane vector from X to the principal point.
    Ok((n.u / rho).clamp(-1.0, 1.0).acos())
}

/// Axis ratio after anisotropic pixel scaling by `us : vs`.
pub fn scaled_ratio(a_over_b: f64, theta: f64, us: f64, vs: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let (us2, vs2) = (us * us, vs * vs);
    a_over_b * ((us2 * c * c + vs2 * s * s) / (us2 * s * s + vs2 * c * c)).sqrt()
}

/// `t = (s − 1) R / (s + 1)`, the inverse of `s = (R + t) / (R − t)`.
pub fn threshold(s: f64, radius: f64) -> f64 {
    (s - 1.0) * radius / (s + 1.0)
}

/// Runs the whole chain for one circle hypothesis and returns all intermediates.
pub fn threshold_context(
    circle: &CircleHypothesis,
    k: &CameraIntrinsics,
    sphere_radius: f64,
) -> Result<ThresholdContext> {
    let distance = estimate_distance(circle.radius, sphere_radius, k.focal());
    let beta = compute_beta(sphere_radius, distance)?;
    let alpha = compute_alpha(circle.center(), k);
    let (theta, s) = match compute_theta(circle.center(), k) {
        Ok(theta) => {
            let ratio = axis_ratio(alpha, beta)?;
            let s = scaled_ratio(ratio, theta, k.us, k.vs);
            // Scaling may swap which image axis is the longer one.
            (Some(theta), s.max(1.0 / s))
        }
        Err(Error::UndefinedAtPrincipalPoint) => (None, 1.0),
        Err(e) => return Err(e),
    };
    Ok(ThresholdContext {
        alpha,
        beta,
        theta,
        distance,
        scaled_ratio: s,
        t: threshold(s, circle.radius) + NOISE_SLACK_PX,
    })
}

pub fn adaptive_threshold(circle: &CircleHypothesis, k: &CameraIntrinsics, sphere_radius: f64) -> Result<f64> {
    threshold_context(circle, k, sphere_radius).map(|c| c.t)
}

/// [`adaptive_threshold`], or `0.05 R` when the cone is degenerate for this circle.
pub fn threshold_or_fallback(circle: &CircleHypothesis, k: &CameraIntrinsics, sphere_radius: f64) -> f64 {
    adaptive_threshold(circle, k, sphere_radius).unwrap_or(FALLBACK_THRESHOLD_FRACTION * circle.radius)
}
