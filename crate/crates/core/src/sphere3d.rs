//! Sphere center from its silhouette: tangent planes through the camera center,
//! a linear least-squares solve, and image-space Levenberg–Marquardt refinement.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{conic_to_geom, geom_to_conic, CameraIntrinsics, Conic, EllipseGeom, PixelPoint};

/// Contour samples used to build tangent planes.
pub const PLANE_SAMPLES: usize = 360;
/// Above this condition number the linear solve switches to an SVD.
pub const SVD_CONDITION: f64 = 1e6;
/// Above this condition number the tangent-plane system is rejected.
pub const MAX_CONDITION: f64 = 1e8;
pub const MIN_REFINE_POINTS: usize = 6;

pub const LM_INITIAL_DAMPING: f64 = 1e-3;
pub const LM_DAMPING_FACTOR: f64 = 10.0;
pub const LM_MAX_ITERATIONS: usize = 100;
pub const LM_COST_TOLERANCE: f64 = 1e-12;
pub const LM_STEP_TOLERANCE: f64 = 1e-10;
const LM_MAX_DAMPING: f64 = 1e16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentPlane {
    pub point: Vector3<f64>,
    /// Unit normal; the sphere center lies on its negative side.
    pub normal: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimationMethod {
    Linear,
    Refined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereEstimate {
    pub center: Vector3<f64>,
    /// Result of the linear tangent-plane solve (the refinement's starting point).
    pub linear_center: Vector3<f64>,
    /// RMS image-space distance of the detected points to the projected contour, in pixels.
    pub residual_rms: f64,
    pub method: EstimationMethod,
    pub iterations: usize,
    /// False when refinement hit its iteration cap; `center` is then the best iterate.
    pub converged: bool,
}

/// Planes through the origin tangent to the viewing cone along `n_samples`
/// contour points of a normalized-coordinate ellipse.
pub fn tangent_planes(conic: &Conic, n_samples: usize) -> Result<Vec<TangentPlane>> {
    if n_samples < 3 {
        return Err(Error::TooFewPoints { needed: 3, got: n_samples });
    }
    let geom = conic_to_geom(conic)?;
    let t = conic.matrix();
    let interior = Vector3::new(geom.cx, geom.cy, 1.0);
    Ok((0..n_samples)
        .map(|k| {
            let [x, y] = geom.point_at(2.0 * PI * k as f64 / n_samples as f64);
            let ray = Vector3::new(x, y, 1.0);
            let line = t * ray;
            let direction = Vector3::new(line.y, -line.x, 0.0);
            let mut normal = direction.cross(&ray).normalize();
            if normal.dot(&interior) > 0.0 {
                normal = -normal;
            }
            TangentPlane { point: Vector3::zeros(), normal }
        })
        .collect())
}

/// Least-squares center from `nᵢ·x = nᵢ·pᵢ − r`.
pub fn solve_linear(planes: &[TangentPlane], r: f64) -> Result<Vector3<f64>> {
    if planes.len() < 3 {
        return Err(Error::TooFewPoints { needed: 3, got: planes.len() });
    }
    let mut normal_matrix = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for p in planes {
        let b = p.normal.dot(&p.point) - r;
        normal_matrix += p.normal * p.normal.transpose();
        rhs += p.normal * b;
    }
    let eig = SymmetricEigen::new(normal_matrix).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { (hi / lo).sqrt() } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::RankDeficient { condition });
    }
    if condition <= SVD_CONDITION {
        if let Some(chol) = normal_matrix.cholesky() {
            return Ok(chol.solve(&rhs));
        }
    }
    let n = DMatrix::from_fn(planes.len(), 3, |i, j| planes[i].normal[j]);
    let b = DVector::from_iterator(planes.len(), planes.iter().map(|p| p.normal.dot(&p.point) - r));
    let x = n.svd(true, true).solve(&b, 1e-14).map_err(|_| Error::RankDeficient { condition })?;
    Ok(Vector3::new(x[0], x[1], x[2]))
}

/// Silhouette coefficients of a sphere (unnormalized) and their derivatives
/// with respect to the center coordinates.
fn silhouette_with_jacobian(x: &Vector3<f64>, r: f64) -> ([f64; 6], [[f64; 3]; 6]) {
    let (x0, y0, z0) = (x.x, x.y, x.z);
    let r2 = r * r;
    let k = [
        r2 - y0 * y0 - z0 * z0,
        2.0 * x0 * y0,
        r2 - x0 * x0 - z0 * z0,
        2.0 * x0 * z0,
        2.0 * y0 * z0,
        r2 - x0 * x0 - y0 * y0,
    ];
    let dk = [
        [0.0, -2.0 * y0, -2.0 * z0],
        [2.0 * y0, 2.0 * x0, 0.0],
        [-2.0 * x0, 0.0, -2.0 * z0],
        [2.0 * z0, 0.0, 2.0 * x0],
        [0.0, 2.0 * z0, 2.0 * y0],
        [-2.0 * x0, -2.0 * y0, 0.0],
    ];
    (k, dk)
}

/// Pixel-space Sampson distances of `points` to the silhouette of a sphere at
/// `center`, with their gradients with respect to `center`.
pub fn image_residuals(
    center: &Vector3<f64>,
    r: f64,
    points: &[PixelPoint],
    k: &CameraIntrinsics,
) -> (Vec<f64>, Vec<[f64; 3]>) {
    let (coef, dcoef) = silhouette_with_jacobian(center, r);
    let dot = |w: &[f64; 6], c: &[f64; 6]| w.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
    let mut residuals = Vec::with_capacity(points.len());
    let mut jacobian = Vec::with_capacity(points.len());
    for p in points {
        let n = k.normalize(*p);
        let (u, v) = (n.u, n.v);
        let phi = [u * u, u * v, v * v, u, v, 1.0];
        let psi_u = [2.0 * u, v, 0.0, 1.0, 0.0, 0.0];
        let psi_v = [0.0, u, 2.0 * v, 0.0, 1.0, 0.0];
        let q = dot(&phi, &coef);
        let (qu, qv) = (dot(&psi_u, &coef) / k.fu, dot(&psi_v, &coef) / k.fv);
        let g = qu.hypot(qv).max(f64::MIN_POSITIVE);
        residuals.push(q / g);
        let mut row = [0.0; 3];
        for (m, slot) in row.iter_mut().enumerate() {
            let column = dcoef.map(|d| d[m]);
            let dq = dot(&phi, &column);
            let dqu = dot(&psi_u, &column) / k.fu;
            let dqv = dot(&psi_v, &column) / k.fv;
            let dg = (qu * dqu + qv * dqv) / g;
            *slot = dq / g - q * dg / (g * g);
        }
        jacobian.push(row);
    }
    (residuals, jacobian)
}

/// Sum of squared pixel-space residuals.
pub fn image_cost(center: &Vector3<f64>, r: f64, points: &[PixelPoint], k: &CameraIntrinsics) -> f64 {
    image_residuals(center, r, points, k).0.iter().map(|e| e * e).sum()
}

fn rms(cost: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        (cost / n as f64).sqrt()
    }
}

/// Levenberg–Marquardt over the center, minimizing image-space distances of the
/// detected points to the projected silhouette.
pub fn refine_lm(initial: Vector3<f64>, r: f64, points: &[PixelPoint], k: &CameraIntrinsics) -> Result<SphereEstimate> {
    refine_lm_observed(initial, r, points, k, &mut |_| {})
}

/// [`refine_lm`], calling `on_cost` with the starting cost and then with the
/// cost after every accepted step.
pub fn refine_lm_observed(
    initial: Vector3<f64>,
    r: f64,
    points: &[PixelPoint],
    k: &CameraIntrinsics,
    on_cost: &mut dyn FnMut(f64),
) -> Result<SphereEstimate> {
    if !(initial.z > r) {
        return Err(Error::DivergedBehindCamera);
    }
    if points.len() < MIN_REFINE_POINTS {
        return Err(Error::TooFewPoints { needed: MIN_REFINE_POINTS, got: points.len() });
    }
    let mut x = initial;
    let mut lambda = LM_INITIAL_DAMPING;
    let (mut res, mut jac) = image_residuals(&x, r, points, k);
    let mut cost: f64 = res.iter().map(|e| e * e).sum();
    on_cost(cost);
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < LM_MAX_ITERATIONS {
        iterations += 1;
        let mut h = Matrix3::zeros();
        let mut g = Vector3::zeros();
        for (e, row) in res.iter().zip(&jac) {
            let j = Vector3::from(*row);
            h += j * j.transpose();
            g += j * *e;
        }
        let diag_floor = 1e-12 * h.diagonal().max();
        loop {
            let mut damped = h;
            for i in 0..3 {
                damped[(i, i)] += lambda * h[(i, i)].max(diag_floor);
            }
            let step = match damped.cholesky() {
                Some(c) => c.solve(&-g),
                None => {
                    lambda *= LM_DAMPING_FACTOR;
                    if lambda > LM_MAX_DAMPING {
                        converged = true;
                        break 'outer;
                    }
                    continue;
                }
            };
            if step.norm() <= LM_STEP_TOLERANCE * (1.0 + x.norm()) {
                converged = true;
                break 'outer;
            }
            let candidate = x + step;
            let trial_cost = if candidate.z > r { image_cost(&candidate, r, points, k) } else { f64::INFINITY };
            if trial_cost < cost {
                let relative_change = (cost - trial_cost) / cost;
                x = candidate;
                cost = trial_cost;
                on_cost(cost);
                (res, jac) = image_residuals(&x, r, points, k);
                lambda /= LM_DAMPING_FACTOR;
                if relative_change < LM_COST_TOLERANCE {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            lambda *= LM_DAMPING_FACTOR;
            if lambda > LM_MAX_DAMPING {
                // No descent direction left at working precision.
                converged = true;
                break 'outer;
            }
        }
    }
    Ok(SphereEstimate {
        center: x,
        linear_center: initial,
        residual_rms: rms(cost, points.len()),
        method: EstimationMethod::Refined,
        iterations,
        converged,
    })
}

/// Linear center estimate from a normalized-coordinate silhouette conic.
pub fn estimate_linear(normalized_conic: &Conic, r: f64) -> Result<Vector3<f64>> {
    let planes = tangent_planes(normalized_conic, PLANE_SAMPLES)?;
    solve_linear(&planes, r)
}

/// Full estimate from a pixel-space ellipse: tangent planes, linear solve, and
/// refinement on `detected` when there are enough points.
pub fn estimate_sphere(
    ellipse: &EllipseGeom,
    k: &CameraIntrinsics,
    r: f64,
    detected: &[PixelPoint],
) -> Result<SphereEstimate> {
    let normalized = k.conic_to_normalized(&geom_to_conic(ellipse)).normalized();
    let linear = estimate_linear(&normalized, r)?;
    if !(linear.z > r) {
        return Err(Error::DivergedBehindCamera);
    }
    if detected.len() < MIN_REFINE_POINTS {
        return Ok(SphereEstimate {
            center: linear,
            linear_center: linear,
            residual_rms: rms(image_cost(&linear, r, detected, k), detected.len()),
            method: EstimationMethod::Linear,
            iterations: 0,
            converged: true,
        });
    }
    refine_lm(linear, r, detected, k)
}
