//! Circle-to-ellipse refinement: radial edge search around a circle hypothesis,
//! constrained direct least-squares fitting, RANSAC over the profile points and
//! averaging of similar candidates.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circle_ransac::{iteration_rng, sample_distinct, RansacConfig};
use crate::edges::GradientField;
use crate::error::{Error, Result};
use crate::geometry::{axis_angle_difference, conic_to_geom, Conic, CoordinateMap, EllipseGeom};
use crate::threshold::CircleHypothesis;

pub const RAY_COUNT: usize = 360;
/// Radial search half-width is `max(MIN_SEARCH_HALF_WIDTH, SEARCH_FRACTION · R)`.
pub const MIN_SEARCH_HALF_WIDTH: f64 = 5.0;
pub const SEARCH_FRACTION: f64 = 0.25;
pub const RADIAL_STEP: f64 = 0.25;
pub const MIN_PROFILE_POINTS: usize = 8;
/// Sampson-distance inlier tolerance for ellipse RANSAC, in pixels.
pub const ELLIPSE_INLIER_TOLERANCE: f64 = 2.0;
pub const MIN_ELLIPSE_SUPPORT: usize = 8;
/// Acceptance level for radial maxima used by the pipeline. The strong-point
/// percentile keeps only the top tenth of contour pixels on clean images, far too
/// few rays; the absolute floor still rejects flat regions.
pub const PROFILE_MAGNITUDE_FLOOR: f64 = crate::edges::MAGNITUDE_FLOOR;
/// Default iteration budget of the ellipse RANSAC stage.
pub const ELLIPSE_ITERATIONS: usize = 1000;

const BLOCK: usize = 256;
const MAX_REFITS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialProfilePoint {
    pub u: f64,
    pub v: f64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipseCandidate {
    /// Pixel-space conic, unit-norm scaled.
    pub conic: Conic,
    pub geom: EllipseGeom,
    pub support: usize,
    /// Indices of the supporting profile points.
    pub inliers: Vec<usize>,
}

/// Default configuration for [`ransac_ellipse`].
pub fn ellipse_ransac_config(seed: u64) -> RansacConfig {
    RansacConfig { iterations: ELLIPSE_ITERATIONS, rng_seed: seed, min_inlier_fraction: 0.0, candidate_count: 1 }
}

/// Strongest gradient along each of `RAY_COUNT` rays crossing the circle.
///
/// Rays whose strongest sample is weaker than `tau`, or lies at the end of the
/// search segment or of the visible part of the ray, emit nothing. The argmax is refined
/// by a parabola through the magnitudes one pixel either side.
pub fn collect_radial_points(
    field: &GradientField,
    circle: &CircleHypothesis,
    tau: f64,
) -> Result<Vec<RadialProfilePoint>> {
    let half = MIN_SEARCH_HALF_WIDTH.max(SEARCH_FRACTION * circle.radius);
    let start = (circle.radius - half).max(0.0);
    let steps = ((circle.radius + half - start) / RADIAL_STEP).floor() as usize;
    let mut out = Vec::new();
    for k in 0..RAY_COUNT {
        let (sin, cos) = (2.0 * PI * k as f64 / RAY_COUNT as f64).sin_cos();
        let at = |s: f64| field.magnitude_at(circle.u + s * cos, circle.v + s * sin);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..=steps {
            if let Some(m) = at(start + j as f64 * RADIAL_STEP) {
                if best.is_none_or(|(_, bm)| m > bm) {
                    best = Some((j, m));
                }
            }
        }
        let Some((j, m)) = best else { continue };
        // A maximum on the last sample before the ray leaves the search window or
        // the image is not a peak; the edge may lie beyond it.
        let interior = |i: usize| i <= steps && at(start + i as f64 * RADIAL_STEP).is_some();
        if !(m >= tau) || j == 0 || !interior(j - 1) || !interior(j + 1) {
            continue;
        }
        let s = start + j as f64 * RADIAL_STEP;
        let s = match (at(s - 1.0), at(s + 1.0)) {
            (Some(lo), Some(hi)) => {
                let curvature = lo - 2.0 * m + hi;
                if curvature < 0.0 {
                    s + (0.5 * (lo - hi) / curvature).clamp(-1.0, 1.0)
                } else {
                    s
                }
            }
            _ => s,
        };
        let (u, v) = (circle.u + s * cos, circle.v + s * sin);
        if let Some(magnitude) = field.magnitude_at(u, v) {
            out.push(RadialProfilePoint { u, v, magnitude });
        }
    }
    if out.len() < MIN_PROFILE_POINTS {
        return Err(Error::TooFewProfilePoints { got: out.len() });
    }
    Ok(out)
}

/// Direct least-squares ellipse fit (algebraic error subject to `4AC − B² = 1`),
/// solved with the block decomposition that reduces it to a 3×3 eigenproblem.
///
/// Points are centred and scaled to unit mean distance `√2` first; the conic is
/// mapped back to the input frame. The result is returned at unit norm.
pub fn fit_ellipse_direct(points: &[[f64; 2]]) -> Result<Conic> {
    let n = points.len();
    if n < 5 {
        return Err(Error::DegenerateInput);
    }
    let (mu, mv) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
    let (mu, mv) = (mu / n as f64, mv / n as f64);
    let spread = points.iter().map(|p| (p[0] - mu).hypot(p[1] - mv)).sum::<f64>() / n as f64;
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(Error::DegenerateInput);
    }
    let scale = std::f64::consts::SQRT_2 / spread;
    let map = CoordinateMap::new(scale, scale, -scale * mu, -scale * mv);

    let (mut s1, mut s2, mut s3) = (Matrix3::zeros(), Matrix3::zeros(), Matrix3::zeros());
    for p in points {
        let (x, y) = map.apply(p[0], p[1]);
        let quad = Vector3::new(x * x, x * y, y * y);
        let lin = Vector3::new(x, y, 1.0);
        s1 += quad * quad.transpose();
        s2 += quad * lin.transpose();
        s3 += lin * lin.transpose();
    }
    let s3_inv = s3.try_inverse().ok_or(Error::DegenerateInput)?;
    if !(s3_inv.iter().all(|v| v.is_finite())) {
        return Err(Error::DegenerateInput);
    }
    let t = -s3_inv * s2.transpose();
    let m = s1 + s2 * t;
    // Premultiply by the inverse of the 3×3 constraint block [[0,0,2],[0,−1,0],[2,0,0]].
    let reduced =
        Matrix3::from_rows(&[(m.row(2) * 0.5).into_owned(), (-m.row(1)).into_owned(), (m.row(0) * 0.5).into_owned()]);

    let scale_m = reduced.norm();
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in reduced.complex_eigenvalues().iter() {
        if lambda.im.abs() > 1e-9 * scale_m.max(1.0) {
            continue;
        }
        let shifted = reduced - Matrix3::identity() * lambda.re;
        let svd = shifted.svd(false, true);
        let Some(v_t) = svd.v_t else { continue };
        let (idx, _) = svd.singular_values.argmin();
        let a1: Vector3<f64> = v_t.row(idx).transpose();
        let constraint = 4.0 * a1[0] * a1[2] - a1[1] * a1[1];
        if constraint > 0.0 && best.is_none_or(|(l, _)| lambda.re.abs() < l) {
            best = Some((lambda.re.abs(), a1 / constraint.sqrt()));
        }
    }
    let (_, a1) = best.ok_or(Error::NoEllipseSolution)?;
    let a2 = t * a1;
    let fitted = Conic::from_array([a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]]);
    let conic = map.pull_back(&fitted).normalized();
    if !(conic.discriminant() < 0.0) || !conic.norm().is_finite() {
        return Err(Error::NoEllipseSolution);
    }
    Ok(conic)
}

/// Indices of points within `tol` (Sampson distance) of the conic.
pub fn ellipse_inliers(points: &[RadialProfilePoint], conic: &Conic, tol: f64) -> Vec<usize> {
    points.iter().enumerate().filter(|(_, p)| conic.sampson_distance(p.u, p.v).abs() <= tol).map(|(i, _)| i).collect()
}

fn positions(points: &[RadialProfilePoint], idx: &[usize]) -> Vec<[f64; 2]> {
    idx.iter().map(|&i| [points[i].u, points[i].v]).collect()
}

pub fn ransac_ellipse(points: &[RadialProfilePoint], inlier_tol: f64, cfg: &RansacConfig) -> Result<EllipseCandidate> {
    let n = points.len();
    if n < 5 {
        return Err(Error::TooFewPoints { needed: 5, got: n });
    }
    let evaluate = |i: usize| -> Option<(usize, usize, Conic)> {
        let mut rng = iteration_rng(cfg.rng_seed, i);
        let idx = sample_distinct::<5>(&mut rng, n);
        let conic = fit_ellipse_direct(&positions(points, &idx)).ok()?;
        let score = points.iter().filter(|p| conic.sampson_distance(p.u, p.v).abs() <= inlier_tol).count();
        Some((score, i, conic))
    };
    // Higher score wins, then the earlier iteration.
    let better = |a: &(usize, usize, Conic), b: &(usize, usize, Conic)| a.0 > b.0 || (a.0 == b.0 && a.1 < b.1);
    let mut best: Option<(usize, usize, Conic)> = None;
    let mut start = 0;
    while start < cfg.iterations {
        let end = (start + BLOCK).min(cfg.iterations);
        let block_best =
            (start..end).into_par_iter().filter_map(evaluate).reduce_with(|a, b| if better(&b, &a) { b } else { a });
        if let Some(b) = block_best {
            if best.as_ref().is_none_or(|cur| better(&b, cur)) {
                best = Some(b);
            }
        }
        if best.as_ref().is_some_and(|b| b.0 == n) {
            break;
        }
        start = end;
    }
    let Some((_, _, mut conic)) = best else {
        return Err(Error::NoConsensus { support: 0 });
    };

    let mut inliers = ellipse_inliers(points, &conic, inlier_tol);
    for _ in 0..MAX_REFITS {
        if inliers.len() < 5 {
            break;
        }
        let Ok(refit) = fit_ellipse_direct(&positions(points, &inliers)) else { break };
        let next = ellipse_inliers(points, &refit, inlier_tol);
        if next.len() < 5 {
            break;
        }
        conic = refit;
        if next == inliers {
            break;
        }
        inliers = next;
    }
    let inliers = ellipse_inliers(points, &conic, inlier_tol);
    if inliers.len() < MIN_ELLIPSE_SUPPORT {
        return Err(Error::NoConsensus { support: inliers.len() });
    }
    let geom = conic_to_geom(&conic).map_err(|_| Error::NoEllipseSolution)?;
    Ok(EllipseCandidate { conic, geom, support: inliers.len(), inliers })
}

fn similar(p: &EllipseGeom, q: &EllipseGeom) -> bool {
    let mean_radius = 0.5 * (p.a + p.b);
    let rel = |x: f64, y: f64| (x - y).abs() / x.max(y);
    let round = p.a / p.b < 1.05 || q.a / q.b < 1.05;
    (p.cx - q.cx).hypot(p.cy - q.cy) < 0.1 * mean_radius
        && rel(p.a, q.a) < 0.1
        && rel(p.b, q.b) < 0.1
        && (round || axis_angle_difference(p.angle, q.angle) < 10f64.to_radians())
}

/// Indices of the largest group of mutually similar candidates.
///
/// Each candidate in order either joins the first group whose founder it
/// resembles or founds a new group. Ties go to the larger total support, then
/// to the earlier group.
pub fn largest_cluster(cands: &[EllipseCandidate]) -> Vec<usize> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, c) in cands.iter().enumerate() {
        match groups.iter_mut().find(|g| similar(&cands[g[0]].geom, &c.geom)) {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    let support = |g: &Vec<usize>| g.iter().map(|&i| cands[i].support).sum::<usize>();
    let mut best: Option<&Vec<usize>> = None;
    for g in &groups {
        if best.is_none_or(|b| (g.len(), support(g)) > (b.len(), support(b))) {
            best = Some(g);
        }
    }
    best.cloned().unwrap_or_default()
}

/// Average of the largest cluster of similar candidates. Centers and axes are
/// averaged arithmetically, orientation as a doubled-angle circular mean.
pub fn merge_candidates(cands: &[EllipseCandidate]) -> Result<EllipseGeom> {
    let cluster = largest_cluster(cands);
    if cluster.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let k = cluster.len() as f64;
    let (mut cx, mut cy, mut a, mut b, mut c2, mut s2) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for &i in &cluster {
        let g = &cands[i].geom;
        cx += g.cx;
        cy += g.cy;
        a += g.a;
        b += g.b;
        c2 += (2.0 * g.angle).cos();
        s2 += (2.0 * g.angle).sin();
    }
    let angle = if cluster.len() == 1 { cands[cluster[0]].geom.angle } else { 0.5 * s2.atan2(c2) };
    Ok(EllipseGeom::new(cx / k, cy / k, a / k, b / k, angle))
}
