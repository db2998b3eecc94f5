//! Three-point circle RANSAC over edge points, scored with the adaptive threshold
//! and a gradient-direction consistency test.
//!
//! Iteration `i` draws its sample from a generator seeded with `seed ^ i`, so
//! the hypothesis set does not depend on how iterations are scheduled.
//! Iterations run in fixed-size blocks; the early-exit check happens only at
//! block boundaries, which keeps results identical for any thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edges::EdgePoint;
use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::threshold::{threshold_or_fallback, CircleHypothesis};

/// Largest allowed angle between an inlier's gradient and the radial direction (mod π).
pub const DIRECTION_TOLERANCE: f64 = 22.5 * std::f64::consts::PI / 180.0;
/// Stop once a hypothesis explains this fraction of all points.
pub const EARLY_EXIT_FRACTION: f64 = 0.6;
/// Minimum absolute support for an accepted circle.
pub const MIN_CIRCLE_SUPPORT: usize = 6;

const BLOCK: usize = 4096;
const POOL_CAP: usize = 4096;
const MIN_TRIANGLE_AREA: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub iterations: usize,
    pub rng_seed: u64,
    pub min_inlier_fraction: f64,
    pub candidate_count: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { iterations: 1_000_000, rng_seed: 0, min_inlier_fraction: 0.02, candidate_count: 5 }
    }
}

impl RansacConfig {
    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }
}

/// Generator for iteration `i` of a run seeded with `seed`.
pub(crate) fn iteration_rng(seed: u64, i: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ i as u64)
}

/// `k` distinct indices below `n` (`k ≤ n`).
pub(crate) fn sample_distinct<const K: usize>(rng: &mut ChaCha8Rng, n: usize) -> [usize; K] {
    let mut out = [0usize; K];
    let mut filled = 0;
    while filled < K {
        let candidate = rng.gen_range(0..n);
        if !out[..filled].contains(&candidate) {
            out[filled] = candidate;
            filled += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCircle {
    pub circle: CircleHypothesis,
    /// Indices into the input point list.
    pub inliers: Vec<usize>,
    pub score: usize,
    /// Inlier threshold the circle was scored with, in pixels.
    pub threshold: f64,
}

/// Circumscribed circle of three points.
pub fn circle_from_3_points(p1: [f64; 2], p2: [f64; 2], p3: [f64; 2]) -> Result<CircleHypothesis> {
    let (bx, by) = (p2[0] - p1[0], p2[1] - p1[1]);
    let (cx, cy) = (p3[0] - p1[0], p3[1] - p1[1]);
    let cross = bx * cy - by * cx;
    if !(0.5 * cross.abs() > MIN_TRIANGLE_AREA) {
        return Err(Error::Collinear);
    }
    let (b2, c2) = (bx * bx + by * by, cx * cx + cy * cy);
    let ux = (cy * b2 - by * c2) / (2.0 * cross);
    let uy = (bx * c2 - cx * b2) / (2.0 * cross);
    Ok(CircleHypothesis::new(p1[0] + ux, p1[1] + uy, ux.hypot(uy)))
}

/// Precomputed point data for the inlier test.
#[derive(Debug, Clone, Copy)]
struct Probe {
    u: f64,
    v: f64,
    cos: f64,
    sin: f64,
}

impl From<&EdgePoint> for Probe {
    fn from(p: &EdgePoint) -> Self {
        let (sin, cos) = p.direction.sin_cos();
        Self { u: p.u, v: p.v, cos, sin }
    }
}

impl Probe {
    fn is_inlier(&self, c: &CircleHypothesis, t: f64, sin_tol: f64) -> bool {
        let (dx, dy) = (self.u - c.u, self.v - c.v);
        let dist = dx.hypot(dy);
        if !((dist - c.radius).abs() <= t) {
            return false;
        }
        // |sin| of the angle between gradient and radial direction, i.e. mod π.
        (self.cos * dy - self.sin * dx).abs() <= sin_tol * dist
    }
}

/// Whether `p` passes both the residual and the direction test for `circle`.
pub fn is_circle_inlier(p: &EdgePoint, circle: &CircleHypothesis, t: f64) -> bool {
    Probe::from(p).is_inlier(circle, t, DIRECTION_TOLERANCE.sin())
}

/// Re-verification of an inlier set; agrees with the count used inside RANSAC.
pub fn circle_inliers(points: &[EdgePoint], circle: &CircleHypothesis, t: f64) -> Vec<usize> {
    let sin_tol = DIRECTION_TOLERANCE.sin();
    points.iter().enumerate().filter(|(_, p)| Probe::from(*p).is_inlier(circle, t, sin_tol)).map(|(i, _)| i).collect()
}

#[derive(Debug, Clone, Copy)]
struct Hypothesis {
    index: usize,
    circle: CircleHypothesis,
    threshold: f64,
    score: usize,
}

/// Best first: score, then larger radius, then earlier iteration.
fn rank(a: &Hypothesis, b: &Hypothesis) -> std::cmp::Ordering {
    b.score.cmp(&a.score).then(b.circle.radius.total_cmp(&a.circle.radius)).then(a.index.cmp(&b.index))
}

/// Half the diagonal of the points' bounding box. A silhouette larger than this
/// cannot have its contour among the points, while its wide threshold band would
/// sweep up clutter.
fn plausible_radius(points: &[EdgePoint]) -> f64 {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        lo = [lo[0].min(p.u), lo[1].min(p.v)];
        hi = [hi[0].max(p.u), hi[1].max(p.v)];
    }
    0.5 * (hi[0] - lo[0]).hypot(hi[1] - lo[1])
}

fn duplicates(a: &CircleHypothesis, b: &CircleHypothesis) -> bool {
    let m = a.radius.min(b.radius);
    (a.u - b.u).hypot(a.v - b.v) < 0.5 * m && (a.radius - b.radius).abs() < 0.3 * m
}

pub fn ransac_circles(
    points: &[EdgePoint],
    k: &CameraIntrinsics,
    sphere_radius: f64,
    cfg: &RansacConfig,
) -> Result<Vec<ScoredCircle>> {
    ransac_circles_probed(points, k, sphere_radius, cfg, &|_, _| {})
}

/// [`ransac_circles`] with a hook observing every scored hypothesis and its threshold.
pub fn ransac_circles_probed(
    points: &[EdgePoint],
    k: &CameraIntrinsics,
    sphere_radius: f64,
    cfg: &RansacConfig,
    probe: &(dyn Fn(&CircleHypothesis, f64) + Sync),
) -> Result<Vec<ScoredCircle>> {
    let n = points.len();
    if n < 3 {
        return Err(Error::TooFewPoints { needed: 3, got: n });
    }
    let probes: Vec<Probe> = points.iter().map(Probe::from).collect();
    let sin_tol = DIRECTION_TOLERANCE.sin();
    let required = MIN_CIRCLE_SUPPORT.max((cfg.min_inlier_fraction * n as f64).ceil() as usize);
    let early_exit = (EARLY_EXIT_FRACTION * n as f64) as usize;
    let max_radius = plausible_radius(points);

    let evaluate = |i: usize| -> Option<Hypothesis> {
        let mut rng = iteration_rng(cfg.rng_seed, i);
        let idx = sample_distinct::<3>(&mut rng, n);
        let pos = |j: usize| [points[idx[j]].u, points[idx[j]].v];
        let circle = circle_from_3_points(pos(0), pos(1), pos(2)).ok()?;
        if circle.radius > max_radius {
            return None;
        }
        let t = threshold_or_fallback(&circle, k, sphere_radius);
        // A hypothesis whose own sample fails the direction test cannot win.
        if !idx.iter().all(|&j| probes[j].is_inlier(&circle, t, sin_tol)) {
            return None;
        }
        probe(&circle, t);
        let score = probes.iter().filter(|p| p.is_inlier(&circle, t, sin_tol)).count();
        (score >= required).then_some(Hypothesis { index: i, circle, threshold: t, score })
    };

    let mut pool: Vec<Hypothesis> = Vec::new();
    let mut start = 0;
    while start < cfg.iterations {
        let end = (start + BLOCK).min(cfg.iterations);
        let block: Vec<Hypothesis> = (start..end).into_par_iter().filter_map(evaluate).collect();
        pool.extend(block);
        pool.sort_by(rank);
        pool.truncate(POOL_CAP);
        if pool.first().is_some_and(|h| h.score > early_exit) {
            break;
        }
        start = end;
    }

    let best = pool.first().map_or(0, |h| h.score);
    if pool.is_empty() {
        return Err(Error::NoCircleFound { best, required });
    }
    let mut selected: Vec<Hypothesis> = Vec::new();
    for h in &pool {
        if selected.len() == cfg.candidate_count.max(1) {
            break;
        }
        if selected.iter().all(|s| !duplicates(&s.circle, &h.circle)) {
            selected.push(*h);
        }
    }
    Ok(selected
        .into_iter()
        .map(|h| {
            let inliers = circle_inliers(points, &h.circle, h.threshold);
            debug_assert_eq!(inliers.len(), h.score);
            ScoredCircle { circle: h.circle, score: inliers.len(), inliers, threshold: h.threshold }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;
    use std::sync::Mutex;

    fn ring_with_clutter(seed: u64) -> Vec<EdgePoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts: Vec<EdgePoint> = (0..100)
            .map(|i| {
                let phi = 2.0 * PI * i as f64 / 100.0;
                EdgePoint { u: 50.0 + 20.0 * phi.cos(), v: 50.0 + 20.0 * phi.sin(), magnitude: 500.0, direction: phi }
            })
            .collect();
        for _ in 0..900 {
            pts.push(EdgePoint {
                u: rng.gen_range(0.0..100.0),
                v: rng.gen_range(0.0..100.0),
                magnitude: 300.0,
                direction: rng.gen_range(-PI..PI),
            });
        }
        pts
    }

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 50.0, 50.0).unwrap()
    }

    #[test]
    fn circumcircle_examples() {
        let c = circle_from_3_points([0.0, 0.0], [2.0, 0.0], [1.0, 1.0]).unwrap();
        assert_relative_eq!(c.u, 1.0, epsilon = 1e-15);
        assert_relative_eq!(c.v, 0.0, epsilon = 1e-15);
        assert_relative_eq!(c.radius, 1.0, epsilon = 1e-15);
        assert_eq!(circle_from_3_points([0.0, 0.0], [1.0, 0.0], [2.0, 0.0]), Err(Error::Collinear));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (cu, cv, r) = (rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0), rng.gen_range(1.0..300.0));
            let p = |phi: f64| [cu + r * f64::cos(phi), cv + r * f64::sin(phi)];
            let (a, b, c) = (rng.gen_range(0.0..2.0), rng.gen_range(2.1..4.0), rng.gen_range(4.1..6.2));
            let circle = circle_from_3_points(p(a), p(b), p(c)).unwrap();
            assert!((circle.u - cu).abs() < 1e-9 && (circle.v - cv).abs() < 1e-9);
            assert!((circle.radius - r).abs() < 1e-9);
        }
    }

    #[test]
    fn finds_circle_in_clutter() {
        let pts = ring_with_clutter(42);
        let cfg = RansacConfig::default().with_iterations(50_000).with_seed(42);
        let found = ransac_circles(&pts, &camera(), 0.5, &cfg).unwrap();
        let best = &found[0];
        assert!((best.circle.u - 50.0).abs() < 0.5 && (best.circle.v - 50.0).abs() < 0.5);
        assert!((best.circle.radius - 20.0).abs() < 0.5);
        assert!(best.score >= 95, "score {}", best.score);
        // Ranking invariant and re-verification.
        assert!(found.windows(2).all(|w| w[0].score >= w[1].score));
        for c in &found {
            assert_eq!(circle_inliers(&pts, &c.circle, c.threshold), c.inliers);
            assert_eq!(c.score, c.inliers.len());
        }
    }

    #[test]
    fn deterministic_for_seed_and_thread_count() {
        let pts = ring_with_clutter(7);
        let cfg = RansacConfig::default().with_iterations(20_000).with_seed(99);
        let a = ransac_circles(&pts, &camera(), 0.5, &cfg).unwrap();
        let b = ransac_circles(&pts, &camera(), 0.5, &cfg).unwrap();
        assert_eq!(a, b);
        for threads in [1, 3] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let c = pool.install(|| ransac_circles(&pts, &camera(), 0.5, &cfg).unwrap());
            assert_eq!(a, c);
        }
    }

    #[test]
    fn collinear_points_find_nothing() {
        let pts: Vec<EdgePoint> =
            (0..50).map(|i| EdgePoint { u: i as f64, v: 2.0 * i as f64, magnitude: 100.0, direction: 0.3 }).collect();
        let cfg = RansacConfig::default().with_iterations(2000);
        assert!(matches!(ransac_circles(&pts, &camera(), 0.5, &cfg), Err(Error::NoCircleFound { .. })));
        assert!(matches!(ransac_circles(&pts[..2], &camera(), 0.5, &cfg), Err(Error::TooFewPoints { .. })));
    }

    #[test]
    fn uses_adaptive_threshold() {
        let pts = ring_with_clutter(3);
        let k = camera();
        let cfg = RansacConfig::default().with_iterations(5_000).with_seed(5);
        let seen = Mutex::new(Vec::new());
        ransac_circles_probed(&pts, &k, 0.5, &cfg, &|c, t| seen.lock().unwrap().push((*c, t))).unwrap();
        let seen = seen.into_inner().unwrap();
        assert!(!seen.is_empty());
        let mut distinct = seen.iter().map(|(_, t)| t.to_bits()).collect::<Vec<_>>();
        distinct.sort();
        distinct.dedup();
        assert!(distinct.len() > 1, "threshold never varied");
        for (c, t) in seen {
            assert_eq!(t, threshold_or_fallback(&c, &k, 0.5));
        }
    }

    #[test]
    fn direction_test_is_mod_pi() {
        let c = CircleHypothesis::new(0.0, 0.0, 10.0);
        let outward = EdgePoint { u: 10.0, v: 0.0, magnitude: 1.0, direction: 0.0 };
        let inward = EdgePoint { direction: -PI, ..outward };
        let tangential = EdgePoint { direction: PI / 2.0, ..outward };
        let slanted = EdgePoint { direction: 0.3, ..outward };
        assert!(is_circle_inlier(&outward, &c, 1.0));
        assert!(is_circle_inlier(&inward, &c, 1.0));
        assert!(!is_circle_inlier(&tangential, &c, 1.0));
        assert!(is_circle_inlier(&slanted, &c, 1.0));
        assert!(!is_circle_inlier(&EdgePoint { direction: 0.45, ..outward }, &c, 1.0));
        assert!(!is_circle_inlier(&EdgePoint { u: 12.0, ..outward }, &c, 1.0));
    }
}
