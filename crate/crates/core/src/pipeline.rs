//! End-to-end detection: edges → candidate circles → ellipses per candidate →
//! merged ellipse, and optionally the 3-D center.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::circle_ransac::{ransac_circles, RansacConfig, ScoredCircle};
use crate::edges::{EdgeMap, EdgePoint};
use crate::ellipse_fit::{
    collect_radial_points, ellipse_ransac_config, largest_cluster, merge_candidates, ransac_ellipse, EllipseCandidate,
    RadialProfilePoint, ELLIPSE_INLIER_TOLERANCE, PROFILE_MAGNITUDE_FLOOR,
};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, EllipseGeom, PixelPoint};
use crate::image::GrayImage;
use crate::sphere3d::{estimate_sphere, SphereEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub circles: RansacConfig,
    pub ellipse_tolerance: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { circles: RansacConfig::default(), ellipse_tolerance: ELLIPSE_INLIER_TOLERANCE }
    }
}

impl DetectorConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.circles.rng_seed = seed;
        self
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.circles.iterations = iterations;
        self
    }
}

/// Wall-clock milliseconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub edges_ms: f64,
    pub circles_ms: f64,
    pub ellipse_ms: f64,
    pub estimate_ms: f64,
}

/// One circle hypothesis and the ellipse grown from it, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrace {
    pub circle: ScoredCircle,
    pub profile: Vec<RadialProfilePoint>,
    pub ellipse: Option<EllipseCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub ellipse: EllipseGeom,
    /// Inlier count of the strongest ellipse in the merged cluster.
    pub support: usize,
    pub edge_threshold: f64,
    pub edge_points: Vec<EdgePoint>,
    pub candidates: Vec<CandidateTrace>,
    /// Indices into `candidates` that were averaged.
    pub merged: Vec<usize>,
    /// Inlier profile points of the strongest merged ellipse.
    pub contour: Vec<PixelPoint>,
    pub timings: StageTimings,
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn detect_ellipse(
    img: &GrayImage,
    k: &CameraIntrinsics,
    sphere_radius: f64,
    cfg: &DetectorConfig,
) -> Result<Detection> {
    let mut timings = StageTimings::default();
    let t = Instant::now();
    let edges = EdgeMap::compute(img)?;
    timings.edges_ms = elapsed_ms(t);

    let t = Instant::now();
    let circles = ransac_circles(&edges.points, k, sphere_radius, &cfg.circles)?;
    timings.circles_ms = elapsed_ms(t);

    let t = Instant::now();
    let mut traces = Vec::with_capacity(circles.len());
    let mut first_error = None;
    for (i, circle) in circles.into_iter().enumerate() {
        let seed = cfg.circles.rng_seed.wrapping_add(i as u64);
        let grown = collect_radial_points(&edges.gradient, &circle.circle, PROFILE_MAGNITUDE_FLOOR).map(|profile| {
            let ellipse = ransac_ellipse(&profile, cfg.ellipse_tolerance, &ellipse_ransac_config(seed));
            (profile, ellipse)
        });
        let (profile, ellipse) = match grown {
            Ok((profile, Ok(e))) => (profile, Some(e)),
            Ok((profile, Err(e))) => {
                first_error.get_or_insert(e);
                (profile, None)
            }
            Err(e) => {
                first_error.get_or_insert(e);
                (Vec::new(), None)
            }
        };
        traces.push(CandidateTrace { circle, profile, ellipse });
    }
    let fitted: Vec<usize> = (0..traces.len()).filter(|&i| traces[i].ellipse.is_some()).collect();
    if fitted.is_empty() {
        return Err(first_error.unwrap_or(Error::NoConsensus { support: 0 }));
    }
    let ellipses: Vec<EllipseCandidate> =
        fitted.iter().map(|&i| traces[i].ellipse.clone().expect("filtered")).collect();
    let ellipse = merge_candidates(&ellipses)?;
    let merged: Vec<usize> = largest_cluster(&ellipses).into_iter().map(|j| fitted[j]).collect();
    let strongest = *merged
        .iter()
        .max_by_key(|&&i| (traces[i].ellipse.as_ref().map_or(0, |e| e.support), std::cmp::Reverse(i)))
        .expect("non-empty cluster");
    let best = traces[strongest].ellipse.as_ref().expect("fitted");
    let contour = best
        .inliers
        .iter()
        .map(|&j| {
            let p = &traces[strongest].profile[j];
            PixelPoint::new(p.u, p.v)
        })
        .collect();
    timings.ellipse_ms = elapsed_ms(t);

    Ok(Detection {
        ellipse,
        support: best.support,
        edge_threshold: edges.threshold,
        edge_points: edges.points,
        candidates: traces,
        merged,
        contour,
        timings,
    })
}

/// Detection followed by center estimation from the merged ellipse, refined on
/// the detected contour points.
pub fn locate_sphere(
    img: &GrayImage,
    k: &CameraIntrinsics,
    sphere_radius: f64,
    cfg: &DetectorConfig,
) -> Result<(Detection, SphereEstimate)> {
    let mut detection = detect_ellipse(img, k, sphere_radius, cfg)?;
    let t = Instant::now();
    let estimate = estimate_sphere(&detection.ellipse, k, sphere_radius, &detection.contour)?;
    detection.timings.estimate_ms = elapsed_ms(t);
    Ok((detection, estimate))
}
