//! Ground-truth scenes: exact silhouette sampling, anti-aliased disk rendering,
//! the standard evaluation grid and error reports.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{conic_to_geom, project_sphere, CameraIntrinsics, Conic, EllipseGeom, PixelPoint, Sphere};
use crate::image::GrayImage;
use crate::pipeline::StageTimings;

/// Supersampling factor per axis for disk rendering.
pub const SUPERSAMPLING: usize = 4;

pub const GRID_DEPTHS: [f64; 5] = [2.0, 5.0, 10.0, 30.0, 100.0];
pub const GRID_OFFSETS_DEG: [f64; 5] = [0.0, 10.0, 20.0, 30.0, 40.0];
pub const GRID_REPEATS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub intrinsics: CameraIntrinsics,
    pub sphere: Sphere,
    pub width: usize,
    pub height: usize,
    pub foreground: u8,
    pub background: u8,
    /// Pixels for contour sampling, intensity levels for rendering.
    pub noise_sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereConfig {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub r: f64,
}

/// Flat JSON form of a scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub fu: f64,
    pub fv: f64,
    pub u0: f64,
    pub v0: f64,
    #[serde(default = "unit")]
    pub us: f64,
    #[serde(default = "unit")]
    pub vs: f64,
    pub width: usize,
    pub height: usize,
    pub sphere: SphereConfig,
    pub fg: u8,
    pub bg: u8,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn unit() -> f64 {
    1.0
}

impl SceneConfig {
    pub fn to_scene(&self) -> Result<SyntheticScene> {
        let k = CameraIntrinsics::with_pixel_scale(self.fu, self.fv, self.u0, self.v0, self.us, self.vs)?;
        let s = &self.sphere;
        let scene = SyntheticScene {
            intrinsics: k,
            sphere: Sphere::new(Vector3::new(s.x, s.y, s.z), s.r),
            width: self.width,
            height: self.height,
            foreground: self.fg,
            background: self.bg,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        };
        scene.validate()?;
        Ok(scene)
    }
}

impl From<&SyntheticScene> for SceneConfig {
    fn from(s: &SyntheticScene) -> Self {
        let k = &s.intrinsics;
        let c = &s.sphere.center;
        Self {
            fu: k.fu,
            fv: k.fv,
            u0: k.u0,
            v0: k.v0,
            us: k.us,
            vs: k.vs,
            width: s.width,
            height: s.height,
            sphere: SphereConfig { x: c.x, y: c.y, z: c.z, r: s.sphere.radius },
            fg: s.foreground,
            bg: s.background,
            noise_sigma: s.noise_sigma,
            seed: s.seed,
        }
    }
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.width < 3 || self.height < 3 {
            return Err(Error::ImageTooSmall { width: self.width, height: self.height });
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Parse("noise_sigma must be a finite non-negative number".into()));
        }
        project_sphere(&self.sphere)?;
        Ok(())
    }

    pub fn pixel_conic(&self) -> Result<Conic> {
        Ok(self.intrinsics.conic_to_pixel(&project_sphere(&self.sphere)?).normalized())
    }

    /// Ground-truth silhouette in pixel coordinates.
    pub fn ellipse(&self) -> Result<EllipseGeom> {
        conic_to_geom(&self.pixel_conic()?)
    }

    fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }
}

/// `n` silhouette points uniform in the parametric angle, displaced by isotropic
/// Gaussian noise of `noise_sigma` pixels.
pub fn sample_contour(scene: &SyntheticScene, n: usize) -> Result<Vec<PixelPoint>> {
    let g = scene.ellipse()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let noise = Normal::new(0.0, scene.noise_sigma).map_err(|e| Error::Parse(e.to_string()))?;
    let pts: Vec<PixelPoint> = (0..n)
        .map(|i| {
            let [u, v] = g.point_at(2.0 * PI * i as f64 / n as f64);
            if scene.noise_sigma > 0.0 {
                PixelPoint::new(u + noise.sample(&mut rng), v + noise.sample(&mut rng))
            } else {
                PixelPoint::new(u, v)
            }
        })
        .collect();
    if !pts.iter().any(|p| scene.contains(p.u, p.v)) {
        return Err(Error::SilhouetteOutsideImage);
    }
    Ok(pts)
}

/// Coverage of each pixel by the ellipse interior, in `0..=SUPERSAMPLING²`.
fn coverage(width: usize, height: usize, g: &EllipseGeom) -> Vec<u16> {
    let (s, c) = g.angle.sin_cos();
    let inside = |x: f64, y: f64| {
        let (dx, dy) = (x - g.cx, y - g.cy);
        let (lx, ly) = ((c * dx + s * dy) / g.a, (-s * dx + c * dy) / g.b);
        lx * lx + ly * ly
    };
    let offsets: Vec<f64> = (0..SUPERSAMPLING).map(|i| (i as f64 + 0.5) / SUPERSAMPLING as f64 - 0.5).collect();
    let full = (SUPERSAMPLING * SUPERSAMPLING) as u16;
    let mut out = vec![0u16; width * height];
    for y in 0..height {
        for x in 0..width {
            let rho2 = inside(x as f64, y as f64);
            // Pixels more than one pixel from the contour are uniform.
            let gap = (rho2.sqrt() - 1.0) * g.b;
            out[y * width + x] = if gap > 1.0 {
                0
            } else if gap < -1.0 {
                full
            } else {
                let mut n = 0;
                for oy in &offsets {
                    for ox in &offsets {
                        if inside(x as f64 + ox, y as f64 + oy) <= 1.0 {
                            n += 1;
                        }
                    }
                }
                n
            };
        }
    }
    out
}

fn shade(background: u8, foreground: u8, covered: u16) -> f64 {
    let w = covered as f64 / (SUPERSAMPLING * SUPERSAMPLING) as f64;
    background as f64 + (foreground as f64 - background as f64) * w
}

/// Noise-free anti-aliased ellipse, pixel centers at integer coordinates.
pub fn render_ellipse(width: usize, height: usize, g: &EllipseGeom, foreground: u8, background: u8) -> GrayImage {
    let data = coverage(width, height, g).into_iter().map(|n| shade(background, foreground, n).round() as u8).collect();
    GrayImage::new(width, height, data).expect("render target at least 3x3")
}

/// Anti-aliased silhouette over the background with additive Gaussian intensity
/// noise, clamped to the 8-bit range.
pub fn render_disk(scene: &SyntheticScene) -> Result<GrayImage> {
    scene.validate()?;
    let g = scene.ellipse()?;
    let cov = coverage(scene.width, scene.height, &g);
    if cov.iter().all(|&n| n == 0) {
        return Err(Error::SilhouetteOutsideImage);
    }
    let noise = Normal::new(0.0, scene.noise_sigma).map_err(|e| Error::Parse(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let data = cov
        .into_iter()
        .map(|n| {
            let mut value = shade(scene.background, scene.foreground, n);
            if scene.noise_sigma > 0.0 {
                value += noise.sample(&mut rng);
            }
            value.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::new(scene.width, scene.height, data)
}

/// Seed of the geometry of grid cell `(depth, offset, repeat)`.
fn grid_seed(depth: usize, offset: usize, repeat: usize) -> u64 {
    0x5eed_0000 + (depth * 100 + offset * 10 + repeat) as u64
}

/// One scene of the standard grid.
///
/// The sphere sits at `depth_factor · r` from the camera, `offset_deg` off the
/// optical axis in a random azimuth. The focal length is chosen so that the
/// silhouette spans 60–90 px in radius, and the image is the silhouette's
/// bounding box plus a margin, so the principal point may lie outside it.
pub fn grid_scene(depth_factor: f64, offset_deg: f64, seed: u64, noise_sigma: f64) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rng.gen_range(0.1..0.5);
    let azimuth = rng.gen_range(0.0..2.0 * PI);
    let target_radius = rng.gen_range(60.0..90.0);
    let margin = rng.gen_range(25.0..40.0);
    let jitter = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
    let foreground = rng.gen_range(180..=240);
    let background = rng.gen_range(30..=80);

    let d = depth_factor * r;
    let off = offset_deg.to_radians();
    let center = d * Vector3::new(off.sin() * azimuth.cos(), off.sin() * azimuth.sin(), off.cos());
    let sphere = Sphere::new(center, r);
    let beta = (1.0 / depth_factor).asin();
    let f = target_radius / beta.tan();

    let g = conic_to_geom(&project_sphere(&sphere).expect("grid sphere in front of camera"))
        .expect("grid silhouette is an ellipse");
    let (s, c) = g.angle.sin_cos();
    let half_w = f * ((g.a * c).powi(2) + (g.b * s).powi(2)).sqrt();
    let half_h = f * ((g.a * s).powi(2) + (g.b * c).powi(2)).sqrt();
    let width = (2.0 * (half_w + margin)).ceil() as usize;
    let height = (2.0 * (half_h + margin)).ceil() as usize;
    let (cu, cv) = (width as f64 / 2.0 + jitter[0], height as f64 / 2.0 + jitter[1]);
    let intrinsics = CameraIntrinsics::new(f, f, cu - f * g.cx, cv - f * g.cy).expect("positive focal length");
    SyntheticScene {
        intrinsics,
        sphere,
        width,
        height,
        foreground,
        background,
        noise_sigma,
        seed: seed ^ noise_sigma.to_bits(),
    }
}

/// Depths × off-axis angles × repeats. Geometry does not depend on the noise level.
pub fn standard_grid(noise_sigma: f64) -> Vec<SyntheticScene> {
    let mut scenes = Vec::new();
    for (i, &depth) in GRID_DEPTHS.iter().enumerate() {
        for (j, &offset) in GRID_OFFSETS_DEG.iter().enumerate() {
            for k in 0..GRID_REPEATS {
                scenes.push(grid_scene(depth, offset, grid_seed(i, j, k), noise_sigma));
            }
        }
    }
    scenes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub gt_center: [f64; 3],
    pub est_center: [f64; 3],
    pub euclidean_error: f64,
    /// Error divided by the true distance of the sphere center from the camera.
    pub relative_error: f64,
    pub gt_ellipse: EllipseGeom,
    pub est_ellipse: Option<EllipseGeom>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
}

pub fn evaluate(
    scene: &SyntheticScene,
    est_center: &Vector3<f64>,
    est_ellipse: Option<EllipseGeom>,
    timings: Option<StageTimings>,
) -> Result<EvalReport> {
    let gt = scene.sphere.center;
    let err = (est_center - gt).norm();
    Ok(EvalReport {
        gt_center: gt.into(),
        est_center: (*est_center).into(),
        euclidean_error: err,
        relative_error: err / gt.norm(),
        gt_ellipse: scene.ellipse()?,
        est_ellipse,
        timings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

impl ErrorStats {
    /// `None` for an empty sample. The median of an even count is the mean of the middle pair.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Some(Self { median, mean: v.iter().sum::<f64>() / n as f64, max: v[n - 1] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub scenes: usize,
    pub failures: usize,
    pub euclidean_error: Option<ErrorStats>,
    pub relative_error: Option<ErrorStats>,
}

pub fn summarize(reports: &[EvalReport], failures: usize) -> BatchSummary {
    let abs: Vec<f64> = reports.iter().map(|r| r.euclidean_error).collect();
    let rel: Vec<f64> = reports.iter().map(|r| r.relative_error).collect();
    BatchSummary {
        scenes: reports.len() + failures,
        failures,
        euclidean_error: ErrorStats::of(&abs),
        relative_error: ErrorStats::of(&rel),
    }
}
