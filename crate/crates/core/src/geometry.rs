//! Pinhole camera and conic mathematics.
//!
//! Conics are stored as the six coefficients of
//! `A x² + B xy + C y² + D x + E y + F = 0`. Inside the pipeline they live in
//! normalized image coordinates; pixel-space conics only appear at the I/O
//! boundary and are converted with [`CoordinateMap`].

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative residual allowed for a point to count as lying on a conic.
pub const ON_CONIC_TOLERANCE: f64 = 1e-8;

/// Pinhole intrinsics plus the pixel width/height scale factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fu: f64,
    pub fv: f64,
    pub u0: f64,
    pub v0: f64,
    #[serde(default = "unit_scale")]
    pub us: f64,
    #[serde(default = "unit_scale")]
    pub vs: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl CameraIntrinsics {
    pub fn new(fu: f64, fv: f64, u0: f64, v0: f64) -> Result<Self> {
        Self::with_pixel_scale(fu, fv, u0, v0, 1.0, 1.0)
    }

    pub fn with_pixel_scale(fu: f64, fv: f64, u0: f64, v0: f64, us: f64, vs: f64) -> Result<Self> {
        let k = Self { fu, fv, u0, v0, us, vs };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.fu, self.fv, self.u0, self.v0, self.us, self.vs];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidIntrinsics("non-finite parameter"));
        }
        if self.fu <= 0.0 || self.fv <= 0.0 {
            return Err(Error::InvalidIntrinsics("focal lengths must be positive"));
        }
        if self.us <= 0.0 || self.vs <= 0.0 {
            return Err(Error::InvalidIntrinsics("pixel scale factors must be positive"));
        }
        Ok(())
    }

    /// Single focal length used where a scalar is needed: the mean of `fu` and `fv`.
    pub fn focal(&self) -> f64 {
        0.5 * (self.fu + self.fv)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fu, 0.0, self.u0, 0.0, self.fv, self.v0, 0.0, 0.0, 1.0)
    }

    pub fn principal_point(&self) -> PixelPoint {
        PixelPoint::new(self.u0, self.v0)
    }

    pub fn normalize(&self, p: PixelPoint) -> NormalizedPoint {
        NormalizedPoint::new((p.u - self.u0) / self.fu, (p.v - self.v0) / self.fv)
    }

    pub fn denormalize(&self, p: NormalizedPoint) -> PixelPoint {
        PixelPoint::new(self.fu * p.u + self.u0, self.fv * p.v + self.v0)
    }

    /// Pixel coordinates as an affine function of normalized ones.
    pub fn pixel_map(&self) -> CoordinateMap {
        CoordinateMap::new(self.fu, self.fv, self.u0, self.v0)
    }

    /// Re-expresses a pixel-space conic in normalized coordinates.
    pub fn conic_to_normalized(&self, pixel_conic: &Conic) -> Conic {
        self.pixel_map().pull_back(pixel_conic)
    }

    /// Re-expresses a normalized-coordinate conic in pixel coordinates.
    pub fn conic_to_pixel(&self, normalized_conic: &Conic) -> Conic {
        self.pixel_map().push_forward(normalized_conic)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// A point on the `z = 1` plane of the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPoint {
    pub u: f64,
    pub v: f64,
}

impl NormalizedPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vector3<f64>,
    pub radius: f64,
}

impl Sphere {
    pub fn new(center: Vector3<f64>, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn distance(&self) -> f64 {
        self.center.norm()
    }
}

/// `A x² + B xy + C y² + D x + E y + F = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl Conic {
    /// Raw coefficients, no scale normalization.
    pub const fn from_coefficients(a: f64, b: f64, c: f64, d: f64, e: f64, f: f64) -> Self {
        Self { a, b, c, d, e, f }
    }

    pub fn from_array(k: [f64; 6]) -> Self {
        Self::from_coefficients(k[0], k[1], k[2], k[3], k[4], k[5])
    }

    pub fn coefficients(&self) -> [f64; 6] {
        [self.a, self.b, self.c, self.d, self.e, self.f]
    }

    /// The symmetric matrix `T` with `[x y 1] T [x y 1]ᵀ = 0`.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.a,
            0.5 * self.b,
            0.5 * self.d,
            0.5 * self.b,
            self.c,
            0.5 * self.e,
            0.5 * self.d,
            0.5 * self.e,
            self.f,
        )
    }

    pub fn from_matrix(t: &Matrix3<f64>) -> Self {
        Self::from_coefficients(
            t[(0, 0)],
            t[(0, 1)] + t[(1, 0)],
            t[(1, 1)],
            t[(0, 2)] + t[(2, 0)],
            t[(1, 2)] + t[(2, 1)],
            t[(2, 2)],
        )
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_array(self.coefficients().map(|k| k * s))
    }

    pub fn norm(&self) -> f64 {
        self.coefficients().iter().map(|k| k * k).sum::<f64>().sqrt()
    }

    /// Canonical scale: unit coefficient norm, `F > 0` when `F != 0`, otherwise
    /// the first nonzero coefficient positive.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return *self;
        }
        let lead =
            if self.f != 0.0 { self.f } else { self.coefficients().into_iter().find(|&k| k != 0.0).unwrap_or(1.0) };
        self.scaled(lead.signum() / n)
    }

    /// `B² − 4AC`; negative for (real or imaginary) ellipses.
    pub fn discriminant(&self) -> f64 {
        self.b * self.b - 4.0 * self.a * self.c
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.a * x * x + self.b * x * y + self.c * y * y + self.d * x + self.e * y + self.f
    }

    pub fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        [2.0 * self.a * x + self.b * y + self.d, self.b * x + 2.0 * self.c * y + self.e]
    }

    /// Signed first-order (Sampson) distance: algebraic residual over gradient norm.
    pub fn sampson_distance(&self, x: f64, y: f64) -> f64 {
        let [gx, gy] = self.gradient(x, y);
        let g = gx.hypot(gy);
        if g == 0.0 {
            return f64::INFINITY;
        }
        self.eval(x, y) / g
    }

    /// The same conic with its sign chosen so that the interior evaluates negative.
    pub fn interior_negative(&self) -> Self {
        if self.a + self.c < 0.0 {
            self.scaled(-1.0)
        } else {
            *self
        }
    }
}

/// Ellipse in center/axes/orientation form. `angle` is the direction of the
/// major axis measured from the x-axis, in `[−π/2, π/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseGeom {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub angle: f64,
}

impl EllipseGeom {
    /// Builds an ellipse, swapping axes if needed so that `a ≥ b`.
    pub fn new(cx: f64, cy: f64, a: f64, b: f64, angle: f64) -> Self {
        if a >= b {
            Self { cx, cy, a, b, angle: wrap_half_turn(angle) }
        } else {
            Self { cx, cy, a: b, b: a, angle: wrap_half_turn(angle + FRAC_PI_2) }
        }
    }

    pub fn point_at(&self, t: f64) -> [f64; 2] {
        let (s, c) = self.angle.sin_cos();
        let (x, y) = (self.a * t.cos(), self.b * t.sin());
        [self.cx + c * x - s * y, self.cy + s * x + c * y]
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.a / self.b
    }

    /// Euclidean distance from `(x, y)` to the ellipse curve.
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let lx = (c * dx + s * dy).abs();
        let ly = (-s * dx + c * dy).abs();
        let (qx, qy) = closest_on_ellipse_quadrant(self.a, self.b, lx, ly);
        (lx - qx).hypot(ly - qy)
    }
}

/// Closest point on the first-quadrant arc of `x²/a² + y²/b² = 1` to `(x, y)`,
/// `x, y ≥ 0`, `a ≥ b > 0`. Bisection on the Lagrange parameter.
fn closest_on_ellipse_quadrant(a: f64, b: f64, x: f64, y: f64) -> (f64, f64) {
    if y > 0.0 {
        if x > 0.0 {
            // Root of F(t) = (a x / (t + a²))² + (b y / (t + b²))² − 1 on t > −b².
            let f = |t: f64| {
                let p = a * x / (t + a * a);
                let q = b * y / (t + b * b);
                p * p + q * q - 1.0
            };
            let mut lo = -b * b + b * y;
            let mut hi = -b * b + (a * a * x * x + b * b * y * y).sqrt();
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid == lo || mid == hi {
                    break;
                }
                if f(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let t = 0.5 * (lo + hi);
            (a * a * x / (t + a * a), b * b * y / (t + b * b))
        } else {
            (0.0, b)
        }
    } else {
        let denom = a * a - b * b;
        if a * x < denom {
            let xr = a * x / denom;
            (a * xr, b * (1.0 - xr * xr).max(0.0).sqrt())
        } else {
            (a, 0.0)
        }
    }
}

/// `outer = scale · inner + offset`, applied per axis.
///
/// Carries conics between two coordinate frames related by an axis-aligned
/// scaling and a translation, e.g. normalized ↔ pixel coordinates, or pixel ↔
/// centred-and-scaled data coordinates used for well-conditioned fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateMap {
    pub scale_u: f64,
    pub scale_v: f64,
    pub offset_u: f64,
    pub offset_v: f64,
}

impl CoordinateMap {
    pub const fn new(scale_u: f64, scale_v: f64, offset_u: f64, offset_v: f64) -> Self {
        Self { scale_u, scale_v, offset_u, offset_v }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (self.scale_u * x + self.offset_u, self.scale_v * y + self.offset_v)
    }

    pub fn invert(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.offset_u) / self.scale_u, (y - self.offset_v) / self.scale_v)
    }

    /// Given a conic in outer coordinates, returns the conic in inner
    /// coordinates obtained by substituting `outer = scale · inner + offset`.
    pub fn pull_back(&self, outer: &Conic) -> Conic {
        let (fu, fv, u0, v0) = (self.scale_u, self.scale_v, self.offset_u, self.offset_v);
        let Conic { a, b, c, d, e, f } = *outer;
        Conic::from_coefficients(
            a * fu * fu,
            b * fu * fv,
            c * fv * fv,
            2.0 * a * fu * u0 + b * fu * v0 + d * fu,
            b * fv * u0 + 2.0 * c * fv * v0 + e * fv,
            a * u0 * u0 + b * u0 * v0 + c * v0 * v0 + d * u0 + e * v0 + f,
        )
    }

    /// Inverse of [`pull_back`](Self::pull_back).
    pub fn push_forward(&self, inner: &Conic) -> Conic {
        let (fu, fv, u0, v0) = (self.scale_u, self.scale_v, self.offset_u, self.offset_v);
        let a = inner.a / (fu * fu);
        let b = inner.b / (fu * fv);
        let c = inner.c / (fv * fv);
        let d = (inner.d - 2.0 * a * fu * u0 - b * fu * v0) / fu;
        let e = (inner.e - 2.0 * c * fv * v0 - b * fv * u0) / fv;
        let f = inner.f - a * u0 * u0 - b * u0 * v0 - c * v0 * v0 - d * u0 - e * v0;
        Conic::from_coefficients(a, b, c, d, e, f)
    }
}

/// Silhouette of a sphere on the normalized image plane.
///
/// The contour is the set of rays tangent to the sphere, i.e. the zero set of
/// the discriminant of the ray/sphere intersection quadratic.
pub fn project_sphere(s: &Sphere) -> Result<Conic> {
    let (x0, y0, z0) = (s.center.x, s.center.y, s.center.z);
    let r2 = s.radius * s.radius;
    if !(s.radius > 0.0) || !(z0 > s.radius) {
        return Err(Error::DegenerateSphere { z0, radius: s.radius });
    }
    Ok(Conic::from_coefficients(
        r2 - y0 * y0 - z0 * z0,
        2.0 * x0 * y0,
        r2 - x0 * x0 - z0 * z0,
        2.0 * x0 * z0,
        2.0 * y0 * z0,
        r2 - x0 * x0 - y0 * y0,
    )
    .normalized())
}

pub fn conic_to_geom(conic: &Conic) -> Result<EllipseGeom> {
    // Positive-definite quadratic part after the sign flip.
    let k = conic.interior_negative();
    let Conic { a, b, c, d, e, f } = k;
    let scale = a.abs().max(b.abs()).max(c.abs());
    let det2 = 4.0 * a * c - b * b;
    if !(scale > 0.0) || !(det2 > 1e-14 * scale * scale) {
        return Err(Error::NotAnEllipse);
    }
    let cx = (b * e - 2.0 * c * d) / det2;
    let cy = (b * d - 2.0 * a * e) / det2;
    let f0 = f + 0.5 * (d * cx + e * cy);
    if !(f0 < 0.0) {
        return Err(Error::NotAnEllipse);
    }
    let half_sum = 0.5 * (a + c);
    let radius = (0.5 * (a - c)).hypot(0.5 * b);
    let lambda_max = half_sum + radius;
    let lambda_min = (a * c - 0.25 * b * b) / lambda_max;
    let major = (-f0 / lambda_min).sqrt();
    let minor = (-f0 / lambda_max).sqrt();
    let angle = if radius <= 1e-15 * lambda_max {
        0.0
    } else {
        // 0.5·atan2(B, A − C) points along the λ_max eigenvector (minor axis).
        0.5 * b.atan2(a - c) + FRAC_PI_2
    };
    if !(major.is_finite() && minor > 0.0) {
        return Err(Error::NotAnEllipse);
    }
    Ok(EllipseGeom { cx, cy, a: major, b: minor, angle: wrap_half_turn(angle) })
}

pub fn geom_to_conic(g: &EllipseGeom) -> Conic {
    let (s, c) = g.angle.sin_cos();
    let (a2, b2) = (g.a * g.a, g.b * g.b);
    let qa = a2 * s * s + b2 * c * c;
    let qb = 2.0 * (b2 - a2) * s * c;
    let qc = a2 * c * c + b2 * s * s;
    let qd = -2.0 * qa * g.cx - qb * g.cy;
    let qe = -qb * g.cx - 2.0 * qc * g.cy;
    let qf = qa * g.cx * g.cx + qb * g.cx * g.cy + qc * g.cy * g.cy - a2 * b2;
    Conic::from_coefficients(qa, qb, qc, qd, qe, qf).normalized()
}

/// Homogeneous tangent line `l = T p` at a point of the conic.
pub fn tangent_line(conic: &Conic, p: NormalizedPoint) -> Result<Vector3<f64>> {
    let t = conic.matrix();
    let x = p.homogeneous();
    let scale = t.norm() * x.norm_squared();
    let residual = if scale > 0.0 { (x.dot(&(t * x))).abs() / scale } else { f64::INFINITY };
    if !(residual <= ON_CONIC_TOLERANCE) {
        return Err(Error::PointNotOnConic { residual });
    }
    Ok(t * x)
}

/// Wraps an axis direction into `[−π/2, π/2)`.
pub fn wrap_half_turn(angle: f64) -> f64 {
    let w = (angle + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    if w >= FRAC_PI_2 {
        w - PI
    } else {
        w
    }
}

/// Smallest difference between two axis directions, modulo π.
pub fn axis_angle_difference(a: f64, b: f64) -> f64 {
    wrap_half_turn(a - b).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference_camera() -> CameraIntrinsics {
        CameraIntrinsics::new(4529.0, 4529.0, 659.0, 619.0).unwrap()
    }

    /// Ray/sphere tangency discriminant, straight from the intersection quadratic.
    fn tangency_discriminant(s: &Sphere, p: NormalizedPoint) -> f64 {
        let c = s.center;
        let lin = p.u * c.x + p.v * c.y + c.z;
        let quad = p.u * p.u + p.v * p.v + 1.0;
        4.0 * lin * lin - 4.0 * quad * (c.norm_squared() - s.radius * s.radius)
    }

    fn random_sphere(rng: &mut ChaCha8Rng) -> Sphere {
        let r = rng.gen_range(0.1..2.0);
        let z = rng.gen_range(2.0 * r..60.0 * r);
        let off = rng.gen_range(0.0..0.7f64).tan() * z;
        let phi = rng.gen_range(0.0..2.0 * PI);
        Sphere::new(Vector3::new(off * phi.cos(), off * phi.sin(), z), r)
    }

    #[test]
    fn normalize_examples() {
        let k = CameraIntrinsics::new(800.0, 700.0, 320.0, 240.0).unwrap();
        assert_eq!(k.normalize(PixelPoint::new(320.0, 240.0)), NormalizedPoint::new(0.0, 0.0));
        assert_eq!(k.normalize(PixelPoint::new(1120.0, 240.0)), NormalizedPoint::new(1.0, 0.0));
        let k = reference_camera();
        assert_eq!(k.normalize(PixelPoint::new(659.0, 619.0)), NormalizedPoint::new(0.0, 0.0));
    }

    #[test]
    fn denormalize_examples() {
        let k = CameraIntrinsics::new(2.0, 4.0, 10.0, 20.0).unwrap();
        assert_eq!(k.denormalize(NormalizedPoint::new(1.0, 1.0)), PixelPoint::new(12.0, 24.0));
        assert_eq!(k.denormalize(NormalizedPoint::new(0.0, 0.0)), PixelPoint::new(10.0, 20.0));
        let k = reference_camera();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let p = NormalizedPoint::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let q = k.normalize(k.denormalize(p));
            assert!((p.u - q.u).abs() < 1e-12 && (p.v - q.v).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_intrinsics_rejected() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::with_pixel_scale(1.0, 1.0, 0.0, 0.0, 0.0, 1.0).is_err());
        assert!(CameraIntrinsics::new(f64::NAN, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn project_on_axis_sphere() {
        let c = project_sphere(&Sphere::new(Vector3::new(0.0, 0.0, 5.0), 1.0)).unwrap();
        let raw = [-24.0, 0.0, -24.0, 0.0, 0.0, 1.0];
        let n = raw.iter().map(|k: &f64| k * k).sum::<f64>().sqrt();
        for (got, want) in c.coefficients().iter().zip(raw) {
            assert_relative_eq!(*got, want / n, epsilon = 1e-15);
        }
        assert_eq!(c.b, 0.0);
        assert_eq!(c.d, 0.0);
        assert_eq!(c.e, 0.0);
        assert_eq!(c.a, c.c);
    }

    #[test]
    fn project_offset_sphere_matches_hand_values() {
        let c = project_sphere(&Sphere::new(Vector3::new(1.0, 0.0, 5.0), 1.0)).unwrap();
        // Hand-evaluated raw coefficients; F = 0 so the sign convention makes A > 0.
        let raw = [-24.0, 0.0, -25.0, 10.0, 0.0, 0.0];
        let n = raw.iter().map(|k: &f64| k * k).sum::<f64>().sqrt();
        for (got, want) in c.coefficients().iter().zip(raw) {
            assert_relative_eq!(*got, -want / n, epsilon = 1e-15);
        }
    }

    #[test]
    fn project_rejects_sphere_at_camera() {
        let s = Sphere::new(Vector3::new(0.0, 0.0, 1.0), 1.0);
        assert!(matches!(project_sphere(&s), Err(Error::DegenerateSphere { .. })));
        let s = Sphere::new(Vector3::new(0.0, 0.0, -5.0), 1.0);
        assert!(project_sphere(&s).is_err());
    }

    #[test]
    fn projected_contour_is_tangent_to_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let s = random_sphere(&mut rng);
            let conic = project_sphere(&s).unwrap();
            assert!(conic.discriminant() < 0.0);
            let g = conic_to_geom(&conic).unwrap();
            let scale = 4.0 * s.center.norm_squared();
            for i in 0..360 {
                let [u, v] = g.point_at(i as f64 * PI / 180.0);
                let p = NormalizedPoint::new(u, v);
                let disc = tangency_discriminant(&s, p) / (scale * (1.0 + u * u + v * v));
                assert!(disc.abs() < 1e-9, "disc {disc}");
            }
        }
    }

    #[test]
    fn geom_of_simple_conics() {
        let unit = Conic::from_coefficients(1.0, 0.0, 1.0, 0.0, 0.0, -1.0);
        let g = conic_to_geom(&unit).unwrap();
        assert_eq!((g.cx, g.cy, g.a, g.b, g.angle), (0.0, 0.0, 1.0, 1.0, 0.0));

        let tall = Conic::from_coefficients(4.0, 0.0, 1.0, 0.0, 0.0, -4.0);
        let g = conic_to_geom(&tall).unwrap();
        assert_relative_eq!(g.a, 2.0, epsilon = 1e-15);
        assert_relative_eq!(g.b, 1.0, epsilon = 1e-15);
        assert_relative_eq!(g.angle.abs(), FRAC_PI_2, epsilon = 1e-15);
        // Sign of the coefficients does not matter.
        let g2 = conic_to_geom(&tall.scaled(-3.0)).unwrap();
        assert_relative_eq!(g2.a, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn non_ellipses_rejected() {
        let hyperbola = Conic::from_coefficients(1.0, 0.0, -1.0, 0.0, 0.0, -1.0);
        assert_eq!(conic_to_geom(&hyperbola), Err(Error::NotAnEllipse));
        let imaginary = Conic::from_coefficients(1.0, 0.0, 1.0, 0.0, 0.0, 1.0);
        assert_eq!(conic_to_geom(&imaginary), Err(Error::NotAnEllipse));
        let point = Conic::from_coefficients(1.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        assert_eq!(conic_to_geom(&point), Err(Error::NotAnEllipse));
    }

    /// Ray-casting oracle: radius of the conic along direction `phi` from `center`.
    fn radius_along(conic: &Conic, cx: f64, cy: f64, phi: f64) -> f64 {
        let (dx, dy) = (phi.cos(), phi.sin());
        let qa = conic.a * dx * dx + conic.b * dx * dy + conic.c * dy * dy;
        let qb = 2.0 * conic.a * cx * dx
            + conic.b * (cx * dy + cy * dx)
            + 2.0 * conic.c * cy * dy
            + conic.d * dx
            + conic.e * dy;
        let qc = conic.eval(cx, cy);
        (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa)
    }

    fn golden_extremum(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, maximize: bool) -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let sgn = if maximize { -1.0 } else { 1.0 };
        for _ in 0..200 {
            let m1 = hi - g * (hi - lo);
            let m2 = lo + g * (hi - lo);
            if sgn * f(m1) < sgn * f(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        f(0.5 * (lo + hi))
    }

    #[test]
    fn decomposition_matches_ray_casting_oracle() {
        let conic = project_sphere(&Sphere::new(Vector3::new(1.0, 0.0, 5.0), 1.0)).unwrap();
        let g = conic_to_geom(&conic).unwrap();
        let k = conic.interior_negative();
        let rad = |phi: f64| radius_along(&k, g.cx, g.cy, phi);
        let n = 3600;
        let step = PI / n as f64;
        let (imax, _) =
            (0..n).map(|i| (i, rad(i as f64 * step))).fold((0, f64::MIN), |acc, x| if x.1 > acc.1 { x } else { acc });
        let (imin, _) =
            (0..n).map(|i| (i, rad(i as f64 * step))).fold((0, f64::MAX), |acc, x| if x.1 < acc.1 { x } else { acc });
        let around = |i: usize| ((i as f64 - 2.0) * step, (i as f64 + 2.0) * step);
        let (lo, hi) = around(imax);
        let a = golden_extremum(rad, lo, hi, true);
        let (lo, hi) = around(imin);
        let b = golden_extremum(rad, lo, hi, false);
        assert_relative_eq!(g.a, a, epsilon = 1e-9);
        assert_relative_eq!(g.b, b, epsilon = 1e-9);
        // Offset along x: the major axis is horizontal.
        assert!(axis_angle_difference(g.angle, 0.0) < 1e-12);
    }

    #[test]
    fn geom_round_trip_examples() {
        let c = geom_to_conic(&EllipseGeom::new(0.0, 0.0, 1.0, 1.0, 0.0));
        let unit = Conic::from_coefficients(1.0, 0.0, 1.0, 0.0, 0.0, -1.0).normalized();
        for (x, y) in c.coefficients().iter().zip(unit.coefficients()) {
            assert_relative_eq!(*x, y, epsilon = 1e-15);
        }
        let e = EllipseGeom::new(3.0, -2.0, 2.0, 1.0, PI / 6.0);
        let back = conic_to_geom(&geom_to_conic(&e)).unwrap();
        assert_relative_eq!(back.cx, 3.0, epsilon = 1e-12);
        assert_relative_eq!(back.cy, -2.0, epsilon = 1e-12);
        assert_relative_eq!(back.a, 2.0, epsilon = 1e-12);
        assert_relative_eq!(back.b, 1.0, epsilon = 1e-12);
        assert!(axis_angle_difference(back.angle, PI / 6.0) < 1e-12);
    }

    #[test]
    fn tangent_line_examples() {
        let unit = Conic::from_coefficients(1.0, 0.0, 1.0, 0.0, 0.0, -1.0);
        let l = tangent_line(&unit, NormalizedPoint::new(1.0, 0.0)).unwrap();
        assert_eq!(l, Vector3::new(1.0, 0.0, -1.0));
        let l = tangent_line(&unit, NormalizedPoint::new(0.0, 1.0)).unwrap();
        assert_eq!(l, Vector3::new(0.0, 1.0, -1.0));
        assert!(matches!(tangent_line(&unit, NormalizedPoint::new(0.5, 0.0)), Err(Error::PointNotOnConic { .. })));
    }

    #[test]
    fn tangent_line_touches_with_double_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let e = EllipseGeom::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.2..0.5),
                rng.gen_range(-PI..PI),
            );
            let conic = geom_to_conic(&e);
            let [u, v] = e.point_at(rng.gen_range(0.0..2.0 * PI));
            let p = NormalizedPoint::new(u, v);
            let l = tangent_line(&conic, p).unwrap();
            let t = conic.matrix();
            assert!(l.dot(&p.homogeneous()).abs() < 1e-12 * t.norm() * p.homogeneous().norm_squared());
            // Restrict the conic to p + s·dir and check the quadratic in s has a double root.
            let dir = Vector3::new(l.y, -l.x, 0.0).normalize();
            let x = p.homogeneous();
            let qa = dir.dot(&(t * dir));
            let qb = 2.0 * dir.dot(&(t * x));
            let qc = x.dot(&(t * x));
            let disc = (qb * qb - 4.0 * qa * qc) / (t.norm() * t.norm());
            assert!(disc.abs() < 1e-9, "disc {disc}");
        }
    }

    #[test]
    fn coordinate_map_round_trip() {
        let map = CoordinateMap::new(4529.0, 4300.0, 659.0, 619.0);
        let c = Conic::from_coefficients(0.3, -0.1, 0.7, 0.2, -0.4, -0.05);
        let back = map.pull_back(&map.push_forward(&c));
        for (x, y) in back.coefficients().iter().zip(c.coefficients()) {
            assert_relative_eq!(*x, y, epsilon = 1e-10);
        }
        let back = map.push_forward(&map.pull_back(&c));
        for (x, y) in back.coefficients().iter().zip(c.coefficients()) {
            assert_relative_eq!(*x, y, epsilon = 1e-10);
        }
    }

    #[test]
    fn coordinate_map_transports_points() {
        let map = CoordinateMap::new(2.5, 0.5, -3.0, 7.0);
        let inner_geom = EllipseGeom::new(0.2, -0.1, 1.3, 0.4, 0.3);
        let inner = geom_to_conic(&inner_geom);
        let outer = map.push_forward(&inner);
        for i in 0..36 {
            let [x, y] = inner_geom.point_at(i as f64 * 0.17);
            let (u, v) = map.apply(x, y);
            assert!(outer.eval(u, v).abs() < 1e-12 * outer.norm() * (1.0 + u * u + v * v));
        }
    }

    #[test]
    fn exact_distance_to_ellipse() {
        let e = EllipseGeom::new(1.0, 2.0, 3.0, 1.0, 0.4);
        for i in 0..50 {
            let [x, y] = e.point_at(i as f64 * 0.13);
            assert!(e.distance(x, y) < 1e-9);
        }
        // Along the major axis, outside.
        let (s, c) = 0.4f64.sin_cos();
        assert_relative_eq!(e.distance(1.0 + 5.0 * c, 2.0 + 5.0 * s), 2.0, epsilon = 1e-9);
        // Centre: nearest point is a minor-axis vertex.
        assert_relative_eq!(e.distance(1.0, 2.0), 1.0, epsilon = 1e-9);
        let circle = EllipseGeom::new(0.0, 0.0, 2.0, 2.0, 0.0);
        assert_relative_eq!(circle.distance(3.0, 4.0), 3.0, epsilon = 1e-9);
    }

    #[test]
    fn wrap_half_turn_range() {
        assert_eq!(wrap_half_turn(FRAC_PI_2), -FRAC_PI_2);
        assert_relative_eq!(wrap_half_turn(PI), 0.0, epsilon = 1e-15);
        assert_relative_eq!(wrap_half_turn(0.75 * PI), -0.25 * PI, epsilon = 1e-15);
    }
}
