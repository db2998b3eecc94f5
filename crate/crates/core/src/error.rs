use thiserror::Error;

/// Errors produced anywhere in the detection and localization pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("sphere is not strictly in front of the camera (z0 = {z0}, r = {radius})")]
    DegenerateSphere { z0: f64, radius: f64 },
    #[error("conic is not a real non-degenerate ellipse")]
    NotAnEllipse,
    #[error("point is not on the conic (relative residual {residual:e})")]
    PointNotOnConic { residual: f64 },

    #[error("sphere distance {distance} does not exceed its radius {radius}")]
    SphereTooClose { distance: f64, radius: f64 },
    #[error("cone axis angle {alpha} does not exceed the half-angle {beta}")]
    ConeDegenerate { alpha: f64, beta: f64 },
    #[error("angle to the major axis is undefined at the principal point")]
    UndefinedAtPrincipalPoint,

    #[error("image must be at least 3x3 pixels, got {width}x{height}")]
    ImageTooSmall { width: usize, height: usize },
    #[error("image parse error: {0}")]
    Parse(String),
    #[error("no strong edge points in image")]
    NoEdges,

    #[error("points are collinear")]
    Collinear,
    #[error("too few points: need {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("no circle found (best support {best}, required {required})")]
    NoCircleFound { best: usize, required: usize },

    #[error("only {got} radial rays produced edge points")]
    TooFewProfilePoints { got: usize },
    #[error("degenerate input for ellipse fitting")]
    DegenerateInput,
    #[error("no real ellipse solves the constrained fit")]
    NoEllipseSolution,
    #[error("ellipse RANSAC consensus too small ({support})")]
    NoConsensus { support: usize },

    #[error("tangent plane system is rank deficient (condition {condition:e})")]
    RankDeficient { condition: f64 },
    #[error("optimization left the half-space in front of the camera")]
    DivergedBehindCamera,

    #[error("sphere silhouette does not fall inside the image")]
    SilhouetteOutsideImage,
}

pub type Result<T> = std::result::Result<T, Error>;
