use thiserror::Error;

/// Errors produced by the localization toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point lies behind the camera (camera-frame z = {0})")]
    PointBehindCamera(f64),
    #[error("viewing ray is parallel to the target plane")]
    RayParallelToPlane,
    #[error("pixel does not see the ground plane (at or above the horizon)")]
    PointNotOnGround,
    #[error("undistortion did not converge (residual {0:e})")]
    NonConvergence(f64),
    #[error("rotation is at gimbal lock (|cos phi| < 1e-9)")]
    GimbalLock,
    #[error("rotation is not orthonormal with det +1")]
    InvalidRotation,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("residual evaluation produced a non-finite value")]
    NonFiniteResidual,
    #[error("damped normal equations are singular")]
    SingularNormalEquations,
    #[error("matrix is rank deficient")]
    RankDeficient,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("insufficient views: {0}")]
    InsufficientViews(String),
    #[error("image of the absolute conic is not positive definite")]
    NonPositiveDefinite,
    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("no initialization: points are neither coplanar nor in general position ({0})")]
    NoInitialization(String),
    #[error("unknown landmark '{0}'")]
    UnknownLandmark(String),
    #[error("invalid field geometry: {0}")]
    InvalidGeometry(String),

    #[error("insufficient samples for class '{class}': need at least {needed}, got {got}")]
    InsufficientSamples {
        class: String,
        needed: usize,
        got: usize,
    },
    #[error("unknown class '{0}'")]
    UnknownClass(String),
    #[error("invalid bounding box: {0}")]
    InvalidBoundingBox(String),
    #[error("bearing is undefined at the origin")]
    UndefinedBearing,

    #[error("empty input")]
    EmptyInput,
    #[error("ground truth sets do not match")]
    MismatchedGroundTruth,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    /// Short snake_case tag used in machine-readable status fields.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::PointBehindCamera(_) => "point_behind_camera",
            Error::RayParallelToPlane => "ray_parallel_to_plane",
            Error::PointNotOnGround => "point_not_on_ground",
            Error::NonConvergence(_) => "non_convergence",
            Error::GimbalLock => "gimbal_lock",
            Error::InvalidRotation => "invalid_rotation",
            Error::InvalidIntrinsics(_) => "invalid_intrinsics",
            Error::NonFiniteResidual => "non_finite_residual",
            Error::SingularNormalEquations => "singular_normal_equations",
            Error::RankDeficient => "rank_deficient",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::DegenerateConfiguration(_) => "degenerate_configuration",
            Error::InsufficientViews(_) => "insufficient_views",
            Error::NonPositiveDefinite => "non_positive_definite",
            Error::InsufficientPoints { .. } => "insufficient_points",
            Error::NoInitialization(_) => "no_initialization",
            Error::UnknownLandmark(_) => "unknown_landmark",
            Error::InvalidGeometry(_) => "invalid_geometry",
            Error::InsufficientSamples { .. } => "insufficient_samples",
            Error::UnknownClass(_) => "unknown_class",
            Error::InvalidBoundingBox(_) => "invalid_bounding_box",
            Error::UndefinedBearing => "undefined_bearing",
            Error::EmptyInput => "empty_input",
            Error::MismatchedGroundTruth => "mismatched_ground_truth",
            Error::ConfigInvalid(_) => "config_invalid",
            Error::InvalidInput(_) => "invalid_input",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
