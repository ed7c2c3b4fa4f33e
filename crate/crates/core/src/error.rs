use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    // geometry
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("pixel ({u}, {v}) is outside the image")]
    OutOfImage { u: f64, v: f64 },
    #[error("direction vector has zero length")]
    ZeroDirection,
    #[error("invalid range: near {near} must satisfy 0 < near < far {far}")]
    BadRange { near: f64, far: f64 },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("matrix is not a proper rotation")]
    NotARotation,

    // pose estimation
    #[error("need at least {needed} correspondences, got {got}")]
    InsufficientCorrespondences { needed: usize, got: usize },
    #[error("degenerate point configuration")]
    DegenerateConfiguration,
    #[error("all points fell behind the camera during refinement")]
    DivergedBehindCamera,
    #[error("no consensus: best hypothesis has {inliers} inliers, need {needed}")]
    NoConsensus { inliers: usize, needed: usize },
    #[error("no correspondence lies in front of the camera")]
    AllBehindCamera,
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),

    // features
    #[error("train descriptor set is empty")]
    EmptyTrainSet,
    #[error("need at least {needed} descriptors to build the vocabulary, got {got}")]
    TooFewDescriptors { needed: usize, got: usize },
    #[error("image database is empty")]
    EmptyDatabase,
    #[error("vocabulary tree is not trained")]
    UntrainedTree,
    #[error("descriptor dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("descriptor must be finite with nonzero norm")]
    InvalidDescriptor,

    // world model
    #[error("need at least {needed} keypoints with depth, got {got}")]
    TooFewKeypoints { needed: usize, got: usize },
    #[error("too few descriptor matches: {got} (need {needed})")]
    TooFewMatches { got: usize, needed: usize },
    #[error("depth sample endpoint lies outside the grid")]
    EndpointOutsideGrid,
    #[error("invalid grid geometry: {0}")]
    InvalidGrid(&'static str),

    // gaze recovery
    #[error("session contains no gaze samples")]
    EmptySession,

    // semantic rois
    #[error("need at least 4 point pairs, got {0}")]
    InsufficientPairs(usize),

    // simulation / evaluation
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("gaze target at t={t_ms} ms is not visible")]
    TargetNotVisible { t_ms: i64 },
    #[error("length mismatch: {left} recovered vs {right} ground-truth samples")]
    LengthMismatch { left: usize, right: usize },
}
