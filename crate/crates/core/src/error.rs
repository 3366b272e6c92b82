use std::io;
use std::path::PathBuf;

/// Errors raised anywhere in the calibration and reconstruction pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate quadruple: coincident positions give a zero cross-ratio denominator")]
    DegenerateQuadruple,
    #[error("point projects to infinity (homogeneous depth {depth:e})")]
    PointAtInfinity { depth: f64 },
    #[error("singular camera (left block condition number {condition:e})")]
    SingularCamera { condition: f64 },
    #[error("at least {required} correspondences required, got {got}")]
    InsufficientPoints { required: usize, got: usize },
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("phantom design infeasible: {0}")]
    InfeasibleDesign(String),
    #[error("no beads found above threshold")]
    NoBeadsFound,
    #[error("bead grouping failed: {0}")]
    GroupingFailed(String),
    #[error("too few matched elements: {got} (need {required})")]
    TooFewElements { required: usize, got: usize },
    #[error("calibration failed: {0}")]
    CalibrationFailed(String),
    #[error("no view could be calibrated")]
    AllViewsFailed,
    #[error("intrinsic pooling failed: {0}")]
    PoolingFailed(String),
    #[error("flat field invalid at pixel ({x}, {y}): flat does not exceed dark")]
    FlatFieldInvalid { x: usize, y: usize },
    #[error("defect cluster too large: {extent} px exceeds {limit} px")]
    DefectClusterTooLarge { extent: usize, limit: usize },
    #[error("block {index:?} outside grid with {blocks:?} blocks")]
    BlockOutOfRange { index: [usize; 3], blocks: [usize; 3] },
    #[error("sink failed at block {block}: {source}")]
    SinkFailure {
        block: usize,
        #[source]
        source: io::Error,
    },
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
