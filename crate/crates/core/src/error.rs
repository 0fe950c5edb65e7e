use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad classes of failure, used by the service layer to pick a status code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    NotFound,
    Conflict,
    Validation,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("declared {declared} rows but found {actual}")]
    CountMismatch { declared: usize, actual: usize },
    #[error("bad value {token:?} at line {line}, column {column}")]
    BadValue {
        line: usize,
        column: usize,
        token: String,
    },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(String),

    #[error("unknown image {0}")]
    UnknownImage(String),
    #[error("unknown attribute {0}")]
    UnknownAttribute(String),
    #[error("image {0} is marked unusable")]
    ImageUnusable(String),
    #[error("matrix shape mismatch: {0}")]
    MatrixShapeMismatch(String),

    #[error("positive frequency is degenerate (n_p={n_p}, n_n={n_n})")]
    DegenerateFrequency { n_p: u64, n_n: u64 },
    #[error("n_p + n_n = {labels} but 2 * n_total = {expected}")]
    PairCountMismatch { labels: u64, expected: u64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("vector for {0} has zero norm")]
    ZeroNormVector(String),
    #[error("vector for {0} has non-finite entries")]
    NonFiniteVector(String),
    #[error("unknown pair {0}")]
    UnknownPair(u32),
    #[error("pair {pair} already has verdict {existing}, {reviewer} submitted {submitted}")]
    VerdictConflict {
        pair: u32,
        existing: String,
        submitted: String,
        reviewer: String,
    },

    #[error("no images with {attribute}={value}")]
    EmptyPopulation { attribute: String, value: String },
    #[error("{} disagreements have no consensus", .0.len())]
    UnresolvedDisagreements(Vec<String>),
    #[error("session is not closed")]
    SessionNotClosed,
    #[error("session is {actual}, operation requires {required}")]
    InvalidSessionState { actual: String, required: String },
    #[error("image {0} is not part of the sample")]
    NotInSample(String),
    #[error("annotator {annotator} is bound to pass {bound}")]
    AnnotatorBound { annotator: String, bound: String },
    #[error("pass {pass} already labeled {image}")]
    AlreadyLabeled { pass: String, image: String },
    #[error("lease for {0} is not held by this annotator")]
    LeaseNotHeld(String),

    #[error("invalid counts: {successes} successes out of {n}")]
    BadCounts { successes: u64, n: u64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("evaluation set is empty")]
    EmptyEvalSet,

    #[error("{} ids are in both pools", .0.len())]
    PoolOverlap(Vec<String>),
    #[error("seed pool is empty")]
    EmptySeed,
    #[error("seed label for {0} is not binary")]
    NonBinarySeed(String),
    #[error("workflow is not running")]
    NotRunning,
    #[error("no embedding for {0}")]
    MissingEmbedding(String),
    #[error("no bin with {0} votes")]
    UnknownBin(usize),
    #[error("{0} is not a member of the audited bin")]
    SampleNotFromBin(String),
    #[error("audit sample has {got} items, bin requires {need}")]
    InsufficientSample { got: usize, need: usize },
    #[error("bin {0} already has a decision")]
    BinAlreadyDecided(usize),
    #[error("bin {0} does not have enough agreement to be audited")]
    NotEligibleForAudit(usize),
    #[error("bin has {size} members, manual threshold is {threshold}")]
    BinTooLarge { size: usize, threshold: usize },
    #[error("{} bin members have no label", .0.len())]
    IncompleteLabels(Vec<String>),
    #[error("passes incomplete: {a} unlabeled in a, {b} in b")]
    PassesIncomplete { a: usize, b: usize },

    #[error("unknown project {0}")]
    UnknownProject(String),
    #[error("project {0} already exists")]
    ProjectExists(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown workflow {0}")]
    UnknownWorkflow(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code carried in CLI and HTTP error payloads.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "IO_FAILURE",
            Error::Parse { .. } => "PARSE_ERROR",
            Error::CountMismatch { .. } => "COUNT_MISMATCH",
            Error::BadValue { .. } => "BAD_VALUE",
            Error::DuplicateId(_) => "DUPLICATE_ID",
            Error::UnsupportedVersion(_) => "UNSUPPORTED_VERSION",
            Error::UnknownImage(_) => "UNKNOWN_IMAGE",
            Error::UnknownAttribute(_) => "UNKNOWN_ATTRIBUTE",
            Error::ImageUnusable(_) => "IMAGE_UNUSABLE",
            Error::MatrixShapeMismatch(_) => "MATRIX_SHAPE_MISMATCH",
            Error::DegenerateFrequency { .. } => "DEGENERATE_FREQUENCY",
            Error::PairCountMismatch { .. } => "PAIR_COUNT_MISMATCH",
            Error::DimMismatch { .. } => "DIM_MISMATCH",
            Error::ZeroNormVector(_) => "ZERO_NORM_VECTOR",
            Error::NonFiniteVector(_) => "NON_FINITE_VECTOR",
            Error::UnknownPair(_) => "UNKNOWN_PAIR",
            Error::VerdictConflict { .. } => "VERDICT_CONFLICT",
            Error::EmptyPopulation { .. } => "EMPTY_POPULATION",
            Error::UnresolvedDisagreements(_) => "UNRESOLVED_DISAGREEMENTS",
            Error::SessionNotClosed => "SESSION_NOT_CLOSED",
            Error::InvalidSessionState { .. } => "INVALID_SESSION_STATE",
            Error::NotInSample(_) => "NOT_IN_SAMPLE",
            Error::AnnotatorBound { .. } => "ANNOTATOR_BOUND",
            Error::AlreadyLabeled { .. } => "ALREADY_LABELED",
            Error::LeaseNotHeld(_) => "LEASE_NOT_HELD",
            Error::BadCounts { .. } => "BAD_COUNTS",
            Error::InvalidArgument(_) => "INVALID_ARGUMENT",
            Error::EmptyTrainingSet => "EMPTY_TRAINING_SET",
            Error::EmptyEvalSet => "EMPTY_EVAL_SET",
            Error::PoolOverlap(_) => "POOL_OVERLAP",
            Error::EmptySeed => "EMPTY_SEED",
            Error::NonBinarySeed(_) => "NON_BINARY_SEED",
            Error::NotRunning => "NOT_RUNNING",
            Error::MissingEmbedding(_) => "MISSING_EMBEDDING",
            Error::UnknownBin(_) => "UNKNOWN_BIN",
            Error::SampleNotFromBin(_) => "SAMPLE_NOT_FROM_BIN",
            Error::InsufficientSample { .. } => "INSUFFICIENT_SAMPLE",
            Error::BinAlreadyDecided(_) => "BIN_ALREADY_DECIDED",
            Error::NotEligibleForAudit(_) => "NOT_ELIGIBLE_FOR_AUDIT",
            Error::BinTooLarge { .. } => "BIN_TOO_LARGE",
            Error::IncompleteLabels(_) => "INCOMPLETE_LABELS",
            Error::PassesIncomplete { .. } => "PASSES_INCOMPLETE",
            Error::UnknownProject(_) => "UNKNOWN_PROJECT",
            Error::ProjectExists(_) => "PROJECT_EXISTS",
            Error::UnknownSession(_) => "UNKNOWN_SESSION",
            Error::UnknownWorkflow(_) => "UNKNOWN_WORKFLOW",
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::UnknownImage(_)
            | Error::UnknownAttribute(_)
            | Error::UnknownPair(_)
            | Error::UnknownBin(_)
            | Error::UnknownProject(_)
            | Error::UnknownSession(_)
            | Error::UnknownWorkflow(_) => ErrorKind::NotFound,
            Error::ImageUnusable(_)
            | Error::VerdictConflict { .. }
            | Error::UnresolvedDisagreements(_)
            | Error::SessionNotClosed
            | Error::InvalidSessionState { .. }
            | Error::AnnotatorBound { .. }
            | Error::AlreadyLabeled { .. }
            | Error::PassesIncomplete { .. }
            | Error::LeaseNotHeld(_)
            | Error::NotRunning
            | Error::BinAlreadyDecided(_)
            | Error::ProjectExists(_) => ErrorKind::Conflict,
            _ => ErrorKind::Validation,
        }
    }

    /// Ids attached to the error, if any (unresolved images, overlapping ids, ...).
    pub fn ids(&self) -> &[String] {
        match self {
            Error::UnresolvedDisagreements(ids)
            | Error::PoolOverlap(ids)
            | Error::IncompleteLabels(ids) => ids,
            _ => &[],
        }
    }
}
