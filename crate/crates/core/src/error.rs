use std::path::PathBuf;

/// Errors raised anywhere in the calibration pipeline.
///
/// [`Error::kind`] yields a stable snake_case tag used by the CLI for
/// machine-parseable failure lines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("behind camera: z = {0}")]
    BehindCamera(f64),
    #[error("no frames")]
    NoFrames,
    #[error("no candidates")]
    NoCandidates,
    #[error("degenerate cloud: {0}")]
    DegenerateCloud(String),
    #[error("refinement collapsed: {0} survivors (sigma0 too small or cloud not planar)")]
    RefinementCollapsed(usize),
    #[error("no reflectance contrast")]
    NoReflectanceContrast,
    #[error("alignment failed")]
    AlignmentFailed,
    #[error("board not found: {0}")]
    BoardNotFound(String),
    #[error("dimension mismatch: expected {expected} corners, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("no consensus")]
    NoConsensus,
    #[error("over-pruned: raise delta_reproj or add placements ({0} survivors)")]
    OverPruned(usize),
    #[error("insufficient placements: {0} usable")]
    InsufficientPlacements(usize),
    #[error("no placements")]
    NoPlacements,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InsufficientPoints { .. } => "insufficient_points",
            Error::BehindCamera(_) => "behind_camera",
            Error::NoFrames => "no_frames",
            Error::NoCandidates => "no_candidates",
            Error::DegenerateCloud(_) => "degenerate_cloud",
            Error::RefinementCollapsed(_) => "refinement_collapsed",
            Error::NoReflectanceContrast => "no_reflectance_contrast",
            Error::AlignmentFailed => "alignment_failed",
            Error::BoardNotFound(_) => "board_not_found",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::DegenerateConfiguration(_) => "degenerate_configuration",
            Error::NoConsensus => "no_consensus",
            Error::OverPruned(_) => "over_pruned",
            Error::InsufficientPlacements(_) => "insufficient_placements",
            Error::NoPlacements => "no_placements",
            Error::InvalidInput(_) => "invalid_input",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
