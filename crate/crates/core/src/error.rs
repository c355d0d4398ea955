use thiserror::Error;

/// Errors raised anywhere in the pipeline, from mesh construction to the
/// linear solve.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("mesh structure error: {0}")]
    Structure(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate levelset on element {element}: all vertex values are zero")]
    DegenerateLevelset { element: usize },

    #[error("degenerate levelset: mesh edge ({0}, {1}) lies on the piecewise linear interface")]
    InterfaceOnEdge(usize, usize),

    #[error("numerical degeneracy on element {element}: crossing parameter {t} outside (0,1)")]
    CrossingOutOfRange { element: usize, t: f64 },

    #[error("geometry failure on element {element}: det J = {det:e}")]
    Geometry { element: usize, det: f64 },

    #[error("mesh too coarse for data domain: element {element} intersects omega but is {reason}")]
    MeshTooCoarse { element: usize, reason: &'static str },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("solver error at index {index}: {message}")]
    Solver { index: usize, message: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("level {level}: {source}")]
    AtLevel { level: usize, source: Box<Error> },
}

impl Error {
    /// Short stable identifier of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Structure(_) => "structure",
            Error::Data(_) => "data",
            Error::DegenerateLevelset { .. } => "degenerate_levelset",
            Error::InterfaceOnEdge(..) => "interface_on_edge",
            Error::CrossingOutOfRange { .. } => "crossing_out_of_range",
            Error::Geometry { .. } => "geometry",
            Error::MeshTooCoarse { .. } => "mesh_too_coarse",
            Error::Domain(_) => "domain",
            Error::Dimension(_) => "dimension",
            Error::Solver { .. } => "solver",
            Error::Unsupported(_) => "unsupported",
            Error::Io(_) => "io",
            Error::AtLevel { source, .. } => source.kind(),
        }
    }

    /// One-line `kind=... level=... message="..."` record.
    pub fn machine_line(&self) -> String {
        let level = match self {
            Error::AtLevel { level, .. } => level.to_string(),
            _ => "-".into(),
        };
        format!("kind={} level={level} message={:?}", self.kind(), self.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
