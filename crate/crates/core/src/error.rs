use thiserror::Error;

use crate::geometry::Vec2;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A scenario or geometry input violates a stated invariant.
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("point ({}, {}) is outside the domain", .0.x, .0.y)]
    OutsideDomain(Vec2),

    #[error("point ({}, {}) is not on the boundary", .0.x, .0.y)]
    NotOnBoundary(Vec2),

    /// Two distinct nearest boundary points at equal distance.
    #[error("ambiguous projection of ({}, {}): nearest points ({}, {}) and ({}, {})", .point.x, .point.y, .first.x, .first.y, .second.x, .second.y)]
    AmbiguousProjection {
        point: Vec2,
        first: Vec2,
        second: Vec2,
    },

    /// No inward normal passes the empty-disk test.
    #[error("empty normal cone at ({}, {})", .0.x, .0.y)]
    EmptyCone(Vec2),

    #[error("reflection did not terminate after {substeps} substeps at ({}, {})", .at.x, .at.y)]
    StuckInCorner { at: Vec2, substeps: usize },

    #[error("linear solve failed: {0}")]
    SolveFailed(String),

    #[error("transform out of range: {0}")]
    TransformRange(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by bad input rather than numerical trouble.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation(_) | Error::Parse { .. } | Error::Io(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
