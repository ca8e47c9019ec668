use std::path::PathBuf;

use crate::cog::CogError;
use crate::geomath::GeoError;
use crate::http::HttpError;
use crate::stac::StacError;

/// Any failure of the cube pipeline. Messages are prefixed with the module
/// that raised them.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("request: {0}")]
    Validation(String),
    #[error("geomath: {0}")]
    Geo(#[from] GeoError),
    #[error("stac_client: {0}")]
    Stac(#[from] StacError),
    #[error("cog_reader: {0}")]
    Cog(#[from] CogError),
    #[error("cube_assembler: search returned no items for {query}")]
    EmptySearch { query: String },
    #[error("cube_assembler: band {band:?} is missing from every item")]
    BandMissing { band: String },
    #[error("cube_assembler: chunk (time {time}, band {band:?}): {source}")]
    Chunk {
        time: usize,
        band: String,
        #[source]
        source: Box<Error>,
    },
    #[error("io: output {0} already exists (use --overwrite)")]
    OutputExists(PathBuf),
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("io: {0}")]
    Format(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Geo(_) | Error::BandMissing { .. } => 2,
            Error::Stac(StacError::Http(_)) => 5,
            Error::Stac(StacError::Parse { .. }) => 6,
            Error::Stac(_) => 2,
            Error::Cog(CogError::Transport(_)) => 5,
            Error::Cog(CogError::Geo(_)) => 2,
            Error::Cog(_) => 6,
            Error::EmptySearch { .. } => 3,
            Error::Chunk { source, .. } => source.exit_code(),
            Error::OutputExists(_) => 4,
            Error::Io { .. } => 1,
            Error::Format(_) => 6,
        }
    }
}

impl From<HttpError> for Error {
    fn from(e: HttpError) -> Self {
        Error::Stac(StacError::Http(e))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
