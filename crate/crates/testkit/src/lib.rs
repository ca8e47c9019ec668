//! Deterministic offline test infrastructure for the cube builder.
//!
//! - [`fixture`]: fixture specs and a generator writing tiled GeoTIFFs with
//!   overviews, STAC items and a ground-truth manifest.
//! - [`server`]: a local STAC API + range-capable asset server with a request log.
//! - [`oracle`]: brute-force reference cubes computed from closed-form values.
//!
//! Nothing here depends on the library under test.

pub mod fixture;
pub mod oracle;
pub mod projection;
pub mod search;
pub mod server;
pub mod tiff_writer;

pub use fixture::{generate_fixture, BandSpec, Fixture, FixtureSpec, ItemSpec, Manifest, ValueFn};
pub use oracle::{oracle_cube, OracleCube, OracleRequest};
pub use server::{CatalogServer, RequestRecord, ServerOptions};

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),
    #[error("band {band}: value {value} does not fit the band dtype")]
    ValueOutOfRange { band: String, value: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
