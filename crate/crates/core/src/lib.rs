//! Build square, analysis-ready Earth observation data cubes from a STAC
//! catalogue of Cloud Optimized GeoTIFFs.
//!
//! The pipeline projects the requested centre to its UTM zone, snaps it to
//! the pixel grid, derives a square bounding box, searches the catalogue
//! with the box's geographic envelope, and assembles a lazily read
//! `time × band × y × x` cube from byte ranges of the matching assets.

pub mod cog;
pub mod cube;
pub mod error;
pub mod geomath;
pub mod http;
pub mod io;
pub mod pipeline;
pub mod request;
pub mod stac;

pub use cube::{assemble, plan_cube, ChunkSpec, CubePlan, DataCube};
pub use error::{Error, Result};
pub use pipeline::Pipeline;
pub use request::CubeRequest;
