//! Persistence and the command-line surface.

pub mod cli;
pub mod plan;
pub mod quicklook;
pub mod zarr;
