//! End-to-end wiring: request → search → plan → lazy cube.

use std::sync::Arc;

use crate::cog::{CogReader, ReaderOptions};
use crate::cube::{assemble, plan_cube, ChunkSpec, CubeGeometry, CubePlan, DataCube};
use crate::error::{Error, Result};
use crate::http::HttpClient;
use crate::request::CubeRequest;
use crate::stac::{SearchQuery, StacClient, StacItem};

/// Default search page size.
pub const DEFAULT_PAGE_LIMIT: u32 = 100;

pub struct Pipeline {
    http: Arc<HttpClient>,
    reader: Arc<CogReader>,
    page_limit: u32,
}

/// Search results for a request.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub geometry: CubeGeometry,
    pub query: SearchQuery,
    pub items: Vec<StacItem>,
}

impl Pipeline {
    pub fn new(http: Arc<HttpClient>) -> Self {
        Self::with_options(http, ReaderOptions::default(), DEFAULT_PAGE_LIMIT)
    }

    pub fn with_options(http: Arc<HttpClient>, reader: ReaderOptions, page_limit: u32) -> Self {
        let reader = Arc::new(CogReader::new(Arc::clone(&http), reader));
        Pipeline { http, reader, page_limit }
    }

    pub fn http(&self) -> &Arc<HttpClient> {
        &self.http
    }

    pub fn reader(&self) -> &Arc<CogReader> {
        &self.reader
    }

    pub fn search(&self, req: &CubeRequest) -> Result<SearchOutcome> {
        let geometry = CubeGeometry::new(req)?;
        let query = geometry.search_query(req, self.page_limit);
        let client = StacClient::new(&req.stac_endpoint, Arc::clone(&self.http));
        let items = client.search_items(&query)?;
        Ok(SearchOutcome { geometry, query, items })
    }

    /// Search and lay out the cube. No raster bytes are read.
    pub fn plan(&self, req: &CubeRequest, chunks: Option<ChunkSpec>) -> Result<(CubePlan, SearchOutcome)> {
        let found = self.search(req)?;
        if found.items.is_empty() {
            return Err(Error::EmptySearch { query: found.query.to_body().to_string() });
        }
        Ok((plan_cube(req, &found.items, chunks)?, found))
    }

    /// Plan and open every asset header; chunks are read on demand.
    pub fn open(&self, req: &CubeRequest, chunks: Option<ChunkSpec>) -> Result<(DataCube, SearchOutcome)> {
        let (plan, found) = self.plan(req, chunks)?;
        Ok((assemble(plan, Arc::clone(&self.reader))?, found))
    }
}
