//! The user-facing cube request and timestamp parsing.

use chrono::{DateTime, NaiveDate, NaiveTime, Utc};

use crate::error::{Error, Result};
use crate::geomath::GeoCoordinate;
use crate::stac::QueryFilter;

pub const DEFAULT_EDGE_SIZE: u32 = 128;
pub const DEFAULT_RESOLUTION: f64 = 10.0;

/// Parameters of one cube: centre, edge size in pixels, resolution in
/// metres, time interval, and catalogue selection.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeRequest {
    pub center: GeoCoordinate,
    pub edge_size: u32,
    pub resolution: f64,
    pub time_start: DateTime<Utc>,
    pub time_end: DateTime<Utc>,
    pub collection: String,
    pub bands: Vec<String>,
    pub stac_endpoint: String,
    pub query: QueryFilter,
}

impl CubeRequest {
    pub fn validate(&self) -> Result<()> {
        GeoCoordinate::new(self.center.lat, self.center.lon)?;
        if self.edge_size == 0 {
            return Err(Error::Validation("edge size must be at least 1 pixel".into()));
        }
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(Error::Validation(format!("resolution must be positive, got {}", self.resolution)));
        }
        if self.time_start > self.time_end {
            return Err(Error::Validation(format!(
                "start {} is after end {}",
                self.time_start.to_rfc3339(),
                self.time_end.to_rfc3339()
            )));
        }
        if self.collection.trim().is_empty() {
            return Err(Error::Validation("collection is empty".into()));
        }
        if self.bands.is_empty() || self.bands.iter().any(|b| b.trim().is_empty()) {
            return Err(Error::Validation("at least one non-empty band name is required".into()));
        }
        for (i, b) in self.bands.iter().enumerate() {
            if self.bands[..i].contains(b) {
                return Err(Error::Validation(format!("band {b:?} requested twice")));
            }
        }
        match url::Url::parse(&self.stac_endpoint) {
            Ok(u) if matches!(u.scheme(), "http" | "https") => Ok(()),
            _ => Err(Error::Validation(format!("endpoint {:?} is not an http(s) URL", self.stac_endpoint))),
        }
    }
}

/// Which end of an interval a timestamp bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Start,
    End,
}

/// Parse an RFC 3339 timestamp or a plain `YYYY-MM-DD` date. A date starts
/// at midnight UTC; as an end bound it covers the whole day.
pub fn parse_time(s: &str, bound: Bound) -> Result<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        let time = match bound {
            Bound::Start => NaiveTime::MIN,
            Bound::End => NaiveTime::from_hms_milli_opt(23, 59, 59, 999).expect("valid time"),
        };
        return Ok(d.and_time(time).and_utc());
    }
    Err(Error::Validation(format!("{s:?} is neither an RFC 3339 timestamp nor a YYYY-MM-DD date")))
}
