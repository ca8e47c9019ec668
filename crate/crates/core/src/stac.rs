//! STAC API search: request construction, pagination over `next` links, and
//! parsing items into band-level asset references.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::geomath::GeoEnvelope;
use crate::http::{HttpClient, HttpError, TransferKind};

/// Catalogue used when no endpoint is configured.
pub const DEFAULT_ENDPOINT: &str = "https://planetarycomputer.microsoft.com/api/stac/v1";
/// Environment variable overriding [`DEFAULT_ENDPOINT`].
pub const ENDPOINT_ENV: &str = "CUBO_STAC_ENDPOINT";

const MAX_PAGES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StacError {
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("malformed STAC document: {field}: {reason}")]
    Parse { field: String, reason: String },
    #[error("band {band:?} not found; available assets: {available:?}")]
    BandNotFound { band: String, available: Vec<String> },
    #[error("invalid query predicate {input:?}: {reason}")]
    Predicate { input: String, reason: String },
    #[error("invalid search: {0}")]
    InvalidQuery(String),
}

fn parse_err(field: impl Into<String>, reason: impl Into<String>) -> StacError {
    StacError::Parse { field: field.into(), reason: reason.into() }
}

pub type Result<T> = std::result::Result<T, StacError>;

/// Comparison operators of the STAC query extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryOp {
    Eq,
    Neq,
    Lt,
    Lte,
    Gt,
    Gte,
}

impl QueryOp {
    pub fn as_str(self) -> &'static str {
        match self {
            QueryOp::Eq => "eq",
            QueryOp::Neq => "neq",
            QueryOp::Lt => "lt",
            QueryOp::Lte => "lte",
            QueryOp::Gt => "gt",
            QueryOp::Gte => "gte",
        }
    }

    fn holds(self, actual: &Value, expected: &Value) -> bool {
        let ord = match (actual.as_f64(), expected.as_f64()) {
            (Some(a), Some(b)) => a.partial_cmp(&b),
            _ => None,
        };
        let equal = actual == expected || ord == Some(std::cmp::Ordering::Equal);
        match self {
            QueryOp::Eq => equal,
            QueryOp::Neq => !equal,
            QueryOp::Lt => ord.is_some_and(|o| o.is_lt()),
            QueryOp::Lte => ord.is_some_and(|o| o.is_le()),
            QueryOp::Gt => ord.is_some_and(|o| o.is_gt()),
            QueryOp::Gte => ord.is_some_and(|o| o.is_ge()),
        }
    }
}

impl FromStr for QueryOp {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "eq" => QueryOp::Eq,
            "neq" => QueryOp::Neq,
            "lt" => QueryOp::Lt,
            "lte" => QueryOp::Lte,
            "gt" => QueryOp::Gt,
            "gte" => QueryOp::Gte,
            other => return Err(format!("unknown operator {other:?}")),
        })
    }
}

/// One `property op value` predicate.
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub property: String,
    pub op: QueryOp,
    pub value: Value,
}

impl FromStr for Predicate {
    type Err = StacError;

    /// Parse `property:op:value`. Property names may themselves contain
    /// colons (`eo:cloud_cover:lt:10`), so the string is split from the right.
    fn from_str(s: &str) -> Result<Self> {
        let err = |reason: &str| StacError::Predicate { input: s.to_string(), reason: reason.to_string() };
        let mut parts = s.rsplitn(3, ':');
        let raw_value = parts.next().ok_or_else(|| err("missing value"))?;
        let op = parts.next().ok_or_else(|| err("expected property:op:value"))?;
        let property = parts.next().ok_or_else(|| err("expected property:op:value"))?;
        if property.is_empty() {
            return Err(err("empty property name"));
        }
        if raw_value.is_empty() {
            return Err(err("empty value"));
        }
        let op = op.parse::<QueryOp>().map_err(|e| err(&e))?;
        let value = match serde_json::from_str::<Value>(raw_value) {
            Ok(v @ (Value::Number(_) | Value::Bool(_) | Value::String(_))) => v,
            _ => Value::String(raw_value.to_string()),
        };
        Ok(Predicate { property: property.to_string(), op, value })
    }
}

/// `property → {op: value}` map as sent in the search body's `query` field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueryFilter(pub BTreeMap<String, BTreeMap<QueryOp, Value>>);

impl QueryFilter {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn insert(&mut self, p: Predicate) {
        self.0.entry(p.property).or_default().insert(p.op, p.value);
    }

    pub fn from_predicates<I: IntoIterator<Item = Predicate>>(preds: I) -> Self {
        let mut q = QueryFilter::default();
        for p in preds {
            q.insert(p);
        }
        q
    }

    /// Whether item properties satisfy every predicate. A missing property
    /// fails all operators.
    pub fn matches(&self, properties: &Map<String, Value>) -> bool {
        self.0.iter().all(|(key, ops)| match properties.get(key) {
            Some(actual) => ops.iter().all(|(op, expected)| op.holds(actual, expected)),
            None => false,
        })
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).unwrap_or(Value::Null)
    }
}

fn rfc3339(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchQuery {
    pub collections: Vec<String>,
    pub bbox: GeoEnvelope,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub query: QueryFilter,
    /// Page size, 1–1000.
    pub limit: u32,
}

impl SearchQuery {
    pub fn validate(&self) -> Result<()> {
        if self.start > self.end {
            return Err(StacError::InvalidQuery(format!("datetime start {} after end {}", self.start, self.end)));
        }
        let b = &self.bbox;
        if !(b.lon_min < b.lon_max && b.lat_min < b.lat_max) || b.as_array().iter().any(|v| !v.is_finite()) {
            return Err(StacError::InvalidQuery(format!("bbox {:?} is not ordered", b.as_array())));
        }
        if !(1..=1000).contains(&self.limit) {
            return Err(StacError::InvalidQuery(format!("limit {} outside 1..=1000", self.limit)));
        }
        if self.collections.is_empty() {
            return Err(StacError::InvalidQuery("no collection given".into()));
        }
        Ok(())
    }

    pub fn datetime_interval(&self) -> String {
        format!("{}/{}", rfc3339(&self.start), rfc3339(&self.end))
    }

    /// POST `/search` body.
    pub fn to_body(&self) -> Value {
        let mut body = Map::new();
        body.insert("collections".into(), Value::from(self.collections.clone()));
        body.insert("bbox".into(), Value::from(self.bbox.as_array().to_vec()));
        body.insert("datetime".into(), Value::from(self.datetime_interval()));
        if !self.query.is_empty() {
            body.insert("query".into(), self.query.to_json());
        }
        body.insert("limit".into(), Value::from(self.limit));
        Value::Object(body)
    }

    /// GET `/search` query parameters.
    pub fn to_query_string(&self) -> String {
        let b = self.bbox.as_array();
        let mut s = url::form_urlencoded::Serializer::new(String::new());
        s.append_pair("collections", &self.collections.join(","));
        s.append_pair("bbox", &format!("{},{},{},{}", b[0], b[1], b[2], b[3]));
        s.append_pair("datetime", &self.datetime_interval());
        if !self.query.is_empty() {
            s.append_pair("query", &self.query.to_json().to_string());
        }
        s.append_pair("limit", &self.limit.to_string());
        s.finish()
    }

    fn admits(&self, item: &StacItem) -> bool {
        item.datetime >= self.start
            && item.datetime <= self.end
            && item.geometry_bbox.intersects(&self.bbox)
            && self.query.matches(&item.properties)
            && item.collection.as_ref().is_none_or(|c| self.collections.contains(c))
    }
}

/// One band-level remote file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetRef {
    pub href: String,
    pub band: String,
    pub media_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StacItem {
    pub id: String,
    pub datetime: DateTime<Utc>,
    pub geometry_bbox: GeoEnvelope,
    pub properties: Map<String, Value>,
    pub assets: BTreeMap<String, AssetRef>,
    pub collection: Option<String>,
    pub item_epsg: Option<u32>,
}

fn parse_datetime(field: &str, v: &Value) -> Result<DateTime<Utc>> {
    let s = v.as_str().ok_or_else(|| parse_err(field, "expected an RFC 3339 string"))?;
    DateTime::parse_from_rfc3339(s).map(|d| d.with_timezone(&Utc)).map_err(|e| parse_err(field, e.to_string()))
}

fn collect_positions(v: &Value, out: &mut Vec<(f64, f64)>, depth: usize) {
    if depth > 8 {
        return;
    }
    if let Some(arr) = v.as_array() {
        if arr.len() >= 2 && arr[0].is_number() && arr[1].is_number() {
            if let (Some(x), Some(y)) = (arr[0].as_f64(), arr[1].as_f64()) {
                out.push((x, y));
            }
        } else {
            for a in arr {
                collect_positions(a, out, depth + 1);
            }
        }
    }
}

fn parse_bbox(raw: &Map<String, Value>) -> Result<GeoEnvelope> {
    if let Some(b) = raw.get("bbox") {
        let vals: Vec<f64> = b
            .as_array()
            .ok_or_else(|| parse_err("bbox", "expected an array"))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| parse_err("bbox", "expected numbers")))
            .collect::<Result<_>>()?;
        let env = match vals.len() {
            4 => GeoEnvelope { lon_min: vals[0], lat_min: vals[1], lon_max: vals[2], lat_max: vals[3] },
            6 => GeoEnvelope { lon_min: vals[0], lat_min: vals[1], lon_max: vals[3], lat_max: vals[4] },
            n => return Err(parse_err("bbox", format!("expected 4 or 6 numbers, got {n}"))),
        };
        if env.as_array().iter().any(|v| !v.is_finite()) {
            return Err(parse_err("bbox", "non-finite value"));
        }
        return Ok(env);
    }
    let mut pts = Vec::new();
    if let Some(c) = raw.get("geometry").and_then(|g| g.get("coordinates")) {
        collect_positions(c, &mut pts, 0);
    }
    if pts.is_empty() {
        return Err(parse_err("bbox", "missing bbox and geometry"));
    }
    let mut env = GeoEnvelope {
        lon_min: f64::INFINITY,
        lat_min: f64::INFINITY,
        lon_max: f64::NEG_INFINITY,
        lat_max: f64::NEG_INFINITY,
    };
    for (x, y) in pts {
        env.lon_min = env.lon_min.min(x);
        env.lon_max = env.lon_max.max(x);
        env.lat_min = env.lat_min.min(y);
        env.lat_max = env.lat_max.max(y);
    }
    Ok(env)
}

fn parse_epsg(props: &Map<String, Value>) -> Option<u32> {
    if let Some(code) = props.get("proj:epsg").and_then(Value::as_u64) {
        return u32::try_from(code).ok();
    }
    props.get("proj:code").and_then(Value::as_str).and_then(|s| s.strip_prefix("EPSG:")).and_then(|s| s.parse().ok())
}

fn self_link(raw: &Map<String, Value>) -> Option<url::Url> {
    raw.get("links")?
        .as_array()?
        .iter()
        .find(|l| l.get("rel").and_then(Value::as_str) == Some("self"))
        .and_then(|l| l.get("href")?.as_str())
        .and_then(|h| url::Url::parse(h).ok())
}

/// Parse one STAC Item (1.x).
///
/// Assets whose href is not http(s) (after resolving relative hrefs against
/// the item's self link) are skipped; an item with no usable asset is an
/// error.
pub fn parse_item(raw: &Value) -> Result<StacItem> {
    let obj = raw.as_object().ok_or_else(|| parse_err("item", "expected a JSON object"))?;
    let id =
        obj.get("id").and_then(Value::as_str).ok_or_else(|| parse_err("id", "missing or not a string"))?.to_string();
    let properties = obj
        .get("properties")
        .and_then(Value::as_object)
        .cloned()
        .ok_or_else(|| parse_err("properties", "missing or not an object"))?;
    let datetime = match properties.get("datetime") {
        Some(Value::Null) | None => match properties.get("start_datetime") {
            Some(v) => parse_datetime("properties.start_datetime", v)?,
            None => return Err(parse_err("properties.datetime", "missing")),
        },
        Some(v) => parse_datetime("properties.datetime", v)?,
    };
    let geometry_bbox = parse_bbox(obj)?;
    let base = self_link(obj);
    let raw_assets =
        obj.get("assets").and_then(Value::as_object).ok_or_else(|| parse_err("assets", "missing or not an object"))?;
    let mut assets = BTreeMap::new();
    for (key, a) in raw_assets {
        let Some(href) = a.get("href").and_then(Value::as_str) else {
            return Err(parse_err(format!("assets.{key}.href"), "missing or not a string"));
        };
        let resolved = match url::Url::parse(href) {
            Ok(u) => Some(u),
            Err(url::ParseError::RelativeUrlWithoutBase) => base.as_ref().and_then(|b| b.join(href).ok()),
            Err(_) => None,
        };
        match resolved {
            Some(u) if matches!(u.scheme(), "http" | "https") => {
                let media_type = a.get("type").and_then(Value::as_str).map(String::from);
                assets.insert(key.clone(), AssetRef { href: u.to_string(), band: key.clone(), media_type });
            }
            _ => log::debug!("item {id}: skipping asset {key} with non-http href {href:?}"),
        }
    }
    if assets.is_empty() {
        return Err(parse_err("assets", "no asset with an http(s) href"));
    }
    let collection = obj.get("collection").and_then(Value::as_str).map(String::from);
    let item_epsg = parse_epsg(&properties);
    Ok(StacItem { id, datetime, geometry_bbox, properties, assets, collection, item_epsg })
}

/// `rel=next` link of a search page.
#[derive(Debug, Clone, PartialEq)]
pub struct NextLink {
    pub href: String,
    pub method: String,
    pub body: Option<Value>,
    pub merge: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchPage {
    pub items: Vec<StacItem>,
    pub next: Option<NextLink>,
}

/// Parse a search response `FeatureCollection`.
pub fn parse_search_page(bytes: &[u8]) -> Result<SearchPage> {
    let doc: Value = serde_json::from_slice(bytes).map_err(|e| parse_err("response", e.to_string()))?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err("features", "missing or not an array"))?;
    let items = features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            parse_item(f).map_err(|e| match e {
                StacError::Parse { field, reason } => parse_err(format!("features[{i}].{field}"), reason),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let next = doc
        .get("links")
        .and_then(Value::as_array)
        .and_then(|links| links.iter().find(|l| l.get("rel").and_then(Value::as_str) == Some("next")))
        .map(|l| -> Result<NextLink> {
            Ok(NextLink {
                href: l
                    .get("href")
                    .and_then(Value::as_str)
                    .ok_or_else(|| parse_err("links.next.href", "missing"))?
                    .to_string(),
                method: l.get("method").and_then(Value::as_str).unwrap_or("GET").to_ascii_uppercase(),
                body: l.get("body").cloned(),
                merge: l.get("merge").and_then(Value::as_bool).unwrap_or(false),
            })
        })
        .transpose()?;
    Ok(SearchPage { items, next })
}

/// Assets for `bands`, in request order.
pub fn select_assets(item: &StacItem, bands: &[String]) -> Result<Vec<AssetRef>> {
    bands
        .iter()
        .map(|b| {
            item.assets.get(b).cloned().ok_or_else(|| StacError::BandNotFound {
                band: b.clone(),
                available: item.assets.keys().cloned().collect(),
            })
        })
        .collect()
}

/// Client for one STAC API endpoint.
#[derive(Clone)]
pub struct StacClient {
    http: Arc<HttpClient>,
    endpoint: String,
}

impl fmt::Debug for StacClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StacClient").field("endpoint", &self.endpoint).finish()
    }
}

impl StacClient {
    pub fn new(endpoint: &str, http: Arc<HttpClient>) -> Self {
        StacClient { http, endpoint: endpoint.trim_end_matches('/').to_string() }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn check(resp: crate::http::HttpResponse, url: &str) -> Result<Vec<u8>> {
        if resp.status >= 400 {
            return Err(HttpError::Status { url: url.to_string(), status: resp.status, excerpt: resp.excerpt() }.into());
        }
        Ok(resp.body)
    }

    /// Every item intersecting the query, across all pages, sorted by
    /// datetime then id.
    ///
    /// Uses POST `/search`, falling back to GET when the server answers 405.
    /// Results are re-checked against the query locally.
    pub fn search_items(&self, q: &SearchQuery) -> Result<Vec<StacItem>> {
        q.validate()?;
        let url = format!("{}/search", self.endpoint);
        let body = q.to_body();
        let first = self.http.post_json(TransferKind::Search, &url, &body)?;
        let mut use_get = false;
        let mut bytes = if first.status == 405 {
            use_get = true;
            let get_url = format!("{url}?{}", q.to_query_string());
            Self::check(self.http.get(TransferKind::Search, &get_url)?, &get_url)?
        } else {
            Self::check(first, &url)?
        };

        let mut items = Vec::new();
        let mut seen_links = Vec::new();
        for _ in 0..MAX_PAGES {
            let page = parse_search_page(&bytes)?;
            items.extend(page.items);
            let Some(next) = page.next else { break };
            let key = (next.href.clone(), next.body.as_ref().map(Value::to_string));
            if seen_links.contains(&key) {
                log::warn!("search pagination repeated a next link; stopping");
                break;
            }
            seen_links.push(key);
            bytes = if next.method == "POST" && !use_get {
                let payload = match (&next.body, next.merge) {
                    (Some(Value::Object(extra)), true) => {
                        let mut merged = body.as_object().cloned().unwrap_or_default();
                        merged.extend(extra.clone());
                        Value::Object(merged)
                    }
                    (Some(b), false) => b.clone(),
                    _ => body.clone(),
                };
                let resp = self.http.post_json(TransferKind::Search, &next.href, &payload)?;
                Self::check(resp, &next.href)?
            } else {
                Self::check(self.http.get(TransferKind::Search, &next.href)?, &next.href)?
            };
        }

        let before = items.len();
        items.retain(|it| q.admits(it));
        if items.len() != before {
            log::debug!("dropped {} items outside the query", before - items.len());
        }
        items.sort_by(|a, b| a.datetime.cmp(&b.datetime).then_with(|| a.id.cmp(&b.id)));
        items.dedup_by(|a, b| a.id == b.id && a.datetime == b.datetime);
        Ok(items)
    }
}
