//! Search semantics of the mock catalog.

use chrono::{DateTime, Utc};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchRequest {
    pub collections: Option<Vec<String>>,
    pub bbox: Option<[f64; 4]>,
    pub start: Option<DateTime<Utc>>,
    pub end: Option<DateTime<Utc>>,
    pub query: Map<String, Value>,
    pub limit: usize,
    pub token: usize,
}

fn parse_instant(s: &str) -> Result<Option<DateTime<Utc>>, String> {
    if s.is_empty() || s == ".." {
        return Ok(None);
    }
    DateTime::parse_from_rfc3339(s).map(|d| Some(d.with_timezone(&Utc))).map_err(|e| format!("bad datetime {s:?}: {e}"))
}

type Interval = (Option<DateTime<Utc>>, Option<DateTime<Utc>>);

fn parse_interval(s: &str) -> Result<Interval, String> {
    match s.split_once('/') {
        Some((a, b)) => Ok((parse_instant(a)?, parse_instant(b)?)),
        None => {
            let t = parse_instant(s)?;
            Ok((t, t))
        }
    }
}

impl SearchRequest {
    pub fn from_json(body: &Value) -> Result<Self, String> {
        let obj = body.as_object().ok_or("search body must be an object")?;
        let mut req = SearchRequest { limit: 10, ..Default::default() };
        if let Some(c) = obj.get("collections") {
            let list = c.as_array().ok_or("collections must be an array")?;
            req.collections = Some(list.iter().filter_map(|v| v.as_str().map(String::from)).collect());
        }
        if let Some(b) = obj.get("bbox") {
            let list: Vec<f64> = b
                .as_array()
                .ok_or("bbox must be an array")?
                .iter()
                .map(|v| v.as_f64().ok_or("bbox values must be numbers"))
                .collect::<Result<_, _>>()?;
            if list.len() != 4 {
                return Err("bbox must have four numbers".into());
            }
            req.bbox = Some([list[0], list[1], list[2], list[3]]);
        }
        if let Some(d) = obj.get("datetime") {
            let (s, e) = parse_interval(d.as_str().ok_or("datetime must be a string")?)?;
            req.start = s;
            req.end = e;
        }
        if let Some(q) = obj.get("query") {
            req.query = q.as_object().ok_or("query must be an object")?.clone();
        }
        if let Some(l) = obj.get("limit") {
            req.limit = l.as_u64().ok_or("limit must be an integer")? as usize;
        }
        if let Some(t) = obj.get("token") {
            let t = match t {
                Value::String(s) => s.parse().map_err(|_| "bad token")?,
                Value::Number(n) => n.as_u64().ok_or("bad token")? as usize,
                _ => return Err("bad token".into()),
            };
            req.token = t;
        }
        if !(1..=1000).contains(&req.limit) {
            return Err("limit out of range".into());
        }
        Ok(req)
    }

    pub fn from_query_string(qs: &str) -> Result<Self, String> {
        let mut obj = Map::new();
        for (k, v) in url::form_urlencoded::parse(qs.as_bytes()) {
            let value = match k.as_ref() {
                "collections" => Value::Array(v.split(',').map(|s| Value::String(s.into())).collect()),
                "bbox" => Value::Array(
                    v.split(',')
                        .map(|s| s.trim().parse::<f64>().map(Value::from).map_err(|_| "bad bbox"))
                        .collect::<Result<_, _>>()?,
                ),
                "limit" => Value::from(v.parse::<u64>().map_err(|_| "bad limit")?),
                "query" => serde_json::from_str(&v).map_err(|e| format!("bad query: {e}"))?,
                _ => Value::String(v.into_owned()),
            };
            obj.insert(k.into_owned(), value);
        }
        Self::from_json(&Value::Object(obj))
    }

    pub fn matches(&self, item: &Value) -> bool {
        if let Some(cols) = &self.collections {
            let c = item.get("collection").and_then(Value::as_str).unwrap_or_default();
            if !cols.iter().any(|x| x == c) {
                return false;
            }
        }
        if let Some(b) = &self.bbox {
            let Some(ib) = item_bbox(item) else { return false };
            if ib[0] > b[2] || ib[2] < b[0] || ib[1] > b[3] || ib[3] < b[1] {
                return false;
            }
        }
        let props = item.get("properties").and_then(Value::as_object);
        let dt = props
            .and_then(|p| p.get("datetime"))
            .and_then(Value::as_str)
            .and_then(|s| DateTime::parse_from_rfc3339(s).ok())
            .map(|d| d.with_timezone(&Utc));
        if self.start.is_some() || self.end.is_some() {
            let Some(dt) = dt else { return false };
            if self.start.is_some_and(|s| dt < s) || self.end.is_some_and(|e| dt > e) {
                return false;
            }
        }
        for (key, ops) in &self.query {
            let Some(ops) = ops.as_object() else { return false };
            let actual = props.and_then(|p| p.get(key));
            for (op, expected) in ops {
                if !predicate(op, actual, expected) {
                    return false;
                }
            }
        }
        true
    }
}

fn item_bbox(item: &Value) -> Option<[f64; 4]> {
    let b = item.get("bbox")?.as_array()?;
    if b.len() != 4 {
        return None;
    }
    Some([b[0].as_f64()?, b[1].as_f64()?, b[2].as_f64()?, b[3].as_f64()?])
}

/// STAC query-extension comparison. Unknown operators never match.
pub fn predicate(op: &str, actual: Option<&Value>, expected: &Value) -> bool {
    let Some(actual) = actual else { return false };
    match op {
        "eq" => actual == expected || num_cmp(actual, expected) == Some(std::cmp::Ordering::Equal),
        "neq" => !(actual == expected || num_cmp(actual, expected) == Some(std::cmp::Ordering::Equal)),
        "lt" => num_cmp(actual, expected).is_some_and(|o| o.is_lt()),
        "lte" => num_cmp(actual, expected).is_some_and(|o| o.is_le()),
        "gt" => num_cmp(actual, expected).is_some_and(|o| o.is_gt()),
        "gte" => num_cmp(actual, expected).is_some_and(|o| o.is_ge()),
        _ => false,
    }
}

fn num_cmp(a: &Value, b: &Value) -> Option<std::cmp::Ordering> {
    a.as_f64()?.partial_cmp(&b.as_f64()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn item(cover: f64) -> Value {
        json!({
            "id": "a", "collection": "c", "bbox": [10.0, 50.0, 11.0, 51.0],
            "properties": {"datetime": "2022-08-01T10:00:00Z", "eo:cloud_cover": cover}
        })
    }

    #[test]
    fn closed_interval_and_bbox_touch() {
        let req = SearchRequest::from_json(&json!({
            "bbox": [11.0, 51.0, 12.0, 52.0],
            "datetime": "2022-08-01T10:00:00Z/2022-08-01T10:00:00Z"
        }))
        .unwrap();
        assert!(req.matches(&item(1.0)));
    }

    #[test]
    fn query_filter() {
        let req = SearchRequest::from_json(&json!({"query": {"eo:cloud_cover": {"lt": 10}}})).unwrap();
        assert!(req.matches(&item(5.0)));
        assert!(!req.matches(&item(15.0)));
    }

    #[test]
    fn get_parameters() {
        let req = SearchRequest::from_query_string(
            "collections=c&bbox=1,2,3,4&datetime=2022-01-01T00:00:00Z%2F..&limit=3&token=6",
        )
        .unwrap();
        assert_eq!(req.bbox, Some([1.0, 2.0, 3.0, 4.0]));
        assert_eq!((req.limit, req.token), (3, 6));
        assert!(req.end.is_none());
    }
}
