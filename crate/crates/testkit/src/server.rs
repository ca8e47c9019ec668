//! A small blocking HTTP/1.1 server for fixture trees: STAC `/search` plus
//! range-aware static asset serving. Every request is logged.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use serde_json::{json, Value};

use crate::search::SearchRequest;

#[derive(Debug, Clone)]
pub struct ServerOptions {
    /// Answer POST /search; when false POST gets 405.
    pub allow_post: bool,
    /// Honour `Range`; when false assets are always sent whole with 200.
    pub support_ranges: bool,
    /// Respond 503 to this many requests before behaving normally.
    pub fail_first: usize,
}

impl Default for ServerOptions {
    fn default() -> Self {
        ServerOptions { allow_post: true, support_ranges: true, fail_first: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestRecord {
    pub method: String,
    pub path: String,
    pub query: Option<String>,
    /// Inclusive byte range requested.
    pub range: Option<(u64, u64)>,
    pub status: u16,
    pub body_bytes: u64,
}

struct State {
    root: PathBuf,
    items: Vec<Value>,
    opts: ServerOptions,
    log: Mutex<Vec<RequestRecord>>,
    failures_left: AtomicUsize,
    base_url: String,
}

/// Running server; shuts down on drop.
pub struct CatalogServer {
    addr: SocketAddr,
    state: Arc<State>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

fn load_items(root: &Path, base_url: &str) -> io::Result<Vec<Value>> {
    let mut items = Vec::new();
    let catalog = root.join("catalog");
    if !catalog.exists() {
        return Ok(items);
    }
    let mut collections: Vec<_> = fs::read_dir(&catalog)?.collect::<Result<_, _>>()?;
    collections.sort_by_key(|e| e.path());
    for c in collections {
        let dir = c.path().join("items");
        let mut files: Vec<_> = fs::read_dir(&dir)?.collect::<Result<_, _>>()?;
        files.sort_by_key(|e| e.path());
        for f in files {
            let mut doc: Value = serde_json::from_slice(&fs::read(f.path())?)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            if let Some(assets) = doc.get_mut("assets").and_then(Value::as_object_mut) {
                for a in assets.values_mut() {
                    if let Some(href) = a.get("href").and_then(Value::as_str) {
                        if !href.contains("://") {
                            let abs = format!("{base_url}/{href}");
                            a["href"] = Value::String(abs);
                        }
                    }
                }
            }
            items.push(doc);
        }
    }
    Ok(items)
}

impl CatalogServer {
    /// Serve the fixture tree at `root` on an ephemeral localhost port.
    pub fn start(root: &Path, opts: ServerOptions) -> io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let base_url = format!("http://{addr}");
        let state = Arc::new(State {
            root: root.to_path_buf(),
            items: load_items(root, &base_url)?,
            failures_left: AtomicUsize::new(opts.fail_first),
            opts,
            log: Mutex::new(Vec::new()),
            base_url,
        });
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let state = Arc::clone(&state);
            let stop = Arc::clone(&stop);
            thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = conn else { continue };
                    let state = Arc::clone(&state);
                    thread::spawn(move || {
                        let _ = serve_connection(stream, &state);
                    });
                }
            })
        };
        Ok(CatalogServer { addr, state, stop, handle: Some(handle) })
    }

    pub fn url(&self) -> String {
        self.state.base_url.clone()
    }

    /// STAC API root (the `/search` endpoint lives below it).
    pub fn endpoint(&self) -> String {
        self.url()
    }

    pub fn requests(&self) -> Vec<RequestRecord> {
        self.state.log.lock().unwrap().clone()
    }

    pub fn clear_log(&self) {
        self.state.log.lock().unwrap().clear();
    }

    /// Requests for asset files only.
    pub fn asset_requests(&self) -> Vec<RequestRecord> {
        self.requests().into_iter().filter(|r| r.path.starts_with("/assets/")).collect()
    }

    /// Sum of response body bytes for asset requests.
    pub fn asset_bytes_served(&self) -> u64 {
        self.asset_requests().iter().map(|r| r.body_bytes).sum()
    }

    pub fn items(&self) -> &[Value] {
        &self.state.items
    }
}

impl Drop for CatalogServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

struct Request {
    method: String,
    path: String,
    query: Option<String>,
    headers: HashMap<String, String>,
    body: Vec<u8>,
}

fn read_request(reader: &mut BufReader<TcpStream>) -> io::Result<Option<Request>> {
    let mut line = String::new();
    if reader.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let target = parts.next().unwrap_or_default().to_string();
    let mut headers = HashMap::new();
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h)? == 0 {
            return Ok(None);
        }
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
        }
    }
    let len: usize = headers.get("content-length").and_then(|v| v.parse().ok()).unwrap_or(0);
    let mut body = vec![0; len];
    reader.read_exact(&mut body)?;
    let (path, query) = match target.split_once('?') {
        Some((p, q)) => (p.to_string(), Some(q.to_string())),
        None => (target, None),
    };
    Ok(Some(Request { method, path, query, headers, body }))
}

struct Response {
    status: u16,
    headers: Vec<(String, String)>,
    body: Vec<u8>,
}

impl Response {
    fn json(status: u16, v: &Value) -> Self {
        Response {
            status,
            headers: vec![("Content-Type".into(), "application/json".into())],
            body: serde_json::to_vec(v).unwrap_or_default(),
        }
    }
    fn text(status: u16, msg: &str) -> Self {
        Response { status, headers: vec![("Content-Type".into(), "text/plain".into())], body: msg.as_bytes().to_vec() }
    }
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        206 => "Partial Content",
        400 => "Bad Request",
        404 => "Not Found",
        405 => "Method Not Allowed",
        416 => "Range Not Satisfiable",
        503 => "Service Unavailable",
        _ => "Unknown",
    }
}

fn serve_connection(stream: TcpStream, state: &State) -> io::Result<()> {
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    while let Some(req) = read_request(&mut reader)? {
        let (resp, range) = route(&req, state);
        state.log.lock().unwrap().push(RequestRecord {
            method: req.method.clone(),
            path: req.path.clone(),
            query: req.query.clone(),
            range,
            status: resp.status,
            body_bytes: resp.body.len() as u64,
        });
        let mut head = format!("HTTP/1.1 {} {}\r\n", resp.status, reason(resp.status));
        for (k, v) in &resp.headers {
            head.push_str(&format!("{k}: {v}\r\n"));
        }
        head.push_str(&format!("Content-Length: {}\r\n\r\n", resp.body.len()));
        writer.write_all(head.as_bytes())?;
        writer.write_all(&resp.body)?;
        writer.flush()?;
        if req.headers.get("connection").is_some_and(|v| v.eq_ignore_ascii_case("close")) {
            break;
        }
    }
    let _ = writer.shutdown(Shutdown::Both);
    Ok(())
}

fn route(req: &Request, state: &State) -> (Response, Option<(u64, u64)>) {
    if state.failures_left.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1)).is_ok() {
        return (Response::text(503, "injected failure"), None);
    }
    match (req.method.as_str(), req.path.as_str()) {
        ("POST", "/search") if !state.opts.allow_post => (Response::text(405, "POST not allowed"), None),
        ("POST", "/search") => {
            let parsed = serde_json::from_slice::<Value>(&req.body)
                .map_err(|e| e.to_string())
                .and_then(|v| SearchRequest::from_json(&v).map(|r| (r, v)));
            match parsed {
                Ok((r, body)) => (search(state, &r, Some(body)), None),
                Err(e) => (Response::json(400, &json!({"code": "BadRequest", "description": e})), None),
            }
        }
        ("GET", "/search") => match SearchRequest::from_query_string(req.query.as_deref().unwrap_or("")) {
            Ok(r) => (search(state, &r, None), None),
            Err(e) => (Response::json(400, &json!({"code": "BadRequest", "description": e})), None),
        },
        ("GET", p) if p.starts_with("/assets/") => serve_asset(state, req),
        _ => (Response::text(404, "not found"), None),
    }
}

fn search(state: &State, r: &SearchRequest, post_body: Option<Value>) -> Response {
    let matched: Vec<&Value> = state.items.iter().filter(|i| r.matches(i)).collect();
    let page: Vec<Value> = matched.iter().skip(r.token).take(r.limit).map(|v| (*v).clone()).collect();
    let next = r.token + r.limit;
    let mut links = vec![json!({"rel": "self", "href": format!("{}/search", state.base_url)})];
    if next < matched.len() {
        match post_body {
            Some(_) => links.push(json!({
                "rel": "next",
                "href": format!("{}/search", state.base_url),
                "method": "POST",
                "body": {"token": next.to_string()},
                "merge": true,
            })),
            None => {
                let mut qs: Vec<(String, String)> =
                    url::form_urlencoded::parse(state_query_without_token(r).as_bytes()).into_owned().collect();
                qs.push(("token".into(), next.to_string()));
                let enc = url::form_urlencoded::Serializer::new(String::new()).extend_pairs(qs).finish();
                links.push(json!({"rel": "next", "href": format!("{}/search?{enc}", state.base_url)}));
            }
        }
    }
    Response::json(
        200,
        &json!({
            "type": "FeatureCollection",
            "features": page,
            "links": links,
            "numberMatched": matched.len(),
            "numberReturned": page.len(),
        }),
    )
}

fn state_query_without_token(r: &SearchRequest) -> String {
    let mut s = url::form_urlencoded::Serializer::new(String::new());
    if let Some(c) = &r.collections {
        s.append_pair("collections", &c.join(","));
    }
    if let Some(b) = &r.bbox {
        s.append_pair("bbox", &format!("{},{},{},{}", b[0], b[1], b[2], b[3]));
    }
    if r.start.is_some() || r.end.is_some() {
        let f = |t: Option<chrono::DateTime<chrono::Utc>>| {
            t.map(|t| t.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true)).unwrap_or_else(|| "..".into())
        };
        s.append_pair("datetime", &format!("{}/{}", f(r.start), f(r.end)));
    }
    if !r.query.is_empty() {
        s.append_pair("query", &Value::Object(r.query.clone()).to_string());
    }
    s.append_pair("limit", &r.limit.to_string());
    s.finish()
}

fn parse_range(h: &str, len: u64) -> Option<(u64, u64)> {
    let spec = h.strip_prefix("bytes=")?;
    let (a, b) = spec.split_once('-')?;
    let (start, end) = if a.is_empty() {
        let n: u64 = b.parse().ok()?;
        (len.saturating_sub(n), len.checked_sub(1)?)
    } else {
        let start: u64 = a.parse().ok()?;
        let end = if b.is_empty() { len.checked_sub(1)? } else { b.parse::<u64>().ok()?.min(len.checked_sub(1)?) };
        (start, end)
    };
    (start <= end && start < len).then_some((start, end))
}

fn serve_asset(state: &State, req: &Request) -> (Response, Option<(u64, u64)>) {
    let rel = req.path.trim_start_matches('/');
    if rel.contains("..") {
        return (Response::text(404, "not found"), None);
    }
    let Ok(data) = fs::read(state.root.join(rel)) else {
        return (Response::text(404, "not found"), None);
    };
    let len = data.len() as u64;
    let requested = req.headers.get("range");
    match requested {
        Some(h) if state.opts.support_ranges => match parse_range(h, len) {
            Some((s, e)) => (
                Response {
                    status: 206,
                    headers: vec![
                        ("Content-Type".into(), "image/tiff".into()),
                        ("Content-Range".into(), format!("bytes {s}-{e}/{len}")),
                        ("Accept-Ranges".into(), "bytes".into()),
                    ],
                    body: data[s as usize..=e as usize].to_vec(),
                },
                Some((s, e)),
            ),
            None => (
                Response {
                    status: 416,
                    headers: vec![("Content-Range".into(), format!("bytes */{len}"))],
                    body: Vec::new(),
                },
                None,
            ),
        },
        _ => (Response { status: 200, headers: vec![("Content-Type".into(), "image/tiff".into())], body: data }, None),
    }
}
