//! `cube create` and `cube plan`.
//!
//! Each setting is taken from the command line, else the `--config` TOML
//! file, else the environment (`CUBO_STAC_ENDPOINT` for the endpoint), else
//! the built-in default.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::cube::ChunkSpec;
use crate::error::{Error, Result};
use crate::geomath::GeoCoordinate;
use crate::http::{HttpClient, TransferLedger};
use crate::io::plan::{MetadataDocument, PlanReport};
use crate::io::quicklook::{write_quicklook, QuicklookBands};
use crate::io::zarr::{prepare_output, write_zarr, ZarrOptions};
use crate::pipeline::{Pipeline, DEFAULT_PAGE_LIMIT};
use crate::request::{parse_time, Bound, CubeRequest, DEFAULT_EDGE_SIZE, DEFAULT_RESOLUTION};
use crate::stac::{Predicate, QueryFilter, DEFAULT_ENDPOINT, ENDPOINT_ENV};

#[derive(Debug, Parser)]
#[command(name = "cube", version, about = "Build square Earth observation data cubes from a STAC catalogue")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a cube and write it to disk.
    Create(CreateArgs),
    /// Search and lay out a cube without reading raster data.
    Plan(PlanArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RequestArgs {
    /// Centre latitude in degrees.
    #[arg(long, allow_hyphen_values = true)]
    pub lat: Option<f64>,
    /// Centre longitude in degrees.
    #[arg(long, allow_hyphen_values = true)]
    pub lon: Option<f64>,
    /// Edge size in pixels.
    #[arg(long)]
    pub edge_size: Option<u32>,
    /// Pixel size in metres.
    #[arg(long)]
    pub resolution: Option<f64>,
    /// Start of the time interval (RFC 3339 or YYYY-MM-DD).
    #[arg(long)]
    pub start: Option<String>,
    /// End of the time interval (RFC 3339 or YYYY-MM-DD, inclusive).
    #[arg(long)]
    pub end: Option<String>,
    #[arg(long)]
    pub collection: Option<String>,
    /// Comma-separated band (asset) names.
    #[arg(long, value_delimiter = ',')]
    pub bands: Option<Vec<String>>,
    /// STAC API root URL.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Property filter `name:op:value`, op one of eq, neq, lt, lte, gt, gte.
    #[arg(long = "query")]
    pub query: Vec<String>,
    /// Search page size.
    #[arg(long)]
    pub limit: Option<u32>,
    /// Spatial chunk edge in pixels.
    #[arg(long)]
    pub chunk_size: Option<usize>,
    /// TOML file with any of the settings above.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Zarr,
    Metadata,
}

#[derive(Debug, Clone, Args)]
pub struct CreateArgs {
    #[command(flatten)]
    pub request: RequestArgs,
    /// Output path: a Zarr directory, or a JSON file for `--format metadata`.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Also write a PNG preview next to the output.
    #[arg(long)]
    pub quicklook: bool,
    /// Quicklook bands: `R,G,B`, or one band for grayscale.
    #[arg(long)]
    pub quicklook_bands: Option<String>,
    /// Time index rendered in the quicklook.
    #[arg(long)]
    pub quicklook_time: Option<usize>,
    /// Replace an existing output.
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub request: RequestArgs,
    /// Write the plan JSON here instead of standard output.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

/// Settings accepted in the `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub edge_size: Option<u32>,
    pub resolution: Option<f64>,
    pub start: Option<String>,
    pub end: Option<String>,
    pub collection: Option<String>,
    pub bands: Option<Vec<String>>,
    pub endpoint: Option<String>,
    pub query: Option<Vec<String>>,
    pub limit: Option<u32>,
    pub chunk_size: Option<usize>,
    pub output: Option<PathBuf>,
    pub format: Option<OutputFormat>,
    pub quicklook: Option<bool>,
    pub quicklook_bands: Option<String>,
    pub quicklook_time: Option<usize>,
    pub overwrite: Option<bool>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))
    }
}

/// Fully resolved command settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub request: CubeRequest,
    pub page_limit: u32,
    pub chunks: Option<ChunkSpec>,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
    pub quicklook: Option<QuicklookBands>,
    pub quicklook_time: usize,
    pub overwrite: bool,
}

fn required<T>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| Error::Validation(format!("--{name} is required (flag or config file)")))
}

/// Merge flags, config file and environment into a [`CliConfig`].
pub fn resolve(
    args: &RequestArgs,
    create: Option<&CreateArgs>,
    plan_output: Option<&PathBuf>,
    env: &dyn Fn(&str) -> Option<String>,
) -> Result<CliConfig> {
    let file = match &args.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let lat = required(args.lat.or(file.lat), "lat")?;
    let lon = required(args.lon.or(file.lon), "lon")?;
    let start = required(args.start.clone().or(file.start), "start")?;
    let end = required(args.end.clone().or(file.end), "end")?;
    let collection = required(args.collection.clone().or(file.collection), "collection")?;
    let bands: Vec<String> =
        required(args.bands.clone().or(file.bands), "bands")?.into_iter().map(|b| b.trim().to_string()).collect();
    let endpoint = args
        .endpoint
        .clone()
        .or(file.endpoint)
        .or_else(|| env(ENDPOINT_ENV).filter(|s| !s.is_empty()))
        .unwrap_or_else(|| DEFAULT_ENDPOINT.to_string());
    let query_strs = if args.query.is_empty() { file.query.unwrap_or_default() } else { args.query.clone() };
    let preds = query_strs.iter().map(|s| s.parse::<Predicate>()).collect::<std::result::Result<Vec<_>, _>>()?;

    let request = CubeRequest {
        center: GeoCoordinate { lat, lon },
        edge_size: args.edge_size.or(file.edge_size).unwrap_or(DEFAULT_EDGE_SIZE),
        resolution: args.resolution.or(file.resolution).unwrap_or(DEFAULT_RESOLUTION),
        time_start: parse_time(&start, Bound::Start)?,
        time_end: parse_time(&end, Bound::End)?,
        collection,
        bands,
        stac_endpoint: endpoint,
        query: QueryFilter::from_predicates(preds),
    };
    request.validate()?;

    let page_limit = args.limit.or(file.limit).unwrap_or(DEFAULT_PAGE_LIMIT);
    if !(1..=1000).contains(&page_limit) {
        return Err(Error::Validation(format!("--limit {page_limit} outside 1..=1000")));
    }
    let chunks = args.chunk_size.or(file.chunk_size).map(|c| ChunkSpec { time: 1, band: 1, y: c, x: c });

    let (output, format, quicklook, quicklook_time, overwrite) = match create {
        Some(c) => {
            let format = c.format.or(file.format).unwrap_or(OutputFormat::Zarr);
            let wants_quicklook = c.quicklook || file.quicklook.unwrap_or(false);
            let ql_bands = c.quicklook_bands.clone().or(file.quicklook_bands);
            let quicklook = match (wants_quicklook, ql_bands) {
                (false, _) => None,
                (true, Some(s)) => Some(QuicklookBands::parse(&s)?),
                (true, None) => Some(QuicklookBands::default_for(&request.bands)?),
            };
            if quicklook.is_some() && format == OutputFormat::Metadata {
                return Err(Error::Validation("--quicklook needs raster output (--format zarr)".into()));
            }
            (
                Some(required(c.output.clone().or(file.output), "output")?),
                format,
                quicklook,
                c.quicklook_time.or(file.quicklook_time).unwrap_or(0),
                c.overwrite || file.overwrite.unwrap_or(false),
            )
        }
        None => (plan_output.cloned().or(file.output), OutputFormat::Metadata, None, 0, true),
    };
    Ok(CliConfig { request, page_limit, chunks, output, format, quicklook, quicklook_time, overwrite })
}

/// Quicklook path for an output store: the same name with a `.png` extension.
pub fn quicklook_path(output: &Path) -> PathBuf {
    output.with_extension("png")
}

fn check_bands_exist(cfg: &CliConfig) -> Result<()> {
    let names: &[String] = match &cfg.quicklook {
        Some(QuicklookBands::Rgb(names)) => names,
        Some(QuicklookBands::Gray(n)) => std::slice::from_ref(n),
        None => &[],
    };
    match names.iter().find(|n| !cfg.request.bands.contains(n)) {
        Some(n) => Err(Error::Validation(format!("quicklook band {n:?} is not among --bands"))),
        None => Ok(()),
    }
}

/// Search and lay out the cube, reading only asset headers.
pub fn run_plan(cfg: &CliConfig, pipeline: &Pipeline) -> Result<PlanReport> {
    let (cube, found) = pipeline.open(&cfg.request, cfg.chunks)?;
    PlanReport::from_cube(&cube, &found.query)
}

/// Build and write the cube. Returns the paths written.
pub fn run_create(cfg: &CliConfig, pipeline: &Pipeline) -> Result<Vec<PathBuf>> {
    let output = required(cfg.output.clone(), "output")?;
    check_bands_exist(cfg)?;
    prepare_output(&output, cfg.overwrite)?;
    let ql_path = cfg.quicklook.as_ref().map(|_| quicklook_path(&output));
    if let Some(p) = &ql_path {
        prepare_output(p, cfg.overwrite)?;
    }
    match cfg.format {
        OutputFormat::Metadata => {
            let (plan, _) = pipeline.plan(&cfg.request, cfg.chunks)?;
            let doc = serde_json::to_string_pretty(&MetadataDocument::from_plan(&plan)).expect("serializes");
            std::fs::write(&output, doc).map_err(|e| Error::io(&output, e))?;
            Ok(vec![output])
        }
        OutputFormat::Zarr => {
            let (cube, _) = pipeline.open(&cfg.request, cfg.chunks)?;
            let cube = cube.without_cache();
            write_zarr(&cube, &output, ZarrOptions { overwrite: cfg.overwrite, ..ZarrOptions::default() })?;
            let mut written = vec![output.clone()];
            if let (Some(bands), Some(p)) = (&cfg.quicklook, ql_path) {
                if let Err(e) = write_quicklook(&cube, cfg.quicklook_time, bands, &p) {
                    let _ = std::fs::remove_dir_all(&output);
                    let _ = std::fs::remove_file(&p);
                    return Err(e);
                }
                written.push(p);
            }
            Ok(written)
        }
    }
}

fn attribute_summary(cfg: &CliConfig, out: &mut dyn Write, paths: &[PathBuf]) -> std::io::Result<()> {
    if let Some(first) = paths.first() {
        let store = crate::io::zarr::read_zarr(first).ok();
        if let Some(store) = store {
            for (k, v) in &store.attrs {
                writeln!(out, "{k} = {v}")?;
            }
            writeln!(out, "shape = {:?}", store.shape())?;
        } else {
            writeln!(out, "collection = {:?}", cfg.request.collection)?;
        }
    }
    for p in paths {
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(())
}

/// Run the CLI with explicit arguments, output streams, environment and HTTP
/// client. Returns the process exit code.
pub fn run_with(
    args: impl IntoIterator<Item = impl Into<std::ffi::OsString> + Clone>,
    out: &mut dyn Write,
    err: &mut dyn Write,
    env: &dyn Fn(&str) -> Option<String>,
    http: Arc<HttpClient>,
) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Plan(p) => resolve(&p.request, None, p.output.as_ref(), env).and_then(|cfg| {
            let pipeline = Pipeline::with_options(http, Default::default(), cfg.page_limit);
            let report = run_plan(&cfg, &pipeline)?;
            let json = report.to_json();
            match &cfg.output {
                Some(path) => std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e)),
                None => writeln!(out, "{json}").map_err(|e| Error::io("<stdout>", e)),
            }
        }),
        Command::Create(c) => resolve(&c.request, Some(c), None, env).and_then(|cfg| {
            let pipeline = Pipeline::with_options(http, Default::default(), cfg.page_limit);
            let paths = run_create(&cfg, &pipeline)?;
            attribute_summary(&cfg, out, &paths).map_err(|e| Error::io("<stdout>", e))
        }),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Entry point used by the binary.
pub fn main_exit_code() -> i32 {
    let args: Vec<std::ffi::OsString> = std::env::args_os().collect();
    let verbosity = args.iter().filter_map(|a| a.to_str()).fold(0usize, |n, a| {
        if a == "--verbose" {
            n + 1
        } else if a.starts_with('-') && !a.starts_with("--") && a[1..].chars().all(|c| c == 'v') {
            n + a.len() - 1
        } else {
            n
        }
    });
    let level = match verbosity {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let http = Arc::new(HttpClient::new(TransferLedger::new()));
    let env = |k: &str| std::env::var(k).ok();
    run_with(args, &mut std::io::stdout(), &mut std::io::stderr(), &env, http)
}
