//! JSON documents describing a cube without its data.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

use crate::cube::{AttributeSet, ChunkSpec, CubePlan, DataCube};
use crate::error::Result;
use crate::io::zarr::ZarrType;
use crate::stac::SearchQuery;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CenterReport {
    pub lat: f64,
    pub lon: f64,
    pub x: f64,
    pub y: f64,
    pub snapped_x: f64,
    pub snapped_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxReport {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemReport {
    pub id: String,
    pub datetime: String,
    pub assets: BTreeMap<String, String>,
}

/// Dry-run summary of a cube.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanReport {
    pub attributes: AttributeSet,
    pub realized_edge: usize,
    pub center: CenterReport,
    pub bbox: BoxReport,
    pub bbox_geographic: [f64; 4],
    pub search: Value,
    pub dims: [&'static str; 4],
    pub shape: [usize; 4],
    pub chunks: ChunkSpec,
    pub timestamps: Vec<String>,
    pub items: Vec<ItemReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dtype: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimated_tile_bytes: Option<u64>,
}

fn rfc3339(t: &chrono::DateTime<chrono::Utc>) -> String {
    t.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true)
}

impl PlanReport {
    /// Report from a plan alone (no asset headers read).
    pub fn from_plan(plan: &CubePlan, query: &SearchQuery) -> Self {
        let g = &plan.geometry;
        let mut items: BTreeMap<(String, String), BTreeMap<String, String>> = BTreeMap::new();
        for (t, per_band) in plan.timestamps.iter().zip(&plan.slices) {
            for sa in per_band.iter().flatten() {
                items
                    .entry((rfc3339(t), sa.item_id.clone()))
                    .or_default()
                    .insert(sa.asset.band.clone(), sa.asset.href.clone());
            }
        }
        PlanReport {
            attributes: AttributeSet::new(&plan.request, g.epsg, &g.projected),
            realized_edge: g.realized_edge(),
            center: CenterReport {
                lat: plan.request.center.lat,
                lon: plan.request.center.lon,
                x: g.projected.x,
                y: g.projected.y,
                snapped_x: g.snapped.x,
                snapped_y: g.snapped.y,
            },
            bbox: BoxReport { x_min: g.bbox.x_min, y_min: g.bbox.y_min, x_max: g.bbox.x_max, y_max: g.bbox.y_max },
            bbox_geographic: g.envelope.as_array(),
            search: query.to_body(),
            dims: ["time", "band", "y", "x"],
            shape: plan.shape(),
            chunks: plan.chunks,
            timestamps: plan.timestamps.iter().map(rfc3339).collect(),
            items: items.into_iter().map(|((datetime, id), assets)| ItemReport { id, datetime, assets }).collect(),
            dtype: None,
            estimated_tile_bytes: None,
        }
    }

    /// Report including the cube dtype and tile-byte estimate from headers.
    pub fn from_cube(cube: &DataCube, query: &SearchQuery) -> Result<Self> {
        let mut r = Self::from_plan(cube.plan(), query);
        r.dtype = Some(ZarrType::Num(cube.dtype()).name());
        r.estimated_tile_bytes = Some(cube.estimated_tile_bytes()?);
        Ok(r)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan report serializes")
    }
}

/// Attributes and coordinates of a cube, written by the metadata-only output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetadataDocument {
    pub attrs: AttributeSet,
    pub dims: [&'static str; 4],
    pub shape: [usize; 4],
    pub time: Vec<String>,
    pub band: Vec<String>,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
}

impl MetadataDocument {
    pub fn from_plan(plan: &CubePlan) -> Self {
        let g = &plan.geometry;
        MetadataDocument {
            attrs: AttributeSet::new(&plan.request, g.epsg, &g.projected),
            dims: ["time", "band", "y", "x"],
            shape: plan.shape(),
            time: plan.timestamps.iter().map(rfc3339).collect(),
            band: plan.request.bands.clone(),
            y: g.grid.y_coords.clone(),
            x: g.grid.x_coords.clone(),
        }
    }
}
