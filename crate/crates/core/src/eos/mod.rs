//! Earth-observation case study: monitoring the water surface of Lake
//! Cuitzeo from Landsat 8 scenes with a six-stage pipeline (download,
//! decompress, index, crop, derivates, summary).

pub mod archive;
pub mod fixture;
pub mod index;
pub mod ops;
pub mod raster;
pub mod stages;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fixture::{make_fixture_scene, write_fixture_set, FixtureScene, FixtureSet, FixtureSpec, CUITZEO_POINT, LAKE_CUITZEO};
pub use ops::{crop, fit_line, fit_trend, ndwi, water_percentage, TrendLine, WaterSummary, WATER_THRESHOLD};
pub use raster::{BandRaster, Bbox, IndexRaster, SceneMeta, FILL};

#[derive(Debug, Error)]
pub enum EosError {
    #[error("scene source unavailable: {0}")]
    SourceUnavailable(String),
    #[error("bad query: {0}")]
    BadQuery(String),
    #[error("corrupt archive: {0}")]
    CorruptArchive(String),
    #[error("scene {scene} lacks band {band}")]
    MissingBand { scene: String, band: u16 },
    #[error("bad scene metadata: {0}")]
    BadMetadata(String),
    #[error("bad raster: {0}")]
    BadRaster(String),
    #[error("bounding box does not overlap the raster")]
    NoOverlap,
    #[error("raster shapes differ: {a:?} vs {b:?}")]
    ShapeMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("bands come from different scenes: {0} vs {1}")]
    SceneMismatch(String, String),
    #[error("index has no defined pixels")]
    AllFill,
    #[error("trend needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("all points share one date")]
    DegenerateX,
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Trend of one (path, row, index) series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRecord {
    pub path: u32,
    pub row: u32,
    pub index_name: String,
    pub slope: f64,
    pub intercept: f64,
    pub n_points: usize,
}

/// Parses summary lines and sorts them by date, scene and index.
pub fn parse_summaries(text: &str) -> Result<Vec<WaterSummary>, serde_json::Error> {
    let mut out: Vec<WaterSummary> =
        text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<Result<_, _>>()?;
    out.sort_by(|a, b| {
        (a.acquisition_date, &a.scene_id, &a.index_name).cmp(&(b.acquisition_date, &b.scene_id, &b.index_name))
    });
    Ok(out)
}

/// One trend line per (path, row, index) series with at least two dates.
pub fn trends(summaries: &[WaterSummary]) -> Vec<TrendRecord> {
    let mut series: BTreeMap<(u32, u32, String), Vec<(chrono::NaiveDate, f64)>> = BTreeMap::new();
    for s in summaries {
        series.entry((s.path, s.row, s.index_name.clone())).or_default().push((s.acquisition_date, s.water_percent));
    }
    series
        .into_iter()
        .filter_map(|((path, row, index_name), points)| {
            let t = fit_trend(&points).ok()?;
            Some(TrendRecord { path, row, index_name, slope: t.slope, intercept: t.intercept, n_points: t.n_points })
        })
        .collect()
}
