//! Raster math: cropping, normalized-difference indices, water statistics
//! and trend fitting. All functions are pure.

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::raster::{BandRaster, Bbox, IndexRaster, SceneMeta, FILL};
use super::EosError;

/// Default water threshold on NDWI.
pub const WATER_THRESHOLD: f64 = 0.65;

/// A normalized-difference index `(a - b) / (a + b)` over two bands.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexPair {
    pub name: String,
    pub band_a: u16,
    pub band_b: u16,
}

/// The index pairs shipped by default.
pub fn default_index_pairs() -> Vec<IndexPair> {
    vec![
        IndexPair { name: "NDWI_red".into(), band_a: 4, band_b: 7 },
        IndexPair { name: "NDWI_green".into(), band_a: 3, band_b: 5 },
    ]
}

/// Name of a known band pair, or `ND_<a>_<b>` otherwise.
pub fn index_name(band_a: u16, band_b: u16) -> String {
    default_index_pairs()
        .into_iter()
        .find(|p| p.band_a == band_a && p.band_b == band_b)
        .map(|p| p.name)
        .unwrap_or_else(|| format!("ND_{band_a}_{band_b}"))
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-6 {
        r
    } else {
        v
    }
}

/// Sub-raster covering `bbox ∩ raster bbox`. Partially covered edge pixels
/// are kept; the returned scene bbox is the pixel-aligned extent.
pub fn crop(raster: &BandRaster, bbox: &Bbox) -> Result<BandRaster, EosError> {
    let full = raster.scene.bbox;
    let inter = full.intersect(bbox).ok_or(EosError::NoOverlap)?;
    let (w, h) = (raster.width as f64, raster.height as f64);
    let px = |lon: f64| snap((lon - full.min_lon) / (full.max_lon - full.min_lon) * w);
    let py = |lat: f64| snap((full.max_lat - lat) / (full.max_lat - full.min_lat) * h);
    let c0 = px(inter.min_lon).floor().clamp(0.0, w) as u32;
    let c1 = px(inter.max_lon).ceil().clamp(0.0, w) as u32;
    let r0 = py(inter.max_lat).floor().clamp(0.0, h) as u32;
    let r1 = py(inter.min_lat).ceil().clamp(0.0, h) as u32;
    if c1 <= c0 || r1 <= r0 {
        return Err(EosError::NoOverlap);
    }
    let mut pixels = Vec::with_capacity(((c1 - c0) * (r1 - r0)) as usize);
    for r in r0..r1 {
        let start = (r * raster.width + c0) as usize;
        pixels.extend_from_slice(&raster.pixels[start..start + (c1 - c0) as usize]);
    }
    let lon_at = |c: u32| full.min_lon + (full.max_lon - full.min_lon) * c as f64 / w;
    let lat_at = |r: u32| full.max_lat - (full.max_lat - full.min_lat) * r as f64 / h;
    let scene = SceneMeta { bbox: Bbox::new(lon_at(c0), lat_at(r1), lon_at(c1), lat_at(r0)), ..raster.scene.clone() };
    Ok(BandRaster { width: c1 - c0, height: r1 - r0, band_id: raster.band_id, scale: raster.scale, pixels, scene })
}

/// Per-pixel `(a - b) / (a + b)` on reflectances; pixels with `a + b == 0`
/// become [`FILL`].
pub fn ndwi(a: &BandRaster, b: &BandRaster) -> Result<IndexRaster, EosError> {
    if a.width != b.width || a.height != b.height {
        return Err(EosError::ShapeMismatch { a: (a.width, a.height), b: (b.width, b.height) });
    }
    if a.scene.scene_id != b.scene.scene_id {
        return Err(EosError::SceneMismatch(a.scene.scene_id.clone(), b.scene.scene_id.clone()));
    }
    let values = (0..a.pixels.len())
        .map(|i| {
            let (x, y) = (a.reflectance(i), b.reflectance(i));
            let sum = x + y;
            if sum == 0.0 {
                FILL
            } else {
                ((x - y) / sum) as f32
            }
        })
        .collect();
    Ok(IndexRaster {
        index_name: index_name(a.band_id, b.band_id),
        width: a.width,
        height: a.height,
        values,
        scene: a.scene.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterSummary {
    pub scene_id: String,
    pub acquisition_date: NaiveDate,
    pub path: u32,
    pub row: u32,
    pub index_name: String,
    pub threshold: f64,
    pub water_pixels: u64,
    pub total_pixels: u64,
    pub water_percent: f64,
}

/// Share of non-fill pixels strictly above `threshold`, in percent.
pub fn water_percentage(index: &IndexRaster, threshold: f64) -> Result<WaterSummary, EosError> {
    let (mut water, mut total) = (0u64, 0u64);
    for &v in &index.values {
        if v == FILL {
            continue;
        }
        total += 1;
        if v as f64 > threshold {
            water += 1;
        }
    }
    if total == 0 {
        return Err(EosError::AllFill);
    }
    Ok(WaterSummary {
        scene_id: index.scene.scene_id.clone(),
        acquisition_date: index.scene.acquisition_date,
        path: index.scene.path,
        row: index.scene.row,
        index_name: index.index_name.clone(),
        threshold,
        water_pixels: water,
        total_pixels: total,
        water_percent: 100.0 * water as f64 / total as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendLine {
    /// Percent per year.
    pub slope: f64,
    /// Percent at `x = 0`.
    pub intercept: f64,
    pub n_points: usize,
}

/// Ordinary least squares over `(x, y)` points.
pub fn fit_line(points: &[(f64, f64)]) -> Result<TrendLine, EosError> {
    if points.len() < 2 {
        return Err(EosError::TooFewPoints(points.len()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(EosError::DegenerateX);
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Ok(TrendLine { slope, intercept: my - slope * mx, n_points: points.len() })
}

/// Calendar date as a decimal year: `year + (ordinal - 1) / days_in_year`.
pub fn decimal_year(date: NaiveDate) -> f64 {
    let days = if date.leap_year() { 366.0 } else { 365.0 };
    date.year() as f64 + (date.ordinal0() as f64) / days
}

/// Linear trend of water percent over time; `x` is years since the earliest date.
pub fn fit_trend(points: &[(NaiveDate, f64)]) -> Result<TrendLine, EosError> {
    let epoch = points.iter().map(|p| decimal_year(p.0)).fold(f64::INFINITY, f64::min);
    let xy: Vec<(f64, f64)> = points.iter().map(|(d, y)| (decimal_year(*d) - epoch, *y)).collect();
    fit_line(&xy)
}
