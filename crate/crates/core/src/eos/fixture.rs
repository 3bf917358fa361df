//! Seeded synthetic Landsat-like scenes over Lake Cuitzeo.
//!
//! A scene has a nodata margin of a tenth of its size on every side; the
//! interior maps exactly onto [`LAKE_CUITZEO`]. Interior pixels are water or
//! land, with the water pixels forming a blob around the lake centre. Their
//! count is `round(water_fraction × interior pixels)`, so the NDWI_red water
//! percentage of the scene (or of its lake crop) hits the requested fraction
//! to within rounding of one pixel.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::archive::{pack_scene, SceneFiles, SceneQuery};
use super::raster::{BandRaster, Bbox, SceneMeta};
use super::EosError;

pub const LAKE_CUITZEO: Bbox = Bbox { min_lon: -101.35, min_lat: 19.85, max_lon: -100.85, max_lat: 20.10 };

/// The query point used for the case study, as (lat, lon).
pub const CUITZEO_POINT: (f64, f64) = (19.936739, -101.136399);

pub const FIXTURE_SCALE: f64 = 2.0e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub width: u32,
    pub height: u32,
    pub water_fraction: f64,
    pub bands: Vec<u16>,
    pub date: NaiveDate,
    pub path: u32,
    pub row: u32,
    pub seed: u64,
}

impl FixtureSpec {
    /// The standard fixture for `seed`: water fraction `((seed - 1) mod 8) / 10`,
    /// dates 240 days apart from 2013-02-01, alternating paths 27 and 28.
    pub fn standard(seed: u64) -> Self {
        let k = seed.saturating_sub(1);
        FixtureSpec {
            width: 200,
            height: 200,
            water_fraction: (k % 8) as f64 / 10.0,
            bands: vec![3, 4, 5, 7],
            date: NaiveDate::from_ymd_opt(2013, 2, 1).expect("valid date") + chrono::Days::new(240 * k),
            path: if seed % 2 == 1 { 27 } else { 28 },
            row: 46,
            seed,
        }
    }

    pub fn scene_id(&self) -> String {
        format!(
            "LC08_{:03}{:03}_{:04}{:02}{:02}",
            self.path,
            self.row,
            self.date.year(),
            self.date.month(),
            self.date.day()
        )
    }

    fn validate(&self) -> Result<(), EosError> {
        let bad = |m: String| Err(EosError::InvalidSpec(m));
        if !(0.0..=1.0).contains(&self.water_fraction) {
            return bad(format!("water_fraction {} outside [0, 1]", self.water_fraction));
        }
        if self.width < 10 || self.height < 10 {
            return bad(format!("{}x{} is below the 10x10 minimum", self.width, self.height));
        }
        if !self.bands.contains(&4) || !self.bands.contains(&7) {
            return bad("bands must include 4 and 7".into());
        }
        if self.bands.iter().any(|b| !(1..=11).contains(b)) {
            return bad("band ids must lie in 1..=11".into());
        }
        if self.path == 0 || self.row == 0 {
            return bad("path and row must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FixtureScene {
    pub meta: SceneMeta,
    pub archive: Vec<u8>,
    pub water_pixels: u64,
    pub interior_pixels: u64,
}

impl FixtureScene {
    pub fn file_name(&self) -> String {
        format!("{}.tar.gz", self.meta.scene_id)
    }
}

/// Reflectance range per band for (water, land) pixels.
fn reflectance_range(band: u16, water: bool) -> (f64, f64) {
    match (band, water) {
        (3, true) => (0.08, 0.10),
        (3, false) => (0.06, 0.09),
        (4, true) => (0.05, 0.07),
        (4, false) => (0.10, 0.15),
        (5, true) => (0.005, 0.012),
        (5, false) => (0.25, 0.35),
        (7, true) => (0.002, 0.008),
        (7, false) => (0.15, 0.25),
        (_, true) => (0.01, 0.05),
        (_, false) => (0.05, 0.30),
    }
}

pub fn make_fixture_scene(spec: &FixtureSpec) -> Result<FixtureScene, EosError> {
    spec.validate()?;
    let (w, h) = (spec.width as usize, spec.height as usize);
    let (mx, my) = (w / 10, h / 10);
    let (iw, ih) = (w - 2 * mx, h - 2 * my);
    let dx = (LAKE_CUITZEO.max_lon - LAKE_CUITZEO.min_lon) / iw as f64;
    let dy = (LAKE_CUITZEO.max_lat - LAKE_CUITZEO.min_lat) / ih as f64;
    let bbox = Bbox::new(
        LAKE_CUITZEO.min_lon - mx as f64 * dx,
        LAKE_CUITZEO.min_lat - my as f64 * dy,
        LAKE_CUITZEO.max_lon + mx as f64 * dx,
        LAKE_CUITZEO.max_lat + my as f64 * dy,
    );
    let meta = SceneMeta {
        scene_id: spec.scene_id(),
        acquisition_date: spec.date,
        path: spec.path,
        row: spec.row,
        bbox,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let interior = iw * ih;
    let water_count = (spec.water_fraction * interior as f64).round() as usize;
    // Lowest scores become water: distance from an off-centre lake centre plus noise.
    let (cx, cy) = (0.45 * iw as f64, 0.55 * ih as f64);
    let mut scored: Vec<(f64, usize)> = (0..interior)
        .map(|i| {
            let (x, y) = ((i % iw) as f64, (i / iw) as f64);
            let d = ((x - cx) / iw as f64).powi(2) + ((y - cy) / (0.6 * ih as f64)).powi(2);
            (d.sqrt() + rng.gen_range(0.0..0.15), i)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut is_water = vec![false; interior];
    for &(_, i) in &scored[..water_count] {
        is_water[i] = true;
    }

    let mut bands = BTreeMap::new();
    let mut ids = spec.bands.clone();
    ids.sort_unstable();
    ids.dedup();
    for band in ids {
        let mut pixels = vec![0u16; w * h];
        for (i, &water) in is_water.iter().enumerate() {
            let (lo, hi) = reflectance_range(band, water);
            let dn = (rng.gen_range(lo..hi) / FIXTURE_SCALE).round().max(1.0) as u16;
            pixels[(my + i / iw) * w + mx + i % iw] = dn;
        }
        let raster = BandRaster {
            width: spec.width,
            height: spec.height,
            band_id: band,
            scale: FIXTURE_SCALE,
            pixels,
            scene: meta.clone(),
        };
        bands.insert(band, raster.encode());
    }
    let files = SceneFiles { meta: meta.clone(), bands };
    Ok(FixtureScene {
        archive: pack_scene(&files),
        meta,
        water_pixels: water_count as u64,
        interior_pixels: interior as u64,
    })
}

/// A generated dataset: scene archives plus a query file selecting all of them.
#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub scenes: Vec<FixtureScene>,
    pub scene_dir: std::path::PathBuf,
    pub query_path: std::path::PathBuf,
}

/// Writes `<out>/scenes/<scene>.tar.gz` for each standard fixture seed
/// and `<out>/input/query.toml`, a query around the lake covering every
/// scene date with `source` set to the absolute scene directory.
pub fn write_fixture_set(out: &std::path::Path, seeds: &[u64], size: u32) -> Result<FixtureSet, EosError> {
    let scene_dir = out.join("scenes");
    let input_dir = out.join("input");
    std::fs::create_dir_all(&scene_dir)?;
    std::fs::create_dir_all(&input_dir)?;
    let scene_dir = scene_dir.canonicalize()?;
    let mut scenes = Vec::new();
    for &seed in seeds {
        let spec = FixtureSpec { width: size, height: size, ..FixtureSpec::standard(seed) };
        let scene = make_fixture_scene(&spec)?;
        std::fs::write(scene_dir.join(scene.file_name()), &scene.archive)?;
        scenes.push(scene);
    }
    let dates = || scenes.iter().map(|s| s.meta.acquisition_date);
    let fallback = NaiveDate::from_ymd_opt(2013, 1, 1).expect("valid date");
    let query = SceneQuery {
        lat: CUITZEO_POINT.0,
        lon: CUITZEO_POINT.1,
        start: dates().min().unwrap_or(fallback),
        end: dates().max().unwrap_or(fallback),
        source: Some(scene_dir.clone()),
    };
    let query_path = input_dir.join("query.toml");
    let text = toml::to_string(&query).map_err(|e| EosError::BadQuery(e.to_string()))?;
    std::fs::write(&query_path, text)?;
    Ok(FixtureSet { scenes, scene_dir, query_path })
}
