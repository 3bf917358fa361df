//! The case-study stages as registered stage functions.
//!
//! | entry | input | outputs |
//! |-------|-------|---------|
//! | `eos.download` | query TOML (`lat`, `lon`, `start`, `end`, optional `source`) | matching `.tar.gz` archives |
//! | `eos.decompress` | archive | bundle `<scene_id>/` |
//! | `eos.index` | bundle | none; appends to `<state>/index.jsonl` |
//! | `eos.crop` | bundle | cropped bundle (param `bbox`) |
//! | `eos.derivates` | bundle | `<scene_id>.<index>.idx` per index (params `indices`, `extra_compute_ms`) |
//! | `eos.summary` | index file | `<scene_id>.<index>.json`, one JSON line (param `threshold`) |

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::time::Duration;

use super::archive::{self, SceneFiles, SceneQuery};
use super::fixture::LAKE_CUITZEO;
use super::index::{IndexRecord, MetadataIndex};
use super::ops::{crop, default_index_pairs, ndwi, water_percentage, WATER_THRESHOLD};
use super::raster::{Bbox, IndexRaster};
use super::EosError;
use crate::daemon::{StageRegistry, TaskContext};

pub fn register(reg: &mut StageRegistry) {
    reg.register("eos.download", |ctx| download(ctx).map_err(|e| e.to_string()));
    reg.register("eos.decompress", |ctx| decompress(ctx).map_err(|e| e.to_string()));
    reg.register("eos.index", |ctx| index(ctx).map_err(|e| e.to_string()));
    reg.register("eos.crop", |ctx| crop_stage(ctx).map_err(|e| e.to_string()));
    reg.register("eos.derivates", |ctx| derivates(ctx).map_err(|e| e.to_string()));
    reg.register("eos.summary", |ctx| summary(ctx).map_err(|e| e.to_string()));
}

fn download(ctx: &TaskContext<'_>) -> Result<(), EosError> {
    let text = fs::read_to_string(ctx.input)?;
    let query: SceneQuery = toml::from_str(&text).map_err(|e| EosError::BadQuery(e.to_string()))?;
    let source = query
        .source
        .clone()
        .or_else(|| ctx.param_str("source").map(PathBuf::from))
        .ok_or_else(|| EosError::SourceUnavailable("no scene source configured".into()))?;
    for path in archive::download(&query, &source)? {
        fs::copy(&path, ctx.output_dir.join(path.file_name().expect("archive has a name")))?;
    }
    Ok(())
}

fn decompress(ctx: &TaskContext<'_>) -> Result<(), EosError> {
    let files = archive::unpack_scene(&fs::read(ctx.input)?)?;
    archive::write_bundle(&files, ctx.output_dir)?;
    Ok(())
}

fn index(ctx: &TaskContext<'_>) -> Result<(), EosError> {
    let meta = archive::read_bundle_meta(ctx.input)?;
    let products = archive::bundle_bands(ctx.input)?.iter().map(|b| format!("B{b}")).collect();
    let _guard = ctx.state_lock.lock().expect("index lock");
    let mut idx = MetadataIndex::open(&ctx.state_dir.join("index.jsonl"))?;
    idx.insert(IndexRecord::new(&meta, products))?;
    Ok(())
}

fn param_bbox(ctx: &TaskContext<'_>) -> Result<Bbox, EosError> {
    let Some(value) = ctx.params.get("bbox") else {
        return Ok(LAKE_CUITZEO);
    };
    let nums: Vec<f64> = value
        .as_array()
        .map(|a| a.iter().filter_map(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64))).collect())
        .unwrap_or_default();
    match nums[..] {
        [a, b, c, d] if Bbox::new(a, b, c, d).is_valid() => Ok(Bbox::new(a, b, c, d)),
        _ => Err(EosError::InvalidSpec("bbox must be [min_lon, min_lat, max_lon, max_lat]".into())),
    }
}

fn crop_stage(ctx: &TaskContext<'_>) -> Result<(), EosError> {
    let bbox = param_bbox(ctx)?;
    let meta = archive::read_bundle_meta(ctx.input)?;
    let mut bands = BTreeMap::new();
    let mut cropped_meta = None;
    for b in archive::bundle_bands(ctx.input)? {
        let c = crop(&archive::read_band(ctx.input, &meta, b)?, &bbox)?;
        cropped_meta = Some(c.scene.clone());
        bands.insert(b, c.encode());
    }
    let meta = cropped_meta.unwrap_or(meta);
    archive::write_bundle(&SceneFiles { meta, bands }, ctx.output_dir)?;
    Ok(())
}

fn derivates(ctx: &TaskContext<'_>) -> Result<(), EosError> {
    let meta = archive::read_bundle_meta(ctx.input)?;
    let wanted: Option<Vec<String>> = ctx
        .params
        .get("indices")
        .and_then(|v| v.as_array())
        .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect());
    let pairs: Vec<_> = default_index_pairs()
        .into_iter()
        .filter(|p| wanted.as_ref().is_none_or(|w| w.contains(&p.name)))
        .collect();
    if let Some(w) = &wanted {
        if let Some(unknown) = w.iter().find(|n| !pairs.iter().any(|p| &p.name == *n)) {
            return Err(EosError::InvalidSpec(format!("unknown index `{unknown}`")));
        }
    }
    let extra = Duration::from_millis(ctx.param_i64("extra_compute_ms").unwrap_or(0).max(0) as u64);
    let mut rasters = Vec::new();
    for pair in &pairs {
        let a = archive::read_band(ctx.input, &meta, pair.band_a)?;
        let b = archive::read_band(ctx.input, &meta, pair.band_b)?;
        let mut idx = ndwi(&a, &b)?;
        idx.index_name = pair.name.clone();
        rasters.push((idx, a, b));
    }
    if !extra.is_zero() {
        burn(extra, &rasters);
    }
    for (idx, _, _) in rasters {
        let name = format!("{}.{}.idx", meta.scene_id, idx.index_name);
        fs::write(ctx.output_dir.join(name), idx.encode())?;
    }
    Ok(())
}

/// CPU-bound filler: recomputes the indices until `budget` has elapsed.
/// Spends `budget` of this thread's CPU time, so co-scheduled workers cannot
/// share one budget by overlapping in wall time.
fn burn(budget: Duration, rasters: &[(IndexRaster, super::raster::BandRaster, super::raster::BandRaster)]) {
    let until = thread_cpu_time() + budget;
    while thread_cpu_time() < until {
        for (_, a, b) in rasters {
            std::hint::black_box(ndwi(a, b).ok());
        }
        if rasters.is_empty() {
            std::hint::spin_loop();
        }
    }
}

#[cfg(unix)]
fn thread_cpu_time() -> Duration {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid, writable timespec for the duration of the call.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    assert_eq!(rc, 0, "thread CPU clock unavailable");
    Duration::new(ts.tv_sec as u64, ts.tv_nsec as u32)
}

#[cfg(not(unix))]
fn thread_cpu_time() -> Duration {
    use std::sync::OnceLock;
    use std::time::Instant;
    static EPOCH: OnceLock<Instant> = OnceLock::new();
    EPOCH.get_or_init(Instant::now).elapsed()
}

fn summary(ctx: &TaskContext<'_>) -> Result<(), EosError> {
    let threshold = ctx.param_f64("threshold").unwrap_or(WATER_THRESHOLD);
    let idx = IndexRaster::decode(&fs::read(ctx.input)?)?;
    let s = water_percentage(&idx, threshold)?;
    let line = serde_json::to_string(&s).expect("summary serializes");
    fs::write(ctx.output_dir.join(format!("{}.{}.json", s.scene_id, s.index_name)), format!("{line}\n"))?;
    Ok(())
}
