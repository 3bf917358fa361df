//! Scene archives (`.tar.gz` holding `<scene_id>/B<k>.band` and
//! `<scene_id>/meta.txt`), scene bundles on disk, and the scene search.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use flate2::read::GzDecoder;
use flate2::{Compression, GzBuilder};
use serde::{Deserialize, Serialize};

use super::raster::{BandRaster, SceneMeta};
use super::EosError;

pub const META_FILE: &str = "meta.txt";

pub fn band_file_name(band: u16) -> String {
    format!("B{band}.band")
}

/// Contents of one scene: metadata plus raw band files by band id.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFiles {
    pub meta: SceneMeta,
    pub bands: BTreeMap<u16, Vec<u8>>,
}

/// Packs a scene deterministically: sorted entries, zeroed timestamps and owners.
pub fn pack_scene(files: &SceneFiles) -> Vec<u8> {
    let mut entries: Vec<(String, &[u8])> = Vec::new();
    let meta = files.meta.to_text();
    let id = &files.meta.scene_id;
    for (band, bytes) in &files.bands {
        entries.push((format!("{id}/{}", band_file_name(*band)), bytes));
    }
    entries.push((format!("{id}/{META_FILE}"), meta.as_bytes()));
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    let gz = GzBuilder::new().mtime(0).write(Vec::new(), Compression::default());
    let mut tar = tar::Builder::new(gz);
    for (name, bytes) in entries {
        let mut header = tar::Header::new_gnu();
        header.set_size(bytes.len() as u64);
        header.set_mode(0o644);
        header.set_mtime(0);
        header.set_uid(0);
        header.set_gid(0);
        header.set_entry_type(tar::EntryType::Regular);
        tar.append_data(&mut header, name, bytes).expect("in-memory tar write");
    }
    let mut gz = tar.into_inner().expect("in-memory tar finish");
    gz.flush().expect("in-memory gzip flush");
    gz.finish().expect("in-memory gzip finish")
}

/// Extracts a scene archive.
pub fn unpack_scene(archive: &[u8]) -> Result<SceneFiles, EosError> {
    let corrupt = |e: std::io::Error| EosError::CorruptArchive(e.to_string());
    let mut tar = tar::Archive::new(GzDecoder::new(archive));
    let mut meta_text = None;
    let mut bands = BTreeMap::new();
    for entry in tar.entries().map_err(corrupt)? {
        let mut entry = entry.map_err(corrupt)?;
        if !entry.header().entry_type().is_file() {
            continue;
        }
        let path = entry.path().map_err(corrupt)?.into_owned();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let mut bytes = Vec::new();
        entry.read_to_end(&mut bytes).map_err(corrupt)?;
        if name == META_FILE {
            meta_text = Some(String::from_utf8(bytes).map_err(|_| EosError::CorruptArchive("meta.txt is not UTF-8".into()))?);
        } else if let Some(id) = name.strip_prefix('B').and_then(|n| n.strip_suffix(".band")) {
            let id: u16 = id.parse().map_err(|_| EosError::CorruptArchive(format!("odd band file {name}")))?;
            bands.insert(id, bytes);
        }
    }
    let meta = SceneMeta::from_text(&meta_text.ok_or_else(|| EosError::CorruptArchive("no meta.txt".into()))?)?;
    Ok(SceneFiles { meta, bands })
}

/// Writes a scene as a directory bundle `dir/<scene_id>/`.
pub fn write_bundle(files: &SceneFiles, dir: &Path) -> Result<PathBuf, EosError> {
    let root = dir.join(&files.meta.scene_id);
    fs::create_dir_all(&root)?;
    fs::write(root.join(META_FILE), files.meta.to_text())?;
    for (band, bytes) in &files.bands {
        fs::write(root.join(band_file_name(*band)), bytes)?;
    }
    Ok(root)
}

/// Reads the scene metadata of a bundle directory.
pub fn read_bundle_meta(bundle: &Path) -> Result<SceneMeta, EosError> {
    let text = fs::read_to_string(bundle.join(META_FILE)).map_err(|e| EosError::BadMetadata(e.to_string()))?;
    SceneMeta::from_text(&text)
}

/// Band ids present in a bundle directory.
pub fn bundle_bands(bundle: &Path) -> Result<Vec<u16>, EosError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(bundle)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_prefix('B').and_then(|n| n.strip_suffix(".band")).and_then(|n| n.parse().ok()) {
            out.push(id);
        }
    }
    out.sort_unstable();
    Ok(out)
}

pub fn read_band(bundle: &Path, meta: &SceneMeta, band: u16) -> Result<BandRaster, EosError> {
    let path = bundle.join(band_file_name(band));
    if !path.exists() {
        return Err(EosError::MissingBand { scene: meta.scene_id.clone(), band });
    }
    BandRaster::decode(&fs::read(path)?, meta.clone())
}

/// Spatio-temporal scene query: a point and an inclusive date range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneQuery {
    pub lat: f64,
    pub lon: f64,
    #[serde(deserialize_with = "flexible_date")]
    pub start: NaiveDate,
    #[serde(deserialize_with = "flexible_date")]
    pub end: NaiveDate,
    /// Directory of `.tar.gz` scene archives.
    #[serde(default)]
    pub source: Option<PathBuf>,
}

/// Accepts a `YYYY-MM-DD` string or a bare TOML date.
fn flexible_date<'de, D: serde::Deserializer<'de>>(d: D) -> Result<NaiveDate, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Text(String),
        Toml(toml::value::Datetime),
    }
    let text = match Raw::deserialize(d)? {
        Raw::Text(s) => s,
        Raw::Toml(dt) => dt.to_string(),
    };
    NaiveDate::parse_from_str(&text, "%Y-%m-%d").map_err(serde::de::Error::custom)
}

/// Archives under `source` whose bbox contains the query point and whose
/// date lies in the range, sorted by file name.
pub fn download(query: &SceneQuery, source: &Path) -> Result<Vec<PathBuf>, EosError> {
    let entries = fs::read_dir(source).map_err(|e| EosError::SourceUnavailable(format!("{}: {e}", source.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".tar.gz"))
        .collect();
    paths.sort();
    let mut hits = Vec::new();
    for path in paths {
        let meta = match unpack_scene(&fs::read(&path)?) {
            Ok(files) => files.meta,
            Err(e) => {
                tracing::warn!(path = %path.display(), error = %e, "skipping unreadable archive");
                continue;
            }
        };
        if meta.bbox.contains(query.lon, query.lat) && (query.start..=query.end).contains(&meta.acquisition_date) {
            hits.push(path);
        }
    }
    Ok(hits)
}
