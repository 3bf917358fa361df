//! Band and index raster containers.
//!
//! Band file (`B<k>.band`), little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `GNB1` |
//! | 4     | width (u32) |
//! | 4     | height (u32) |
//! | 2     | band id (u16) |
//! | 2     | reserved, 0 |
//! | 8     | scale (f64): reflectance = DN × scale |
//! | 2·w·h | DN samples (u16), row-major, north-up; DN 0 is nodata |
//!
//! Index file (`*.idx`), little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `GNI1` |
//! | 4     | width (u32) |
//! | 4     | height (u32) |
//! | 2     | name length n (u16), then n bytes of UTF-8 index name |
//! | 4     | meta length m (u32), then m bytes of scene `meta.txt` |
//! | 4·w·h | values (f32), row-major; [`FILL`] marks undefined pixels |

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::EosError;

pub const BAND_MAGIC: &[u8; 4] = b"GNB1";
pub const INDEX_MAGIC: &[u8; 4] = b"GNI1";
const BAND_HEADER: usize = 24;

/// Fill sentinel for undefined index pixels; outside every index's range.
pub const FILL: f32 = -9999.0;

/// Geographic box in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bbox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl Bbox {
    pub fn new(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Self {
        Bbox { min_lon, min_lat, max_lon, max_lat }
    }

    pub fn is_valid(&self) -> bool {
        self.min_lon < self.max_lon && self.min_lat < self.max_lat
    }

    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        (self.min_lon..=self.max_lon).contains(&lon) && (self.min_lat..=self.max_lat).contains(&lat)
    }

    pub fn intersect(&self, other: &Bbox) -> Option<Bbox> {
        let b = Bbox::new(
            self.min_lon.max(other.min_lon),
            self.min_lat.max(other.min_lat),
            self.max_lon.min(other.max_lon),
            self.max_lat.min(other.max_lat),
        );
        b.is_valid().then_some(b)
    }
}

/// Scene metadata, stored as `meta.txt` (TOML) next to the bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub scene_id: String,
    pub acquisition_date: NaiveDate,
    pub path: u32,
    pub row: u32,
    pub bbox: Bbox,
}

impl SceneMeta {
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("scene metadata serializes")
    }

    pub fn from_text(text: &str) -> Result<SceneMeta, EosError> {
        let meta: SceneMeta = toml::from_str(text).map_err(|e| EosError::BadMetadata(e.to_string()))?;
        if !meta.bbox.is_valid() || meta.path == 0 || meta.row == 0 {
            return Err(EosError::BadMetadata(format!("scene {} has an invalid bbox or path/row", meta.scene_id)));
        }
        Ok(meta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandRaster {
    pub width: u32,
    pub height: u32,
    pub band_id: u16,
    pub scale: f64,
    pub pixels: Vec<u16>,
    pub scene: SceneMeta,
}

impl BandRaster {
    pub fn reflectance(&self, i: usize) -> f64 {
        self.pixels[i] as f64 * self.scale
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(BAND_HEADER + self.pixels.len() * 2);
        out.extend_from_slice(BAND_MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.band_id.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&self.scale.to_le_bytes());
        for p in &self.pixels {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], scene: SceneMeta) -> Result<BandRaster, EosError> {
        if bytes.len() < BAND_HEADER || &bytes[..4] != BAND_MAGIC {
            return Err(EosError::BadRaster("not a band file".into()));
        }
        let width = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        let height = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        let band_id = u16::from_le_bytes(bytes[12..14].try_into().expect("2 bytes"));
        let scale = f64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
        let n = width as usize * height as usize;
        let body = &bytes[BAND_HEADER..];
        if body.len() != n * 2 {
            return Err(EosError::BadRaster(format!("band {band_id}: {} sample bytes for {width}x{height}", body.len())));
        }
        let pixels = body.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        Ok(BandRaster { width, height, band_id, scale, pixels, scene })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexRaster {
    pub index_name: String,
    pub width: u32,
    pub height: u32,
    pub values: Vec<f32>,
    pub scene: SceneMeta,
}

impl IndexRaster {
    pub fn encode(&self) -> Vec<u8> {
        let meta = self.scene.to_text();
        let mut out = Vec::with_capacity(22 + self.index_name.len() + meta.len() + self.values.len() * 4);
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&(self.index_name.len() as u16).to_le_bytes());
        out.extend_from_slice(self.index_name.as_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<IndexRaster, EosError> {
        let bad = |what: &str| EosError::BadRaster(format!("index file: {what}"));
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok_or_else(|| bad("truncated"))? != INDEX_MAGIC {
            return Err(bad("bad magic"));
        }
        let width = r.u32().ok_or_else(|| bad("truncated"))?;
        let height = r.u32().ok_or_else(|| bad("truncated"))?;
        let name_len = u16::from_le_bytes(r.take(2).ok_or_else(|| bad("truncated"))?.try_into().expect("2 bytes"));
        let name = std::str::from_utf8(r.take(name_len as usize).ok_or_else(|| bad("truncated"))?)
            .map_err(|_| bad("name is not UTF-8"))?
            .to_string();
        let meta_len = r.u32().ok_or_else(|| bad("truncated"))?;
        let meta = std::str::from_utf8(r.take(meta_len as usize).ok_or_else(|| bad("truncated"))?)
            .map_err(|_| bad("metadata is not UTF-8"))?;
        let scene = SceneMeta::from_text(meta)?;
        let n = width as usize * height as usize;
        let body = r.take(n * 4).ok_or_else(|| bad("truncated values"))?;
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let values = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(IndexRaster { index_name: name, width, height, values, scene })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn meta() -> SceneMeta {
        SceneMeta {
            scene_id: "LC08_027046_20210101".into(),
            acquisition_date: NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
            path: 27,
            row: 46,
            bbox: Bbox::new(0.0, 0.0, 4.0, 4.0),
        }
    }

    #[test]
    fn band_roundtrip() {
        let b = BandRaster { width: 2, height: 1, band_id: 4, scale: 2e-5, pixels: vec![0, 50000], scene: meta() };
        let bytes = b.encode();
        assert_eq!(&bytes[..4], b"GNB1");
        assert_eq!(BandRaster::decode(&bytes, meta()).unwrap(), b);
        assert!(BandRaster::decode(&bytes[..bytes.len() - 1], meta()).is_err());
    }

    #[test]
    fn index_roundtrip() {
        let r = IndexRaster { index_name: "NDWI_red".into(), width: 2, height: 1, values: vec![0.5, FILL], scene: meta() };
        assert_eq!(IndexRaster::decode(&r.encode()).unwrap(), r);
        let mut bytes = r.encode();
        bytes.push(0);
        assert!(IndexRaster::decode(&bytes).is_err());
    }

    #[test]
    fn meta_text_roundtrip() {
        let m = meta();
        assert_eq!(SceneMeta::from_text(&m.to_text()).unwrap(), m);
        let mut bad = m.clone();
        bad.bbox.max_lon = -1.0;
        assert!(SceneMeta::from_text(&bad.to_text()).is_err());
    }
}
