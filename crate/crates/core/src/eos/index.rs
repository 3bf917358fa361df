//! Queryable scene metadata index, one JSON record per line.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::raster::{Bbox, SceneMeta};
use super::EosError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRecord {
    pub scene_id: String,
    pub acquisition_date: NaiveDate,
    pub path: u32,
    pub row: u32,
    pub bbox: Bbox,
    /// Band ids (or product ids) available for the scene.
    pub products: Vec<String>,
}

impl IndexRecord {
    pub fn new(meta: &SceneMeta, products: Vec<String>) -> Self {
        IndexRecord {
            scene_id: meta.scene_id.clone(),
            acquisition_date: meta.acquisition_date,
            path: meta.path,
            row: meta.row,
            bbox: meta.bbox,
            products,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct IndexQuery {
    pub scene_id: Option<String>,
    pub dates: Option<(NaiveDate, NaiveDate)>,
    pub path_row: Option<(u32, u32)>,
}

#[derive(Debug)]
pub struct MetadataIndex {
    path: PathBuf,
    records: Vec<IndexRecord>,
}

impl MetadataIndex {
    pub fn open(path: &Path) -> Result<Self, EosError> {
        let mut records = Vec::new();
        if path.exists() {
            for line in fs::read_to_string(path)?.lines().filter(|l| !l.trim().is_empty()) {
                records.push(serde_json::from_str(line).map_err(|e| EosError::BadMetadata(e.to_string()))?);
            }
        }
        Ok(MetadataIndex { path: path.to_path_buf(), records })
    }

    /// Appends the record unless its scene is already indexed.
    pub fn insert(&mut self, record: IndexRecord) -> Result<bool, EosError> {
        if self.records.iter().any(|r| r.scene_id == record.scene_id) {
            return Ok(false);
        }
        if let Some(parent) = self.path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        writeln!(file, "{}", serde_json::to_string(&record).expect("record serializes"))?;
        self.records.push(record);
        Ok(true)
    }

    pub fn query(&self, q: &IndexQuery) -> Vec<&IndexRecord> {
        self.records
            .iter()
            .filter(|r| q.scene_id.as_ref().is_none_or(|id| &r.scene_id == id))
            .filter(|r| q.dates.is_none_or(|(a, b)| (a..=b).contains(&r.acquisition_date)))
            .filter(|r| q.path_row.is_none_or(|pr| (r.path, r.row) == pr))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
