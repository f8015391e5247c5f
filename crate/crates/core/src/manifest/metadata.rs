//! Corpus metadata CSV: `sha256, pkg_name, vercode, vt_detection, markets,
//! dex_date`. Markets are pipe-separated; the release year is taken from
//! the ISO date.

use std::collections::{BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetadataError {
    #[error("metadata csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("metadata row {row}: {msg}")]
    Row { row: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetadataRow {
    pub sha256: String,
    pub pkg_name: String,
    pub vercode: Option<u64>,
    pub vt_detection: Option<u32>,
    pub markets: BTreeSet<String>,
    pub dex_year: Option<i32>,
}

#[derive(Deserialize)]
struct RawRow {
    sha256: String,
    #[serde(default)]
    pkg_name: String,
    #[serde(default)]
    vercode: String,
    #[serde(default)]
    vt_detection: String,
    #[serde(default)]
    markets: String,
    #[serde(default)]
    dex_date: String,
}

/// Year of an ISO date, tolerating a trailing time part.
pub fn year_of(date: &str) -> Option<i32> {
    let date = date.trim();
    let day = date.get(..10)?;
    NaiveDate::parse_from_str(day, "%Y-%m-%d").ok().map(|d| d.year())
}

fn opt_num<T: std::str::FromStr>(s: &str, row: usize, field: &str) -> Result<Option<T>, MetadataError> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| MetadataError::Row {
        row,
        msg: format!("{field} is not a non-negative integer: {s:?}"),
    })
}

/// Reads metadata rows keyed by lower-case sha256.
pub fn read_metadata<R: Read>(reader: R) -> Result<HashMap<String, MetadataRow>, MetadataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = HashMap::new();
    for (i, rec) in rdr.deserialize::<RawRow>().enumerate() {
        let raw = rec?;
        let row = i + 2;
        let sha = raw.sha256.trim().to_ascii_lowercase();
        if sha.is_empty() {
            return Err(MetadataError::Row { row, msg: "empty sha256".into() });
        }
        let dex_year = if raw.dex_date.trim().is_empty() {
            None
        } else {
            Some(year_of(&raw.dex_date).ok_or_else(|| MetadataError::Row {
                row,
                msg: format!("bad dex_date {:?}", raw.dex_date),
            })?)
        };
        out.insert(
            sha.clone(),
            MetadataRow {
                sha256: sha,
                pkg_name: raw.pkg_name,
                vercode: opt_num(&raw.vercode, row, "vercode")?,
                vt_detection: opt_num(&raw.vt_detection, row, "vt_detection")?,
                markets: raw
                    .markets
                    .split('|')
                    .map(str::trim)
                    .filter(|m| !m.is_empty())
                    .map(str::to_string)
                    .collect(),
                dex_year,
            },
        );
    }
    Ok(out)
}

pub fn load_metadata(path: &Path) -> Result<HashMap<String, MetadataRow>, MetadataError> {
    let file = std::fs::File::open(path).map_err(|e| MetadataError::Csv(e.into()))?;
    read_metadata(file)
}
