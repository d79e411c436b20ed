use std::fs::{self, File};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::raw;
use crate::error::{Error, Result};
use crate::grid3d::Localization;
use crate::metrics::{jaccard, rmse, MatchResult};

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    frame: usize,
    x_nm: f64,
    y_nm: f64,
    z_nm: f64,
    photons: f64,
}

impl From<&Localization> for Row {
    fn from(l: &Localization) -> Self {
        Row { frame: l.frame, x_nm: l.x, y_nm: l.y, z_nm: l.z, photons: l.photons }
    }
}

impl From<Row> for Localization {
    fn from(r: Row) -> Self {
        Localization { frame: r.frame, x: r.x_nm, y: r.y_nm, z: r.z_nm, photons: r.photons }
    }
}

const HEADER: [&str; 5] = ["frame", "x_nm", "y_nm", "z_nm", "photons"];

/// Writes `frame,x_nm,y_nm,z_nm,photons` rows; floats use shortest
/// round-trip formatting, so a reload is bit-exact.
pub fn write_localizations(path: &Path, locs: &[Localization]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if locs.is_empty() {
        w.write_record(HEADER)?;
    }
    for l in locs {
        w.serialize(Row::from(l))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_localizations(path: &Path) -> Result<Vec<Localization>> {
    let mut r = csv::Reader::from_reader(File::open(path)?);
    let headers = r.headers()?.clone();
    if headers.iter().ne(HEADER) {
        return Err(Error::corrupt(path, format!("unexpected CSV header {:?}", headers.iter().collect::<Vec<_>>())));
    }
    r.deserialize::<Row>()
        .map(|row| row.map(Localization::from).map_err(|e| Error::corrupt(path, e.to_string())))
        .collect()
}

/// Ground-truth emitters share the localization CSV layout.
pub fn write_emitters(path: &Path, emitters: &[Localization]) -> Result<()> {
    write_localizations(path, emitters)
}

pub fn read_emitters(path: &Path) -> Result<Vec<Localization>> {
    read_localizations(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub density: f64,
    pub jaccard: f64,
    /// Absent (an empty CSV field) when nothing was matched.
    pub rmse_lat_nm: Option<f64>,
    pub rmse_ax_nm: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ReportRow {
    pub fn from_match(density: f64, m: &MatchResult, gt: &[Localization], pred: &[Localization]) -> Self {
        let rmse = rmse(m, gt, pred);
        Self {
            density,
            jaccard: jaccard(m),
            rmse_lat_nm: rmse.map(|r| r.0),
            rmse_ax_nm: rmse.map(|r| r.1),
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
        }
    }
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(["density", "jaccard", "rmse_lat_nm", "rmse_ax_nm", "tp", "fp", "fn"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(File::open(path)?);
    r.deserialize().map(|row| row.map_err(|e| Error::corrupt(path, e.to_string()))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub fingerprint: String,
    pub config: serde_json::Value,
    pub rows: Vec<ReportRow>,
}

/// SHA-256 of the canonical (sorted-key) JSON encoding of a config.
pub fn fingerprint<T: Serialize>(config: &T) -> Result<String> {
    let value = serde_json::to_value(config)?;
    Ok(raw::sha256_hex(serde_json::to_string(&value)?.as_bytes()))
}

pub fn write_summary<T: Serialize>(path: &Path, config: &T, rows: &[ReportRow]) -> Result<ReportSummary> {
    let summary = ReportSummary { fingerprint: fingerprint(config)?, config: serde_json::to_value(config)?, rows: rows.to_vec() };
    fs::write(path, serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}
