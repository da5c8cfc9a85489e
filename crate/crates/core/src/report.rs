//! Result rows and their CSV / JSON serialization.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluated point of a sweep.
///
/// The first nine columns are the fixed schema; the rest are supplementary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub split: usize,
    pub ratio: f64,
    pub c_enc: usize,
    pub bandwidth: usize,
    pub snr_db: f64,
    pub accuracy: f64,
    pub device_flops: u64,
    /// Unsplit pretrained network on the same test set.
    pub baseline_accuracy: f64,
    pub seed: u64,
    /// Pruned split model evaluated without codec or channel.
    pub split_accuracy: f64,
    pub achieved_ratio: f64,
    /// Capacity-achieving digital bit budget over the same symbols.
    pub digital_bits: f64,
    /// Reference symbol count divided by `bandwidth`.
    pub bandwidth_reduction: f64,
    pub config_hash: String,
    pub pretrain_s: f64,
    pub prune_s: f64,
    pub codec_s: f64,
    pub e2e_s: f64,
    pub eval_s: f64,
}

pub const CSV_HEADER: [&str; 9] = [
    "split",
    "ratio",
    "c_enc",
    "bandwidth",
    "snr_db",
    "accuracy",
    "device_flops",
    "baseline_accuracy",
    "seed",
];

impl ResultRow {
    /// Resume key.
    pub fn key(&self) -> (String, u64) {
        (self.config_hash.clone(), self.snr_db.to_bits())
    }

    /// Equality ignoring wall-clock columns.
    pub fn same_result(&self, other: &ResultRow) -> bool {
        let strip = |r: &ResultRow| ResultRow {
            pretrain_s: 0.0,
            prune_s: 0.0,
            codec_s: 0.0,
            e2e_s: 0.0,
            eval_s: 0.0,
            ..r.clone()
        };
        strip(self) == strip(other)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

fn header_line() -> String {
    // serde field order
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(ResultRow::placeholder()).expect("in-memory write");
    let bytes = w.into_inner().expect("in-memory flush");
    String::from_utf8(bytes).expect("utf8").lines().next().unwrap_or_default().to_string()
}

impl ResultRow {
    fn placeholder() -> Self {
        ResultRow {
            split: 0,
            ratio: 0.0,
            c_enc: 0,
            bandwidth: 0,
            snr_db: 0.0,
            accuracy: 0.0,
            device_flops: 0,
            baseline_accuracy: 0.0,
            seed: 0,
            split_accuracy: 0.0,
            achieved_ratio: 0.0,
            digital_bits: 0.0,
            bandwidth_reduction: 0.0,
            config_hash: String::new(),
            pretrain_s: 0.0,
            prune_s: 0.0,
            codec_s: 0.0,
            e2e_s: 0.0,
            eval_s: 0.0,
        }
    }
}

/// Whole-table CSV; an empty table still gets the header.
pub fn to_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Input(format!("csv: {e}")))?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| Error::Input(format!("csv: {e}")))?)
        .expect("csv output is utf8");
    Ok(format!("{}\n{body}", header_line()))
}

pub fn from_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    rd.deserialize()
        .map(|r| r.map_err(|e| Error::Input(format!("csv: {e}"))))
        .collect()
}

pub fn to_json(rows: &[ResultRow]) -> Result<String> {
    Ok(serde_json::to_string_pretty(rows)?)
}

pub fn write_rows(path: &Path, rows: &[ResultRow], format: Format) -> Result<()> {
    if rows.is_empty() {
        log::warn!("writing empty results to {}", path.display());
    }
    let text = match format {
        Format::Csv => to_csv(rows)?,
        Format::Json => to_json(rows)?,
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Appends one row to a CSV file, writing the header first if the file is new.
pub fn append_csv(path: &Path, row: &ResultRow) -> Result<()> {
    let fresh = !path.exists() || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f: File = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let text = to_csv(std::slice::from_ref(row))?;
    let text = if fresh { text } else { text.lines().skip(1).map(|l| format!("{l}\n")).collect() };
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    from_csv(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
