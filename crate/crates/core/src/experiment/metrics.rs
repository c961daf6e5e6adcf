use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Column order of metrics.csv.
pub const METRICS_HEADER: [&str; 7] =
    ["regime", "shift", "severity", "seed", "main_error_pct", "ss_error_pct", "wall_ms"];

/// One evaluation: a regime on one shifted test set for one seed.
/// `severity` is 0 for the clean set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub regime: String,
    pub shift: String,
    pub severity: u8,
    pub seed: u64,
    pub main_error_pct: f64,
    pub ss_error_pct: f64,
    pub wall_ms: u64,
}

pub fn write_metrics<W: Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics<R: Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
