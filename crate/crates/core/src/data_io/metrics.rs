use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// One line of a metrics CSV (`epoch,run,metric,value`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub run: usize,
    pub metric: String,
    pub value: f64,
}

/// Collects metric rows and writes them as CSV with a fixed header.
#[derive(Debug, Default, Clone)]
pub struct MetricsWriter {
    rows: Vec<MetricRow>,
}

impl MetricsWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, epoch: usize, run: usize, metric: impl Into<String>, value: f64) {
        self.rows.push(MetricRow { epoch, run, metric: metric.into(), value });
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        }
        // an empty writer never emits the header row
        if self.rows.is_empty() {
            return Ok("epoch,run,metric,value\n".to_string());
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}
