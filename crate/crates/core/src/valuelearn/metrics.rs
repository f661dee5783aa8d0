use std::fs::File;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::losses::StepMetrics;

/// Append-only CSV of value-training metrics.
pub struct MetricsWriter {
    path: PathBuf,
    writer: csv::Writer<File>,
    pending: usize,
    flush_every: usize,
}

impl MetricsWriter {
    pub const HEADER: [&'static str; 5] = ["step", "td_loss", "penalty", "mean_grad_norm", "mean_value"];

    pub fn create(path: &Path, flush_every: usize) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(Self::HEADER)?;
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            writer,
            pending: 0,
            flush_every: flush_every.max(1),
        })
    }

    pub fn write(&mut self, m: &StepMetrics) -> Result<()> {
        let grad = m.mean_grad_norm.map(|g| g.to_string()).unwrap_or_default();
        self.writer.write_record([
            m.step.to_string(),
            m.td_loss.to_string(),
            m.penalty.to_string(),
            grad,
            m.mean_value.to_string(),
        ])?;
        self.pending += 1;
        if self.pending >= self.flush_every {
            self.flush()?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.pending = 0;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

impl Drop for MetricsWriter {
    fn drop(&mut self) {
        let _ = self.writer.flush();
    }
}

/// Reads back a metrics file written by [`MetricsWriter`].
pub fn read_metrics(path: &Path) -> Result<Vec<StepMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> {
            rec.get(i)
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::Dataset(format!("bad metrics field in {}", path.display())))
        };
        let grad = match rec.get(3) {
            Some("") | None => None,
            Some(_) => Some(f(3)?),
        };
        out.push(StepMetrics {
            step: f(0)? as usize,
            td_loss: f(1)?,
            penalty: f(2)?,
            mean_grad_norm: grad,
            mean_value: f(4)?,
        });
    }
    Ok(out)
}
