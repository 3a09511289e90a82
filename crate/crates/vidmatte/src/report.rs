//! Evaluation reports and training logs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use vidmatte_core::metrics::MetricReport;
use vidmatte_core::trainer::StepLog;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    pub sad: f64,
    pub mse: f64,
    pub grad: f64,
    pub conn: f64,
    pub dtssd: Option<f64>,
    pub messddt: Option<f64>,
    pub frames: usize,
    pub masked_pixels: usize,
}

impl From<&MetricReport> for Metrics {
    fn from(r: &MetricReport) -> Self {
        Self { sad: r.sad, mse: r.mse, grad: r.grad, conn: r.conn, dtssd: r.dtssd, messddt: r.messddt, frames: r.frames, masked_pixels: r.masked_pixels }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipReport {
    pub clip: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationReport {
    pub motion: String,
    pub mask: String,
    pub clips: Vec<ClipReport>,
    pub aggregate: Metrics,
}

const CSV_HEADER: [&str; 9] = ["clip", "sad", "mse", "grad", "conn", "dtssd", "messddt", "frames", "masked_pixels"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn metric_row(name: &str, m: &Metrics) -> Vec<String> {
    vec![
        name.to_string(),
        m.sad.to_string(),
        m.mse.to_string(),
        m.grad.to_string(),
        m.conn.to_string(),
        opt(m.dtssd),
        opt(m.messddt),
        m.frames.to_string(),
        m.masked_pixels.to_string(),
    ]
}

/// One row per clip followed by an `aggregate` row; absent metrics are empty cells.
pub fn write_csv(path: &Path, report: &EvaluationReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e))?;
    let mut rows = vec![CSV_HEADER.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    rows.extend(report.clips.iter().map(|c| metric_row(&c.clip, &c.metrics)));
    rows.push(metric_row("aggregate", &report.aggregate));
    for row in rows {
        w.write_record(&row).map_err(|e| Error::format(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-frame SAD as `clip,frame,sad` rows.
pub fn write_frame_csv(path: &Path, rows: &[(String, Vec<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e))?;
    w.write_record(["clip", "frame", "sad"]).map_err(|e| Error::format(path, e))?;
    for (clip, values) in rows {
        for (t, v) in values.iter().enumerate() {
            w.write_record([clip.clone(), t.to_string(), v.to_string()]).map_err(|e| Error::format(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// CSV training log: step, epoch, learning rate, total loss and each matting term.
pub struct TrainLog {
    writer: csv::Writer<std::fs::File>,
    path: std::path::PathBuf,
}

impl TrainLog {
    pub const HEADER: [&'static str; 9] = ["step", "epoch", "lr", "loss", "alpha", "composition", "gradient", "kl", "temporal"];

    pub fn create(path: &Path, append: bool) -> Result<Self> {
        let exists = append && path.exists();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut writer = csv::WriterBuilder::new().from_writer(file);
        if !exists {
            writer.write_record(Self::HEADER).map_err(|e| Error::format(path, e))?;
        }
        Ok(Self { writer, path: path.to_path_buf() })
    }

    pub fn record(&mut self, log: &StepLog) -> Result<()> {
        let terms = match &log.terms {
            Some(t) => [t.alpha, t.composition, t.gradient, t.kl, t.temporal].map(|v| v.to_string()),
            None => Default::default(),
        };
        let mut row = vec![log.step.to_string(), log.epoch.to_string(), log.lr.to_string(), log.loss.to_string()];
        row.extend(terms);
        self.writer.write_record(&row).map_err(|e| Error::format(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}
