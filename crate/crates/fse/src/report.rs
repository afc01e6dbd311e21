//! CSV reports. Every row carries the hash of the configuration that
//! produced it; nothing time-dependent is written, so reruns are
//! byte-identical.

use std::path::Path;

use serde::Serialize;

use fse_core::experiment::{BboxMetrics, OdoMetrics};
use fse_core::uncertainty::CalibrationReport;

use crate::error::Result;
use crate::fsutil::write_atomic;

/// One table row; cells a method does not produce stay empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricsRow {
    pub method: String,
    pub streams: String,
    pub visual: String,
    pub past: usize,
    pub subset: String,
    pub windows: usize,
    pub mse: Option<f64>,
    pub nll: Option<f64>,
    pub speed_mse: Option<f64>,
    pub angle_mse: Option<f64>,
    pub epistemic: Option<f64>,
    pub aleatoric: Option<f64>,
    pub spearman: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
}

impl MetricsRow {
    pub fn with_boxes(mut self, m: &BboxMetrics) -> Self {
        self.windows = m.windows;
        self.mse = Some(m.mse());
        self.nll = m.nll();
        self.epistemic = m.epistemic;
        self.aleatoric = m.aleatoric;
        self
    }

    pub fn with_odometry(mut self, m: &OdoMetrics) -> Self {
        self.windows = m.windows;
        self.speed_mse = Some(m.speed());
        self.angle_mse = Some(m.angle());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerStepRow {
    pub method: String,
    pub streams: String,
    pub past: usize,
    pub subset: String,
    pub metric: String,
    pub step: usize,
    pub value: f64,
    pub config_hash: String,
}

/// `n` rows per metric the row's source produced.
pub fn per_step_rows(key: &MetricsRow, boxes: Option<&BboxMetrics>, odo: Option<&OdoMetrics>) -> Vec<PerStepRow> {
    let mut series: Vec<(&str, &[f64])> = Vec::new();
    if let Some(b) = boxes {
        series.push(("mse", &b.mse_per_step));
        if let Some(n) = &b.nll_per_step {
            series.push(("nll", n));
        }
    }
    if let Some(o) = odo {
        series.push(("speed_mse", &o.speed_per_step));
        series.push(("angle_mse", &o.angle_per_step));
    }
    series
        .into_iter()
        .flat_map(|(metric, values)| {
            values.iter().enumerate().map(move |(j, &value)| PerStepRow {
                method: key.method.clone(),
                streams: key.streams.clone(),
                past: key.past,
                subset: key.subset.clone(),
                metric: metric.into(),
                step: j + 1,
                value,
                config_hash: key.config_hash.clone(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationRow {
    pub split: String,
    pub uncertainty: f64,
    pub sq_error: f64,
    /// Running max of ln(squared error) over equal-count uncertainty bins.
    pub envelope: f64,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationSummaryRow {
    pub split: String,
    pub pairs: usize,
    pub spearman: Option<f64>,
    pub config_hash: String,
}

/// Pairs of every split in ascending uncertainty, each with the envelope of its bin.
pub fn calibration_rows(reports: &[CalibrationReport], hash: &str) -> Vec<CalibrationRow> {
    let mut rows = Vec::new();
    for r in reports {
        let mut sorted = r.pairs.clone();
        sorted.sort_by(|a, b| a.uncertainty.total_cmp(&b.uncertainty));
        let bins = r.bins.len();
        for (i, p) in sorted.iter().enumerate() {
            // Inverse of the equal-count split lo = b·len/bins.
            let b = (0..bins).rev().find(|&b| b * sorted.len() / bins <= i).unwrap_or(0);
            rows.push(CalibrationRow {
                split: r.label.clone(),
                uncertainty: p.uncertainty,
                sq_error: p.sq_error,
                envelope: r.bins[b].envelope,
                config_hash: hash.into(),
            });
        }
    }
    rows
}

pub fn calibration_summary(reports: &[CalibrationReport], hash: &str) -> Vec<CalibrationSummaryRow> {
    reports
        .iter()
        .map(|r| CalibrationSummaryRow {
            split: r.label.clone(),
            pairs: r.pairs.len(),
            spearman: r.spearman,
            config_hash: hash.into(),
        })
        .collect()
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("row serializes to CSV");
    }
    w.into_inner().expect("in-memory CSV writer")
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, &csv_bytes(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use fse_core::uncertainty::{calibration_report, CalibrationPair};

    #[test]
    fn per_step_has_n_rows_per_metric() {
        let b = BboxMetrics {
            windows: 3,
            mse_per_step: vec![1.0, 2.0, 3.0],
            nll_per_step: Some(vec![0.5; 3]),
            epistemic: None,
            aleatoric: None,
            sequences: vec![],
        };
        let rows = per_step_rows(&MetricsRow::default(), Some(&b), None);
        assert_eq!(rows.len(), 6);
        assert_eq!(rows.iter().filter(|r| r.metric == "mse").count(), 3);
        assert_eq!(rows[2].step, 3);
    }

    #[test]
    fn envelope_column_is_non_decreasing() {
        let pairs: Vec<_> = (0..50)
            .map(|i| CalibrationPair {
                uncertainty: ((i * 37) % 50) as f64,
                sq_error: ((i * 11) % 23) as f64 + 0.1,
            })
            .collect();
        let r = calibration_report("all", &pairs, 7).unwrap();
        let rows = calibration_rows(&[r.clone()], "h");
        assert_eq!(rows.len(), 50);
        assert!(rows.windows(2).all(|w| w[1].envelope >= w[0].envelope));
        assert_eq!(rows.last().unwrap().envelope, r.bins.last().unwrap().envelope);
        // Every row's log error sits under its envelope.
        assert!(rows.iter().all(|x| x.sq_error.ln() <= x.envelope));
    }

    #[test]
    fn csv_has_header_and_empty_optionals() {
        let row = MetricsRow {
            method: "kalman".into(),
            mse: Some(1.5),
            ..Default::default()
        };
        let text = String::from_utf8(csv_bytes(&[row])).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("method,streams,visual,past,subset,windows,mse,nll"));
        assert!(lines.next().unwrap().starts_with("kalman,,,0,,0,1.5,,"));
    }
}
