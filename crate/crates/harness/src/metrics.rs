//! `metrics.csv`: one row per epoch, fixed column order, `.` decimals, `\n`
//! line endings, no quoting. Floats use Rust's shortest round-trip formatting.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

pub const COLUMNS: [&str; 15] = [
    "epoch",
    "train_loss",
    "l_cls",
    "l_con_s",
    "l_con_n",
    "l_con_f",
    "test_acc",
    "clean_precision",
    "clean_recall",
    "clean_f1",
    "ood_precision",
    "ood_recall",
    "ood_f1",
    "mean_tau_clean",
    "mean_tau_ood",
];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub l_cls: f64,
    pub l_con_s: f64,
    pub l_con_n: f64,
    pub l_con_f: f64,
    pub test_acc: f64,
    pub clean_precision: f64,
    pub clean_recall: f64,
    pub clean_f1: f64,
    pub ood_precision: f64,
    pub ood_recall: f64,
    pub ood_f1: f64,
    pub mean_tau_clean: f64,
    pub mean_tau_ood: f64,
}

impl MetricsRow {
    /// Every column after `epoch`, in file order.
    pub fn values(&self) -> [f64; 14] {
        [
            self.train_loss,
            self.l_cls,
            self.l_con_s,
            self.l_con_n,
            self.l_con_f,
            self.test_acc,
            self.clean_precision,
            self.clean_recall,
            self.clean_f1,
            self.ood_precision,
            self.ood_recall,
            self.ood_f1,
            self.mean_tau_clean,
            self.mean_tau_ood,
        ]
    }

    fn from_values(epoch: usize, v: [f64; 14]) -> Self {
        let [train_loss, l_cls, l_con_s, l_con_n, l_con_f, test_acc, clean_precision, clean_recall, clean_f1, ood_precision, ood_recall, ood_f1, mean_tau_clean, mean_tau_ood] =
            v;
        Self {
            epoch,
            train_loss,
            l_cls,
            l_con_s,
            l_con_n,
            l_con_f,
            test_acc,
            clean_precision,
            clean_recall,
            clean_f1,
            ood_precision,
            ood_recall,
            ood_f1,
            mean_tau_clean,
            mean_tau_ood,
        }
    }

    pub fn to_csv_line(&self) -> String {
        let mut line = self.epoch.to_string();
        for v in self.values() {
            line.push(',');
            line.push_str(&v.to_string());
        }
        line.push('\n');
        line
    }

    pub fn parse_line(line: &str) -> Result<Self, HarnessError> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != COLUMNS.len() {
            return Err(HarnessError::Format(format!("metrics row has {} fields, expected {}", fields.len(), COLUMNS.len())));
        }
        let bad = |f: &str| HarnessError::Format(format!("metrics field {f:?} is not a number"));
        let epoch = fields[0].parse().map_err(|_| bad(fields[0]))?;
        let mut v = [0.0; 14];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| bad(f))?;
        }
        Ok(Self::from_values(epoch, v))
    }
}

pub fn header_line() -> String {
    COLUMNS.join(",") + "\n"
}

/// Appends rows and flushes after each, so a crashed run leaves every finished epoch on disk.
pub struct MetricsWriter {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        let file = File::create(path).map_err(HarnessError::io(path))?;
        let mut w = Self { out: BufWriter::new(file), path: path.to_path_buf() };
        w.write_raw(&header_line())?;
        Ok(w)
    }

    pub fn write_row(&mut self, row: &MetricsRow) -> Result<(), HarnessError> {
        self.write_raw(&row.to_csv_line())
    }

    fn write_raw(&mut self, s: &str) -> Result<(), HarnessError> {
        self.out.write_all(s.as_bytes()).and_then(|_| self.out.flush()).map_err(HarnessError::io(&self.path))
    }
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRow>, HarnessError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == COLUMNS.join(",") => {}
        Some(h) => return Err(HarnessError::Format(format!("metrics header mismatch: {h}"))),
        None => return Err(HarnessError::Format("empty metrics file".into())),
    }
    lines.map(MetricsRow::parse_line).collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
    parse_metrics(&text).map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))
}

/// Mean of `f` over the last `n` rows (fewer if the run is shorter).
pub fn tail_mean(rows: &[MetricsRow], n: usize, f: impl Fn(&MetricsRow) -> f64) -> f64 {
    let tail = &rows[rows.len().saturating_sub(n)..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().map(f).sum::<f64>() / tail.len() as f64
}
