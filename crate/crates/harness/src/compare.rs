use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::metrics::{read_metrics, tail_mean, MetricsRow, COLUMNS};
use crate::run::METRICS_FILE;

const LAST_N: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochDelta {
    pub epoch: usize,
    /// `B − A` per metric column.
    pub delta: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub run_a: String,
    pub run_b: String,
    pub epochs: Vec<EpochDelta>,
    pub last10_a: BTreeMap<String, f64>,
    pub last10_b: BTreeMap<String, f64>,
    pub last10_delta: BTreeMap<String, f64>,
    pub best_test_acc_a: f64,
    pub best_test_acc_b: f64,
}

fn named(values: [f64; 14]) -> BTreeMap<String, f64> {
    COLUMNS[1..].iter().map(|c| c.to_string()).zip(values).collect()
}

fn last_means(rows: &[MetricsRow]) -> [f64; 14] {
    std::array::from_fn(|i| tail_mean(rows, LAST_N, |r| r.values()[i]))
}

pub fn compare_rows(name_a: &str, a: &[MetricsRow], name_b: &str, b: &[MetricsRow]) -> CompareReport {
    let epochs = a
        .iter()
        .filter_map(|ra| {
            let rb = b.iter().find(|rb| rb.epoch == ra.epoch)?;
            let (va, vb) = (ra.values(), rb.values());
            Some(EpochDelta { epoch: ra.epoch, delta: named(std::array::from_fn(|i| vb[i] - va[i])) })
        })
        .collect();
    let (ma, mb) = (last_means(a), last_means(b));
    let best = |rows: &[MetricsRow]| rows.iter().map(|r| r.test_acc).fold(0.0, f64::max);
    CompareReport {
        run_a: name_a.to_string(),
        run_b: name_b.to_string(),
        epochs,
        last10_a: named(ma),
        last10_b: named(mb),
        last10_delta: named(std::array::from_fn(|i| mb[i] - ma[i])),
        best_test_acc_a: best(a),
        best_test_acc_b: best(b),
    }
}

/// Compares two finished run directories. Both must hold a `metrics.csv`
/// with the fixed header; anything else is rejected.
pub fn compare(dir_a: &Path, dir_b: &Path) -> Result<CompareReport, HarnessError> {
    let a = read_metrics(&dir_a.join(METRICS_FILE))?;
    let b = read_metrics(&dir_b.join(METRICS_FILE))?;
    Ok(compare_rows(&dir_a.display().to_string(), &a, &dir_b.display().to_string(), &b))
}

impl CompareReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "A: {}\nB: {}", self.run_a, self.run_b);
        let _ = writeln!(s, "matched epochs: {}", self.epochs.len());
        let _ = writeln!(s, "{:<16} {:>12} {:>12} {:>12}", "last-10 mean", "A", "B", "B - A");
        for (k, d) in &self.last10_delta {
            let _ = writeln!(s, "{k:<16} {:>12.6} {:>12.6} {d:>+12.6}", self.last10_a[k], self.last10_b[k]);
        }
        let _ = writeln!(
            s,
            "best test_acc: A {:.6}  B {:.6}  B - A {:+.6}",
            self.best_test_acc_a,
            self.best_test_acc_b,
            self.best_test_acc_b - self.best_test_acc_a
        );
        s
    }
}
