use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use josnc_core::datagen::NoiseKind;
use josnc_core::selector::SampleKind;

use crate::error::HarnessError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// From confusion counts; empty denominators give 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { precision, recall, f1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    /// CLEAN predictions scored against samples whose label is correct.
    pub clean: Prf,
    /// OOD predictions scored against samples drawn from OOD classes.
    pub ood: Prf,
}

/// Scores one epoch of selector decisions against the hidden tags.
pub fn evaluate_selection(
    assignments: &[(u64, SampleKind)],
    tags: &HashMap<u64, NoiseKind>,
) -> Result<SelectionMetrics, HarnessError> {
    let mut clean = [0usize; 3];
    let mut ood = [0usize; 3];
    for &(id, kind) in assignments {
        let truth = *tags.get(&id).ok_or_else(|| HarnessError::Format(format!("no tag for sample {id}")))?;
        tally(&mut clean, kind == SampleKind::Clean, truth == NoiseKind::Clean);
        tally(&mut ood, kind == SampleKind::Ood, truth == NoiseKind::OodNoisy);
    }
    Ok(SelectionMetrics {
        clean: Prf::from_counts(clean[0], clean[1], clean[2]),
        ood: Prf::from_counts(ood[0], ood[1], ood[2]),
    })
}

fn tally(counts: &mut [usize; 3], predicted: bool, actual: bool) {
    match (predicted, actual) {
        (true, true) => counts[0] += 1,
        (true, false) => counts[1] += 1,
        (false, true) => counts[2] += 1,
        (false, false) => {}
    }
}
