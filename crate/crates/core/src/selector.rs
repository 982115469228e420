//! Clean / ID / OOD partitioning with per-class adaptive thresholds.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::diffmath::{js_divergence, ProbVec};
use crate::embedqueue::Neighbor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleKind {
    Clean,
    Id,
    Ood,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleScores<T> {
    /// `1 − JS(p, smoothed label)`
    pub p_clean: T,
    /// `JS(p, p′)` between the two augmented views
    pub p_ood: T,
    /// Mean enqueue-time `p_clean` of the K neighbors, when K were available.
    pub neighbor_mean_p_clean: Option<T>,
    /// Whether every neighbor carries the sample's observed label.
    pub neighbors_share_label: Option<bool>,
}

/// Scores one sample from its two view predictions and smoothed label.
pub fn score_sample<T: Scalar>(
    p: &ProbVec<T>,
    p_prime: &ProbVec<T>,
    y_smoothed: &ProbVec<T>,
    observed_label: usize,
    neighbors: Option<&[Neighbor<'_, T>]>,
) -> Result<SampleScores<T>> {
    let p_clean = T::one() - js_divergence(p, y_smoothed)?;
    let p_ood = js_divergence(p, p_prime)?;
    let (neighbor_mean_p_clean, neighbors_share_label) = match neighbors {
        Some(nn) if !nn.is_empty() => {
            let mean = nn.iter().map(|n| n.entry.p_clean_at_enqueue).sum::<T>() / T::from_usize_lossy(nn.len());
            let share = nn.iter().all(|n| n.entry.observed_label == observed_label);
            (Some(mean), Some(share))
        }
        _ => (None, None),
    };
    Ok(SampleScores { p_clean, p_ood, neighbor_mean_p_clean, neighbors_share_label })
}

/// Criterion 1 (clean, by own score or by unanimous neighbors), then
/// Criterion 2 (OOD if the views disagree enough), else ID.
pub fn classify_sample<T: Scalar>(
    scores: &SampleScores<T>,
    observed_label: usize,
    thresholds: &ThresholdState<T>,
) -> SampleKind {
    let tau_clean = thresholds.tau_clean[observed_label];
    let tau_ood = thresholds.tau_ood[observed_label];
    let by_self = scores.p_clean > tau_clean;
    let by_neighbors = scores.neighbors_share_label == Some(true)
        && scores.neighbor_mean_p_clean.is_some_and(|m| m > tau_clean);
    if by_self || by_neighbors {
        SampleKind::Clean
    } else if scores.p_ood > tau_ood {
        SampleKind::Ood
    } else {
        SampleKind::Id
    }
}

/// Per-class thresholds plus the running sums for the current epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdState<T> {
    tau_clean: Vec<T>,
    tau_ood: Vec<T>,
    sum_clean: Vec<T>,
    sum_ood: Vec<T>,
    counts: Vec<usize>,
}

impl<T: Scalar> ThresholdState<T> {
    /// All thresholds start at zero.
    pub fn new(num_classes: usize) -> Self {
        Self {
            tau_clean: vec![T::zero(); num_classes],
            tau_ood: vec![T::zero(); num_classes],
            sum_clean: vec![T::zero(); num_classes],
            sum_ood: vec![T::zero(); num_classes],
            counts: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.tau_clean.len()
    }

    pub fn tau_clean(&self) -> &[T] {
        &self.tau_clean
    }

    pub fn tau_ood(&self) -> &[T] {
        &self.tau_ood
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Mean recorded `(p_clean, p_ood)` for class `c` this epoch.
    pub fn epoch_mean(&self, c: usize) -> Option<(T, T)> {
        let n = self.counts[c];
        (n > 0).then(|| {
            let n = T::from_usize_lossy(n);
            (self.sum_clean[c] / n, self.sum_ood[c] / n)
        })
    }

    /// Overrides every class's thresholds.
    pub fn set_all(&mut self, tau_clean: T, tau_ood: T) -> Result<()> {
        check_unit("tau_clean", tau_clean)?;
        check_unit("tau_ood", tau_ood)?;
        self.tau_clean.fill(tau_clean);
        self.tau_ood.fill(tau_ood);
        Ok(())
    }

    /// Records one sample's scores under its observed label.
    pub fn accumulate(&mut self, scores: &SampleScores<T>, observed_label: usize) {
        self.sum_clean[observed_label] += scores.p_clean;
        self.sum_ood[observed_label] += scores.p_ood;
        self.counts[observed_label] += 1;
    }

    /// Epoch-end update `τ ← ω τ + (1 − ω) mean`; classes unseen this epoch
    /// keep their thresholds. Accumulators are cleared.
    pub fn roll(&mut self, omega: T) -> Result<()> {
        check_unit("omega_tau", omega)?;
        for c in 0..self.num_classes() {
            if let Some((m_clean, m_ood)) = self.epoch_mean(c) {
                self.tau_clean[c] = ema(self.tau_clean[c], m_clean, omega);
                self.tau_ood[c] = ema(self.tau_ood[c], m_ood, omega);
            }
        }
        self.sum_clean.fill(T::zero());
        self.sum_ood.fill(T::zero());
        self.counts.fill(0);
        Ok(())
    }

    pub fn mean_tau_clean(&self) -> T {
        mean(&self.tau_clean)
    }

    pub fn mean_tau_ood(&self) -> T {
        mean(&self.tau_ood)
    }
}

fn ema<T: Scalar>(prev: T, target: T, omega: T) -> T {
    (omega * prev + (T::one() - omega) * target).max(T::zero()).min(T::one())
}

fn mean<T: Scalar>(v: &[T]) -> T {
    if v.is_empty() {
        T::zero()
    } else {
        v.iter().copied().sum::<T>() / T::from_usize_lossy(v.len())
    }
}

fn check_unit<T: Scalar>(name: &'static str, v: T) -> Result<()> {
    if v >= T::zero() && v <= T::one() {
        Ok(())
    } else {
        Err(Error::arg(name, format!("must lie in [0, 1], got {v}")))
    }
}

/// Disjoint clean / ID / OOD id sets covering one batch.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Partition {
    pub clean: Vec<u64>,
    pub id: Vec<u64>,
    pub ood: Vec<u64>,
}

impl Partition {
    pub fn from_assignments(ids: &[u64], kinds: &[SampleKind]) -> Result<Self> {
        if ids.len() != kinds.len() {
            return Err(Error::shape("Partition", format!("{} ids, {} kinds", ids.len(), kinds.len())));
        }
        let mut p = Partition::default();
        for (&id, &k) in ids.iter().zip(kinds) {
            match k {
                SampleKind::Clean => p.clean.push(id),
                SampleKind::Id => p.id.push(id),
                SampleKind::Ood => p.ood.push(id),
            }
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.clean.len() + self.id.len() + self.ood.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks the three sets are pairwise disjoint and their union is exactly `batch`.
    pub fn validate(&self, batch: &[u64]) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.len());
        for &id in self.clean.iter().chain(&self.id).chain(&self.ood) {
            if !seen.insert(id) {
                return Err(Error::arg("partition", format!("sample {id} assigned twice")));
            }
        }
        let batch_set: HashSet<u64> = batch.iter().copied().collect();
        if batch_set.len() != batch.len() {
            return Err(Error::arg("partition", "batch contains duplicate ids"));
        }
        if seen != batch_set {
            return Err(Error::arg("partition", "union of subsets differs from the batch"));
        }
        Ok(())
    }
}

/// Selection-threshold schedule settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    pub omega_warmup: f64,
    pub omega_main: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self { omega_warmup: 0.75, omega_main: 0.975 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedqueue::QueueEntry;
    use crate::labeler::smoothed_label;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ProbVec<f64> {
        ProbVec::new(v.to_vec()).unwrap()
    }

    fn scores(p_clean: f64, p_ood: f64, nn: Option<(f64, bool)>) -> SampleScores<f64> {
        SampleScores {
            p_clean,
            p_ood,
            neighbor_mean_p_clean: nn.map(|x| x.0),
            neighbors_share_label: nn.map(|x| x.1),
        }
    }

    fn state(tc: f64, to: f64) -> ThresholdState<f64> {
        let mut s = ThresholdState::new(3);
        s.set_all(tc, to).unwrap();
        s
    }

    #[test]
    fn score_identities() {
        let p = pv(&[0.2, 0.8]);
        let s = score_sample(&p, &p, &p, 1, None).unwrap();
        assert_eq!(s.p_clean, 1.0);
        assert_eq!(s.p_ood, 0.0);
        assert_eq!(s.neighbor_mean_p_clean, None);
        assert_eq!(s.neighbors_share_label, None);
    }

    #[test]
    fn score_reference_value() {
        // 1 - JS([0.5,0.5] || [0.9,0.1]) evaluated term by term: 0.853206897...
        let s = score_sample(&pv(&[0.5, 0.5]), &pv(&[0.5, 0.5]), &pv(&[0.9, 0.1]), 0, None).unwrap();
        assert_abs_diff_eq!(s.p_clean, 0.853206897563948, epsilon = 1e-12);
    }

    #[test]
    fn score_reads_neighbors() {
        let e = |label, pc| QueueEntry {
            key_embedding: vec![1.0, 0.0],
            observed_label: label,
            p_clean_at_enqueue: pc,
            pred_at_enqueue: ProbVec::uniform(2),
            sample_id: 0,
        };
        let (a, b) = (e(1, 0.6), e(1, 0.8));
        let nn = [Neighbor { entry: &a, similarity: 0.9 }, Neighbor { entry: &b, similarity: 0.5 }];
        let p = pv(&[0.5, 0.5]);
        let s = score_sample(&p, &p, &p, 1, Some(&nn)).unwrap();
        assert_abs_diff_eq!(s.neighbor_mean_p_clean.unwrap(), 0.7, epsilon = 1e-15);
        assert_eq!(s.neighbors_share_label, Some(true));
        let s = score_sample(&p, &p, &p, 0, Some(&nn)).unwrap();
        assert_eq!(s.neighbors_share_label, Some(false));
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_sample(&scores(0.9, 0.9, None), 0, &state(0.8, 0.2)), SampleKind::Clean);
        assert_eq!(classify_sample(&scores(0.9, 0.9, Some((0.1, false))), 0, &state(0.8, 0.2)), SampleKind::Clean);
        assert_eq!(classify_sample(&scores(0.3, 0.9, Some((0.85, true))), 0, &state(0.8, 0.2)), SampleKind::Clean);
        assert_eq!(classify_sample(&scores(0.3, 0.05, Some((0.85, false))), 0, &state(0.8, 0.2)), SampleKind::Id);
        assert_eq!(classify_sample(&scores(0.3, 0.5, Some((0.85, false))), 0, &state(0.8, 0.2)), SampleKind::Ood);
        // neighbor mean must strictly exceed the threshold
        assert_eq!(classify_sample(&scores(0.3, 0.0, Some((0.8, true))), 0, &state(0.8, 0.2)), SampleKind::Id);
    }

    #[test]
    fn boundary_thresholds() {
        let zero = state(0.0, 0.0);
        assert_eq!(classify_sample(&scores(1e-9, 0.7, None), 2, &zero), SampleKind::Clean);
        let strict = state(1.0, 0.0);
        assert_eq!(classify_sample(&scores(1.0, 1e-9, Some((1.0, true))), 2, &strict), SampleKind::Ood);
        assert_eq!(classify_sample(&scores(1.0, 0.0, None), 2, &strict), SampleKind::Id);
    }

    #[test]
    fn accumulate_and_roll() {
        let mut s = ThresholdState::<f64>::new(3);
        s.accumulate(&scores(0.2, 0.1, None), 1);
        s.accumulate(&scores(0.6, 0.3, None), 1);
        assert_eq!(s.counts(), &[0, 2, 0]);
        let (mc, mo) = s.epoch_mean(1).unwrap();
        assert_abs_diff_eq!(mc, 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(mo, 0.2, epsilon = 1e-15);
        assert!(s.epoch_mean(0).is_none());

        s.roll(0.75).unwrap();
        assert_abs_diff_eq!(s.tau_clean()[1], 0.1, epsilon = 1e-15);
        assert_eq!(s.tau_clean()[0], 0.0);
        assert_eq!(s.counts(), &[0, 0, 0]);
    }

    #[test]
    fn frozen_and_invalid_omega() {
        let mut s = state(0.3, 0.4);
        s.accumulate(&scores(0.9, 0.9, None), 0);
        s.roll(1.0).unwrap();
        assert_eq!(s.tau_clean()[0], 0.3);
        assert!(s.roll(1.5).is_err());
        assert!(s.roll(-0.1).is_err());
    }

    #[test]
    fn unseen_classes_keep_thresholds() {
        let mut s = state(0.5, 0.5);
        s.accumulate(&scores(0.9, 0.1, None), 2);
        s.roll(0.5).unwrap();
        assert_eq!(s.tau_clean()[0], 0.5);
        assert_abs_diff_eq!(s.tau_clean()[2], 0.7, epsilon = 1e-15);
    }

    #[test]
    fn partition_validation() {
        let ids = [1, 2, 3, 4];
        let kinds = [SampleKind::Clean, SampleKind::Ood, SampleKind::Id, SampleKind::Clean];
        let p = Partition::from_assignments(&ids, &kinds).unwrap();
        p.validate(&ids).unwrap();
        assert_eq!(p.clean, vec![1, 4]);
        let mut bad = p.clone();
        bad.id.push(1);
        assert!(bad.validate(&ids).is_err());
        assert!(p.validate(&[1, 2, 3]).is_err());
    }

    #[test]
    fn smoothed_label_feeds_selection() {
        let y = smoothed_label(0, 2, 0.1).unwrap();
        let s = score_sample(&y, &y, &y, 0, None).unwrap();
        assert_eq!(s.p_clean, 1.0);
    }

    proptest! {
        #[test]
        fn thresholds_stay_in_unit_interval(
            stream in prop::collection::vec((0usize..4, 0.0f64..=1.0, 0.0f64..=1.0), 0..200),
            omegas in prop::collection::vec(0.0f64..=1.0, 1..10),
        ) {
            let mut s = ThresholdState::<f64>::new(4);
            for (i, omega) in omegas.iter().enumerate() {
                for (c, pc, po) in stream.iter().skip(i * 7).take(40) {
                    s.accumulate(&scores(*pc, *po, None), *c);
                }
                s.roll(*omega).unwrap();
                for &t in s.tau_clean().iter().chain(s.tau_ood()) {
                    prop_assert!((0.0..=1.0).contains(&t));
                }
            }
        }

        #[test]
        fn classification_ignores_logit_shift(
            logits in prop::collection::vec(-5.0f64..5.0, 3),
            logits2 in prop::collection::vec(-5.0f64..5.0, 3),
            shift in -50.0f64..50.0,
            tc in 0.0f64..1.0,
            to in 0.0f64..1.0,
        ) {
            let soft = |l: &[f64]| crate::diffmath::softmax(l, 1.0).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
            let shifted2: Vec<f64> = logits2.iter().map(|v| v + shift).collect();
            let y = smoothed_label(1, 3, 0.3).unwrap();
            let th = state(tc, to);
            let a = score_sample(&soft(&logits), &soft(&logits2), &y, 1, None).unwrap();
            let b = score_sample(&soft(&shifted), &soft(&shifted2), &y, 1, None).unwrap();
            prop_assert!((a.p_clean - b.p_clean).abs() < 1e-12);
            if (a.p_clean - tc).abs() > 1e-9 && (a.p_ood - to).abs() > 1e-9 {
                prop_assert_eq!(classify_sample(&a, 1, &th), classify_sample(&b, 1, &th));
            }
        }
    }
}
