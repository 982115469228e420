//! Training targets for each partition.
//!
//! * clean samples: label-smoothed one-hot ([`make_lsr_target`])
//! * ID-noisy samples: teacher prediction sharpened inside its top-κ set
//!   ([`make_pll_target`])
//! * OOD-noisy samples: a single complementary label at the teacher's least
//!   likely class ([`make_negative_target`])

use serde::{Deserialize, Serialize};

use crate::diffmath::{argmin, ProbVec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub enum TrainingTarget<T> {
    /// Fit the distribution with cross-entropy.
    Positive { dist: ProbVec<T>, partial_set: Option<Vec<usize>> },
    /// Push probability away from `class`.
    Negative { class: usize, num_classes: usize },
}

impl<T: Scalar> TrainingTarget<T> {
    pub fn num_classes(&self) -> usize {
        match self {
            TrainingTarget::Positive { dist, .. } => dist.len(),
            TrainingTarget::Negative { num_classes, .. } => *num_classes,
        }
    }

    pub fn is_negative(&self) -> bool {
        matches!(self, TrainingTarget::Negative { .. })
    }

    /// Dense target vector: the distribution, or the complementary one-hot.
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            TrainingTarget::Positive { dist, .. } => dist.values().to_vec(),
            TrainingTarget::Negative { class, num_classes } => ProbVec::one_hot(*num_classes, *class).into_inner(),
        }
    }
}

/// Temperatures applied inside and outside the partial label set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PllTemperatures {
    pub inside: f64,
    pub outside: f64,
}

impl Default for PllTemperatures {
    fn default() -> Self {
        Self { inside: 0.1, outside: 1.0 }
    }
}

/// `1 − ε` on `label`, `ε / (C − 1)` elsewhere.
pub fn make_lsr_target<T: Scalar>(label: usize, num_classes: usize, epsilon: T) -> Result<TrainingTarget<T>> {
    Ok(TrainingTarget::Positive { dist: smoothed_label(label, num_classes, epsilon)?, partial_set: None })
}

pub(crate) fn smoothed_label<T: Scalar>(label: usize, num_classes: usize, epsilon: T) -> Result<ProbVec<T>> {
    if num_classes < 2 {
        return Err(Error::arg("num_classes", format!("need at least 2 classes, got {num_classes}")));
    }
    if label >= num_classes {
        return Err(Error::arg("label", format!("{label} out of range for {num_classes} classes")));
    }
    if !(epsilon >= T::zero() && epsilon < T::one()) {
        return Err(Error::arg("epsilon", format!("must lie in [0, 1), got {epsilon}")));
    }
    let off = epsilon / T::from_usize_lossy(num_classes - 1);
    let mut v = vec![off; num_classes];
    v[label] = T::one() - epsilon;
    Ok(ProbVec::from_raw(v))
}

/// Indices of the `kappa` largest entries, ties to the lower index.
pub fn top_k_indices<T: Scalar>(values: &[T], kappa: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(kappa);
    idx.sort_unstable();
    idx
}

/// Partial-label target from a teacher distribution: entries in the top-κ set
/// are divided by `temps.inside`, the rest by `temps.outside`, then softmaxed.
pub fn make_pll_target<T: Scalar>(
    teacher_pred: &ProbVec<T>,
    kappa: usize,
    temps: PllTemperatures,
) -> Result<TrainingTarget<T>> {
    let c = teacher_pred.len();
    if kappa == 0 || kappa > c {
        return Err(Error::arg("kappa", format!("must lie in [1, {c}], got {kappa}")));
    }
    if !(temps.inside > 0.0 && temps.outside > 0.0) {
        return Err(Error::arg("pll temperatures", "must be positive"));
    }
    let omega = top_k_indices(teacher_pred.values(), kappa);
    let mut inside = vec![false; c];
    for &i in &omega {
        inside[i] = true;
    }
    let (t_in, t_out) = (T::lit(temps.inside), T::lit(temps.outside));
    let scaled: Vec<T> = teacher_pred
        .values()
        .iter()
        .zip(&inside)
        .map(|(&p, &is_in)| p / if is_in { t_in } else { t_out })
        .collect();
    let dist = crate::diffmath::softmax(&scaled, T::one())?;
    Ok(TrainingTarget::Positive { dist, partial_set: Some(omega) })
}

/// Complementary label at the teacher's least likely class (lowest index on ties).
pub fn make_negative_target<T: Scalar>(teacher_pred: &ProbVec<T>) -> TrainingTarget<T> {
    TrainingTarget::Negative { class: argmin(teacher_pred.values()), num_classes: teacher_pred.len() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::softmax;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ProbVec<f64> {
        ProbVec::new(v.to_vec()).unwrap()
    }

    fn dist(t: &TrainingTarget<f64>) -> &[f64] {
        match t {
            TrainingTarget::Positive { dist, .. } => dist.values(),
            _ => panic!("expected positive target"),
        }
    }

    #[test]
    fn lsr_zero_epsilon_is_one_hot() {
        let t = make_lsr_target(1, 3, 0.0).unwrap();
        assert_eq!(dist(&t), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn lsr_reference_values() {
        let t = make_lsr_target(2, 5, 0.6).unwrap();
        for (got, want) in dist(&t).iter().zip([0.15, 0.15, 0.4, 0.15, 0.15]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn lsr_rejects_single_class_and_bad_args() {
        assert!(make_lsr_target(0, 1, 0.1).is_err());
        assert!(make_lsr_target(3, 3, 0.1).is_err());
        assert!(make_lsr_target(0, 3, 1.0).is_err());
    }

    #[test]
    fn pll_full_set_is_plain_sharpening() {
        let p = pv(&[0.5, 0.3, 0.2]);
        let t = make_pll_target(&p, 3, PllTemperatures::default()).unwrap();
        let want = softmax(p.values(), 0.1).unwrap();
        for (a, b) in dist(&t).iter().zip(want.values()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn pll_reference_values() {
        // exp-normalize of [7, 2, 0.05, 0.05], evaluated independently
        let t = make_pll_target(&pv(&[0.7, 0.2, 0.05, 0.05]), 2, PllTemperatures::default()).unwrap();
        let TrainingTarget::Positive { partial_set, .. } = &t else { unreachable!() };
        assert_eq!(partial_set.as_deref(), Some(&[0, 1][..]));
        let want = [9.91419053e-01, 6.68012903e-03, 9.50409156e-04, 9.50409156e-04];
        for (a, b) in dist(&t).iter().zip(want) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn pll_rejects_bad_kappa() {
        let p = pv(&[0.5, 0.5]);
        assert!(make_pll_target(&p, 0, PllTemperatures::default()).is_err());
        assert!(make_pll_target(&p, 3, PllTemperatures::default()).is_err());
    }

    #[test]
    fn top_k_ties_prefer_lower_index() {
        assert_eq!(top_k_indices(&[0.25, 0.25, 0.25, 0.25], 2), vec![0, 1]);
        assert_eq!(top_k_indices(&[0.1, 0.4, 0.1, 0.4], 3), vec![0, 1, 3]);
    }

    #[test]
    fn negative_examples() {
        assert_eq!(make_negative_target(&pv(&[0.5, 0.3, 0.2])), TrainingTarget::Negative { class: 2, num_classes: 3 });
        assert_eq!(make_negative_target(&ProbVec::<f64>::uniform(4)), TrainingTarget::Negative { class: 0, num_classes: 4 });
    }

    fn prob_vec(max_c: usize) -> impl Strategy<Value = ProbVec<f64>> {
        prop::collection::vec(0.001f64..1.0, 2..=max_c).prop_map(|v| {
            let s: f64 = v.iter().sum();
            ProbVec::new(v.into_iter().map(|x| x / s).collect()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn lsr_always_sums_to_one(c in 2usize..50, eps in 0.0f64..0.999, label_seed in 0usize..1000) {
            let t = make_lsr_target(label_seed % c, c, eps).unwrap();
            let s: f64 = dist(&t).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn pll_increases_mass_inside_set(p in prob_vec(12), k_seed in 0usize..100) {
            let kappa = 1 + k_seed % (p.len() - 1);
            let t = make_pll_target(&p, kappa, PllTemperatures::default()).unwrap();
            let TrainingTarget::Positive { dist, partial_set: Some(omega) } = &t else { unreachable!() };
            let plain = softmax(p.values(), 1.0).unwrap();
            let sharpened: f64 = omega.iter().map(|&i| dist.values()[i]).sum();
            let base: f64 = omega.iter().map(|&i| plain.values()[i]).sum();
            prop_assert!(sharpened > base);
            if omega.contains(&p.argmax()) {
                prop_assert_eq!(dist.argmax(), p.argmax());
            }
        }

        #[test]
        fn pll_kappa_one_beats_uniform_sharpening(p in prob_vec(12)) {
            let t = make_pll_target(&p, 1, PllTemperatures::default()).unwrap();
            let top = p.argmax();
            let plain = softmax(p.values(), 0.1).unwrap();
            prop_assert!(dist(&t)[top] >= plain.values()[top] - 1e-15);
        }

        #[test]
        fn negative_never_hits_teacher_argmax(p in prob_vec(20)) {
            let TrainingTarget::Negative { class, .. } = make_negative_target(&p) else { unreachable!() };
            let distinct = p.values().iter().any(|&v| v != p.values()[0]);
            if distinct {
                prop_assert_ne!(class, p.argmax());
            }
        }
    }
}
