//! Loss terms of the joint objective, evaluated on the tape.
//!
//! Classification and contrastive terms use natural logarithms; the two KL
//! consistency terms are measured in bits to match the selection scores.

use std::f64::consts::LN_2;

use crate::diffmath::{log2_floored, ProbVec, Tensor, Var};
use crate::embedqueue::Neighbor;
use crate::error::{Error, Result};
use crate::labeler::TrainingTarget;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossWeights<T> {
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown<T> {
    pub l_cls: T,
    pub l_con_s: T,
    pub l_con_n: T,
    pub l_con_f: T,
    pub total: T,
    pub weights: LossWeights<T>,
}

/// Per-term tape values; absent terms count as zero.
#[derive(Clone, Copy, Debug)]
pub struct LossParts<'t, T> {
    pub cls: Var<'t, T>,
    pub con_s: Option<Var<'t, T>>,
    pub con_n: Option<Var<'t, T>>,
    pub con_f: Option<Var<'t, T>>,
}

fn check_rows<T: Scalar>(p: &Var<'_, T>, n: usize, op: &'static str) -> Result<(usize, usize)> {
    let v = p.value();
    if v.shape().len() != 2 || v.rows() != n {
        return Err(Error::shape(op, format!("predictions {:?} for {n} samples", v.shape())));
    }
    Ok((v.rows(), v.cols()))
}

/// Batch mean of cross-entropy (positive targets) and negative-learning
/// loss `−log(1 − p_j)` (negative targets), averaged over all N rows.
pub fn classification_loss<'t, T: Scalar>(p: Var<'t, T>, targets: &[TrainingTarget<T>]) -> Result<Var<'t, T>> {
    let (n, c) = check_rows(&p, targets.len(), "classification_loss")?;
    if n == 0 {
        return Err(Error::arg("targets", "empty batch"));
    }
    let mut pos = vec![T::zero(); n * c];
    let mut neg = vec![T::zero(); n * c];
    for (i, t) in targets.iter().enumerate() {
        if t.num_classes() != c {
            return Err(Error::shape("classification_loss", format!("target {i} has {} classes, predictions {c}", t.num_classes())));
        }
        match t {
            TrainingTarget::Positive { dist, .. } => pos[i * c..(i + 1) * c].copy_from_slice(dist.values()),
            TrainingTarget::Negative { class, .. } => neg[i * c + class] = T::one(),
        }
    }
    let tape_const = |d: Vec<T>| -> Result<Var<'t, T>> { Ok(p.tape().constant(Tensor::matrix(n, c, d)?)) };
    let scale = -T::one() / T::from_usize_lossy(n);
    let mut total = None;
    if targets.iter().any(|t| !t.is_negative()) {
        total = Some(p.log().mul(tape_const(pos)?)?.sum());
    }
    if targets.iter().any(TrainingTarget::is_negative) {
        let complement = p.scale(-T::one()).add_scalar(T::one());
        let term = complement.log().mul(tape_const(neg)?)?.sum();
        total = Some(match total {
            Some(acc) => acc.add(term)?,
            None => term,
        });
    }
    Ok(total.expect("non-empty batch").scale(scale))
}

fn mask_column<'t, T: Scalar>(like: &Var<'t, T>, mask: &[bool]) -> Result<Var<'t, T>> {
    let m = mask.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
    Ok(like.tape().constant(Tensor::matrix(mask.len(), 1, m)?))
}

/// `(1/N) Σ ρ_i [KL(p_i‖p′_i) + KL(p′_i‖p_i)]` in bits.
pub fn self_consistency_loss<'t, T: Scalar>(p: Var<'t, T>, p_prime: Var<'t, T>, mask: &[bool]) -> Result<Var<'t, T>> {
    let (n, _) = check_rows(&p, mask.len(), "self_consistency_loss")?;
    check_rows(&p_prime, n, "self_consistency_loss")?;
    if n == 0 {
        return Err(Error::arg("mask", "empty batch"));
    }
    // KL(p‖q) + KL(q‖p) = Σ (p − q)(ln p − ln q)
    let diff = p.sub(p_prime)?;
    let log_ratio = p.log().sub(p_prime.log())?;
    let per_entry = diff.mul(log_ratio)?.mul(mask_column(&p, mask)?)?;
    Ok(per_entry.sum().scale(T::one() / (T::from_usize_lossy(n) * T::lit(LN_2))))
}

/// Similarity-weighted mixture of neighbor predictions. Negative
/// similarities get zero weight; an all-zero weight sum falls back to uniform.
pub fn neighbor_mixture<T: Scalar>(neighbors: &[Neighbor<'_, T>]) -> Result<ProbVec<T>> {
    let first = neighbors.first().ok_or(Error::InsufficientNeighbors { k: 1, available: 0 })?;
    let c = first.entry.pred_at_enqueue.len();
    let weights: Vec<T> = neighbors.iter().map(|n| n.similarity.max(T::zero())).collect();
    let total: T = weights.iter().copied().sum();
    let weights: Vec<T> = if total > T::zero() {
        weights.iter().map(|&w| w / total).collect()
    } else {
        vec![T::one() / T::from_usize_lossy(neighbors.len()); neighbors.len()]
    };
    let mut mix = vec![T::zero(); c];
    for (n, &w) in neighbors.iter().zip(&weights) {
        let pred = n.entry.pred_at_enqueue.values();
        if pred.len() != c {
            return Err(Error::shape("neighbor_mixture", "neighbor predictions differ in length"));
        }
        for (m, &v) in mix.iter_mut().zip(pred) {
            *m += w * v;
        }
    }
    let total: T = mix.iter().copied().sum();
    Ok(ProbVec::from_raw(mix.into_iter().map(|v| v / total).collect()))
}

/// `(1/N) Σ ρ_i KL(p_i ‖ q_i)` in bits, where `q_i` is a constant neighbor
/// mixture. Rows with no mixture contribute zero.
pub fn neighbor_consistency_loss<'t, T: Scalar>(
    p: Var<'t, T>,
    mixtures: &[Option<ProbVec<T>>],
    mask: &[bool],
) -> Result<Var<'t, T>> {
    let (n, c) = check_rows(&p, mixtures.len(), "neighbor_consistency_loss")?;
    if mask.len() != n || n == 0 {
        return Err(Error::shape("neighbor_consistency_loss", format!("{} mask entries for {n} samples", mask.len())));
    }
    let mut log_q = vec![T::zero(); n * c];
    let mut active = vec![false; n];
    for (i, mix) in mixtures.iter().enumerate() {
        if let Some(q) = mix {
            if q.len() != c {
                return Err(Error::shape("neighbor_consistency_loss", "mixture length differs from class count"));
            }
            for (dst, &v) in log_q[i * c..(i + 1) * c].iter_mut().zip(q.values()) {
                *dst = log2_floored(v) * T::lit(LN_2);
            }
            active[i] = mask[i];
        }
    }
    let log_q = p.tape().constant(Tensor::matrix(n, c, log_q)?);
    let per_entry = p.mul(p.log().sub(log_q)?)?.mul(mask_column(&p, &active)?)?;
    Ok(per_entry.sum().scale(T::one() / (T::from_usize_lossy(n) * T::lit(LN_2))))
}

/// InfoNCE over a constant pool: row `i` of `queries` should pick pool row
/// `positives[i]` out of all pool rows at temperature `t_ssl`.
pub fn feature_consistency_loss<'t, T: Scalar>(
    queries: Var<'t, T>,
    pool: &Tensor<T>,
    positives: &[usize],
    t_ssl: T,
) -> Result<Var<'t, T>> {
    let (n, dim) = check_rows(&queries, positives.len(), "feature_consistency_loss")?;
    if pool.rows() == 0 || pool.numel() == 0 {
        return Err(Error::EmptyPool);
    }
    if pool.cols() != dim {
        return Err(Error::shape("feature_consistency_loss", format!("pool {:?} vs embedding dim {dim}", pool.shape())));
    }
    if n == 0 {
        return Err(Error::arg("positives", "empty batch"));
    }
    if let Some(&j) = positives.iter().find(|&&j| j >= pool.rows()) {
        return Err(Error::arg("positives", format!("index {j} outside pool of {}", pool.rows())));
    }
    let sims = queries.matmul(queries.tape().constant(pool.transpose()))?;
    let picked = sims.log_softmax_pick(t_ssl, positives)?;
    Ok(picked.sum().scale(-T::one() / T::from_usize_lossy(n)))
}

/// `L_cls + α L_con_s + β L_con_n + γ L_con_f`.
pub fn total_loss<'t, T: Scalar>(parts: LossParts<'t, T>, weights: LossWeights<T>) -> Result<(Var<'t, T>, LossBreakdown<T>)> {
    let mut total = parts.cls;
    let mut breakdown = LossBreakdown { l_cls: parts.cls.item(), weights, ..Default::default() };
    for (term, w, slot) in [
        (parts.con_s, weights.alpha, &mut breakdown.l_con_s),
        (parts.con_n, weights.beta, &mut breakdown.l_con_n),
        (parts.con_f, weights.gamma, &mut breakdown.l_con_f),
    ] {
        if let Some(v) = term {
            *slot = v.item();
            total = total.add(v.scale(w))?;
        }
    }
    breakdown.total = total.item();
    Ok((total, breakdown))
}

impl<T: Scalar> LossBreakdown<T> {
    /// Weighted sum recomputed from the stored parts.
    pub fn recombined(&self) -> T {
        self.l_cls + self.weights.alpha * self.l_con_s + self.weights.beta * self.l_con_n + self.weights.gamma * self.l_con_f
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::{kl_divergence, Tape};
    use crate::embedqueue::QueueEntry;
    use crate::labeler::{make_lsr_target, make_negative_target};
    use approx::assert_abs_diff_eq;

    fn rows<'t>(tape: &'t Tape<f64>, r: &[&[f64]]) -> Var<'t, f64> {
        tape.param(Tensor::from_rows(r).unwrap())
    }

    fn pv(v: &[f64]) -> ProbVec<f64> {
        ProbVec::new(v.to_vec()).unwrap()
    }

    #[test]
    fn positive_perfect_fit_is_zero() {
        let tape = Tape::new();
        let p = rows(&tape, &[&[0.0, 1.0, 0.0]]);
        let l = classification_loss(p, &[make_lsr_target(1, 3, 0.0).unwrap()]).unwrap();
        assert_abs_diff_eq!(l.item(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn negative_reference_value() {
        let tape = Tape::new();
        let p = rows(&tape, &[&[0.5, 0.25, 0.25]]);
        let t = TrainingTarget::Negative { class: 1, num_classes: 3 };
        let l = classification_loss(p, &[t]).unwrap();
        assert_abs_diff_eq!(l.item(), 0.2876820724517809, epsilon = 1e-12);
    }

    #[test]
    fn ce_decomposes_into_entropy_plus_kl() {
        let tape = Tape::new();
        let p = [0.1, 0.6, 0.2, 0.1];
        let target = make_lsr_target(1, 4, 0.3).unwrap();
        let TrainingTarget::Positive { dist, .. } = &target else { unreachable!() };
        let l = classification_loss(rows(&tape, &[&p]), &[target.clone()]).unwrap().item();
        let entropy: f64 = -dist.values().iter().map(|&y| y * y.ln()).sum::<f64>();
        let kl_nats = kl_divergence(dist, &pv(&p)).unwrap() * LN_2;
        assert_abs_diff_eq!(l, entropy + kl_nats, epsilon = 1e-9);
    }

    #[test]
    fn mixed_batch_averages_over_all_rows() {
        let tape = Tape::new();
        let p = rows(&tape, &[&[0.5, 0.5], &[0.75, 0.25]]);
        let teacher = pv(&[0.9, 0.1]);
        let targets = [make_lsr_target(0, 2, 0.0).unwrap(), make_negative_target(&teacher)];
        let l = classification_loss(p, &targets).unwrap().item();
        assert_abs_diff_eq!(l, (-(0.5f64).ln() - (0.75f64).ln()) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn negative_loss_falls_with_complementary_mass() {
        let tape = Tape::new();
        let t = [TrainingTarget::Negative { class: 0, num_classes: 2 }];
        let mut last = f64::INFINITY;
        for pj in [0.9, 0.7, 0.5, 0.3, 0.1] {
            let l = classification_loss(rows(&tape, &[&[pj, 1.0 - pj]]), &t).unwrap().item();
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn self_consistency_examples() {
        let tape = Tape::new();
        let p = rows(&tape, &[&[0.5, 0.5]]);
        let q = rows(&tape, &[&[0.75, 0.25]]);
        assert_eq!(self_consistency_loss(p, q, &[false]).unwrap().item(), 0.0);
        assert_eq!(self_consistency_loss(p, p, &[true]).unwrap().item(), 0.0);
        // 0.20751875 + 0.18872188 bits
        let l = self_consistency_loss(p, q, &[true]).unwrap().item();
        assert_abs_diff_eq!(l, 0.396240625180289, epsilon = 1e-12);
        let r = self_consistency_loss(q, p, &[true]).unwrap().item();
        assert!((l - r).abs() < 1e-12);
    }

    fn entry(pred: &[f64]) -> QueueEntry<f64> {
        QueueEntry { key_embedding: vec![1.0], observed_label: 0, p_clean_at_enqueue: 1.0, pred_at_enqueue: pv(pred), sample_id: 0 }
    }

    #[test]
    fn mixture_rules() {
        let (a, b) = (entry(&[0.9, 0.1]), entry(&[0.2, 0.8]));
        let mix = neighbor_mixture(&[Neighbor { entry: &a, similarity: 0.8 }, Neighbor { entry: &b, similarity: 0.2 }]).unwrap();
        assert_abs_diff_eq!(mix.values()[0], 0.8 * 0.9 + 0.2 * 0.2, epsilon = 1e-15);
        let uni = neighbor_mixture(&[Neighbor { entry: &a, similarity: 0.0 }, Neighbor { entry: &b, similarity: -0.3 }]).unwrap();
        assert_abs_diff_eq!(uni.values()[0], 0.55, epsilon = 1e-15);
    }

    #[test]
    fn neighbor_consistency_examples() {
        let tape = Tape::new();
        let p_vals = [0.6, 0.4];
        let p = rows(&tape, &[&p_vals]);
        let (a, b) = (entry(&[0.9, 0.1]), entry(&[0.2, 0.8]));

        let single = neighbor_mixture(&[Neighbor { entry: &a, similarity: 0.7 }]).unwrap();
        let l = neighbor_consistency_loss(p, &[Some(single)], &[true]).unwrap().item();
        assert_abs_diff_eq!(l, kl_divergence(&pv(&p_vals), &pv(&[0.9, 0.1])).unwrap(), epsilon = 1e-12);

        let same = neighbor_mixture(&[Neighbor { entry: &a, similarity: 0.9 }, Neighbor { entry: &a, similarity: 0.1 }]).unwrap();
        let l = neighbor_consistency_loss(p, &[Some(same)], &[true]).unwrap().item();
        assert_abs_diff_eq!(l, kl_divergence(&pv(&p_vals), &pv(&[0.9, 0.1])).unwrap(), epsilon = 1e-12);

        let mix = neighbor_mixture(&[Neighbor { entry: &a, similarity: 0.8 }, Neighbor { entry: &b, similarity: 0.2 }]).unwrap();
        let want = kl_divergence(&pv(&p_vals), &pv(&[0.76, 0.24])).unwrap();
        let l = neighbor_consistency_loss(p, &[Some(mix.clone())], &[true]).unwrap().item();
        assert_abs_diff_eq!(l, want, epsilon = 1e-12);

        assert_eq!(neighbor_consistency_loss(p, &[Some(mix)], &[false]).unwrap().item(), 0.0);
        assert_eq!(neighbor_consistency_loss(p, &[None], &[true]).unwrap().item(), 0.0);
    }

    #[test]
    fn feature_consistency_examples() {
        let tape = Tape::new();
        let q = rows(&tape, &[&[1.0, 0.0]]);
        let only_pos = Tensor::from_rows(&[[1.0, 0.0]]).unwrap();
        assert_abs_diff_eq!(feature_consistency_loss(q, &only_pos, &[0], 0.1).unwrap().item(), 0.0, epsilon = 1e-15);

        let pool = Tensor::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        let l = feature_consistency_loss(q, &pool, &[0], 0.1).unwrap().item();
        assert_abs_diff_eq!(l, 2.061153620314381e-9, epsilon = 1e-15);

        let empty = Tensor::<f64>::zeros(&[0, 2]);
        assert!(matches!(feature_consistency_loss(q, &empty, &[0], 0.1), Err(Error::EmptyPool)));
    }

    #[test]
    fn feature_consistency_falls_as_query_turns_to_positive() {
        let pool = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [-0.6, 0.8]]).unwrap();
        let mut last = f64::INFINITY;
        for step in 0..=20 {
            let angle = std::f64::consts::FRAC_PI_2 * (1.0 - step as f64 / 20.0);
            let tape = Tape::new();
            let q = rows(&tape, &[&[angle.cos(), angle.sin()]]);
            let l = feature_consistency_loss(q, &pool, &[0], 0.1).unwrap().item();
            assert!(l < last, "step {step}: {l} >= {last}");
            last = l;
        }
    }

    #[test]
    fn total_loss_arithmetic() {
        let tape = Tape::new();
        let one = || tape.param(Tensor::scalar(1.0));
        let w = LossWeights { alpha: 0.3, beta: 0.1, gamma: 1e-4 };
        let parts = LossParts { cls: one(), con_s: Some(one()), con_n: Some(one()), con_f: Some(one()) };
        let (_, b) = total_loss(parts, w).unwrap();
        assert_abs_diff_eq!(b.total, 1.4001, epsilon = 1e-12);
        assert_abs_diff_eq!(b.total, b.recombined(), epsilon = 1e-9);

        let parts = LossParts { cls: tape.param(Tensor::scalar(0.7)), con_s: Some(one()), con_n: Some(one()), con_f: Some(one()) };
        let (_, b) = total_loss(parts, LossWeights::default()).unwrap();
        assert_eq!(b.total, 0.7);

        let zero = || tape.param(Tensor::scalar(0.0));
        let (_, b) = total_loss(LossParts { cls: zero(), con_s: Some(zero()), con_n: None, con_f: Some(zero()) }, w).unwrap();
        assert_eq!(b.total, 0.0);
    }
}
