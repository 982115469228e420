//! Discrete distributions and the divergences used for sample selection.
//!
//! Divergences are measured in bits (base-2 logarithm), which bounds the
//! Jensen-Shannon divergence to `[0, 1]`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tensor::softmax_in_place;

/// A length-C probability distribution: non-negative entries summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVec<T>(Vec<T>);

impl<T: Scalar> ProbVec<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidDistribution("empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::InvalidDistribution(format!("entry {i} = {}", values[i])));
        }
        let total: f64 = values.iter().map(|v| v.as_f64()).sum();
        if (total - 1.0).abs() > T::PROB_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("sums to {total}")));
        }
        Ok(Self(values))
    }

    /// Uniform distribution over `c` classes.
    pub fn uniform(c: usize) -> Self {
        Self(vec![T::one() / T::from_usize_lossy(c); c])
    }

    pub fn one_hot(c: usize, index: usize) -> Self {
        let mut v = vec![T::zero(); c];
        v[index] = T::one();
        Self(v)
    }

    pub(crate) fn from_raw(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn argmax(&self) -> usize {
        super::tensor::argmax(&self.0)
    }
}

impl<T> AsRef<[T]> for ProbVec<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

/// Softmax of `logits / temperature`.
pub fn softmax<T: Scalar>(logits: &[T], temperature: T) -> Result<ProbVec<T>> {
    if !(temperature > T::zero()) || !temperature.is_finite() {
        return Err(Error::arg("temperature", format!("must be positive and finite, got {temperature}")));
    }
    if logits.is_empty() {
        return Err(Error::InvalidDistribution("softmax of empty logits".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax logits"));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out, temperature);
    Ok(ProbVec(out))
}

fn check_len<T>(p: &ProbVec<T>, q: &ProbVec<T>) -> Result<()> {
    if p.0.len() != q.0.len() {
        return Err(Error::shape("divergence", format!("lengths {} and {}", p.0.len(), q.0.len())));
    }
    Ok(())
}

#[inline]
pub(crate) fn log2_floored<T: Scalar>(v: T) -> T {
    v.max(T::lit(T::LOG_FLOOR)).log2()
}

/// `KL(p ‖ q)` in bits. Fails when `q` has no mass where `p` does.
pub fn kl_divergence<T: Scalar>(p: &ProbVec<T>, q: &ProbVec<T>) -> Result<T> {
    check_len(p, q)?;
    let mut total = T::zero();
    for (i, (&pi, &qi)) in p.0.iter().zip(&q.0).enumerate() {
        if pi <= T::zero() {
            continue;
        }
        if qi <= T::zero() {
            return Err(Error::ZeroSupport { index: i, p: pi.as_f64() });
        }
        total += pi * (log2_floored(pi) - log2_floored(qi));
    }
    Ok(total.max(T::zero()))
}

/// Jensen-Shannon divergence in bits; symmetric and bounded in `[0, 1]`.
pub fn js_divergence<T: Scalar>(p: &ProbVec<T>, q: &ProbVec<T>) -> Result<T> {
    check_len(p, q)?;
    let half = T::lit(0.5);
    let mut total = T::zero();
    for (&pi, &qi) in p.0.iter().zip(&q.0) {
        let mi = half * (pi + qi);
        let term = |a: T| if a > T::zero() { a * (log2_floored(a) - log2_floored(mi)) } else { T::zero() };
        // Pairwise sum first so swapping p and q is bitwise symmetric.
        total += term(pi) + term(qi);
    }
    Ok((half * total).max(T::zero()).min(T::one()))
}
