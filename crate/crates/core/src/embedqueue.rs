//! Bounded FIFO of teacher key embeddings.
//!
//! The queue doubles as the negative pool for the contrastive term and as
//! the neighbor index for clean-sample evidence and neighbor consistency.
//! Lookups are exact linear scans.

use std::cmp::Ordering;
use std::collections::VecDeque;

use crate::diffmath::{ProbVec, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct QueueEntry<T> {
    pub key_embedding: Vec<T>,
    pub observed_label: usize,
    pub p_clean_at_enqueue: T,
    pub pred_at_enqueue: ProbVec<T>,
    pub sample_id: u64,
}

#[derive(Clone, Debug)]
struct Slot<T> {
    entry: QueueEntry<T>,
    seq: u64,
}

/// One neighbor returned by [`EmbedQueue::knn`].
#[derive(Clone, Copy, Debug)]
pub struct Neighbor<'q, T> {
    pub entry: &'q QueueEntry<T>,
    pub similarity: T,
}

#[derive(Clone, Debug)]
pub struct EmbedQueue<T> {
    slots: VecDeque<Slot<T>>,
    capacity: usize,
    dim: usize,
    next_seq: u64,
}

impl<T: Scalar> EmbedQueue<T> {
    /// A zero-capacity queue is valid and stays empty.
    pub fn new(capacity: usize, dim: usize) -> Self {
        Self { slots: VecDeque::with_capacity(capacity), capacity, dim, next_seq: 0 }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &QueueEntry<T>> {
        self.slots.iter().map(|s| &s.entry)
    }

    /// Appends a batch in order, evicting the oldest entries beyond capacity.
    /// The batch is validated as a whole before anything is inserted.
    pub fn enqueue(&mut self, batch: Vec<QueueEntry<T>>) -> Result<()> {
        for e in &batch {
            if e.key_embedding.len() != self.dim {
                return Err(Error::shape(
                    "enqueue",
                    format!("embedding dim {} vs queue dim {}", e.key_embedding.len(), self.dim),
                ));
            }
            let norm = e.key_embedding.iter().map(|&v| v * v).sum::<T>().sqrt().as_f64();
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::NotUnitNorm { norm });
            }
            let pc = e.p_clean_at_enqueue;
            if !(pc >= T::zero() && pc <= T::one()) {
                return Err(Error::arg("p_clean_at_enqueue", format!("{pc} outside [0, 1]")));
            }
        }
        if self.capacity == 0 {
            return Ok(());
        }
        for entry in batch {
            if self.slots.len() == self.capacity {
                self.slots.pop_front();
            }
            self.slots.push_back(Slot { entry, seq: self.next_seq });
            self.next_seq += 1;
        }
        Ok(())
    }

    /// Stored embeddings as a `[len, dim]` matrix, oldest first.
    pub fn embeddings(&self) -> Tensor<T> {
        let mut data = Vec::with_capacity(self.slots.len() * self.dim);
        for s in &self.slots {
            data.extend_from_slice(&s.entry.key_embedding);
        }
        Tensor::matrix(self.slots.len(), self.dim, data).expect("queue embedding matrix")
    }

    /// The `k` entries most cosine-similar to `query`, skipping `exclude_id`.
    ///
    /// Similarities are non-increasing; equal similarities put the more
    /// recently inserted entry first.
    pub fn knn(&self, query: &[T], k: usize, exclude_id: Option<u64>) -> Result<Vec<Neighbor<'_, T>>> {
        if query.len() != self.dim {
            return Err(Error::shape("knn", format!("query dim {} vs queue dim {}", query.len(), self.dim)));
        }
        let sims: Vec<T> = self.slots.iter().map(|s| dot(query, &s.entry.key_embedding)).collect();
        self.select(&sims, k, exclude_id)
    }

    /// [`EmbedQueue::knn`] for every row of `queries`, sharing one similarity matmul.
    pub fn knn_batch(
        &self,
        queries: &Tensor<T>,
        k: usize,
        exclude_ids: &[u64],
    ) -> Result<Vec<Result<Vec<Neighbor<'_, T>>>>> {
        if queries.cols() != self.dim || queries.rows() != exclude_ids.len() {
            return Err(Error::shape(
                "knn_batch",
                format!("queries {:?}, {} exclusions, dim {}", queries.shape(), exclude_ids.len(), self.dim),
            ));
        }
        if self.slots.is_empty() {
            return Ok(exclude_ids.iter().map(|_| Err(Error::InsufficientNeighbors { k, available: 0 })).collect());
        }
        let sims = queries.matmul_t(&self.embeddings())?;
        Ok(exclude_ids.iter().enumerate().map(|(i, &id)| self.select(sims.row(i), k, Some(id))).collect())
    }

    /// Top `k` by (similarity desc, recency desc) in one pass with a sorted buffer.
    fn select(&self, sims: &[T], k: usize, exclude_id: Option<u64>) -> Result<Vec<Neighbor<'_, T>>> {
        let order = |a: usize, b: usize| -> Ordering {
            sims[b]
                .partial_cmp(&sims[a])
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.slots[b].seq.cmp(&self.slots[a].seq))
        };
        let mut best: Vec<usize> = Vec::with_capacity(k + 1);
        let mut available = 0;
        for i in 0..self.slots.len() {
            if Some(self.slots[i].entry.sample_id) == exclude_id {
                continue;
            }
            available += 1;
            if k == 0 || (best.len() == k && order(i, best[k - 1]) != Ordering::Less) {
                continue;
            }
            let pos = best.partition_point(|&b| order(b, i) == Ordering::Less);
            best.insert(pos, i);
            best.truncate(k);
        }
        if k == 0 || available < k {
            return Err(Error::InsufficientNeighbors { k, available });
        }
        Ok(best.into_iter().map(|i| Neighbor { entry: &self.slots[i].entry, similarity: sims[i] }).collect())
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: u64, emb: Vec<f64>) -> QueueEntry<f64> {
        QueueEntry {
            key_embedding: emb,
            observed_label: 0,
            p_clean_at_enqueue: 0.5,
            pred_at_enqueue: ProbVec::uniform(2),
            sample_id: id,
        }
    }

    fn basis(dim: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn fifo_keeps_last_capacity_entries() {
        let mut q = EmbedQueue::new(4, 2);
        q.enqueue((0..6).map(|i| entry(i, basis(2, 0))).collect()).unwrap();
        let ids: Vec<u64> = q.iter().map(|e| e.sample_id).collect();
        assert_eq!(ids, vec![2, 3, 4, 5]);
    }

    #[test]
    fn empty_batch_is_noop() {
        let mut q = EmbedQueue::new(4, 2);
        q.enqueue(vec![entry(9, basis(2, 1))]).unwrap();
        q.enqueue(Vec::new()).unwrap();
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn rejects_non_unit_embedding_without_partial_insert() {
        let mut q = EmbedQueue::new(4, 2);
        let err = q.enqueue(vec![entry(0, basis(2, 0)), entry(1, vec![1.0, 1.0])]).unwrap_err();
        assert!(matches!(err, Error::NotUnitNorm { .. }));
        assert!(q.is_empty());
    }

    #[test]
    fn zero_capacity_stays_empty() {
        let mut q = EmbedQueue::new(0, 2);
        q.enqueue(vec![entry(0, basis(2, 0))]).unwrap();
        assert!(q.is_empty());
        assert!(matches!(q.knn(&basis(2, 0), 1, None), Err(Error::InsufficientNeighbors { .. })));
    }

    #[test]
    fn self_query_returns_entry_with_similarity_one() {
        let mut q = EmbedQueue::new(8, 3);
        let e = vec![0.6, 0.0, 0.8];
        q.enqueue(vec![entry(1, basis(3, 0)), entry(2, e.clone()), entry(3, basis(3, 1))]).unwrap();
        let nn = q.knn(&e, 1, None).unwrap();
        assert_eq!(nn[0].entry.sample_id, 2);
        assert!((nn[0].similarity - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_ties_break_newest_first() {
        let mut q = EmbedQueue::new(8, 4);
        q.enqueue((0..3).map(|i| entry(i, basis(4, i as usize))).collect()).unwrap();
        let nn = q.knn(&basis(4, 3), 3, None).unwrap();
        let ids: Vec<u64> = nn.iter().map(|n| n.entry.sample_id).collect();
        assert_eq!(ids, vec![2, 1, 0]);
        assert!(nn.iter().all(|n| n.similarity == 0.0));
    }

    #[test]
    fn exclusion_and_insufficient_entries() {
        let mut q = EmbedQueue::new(8, 2);
        q.enqueue(vec![entry(1, basis(2, 0)), entry(2, basis(2, 1))]).unwrap();
        let nn = q.knn(&basis(2, 0), 1, Some(1)).unwrap();
        assert_eq!(nn[0].entry.sample_id, 2);
        assert!(matches!(
            q.knn(&basis(2, 0), 2, Some(1)),
            Err(Error::InsufficientNeighbors { k: 2, available: 1 })
        ));
    }
}
