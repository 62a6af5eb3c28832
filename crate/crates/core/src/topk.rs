//! Bounded top-k selection over `(key, id)` pairs.
//!
//! Results come out in ascending `(key, id)` order. Callers that rank by a
//! descending score pass the negated score as key.

use std::collections::BinaryHeap;

use ordered_float::OrderedFloat;

use crate::scalar::Scalar;

// Ordered by the f64 widening of `value`.
#[derive(Debug, Clone, Copy)]
struct Entry<S: Scalar> {
    key: OrderedFloat<f64>,
    id: u64,
    slot: usize,
    value: S,
}

impl<S: Scalar> PartialEq for Entry<S> {
    fn eq(&self, other: &Self) -> bool {
        (self.key, self.id) == (other.key, other.id)
    }
}

impl<S: Scalar> Eq for Entry<S> {}

impl<S: Scalar> PartialOrd for Entry<S> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<S: Scalar> Ord for Entry<S> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.key, self.id).cmp(&(other.key, other.id))
    }
}

/// Keeps the `k` smallest `(key, id)` entries seen so far.
pub(crate) struct TopK<S: Scalar> {
    k: usize,
    heap: BinaryHeap<Entry<S>>,
}

impl<S: Scalar> TopK<S> {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k.saturating_add(1).min(4096)),
        }
    }

    /// Offers a candidate; `slot` is an opaque index returned with the result.
    #[inline]
    pub fn push(&mut self, key: S, id: u64, slot: usize) {
        if self.k == 0 {
            return;
        }
        let entry = Entry {
            key: OrderedFloat(key.as_f64()),
            id,
            slot,
            value: key,
        };
        if self.heap.len() < self.k {
            self.heap.push(entry);
        } else if let Some(mut worst) = self.heap.peek_mut() {
            if entry < *worst {
                *worst = entry;
            }
        }
    }

    /// `(key, slot)` pairs in ascending `(key, id)` order.
    pub fn into_sorted(self) -> Vec<(S, usize)> {
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(|e| (e.value, e.slot))
            .collect()
    }
}
