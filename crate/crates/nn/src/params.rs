use std::sync::atomic::{AtomicU32, Ordering};

use crate::elem::Elem;
use crate::tensor::Tensor;

static NEXT_STORE: AtomicU32 = AtomicU32::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Weight,
    /// Running statistics; never receives gradients.
    Buffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub u32);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub kind: ParamKind,
}

/// Owns the parameters of one network. Modules hold [`ParamId`]s into a
/// store; the store identity lets a graph route gradients back to it.
#[derive(Debug)]
pub struct ParamStore<T> {
    id: u32,
    entries: Vec<ParamEntry<T>>,
    frozen: bool,
}

impl<T: Elem> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Elem> ParamStore<T> {
    pub fn new() -> Self {
        Self { id: NEXT_STORE.fetch_add(1, Ordering::Relaxed), entries: Vec::new(), frozen: false }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, kind: ParamKind) -> ParamId {
        self.entries.push(ParamEntry { name: name.into(), value, kind });
        ParamId((self.entries.len() - 1) as u32)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0 as usize].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0 as usize].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0 as usize]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// A frozen store contributes constants to graphs: no gradient reaches it.
    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn num_weights(&self) -> usize {
        self.entries.iter().filter(|e| e.kind == ParamKind::Weight).map(|e| e.value.len()).sum()
    }

    /// Deep copy under a fresh store identity (e.g. a target network).
    pub fn duplicate(&self) -> Self {
        Self { id: NEXT_STORE.fetch_add(1, Ordering::Relaxed), entries: self.entries.clone(), frozen: self.frozen }
    }

    /// Copies every value from `other`, which must have the same layout.
    pub fn copy_from(&mut self, other: &ParamStore<T>) {
        assert_eq!(self.entries.len(), other.entries.len(), "store layouts differ");
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            assert_eq!(a.value.shape, b.value.shape, "shape of {} differs", a.name);
            a.value.data.copy_from_slice(&b.value.data);
        }
    }

    /// `self <- tau * online + (1 - tau) * self` over weights; buffers are copied.
    pub fn soft_update_from(&mut self, online: &ParamStore<T>, tau: f64) {
        assert_eq!(self.entries.len(), online.entries.len(), "store layouts differ");
        let t = T::of(tau);
        let keep = T::of(1.0 - tau);
        for (a, b) in self.entries.iter_mut().zip(&online.entries) {
            if a.kind == ParamKind::Buffer || tau == 1.0 {
                a.value.data.copy_from_slice(&b.value.data);
            } else {
                for (x, &y) in a.value.data.iter_mut().zip(&b.value.data) {
                    *x = t * y + keep * *x;
                }
            }
        }
    }

    /// L2 distance between two stores with the same layout, over weights.
    pub fn distance(&self, other: &ParamStore<T>) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .filter(|(a, _)| a.kind == ParamKind::Weight)
            .map(|(a, b)| a.value.data.iter().zip(&b.value.data).map(|(x, y)| (x.f64() - y.f64()).powi(2)).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Flattened copy of all values, for bitwise comparisons.
    pub fn snapshot(&self) -> Vec<Vec<T>> {
        self.entries.iter().map(|e| e.value.data.clone()).collect()
    }
}
