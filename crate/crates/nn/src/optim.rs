use serde::{Deserialize, Serialize};

use crate::elem::Elem;
use crate::graph::Gradients;
use crate::params::{ParamKind, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamSlot<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

/// Adaptive-moment optimizer over the weights of one store.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    slots: Vec<Option<AdamSlot<T>>>,
}

impl<T: Elem> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        Self { config, slots: vec![None; store.len()] }
    }

    pub fn slots(&self) -> &[Option<AdamSlot<T>>] {
        &self.slots
    }

    pub fn set_slots(&mut self, slots: Vec<Option<AdamSlot<T>>>) {
        self.slots = slots;
    }

    /// Applies one update from `grads`. Parameters without a gradient (or a
    /// frozen store) are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) {
        if store.is_frozen() {
            return;
        }
        let c = self.config;
        if self.slots.len() < store.len() {
            self.slots.resize(store.len(), None);
        }
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let eps = T::of(c.eps);
        for i in 0..store.len() {
            if store.entries()[i].kind != ParamKind::Weight {
                continue;
            }
            let Some(g) = grads.get(store, crate::params::ParamId(i as u32)) else { continue };
            let p = &mut store.entries_mut()[i].value.data;
            let slot = self.slots[i].get_or_insert_with(|| AdamSlot {
                m: vec![T::zero(); p.len()],
                v: vec![T::zero(); p.len()],
                step: 0,
            });
            slot.step += 1;
            let bc1 = 1.0 - c.beta1.powi(slot.step as i32);
            let bc2 = 1.0 - c.beta2.powi(slot.step as i32);
            let step_size = T::of(c.lr / bc1);
            let bc2_sqrt = T::of(bc2.sqrt());
            for (((pj, &gj), mj), vj) in p.iter_mut().zip(&g.data).zip(&mut slot.m).zip(&mut slot.v) {
                *mj = b1 * *mj + (T::one() - b1) * gj;
                *vj = b2 * *vj + (T::one() - b2) * gj * gj;
                let denom = vj.sqrt() / bc2_sqrt + eps;
                *pj -= step_size * *mj / denom;
            }
        }
    }
}
