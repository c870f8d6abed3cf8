use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
struct Slot {
    name: String,
    value: Tensor,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Named parameters with gradient accumulators and Adam moments.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    slots: Vec<Slot>,
    index: BTreeMap<String, usize>,
    step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
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

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let [r, c] = value.shape();
        self.slots.push(Slot {
            name: name.to_string(),
            grad: Tensor::zeros(r, c),
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
            value,
        });
        let id = self.slots.len() - 1;
        self.index.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.slots[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.slots[id.0].grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for s in &mut self.slots {
            s.grad.fill(0.0);
        }
    }

    pub fn scale_grads(&mut self, c: f64) {
        for s in &mut self.slots {
            s.grad.scale(c);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.slots.iter().map(|s| s.grad.sum_squares()).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().all(|s| s.value.is_finite() && s.grad.is_finite())
    }

    /// Bias-corrected Adam update from the accumulated gradients, which are
    /// cleared afterwards.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for s in &mut self.slots {
            let it = s
                .value
                .data_mut()
                .iter_mut()
                .zip(s.grad.data_mut().iter_mut())
                .zip(s.m.data_mut().iter_mut().zip(s.v.data_mut().iter_mut()));
            for ((p, g), (m, v)) in it {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * *g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * *g * *g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
                *g = 0.0;
            }
        }
    }

    /// `(name, value)` pairs in name order.
    pub fn named_values(&self) -> Vec<(&str, &Tensor)> {
        self.index
            .iter()
            .map(|(n, &i)| (n.as_str(), &self.slots[i].value))
            .collect()
    }

    /// Overwrite values by name; every name must already exist with the same shape.
    pub fn load_values<'a>(
        &mut self,
        values: impl IntoIterator<Item = (&'a str, Tensor)>,
    ) -> Result<()> {
        for (name, t) in values {
            let id = self
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            if self.value(id).shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: shape {:?} vs stored {:?}",
                    t.shape(),
                    self.value(id).shape()
                )));
            }
            *self.value_mut(id) = t;
        }
        Ok(())
    }

    /// Copy of the values only, for snapshotting the best epoch.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.slots.iter().map(|s| s.value.clone()).collect()
    }

    pub fn restore(&mut self, snap: &[Tensor]) {
        for (s, v) in self.slots.iter_mut().zip(snap) {
            s.value = v.clone();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("x", Tensor::row_vector(vec![x]));
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut s, id) = scalar_store(0.7);
        s.adam_step(&AdamConfig::default());
        assert_eq!(s.value(id).data(), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let (mut s, id) = scalar_store(1.0);
        s.grad_mut(id).data_mut()[0] = -3.0;
        let cfg = AdamConfig { lr: 0.01, ..Default::default() };
        s.adam_step(&cfg);
        // bias-corrected first step: g / sqrt(g^2) = sign(g)
        assert!((s.value(id).get(0, 0) - 1.01).abs() < 1e-9);
        assert_eq!(s.grad(id).get(0, 0), 0.0);
    }

    #[test]
    fn zero_lr_is_identity() {
        let (mut s, id) = scalar_store(2.5);
        s.grad_mut(id).data_mut()[0] = 10.0;
        s.adam_step(&AdamConfig { lr: 0.0, ..Default::default() });
        assert_eq!(s.value(id).get(0, 0), 2.5);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(x) = (x - 3)^2 / 2, gradient x - 3.
        let (mut s, id) = scalar_store(1.0);
        let cfg = AdamConfig { lr: 1e-2, ..Default::default() };
        let mut steps = 0;
        while steps < 2000 {
            let x = s.value(id).get(0, 0);
            if 0.5 * (x - 3.0) * (x - 3.0) < 1e-6 {
                break;
            }
            s.grad_mut(id).data_mut()[0] = x - 3.0;
            s.adam_step(&cfg);
            steps += 1;
        }
        let x = s.value(id).get(0, 0);
        assert!(0.5 * (x - 3.0) * (x - 3.0) < 1e-6, "x = {x} after {steps} steps");
    }
}
