//! Adaptive-moment (Adam) optimiser without weight decay.

use crate::error::{DiffError, Result};
use crate::params::ParamStore;
use crate::tape::Gradients;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Optimiser state: one first/second moment pair per stored tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape()))
            .collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Applies one update. `grads` must cover exactly the trainable tensors.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if self.first.len() != store.len() {
            return Err(DiffError::Usage(format!(
                "optimizer tracks {} tensors, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        let trainable = store.trainable_ids();
        let covered = grads.len() == trainable.len()
            && trainable.iter().all(|id| grads.get(*id).is_some());
        if !covered {
            let missing: Vec<_> = trainable
                .iter()
                .filter(|id| grads.get(**id).is_none())
                .map(|id| store.param(*id).name.clone())
                .collect();
            return Err(DiffError::Usage(format!(
                "gradients do not match trainable parameters (missing: {missing:?}, {} given for {} trainable)",
                grads.len(),
                trainable.len()
            )));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for id in trainable {
            let g = grads.get(id).expect("coverage checked above");
            if g.shape() != store.value(id).shape() {
                return Err(DiffError::Usage(format!(
                    "gradient shape {:?} for `{}` of shape {:?}",
                    g.shape(),
                    store.param(id).name,
                    store.value(id).shape()
                )));
            }
            let m = self.first[id.0].data_mut();
            let v = self.second[id.0].data_mut();
            let w = store.value_mut(id).data_mut();
            for (((wi, mi), vi), gi) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *wi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{ParamGroup, ParamId};
    use crate::tape::Tape;

    fn scalar_store(w: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", ParamGroup::Head, Tensor::vector(vec![w])).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradients_leave_parameters_bit_identical() {
        let (mut s, id) = scalar_store(0.123_456_789);
        let before = s.clone();
        let mut opt = Adam::new(AdamConfig::default(), &s);
        let mut g = Gradients::default();
        g.insert(id, Tensor::vector(vec![0.0]));
        opt.step(&mut s, &g).unwrap();
        assert!(s.bit_identical(&before));
    }

    #[test]
    fn descends_on_square() {
        let (mut s, id) = scalar_store(1.0);
        let mut opt = Adam::new(AdamConfig::with_lr(1e-2), &s);
        let grads = {
            let mut tape = Tape::new(&s);
            let w = tape.param(id);
            let sq = tape.square(w).unwrap();
            let loss = tape.sum(sq).unwrap();
            tape.backward(loss).unwrap()
        };
        opt.step(&mut s, &grads).unwrap();
        let w = s.value(id).data()[0];
        assert!(w < 1.0 && w > 0.0);
    }

    #[test]
    fn mismatched_gradients_rejected() {
        let (mut s, _) = scalar_store(1.0);
        let mut opt = Adam::new(AdamConfig::default(), &s);
        assert!(matches!(
            opt.step(&mut s, &Gradients::default()),
            Err(DiffError::Usage(_))
        ));
    }
}
