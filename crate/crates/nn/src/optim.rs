use crate::error::{NnError, Result};
use crate::params::{Gradients, ParameterStore};
use crate::tensor::Tensor;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParameterStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParameterStore, grads: &Gradients) -> Result<()> {
        if !grads.is_finite() {
            return Err(NnError::NonFinite("gradient".into()));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (id, g) in grads.iter() {
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let w = store.value_mut(id).data_mut();
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                w[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Moment buffers as named tensors, for checkpointing alongside parameters.
    pub fn state(&self, store: &ParameterStore) -> Vec<(String, Tensor)> {
        let mut out = vec![("adam.step".to_string(), Tensor::scalar(self.step as f64))];
        for (id, name, t) in store.iter() {
            let shape = t.shape().to_vec();
            out.push((format!("adam.m.{name}"), Tensor::new(shape.clone(), self.m[id.index()].clone()).expect("finite moments")));
            out.push((format!("adam.v.{name}"), Tensor::new(shape, self.v[id.index()].clone()).expect("finite moments")));
        }
        out
    }

    pub fn load_state(&mut self, store: &ParameterStore, entries: &[(String, Tensor)]) -> Result<()> {
        let find = |key: &str| {
            entries
                .iter()
                .find(|(n, _)| n == key)
                .map(|(_, t)| t)
                .ok_or_else(|| NnError::Checkpoint(format!("missing optimizer entry `{key}`")))
        };
        self.step = find("adam.step")?.data()[0] as u64;
        for (id, name, t) in store.iter() {
            let m = find(&format!("adam.m.{name}"))?;
            let v = find(&format!("adam.v.{name}"))?;
            if m.len() != t.len() || v.len() != t.len() {
                return Err(NnError::Checkpoint(format!("optimizer state for `{name}` has wrong size")));
            }
            self.m[id.index()] = m.data().to_vec();
            self.v[id.index()] = v.data().to_vec();
        }
        Ok(())
    }
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}
