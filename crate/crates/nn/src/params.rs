use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameters plus the seeded generator used to initialize them.
#[derive(Clone, Debug)]
pub struct ParameterStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, ParamId>,
    rng: ChaCha8Rng,
}

impl ParameterStore {
    pub fn new(seed: u64) -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NnError::DuplicateParameter(name));
        }
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(id)
    }

    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init_uniform(&mut self, name: impl Into<String>, shape: Vec<usize>, fan_in: usize) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let len: usize = shape.iter().product();
        let data: Vec<f64> = (0..len).map(|_| self.rng.gen_range(-bound..bound)).collect();
        self.insert(name, Tensor::new(shape, data)?)
    }

    pub fn init_constant(&mut self, name: impl Into<String>, shape: Vec<usize>, value: f64) -> Result<ParamId> {
        self.insert(name, Tensor::filled(shape, value))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Replaces every value with the one of the same name in `other`.
    pub fn load_from(&mut self, other: &ParameterStore) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let src = other.value(other.id(name)?);
            if src.shape() != self.values[i].shape() {
                return Err(NnError::ShapeMismatch(format!(
                    "parameter `{name}`: {:?} vs {:?}",
                    self.values[i].shape(),
                    src.shape()
                )));
            }
            self.values[i] = src.clone();
        }
        Ok(())
    }
}

/// Gradient buffers aligned with the parameters of one store.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParameterStore) -> Self {
        Self {
            grads: store.values.iter().map(|v| vec![0.0; v.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.grads.iter_mut().flatten().for_each(|g| *g *= factor);
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.is_finite())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParameterStore::new(0);
        store.init_constant("w", vec![2], 0.0).unwrap();
        assert!(matches!(
            store.init_constant("w", vec![3], 0.0),
            Err(NnError::DuplicateParameter(_))
        ));
    }

    #[test]
    fn uniform_init_is_bounded_and_seeded() {
        let mut a = ParameterStore::new(5);
        let mut b = ParameterStore::new(5);
        let ia = a.init_uniform("w", vec![16, 8], 16).unwrap();
        let ib = b.init_uniform("w", vec![16, 8], 16).unwrap();
        assert_eq!(a.value(ia), b.value(ib));
        assert!(a.value(ia).data().iter().all(|x| x.abs() <= 0.25));
    }
}
