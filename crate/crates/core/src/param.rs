//! Learnable parameters and their initializers.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;
use crate::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// First/second moment estimates and the step counter for Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    /// Filled by [`ParamStore::apply_gradients`], consumed by the optimizer.
    pub grad: Option<Vec<f64>>,
    pub adam: AdamState,
}

/// Gradients produced by one backward pass, indexed by [`ParamId`].
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub(crate) grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let n = value.numel();
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad: None,
            adam: AdamState {
                m: vec![0.0; n],
                v: vec![0.0; n],
                step: 0,
            },
        });
        ParamId(self.params.len() - 1)
    }

    /// Glorot-uniform `fan_in x fan_out` weight matrix.
    pub fn glorot(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> ParamId {
        let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.add(name, Tensor::matrix(fan_in, fan_out, data))
    }

    /// `rows x cols` matrix with i.i.d. zero-mean normal entries.
    pub fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64, rng: &mut Rng) -> ParamId {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        self.add(name, Tensor::matrix(rows, cols, data))
    }

    pub fn zeros(&mut self, name: &str, len: usize) -> ParamId {
        self.add(name, Tensor::zeros(&[len]))
    }

    pub fn ones(&mut self, name: &str, len: usize) -> ParamId {
        self.add(name, Tensor::full(&[len], 1.0))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(value.shape(), self.params[id.0].value.shape());
        self.params[id.0].value = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Installs gradients from a backward pass. Parameters the loss did not
    /// reach get an all-zero gradient.
    pub fn apply_gradients(&mut self, grads: Gradients) {
        let mut grads = grads.grads;
        grads.resize(self.params.len(), None);
        for (p, g) in self.params.iter_mut().zip(grads) {
            p.grad = Some(g.unwrap_or_else(|| vec![0.0; p.value.numel()]));
        }
    }

    pub fn clear_gradients(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Copies every parameter value (a checkpoint).
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) {
        assert_eq!(snapshot.len(), self.params.len());
        for (p, v) in self.params.iter_mut().zip(snapshot) {
            p.value = v.clone();
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}
