//! Flat, named parameter storage shared by the model, optimizer and checkpoints.

use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Ordered collection of parameter tensors. Registration order is the
/// canonical order used for gradients, optimizer state and serialization.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn register(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> ParamId {
        let name = name.into();
        debug_assert_eq!(shape.iter().product::<usize>(), data.len(), "{name}");
        debug_assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param { name, shape, data });
        ParamId(self.params.len() - 1)
    }

    pub(crate) fn zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> ParamId {
        let n = shape.iter().product();
        self.register(name, shape, vec![0.0; n])
    }

    /// He-normal initialisation with the given fan-in.
    pub(crate) fn he_normal<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let n = shape.iter().product();
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        self.register(name, shape, data)
    }

    pub(crate) fn uniform<R: Rng>(&mut self, name: impl Into<String>, shape: Vec<usize>, bound: f64, rng: &mut R) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.register(name, shape, data)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn by_index(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn by_index_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    #[inline]
    pub(crate) fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].data
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            tensors: self.params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }
}

/// Gradient buffers laid out exactly like a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub tensors: Vec<Vec<f64>>,
}

impl Grads {
    #[inline]
    pub(crate) fn slot(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.tensors[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            for x in t.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn is_zero(&self, idx: usize) -> bool {
        self.tensors[idx].iter().all(|&g| g == 0.0)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|g| g.is_finite())
    }
}
