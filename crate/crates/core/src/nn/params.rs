use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Ordered collection of named parameter tensors.
///
/// Order is the registration order and is what checkpoints and optimizer
/// state rely on.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn zero_grads(&self) -> Grads<F> {
        Grads {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.dims()))
                .collect(),
        }
    }

    pub fn map_inplace(&mut self, mut f: impl FnMut(F) -> F) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v = f(*v));
        }
    }

    /// Replace tensor values from `(name, tensor)` records, checking names and
    /// dims against this store's layout.
    pub fn load_records(&mut self, records: &mut dyn Iterator<Item = (String, Tensor<F>)>) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let (rname, tensor) = records
                .next()
                .ok_or_else(|| Error::Format(format!("missing record for parameter `{name}`")))?;
            if &rname != name {
                return Err(Error::Format(format!(
                    "expected record `{name}`, found `{rname}`"
                )));
            }
            if tensor.dims() != self.tensors[i].dims() {
                return Err(Error::Format(format!(
                    "record `{name}` has dims {:?}, expected {:?}",
                    tensor.dims(),
                    self.tensors[i].dims()
                )));
            }
            self.tensors[i] = tensor;
        }
        Ok(())
    }
}

/// Gradient tensors aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<F = f32> {
    tensors: Vec<Tensor<F>>,
}

impl<F: Scalar> Grads<F> {
    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn add_assign(&mut self, other: &Grads<F>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: F) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Sum of absolute values over all entries.
    pub fn l1(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v.as_f64().abs())
            .sum()
    }
}

/// Kaiming-uniform tensor: U(-b, b) with b = sqrt(6 / fan_in).
pub(crate) fn kaiming_uniform<F: Scalar>(dims: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<F> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = dims.iter().product();
    let data = (0..n)
        .map(|_| F::of(rng.random_range(-bound..bound)))
        .collect();
    Tensor::from_vec(dims, data).expect("dims product matches length")
}
