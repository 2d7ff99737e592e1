//! Named parameter storage.
//!
//! Parameters live outside the tape and are leased onto it each forward pass;
//! after `backward`, gradients are read back per parameter. Iteration order is
//! insertion order, which is fixed by the deterministic model construction.

use super::{Scalar, Tape, Var};
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

pub struct ParamStore<T: Scalar> {
    names: Vec<String>,
    arrays: Vec<ArrayD<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            arrays: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, array: ArrayD<T>) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        self.names.push(name.to_string());
        self.arrays.push(array);
        self.index.insert(name.to_string(), self.names.len() - 1);
        ParamId(self.names.len() - 1)
    }

    /// Glorot-uniform initialized matrix parameter: entries uniform in
    /// +-sqrt(6/(fan_in + fan_out)).
    pub fn add_glorot(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<T> = (0..n)
            .map(|_| T::cast(rng.random_range(-bound..bound)))
            .collect();
        self.add(name, ArrayD::from_shape_vec(IxDyn(shape), data).unwrap())
    }

    /// Zero-initialized parameter (biases).
    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, ArrayD::zeros(IxDyn(shape)))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<T> {
        &self.arrays[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.arrays[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<T>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.arrays.iter())
    }

    /// Lease every parameter onto a tape as differentiable leaves, in store
    /// order. The returned binding maps parameters to tape nodes.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> BoundParams<'t, T> {
        let vars = self
            .arrays
            .iter()
            .map(|a| tape.leaf(a.clone(), true))
            .collect();
        BoundParams { vars }
    }

    /// Total number of scalar elements across parameters.
    pub fn num_elements(&self) -> usize {
        self.arrays.iter().map(|a| a.len()).sum()
    }
}

/// Tape leaves for one forward/backward pass of a parameter store.
pub struct BoundParams<'t, T: Scalar> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> BoundParams<'t, T> {
    pub fn var(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    /// Gradients in store order; `None` for parameters the loss ignored.
    pub fn grads(&self) -> Vec<Option<ArrayD<T>>> {
        self.vars.iter().map(|v| v.grad()).collect()
    }
}
