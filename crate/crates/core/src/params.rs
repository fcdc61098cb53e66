//! Named parameter containers shared by the codec and the adversaries.

use jscc_tensor::{Adam, Gradients, Graph, Scalar, Tensor, Var};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<S> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> Default for ParamSet<S> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<S: Scalar> ParamSet<S> {
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<S>) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn get(&self, index: usize) -> &Tensor<S> {
        &self.tensors[index]
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replaces all tensors, checking that names and shapes agree.
    pub fn load(&mut self, named: Vec<(String, Tensor<S>)>) -> Result<()> {
        if named.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                self.tensors.len(),
                named.len()
            )));
        }
        for (i, (name, t)) in named.into_iter().enumerate() {
            if name != self.names[i] || t.shape() != self.tensors[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` {:?} does not match `{}` {:?}",
                    t.shape(),
                    self.names[i],
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i] = t;
        }
        Ok(())
    }

    /// Adds every tensor to the graph as a leaf.
    pub fn register(&self, g: &mut Graph<S>, trainable: bool) -> Vec<Var> {
        self.tensors.iter().map(|t| g.leaf(t.clone(), trainable)).collect()
    }

    /// Collects the gradients of `vars` (zeros where none arrived).
    pub fn gradients(&self, grads: &Gradients<S>, vars: &[Var]) -> Vec<Tensor<S>> {
        vars.iter()
            .zip(&self.tensors)
            .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
            .collect()
    }

    pub fn step(&mut self, optimizer: &mut Adam<S>, grads: &[Tensor<S>]) -> Result<()> {
        let mut refs: Vec<&mut Tensor<S>> = self.tensors.iter_mut().collect();
        optimizer.update(&mut refs, grads)?;
        Ok(())
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let mut buf = Vec::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            buf.clear();
            for &v in t.data() {
                v.write_le(&mut buf);
            }
            h.update(&buf);
        }
        hex(&h.finalize())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 fingerprint of an optimizer's moment buffers and step counter.
pub fn optimizer_fingerprint<S: Scalar>(adam: &Adam<S>) -> String {
    let mut h = Sha256::new();
    h.update(adam.step.to_le_bytes());
    let mut buf = Vec::new();
    for t in adam.first.iter().chain(&adam.second) {
        buf.clear();
        for &v in t.data() {
            v.write_le(&mut buf);
        }
        h.update(&buf);
    }
    hex(&h.finalize())
}

/// Glorot-uniform initialization.
pub fn glorot<S: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<S> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| S::lit(rng.random_range(-limit..limit))).collect();
    Tensor::from_vec(shape, data).expect("init shape")
}
