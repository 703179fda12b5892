//! Named parameter storage and its binding onto a [`Graph`].

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Ordered map of parameter name to tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.params.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Records every parameter as a leaf. Trainable leaves receive gradients.
    pub fn bind<'g>(&self, graph: &'g Graph, trainable: bool) -> BoundParams<'g> {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| {
                let t = t.clone().with_requires_grad(trainable);
                (name.clone(), graph.leaf(t))
            })
            .collect();
        BoundParams { vars }
    }

    /// Same names and shapes, ignoring values.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((a, ta), (b, tb))| a == b && ta.shape() == tb.shape())
    }

    /// Adds a weight `[out, in]` and bias `[out]` drawn from
    /// uniform(−1/√in, 1/√in).
    pub fn init_linear<R: Rng + ?Sized>(&mut self, prefix: &str, in_dim: usize, out_dim: usize, rng: &mut R) {
        let bound = 1.0 / (in_dim as f64).sqrt();
        self.insert(format!("{prefix}.weight"), Tensor::uniform(&[out_dim, in_dim], bound, rng));
        self.insert(format!("{prefix}.bias"), Tensor::uniform(&[out_dim], bound, rng));
    }

    pub fn init_matrix<R: Rng + ?Sized>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) {
        let bound = 1.0 / (cols as f64).sqrt();
        self.insert(name, Tensor::uniform(&[rows, cols], bound, rng));
    }
}

/// Parameters recorded on one graph.
pub struct BoundParams<'g> {
    vars: BTreeMap<String, Var<'g>>,
}

impl<'g> BoundParams<'g> {
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var<'g>)>) -> Self {
        Self {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var<'g>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))
    }

    pub fn linear(&self, prefix: &str) -> Result<Linear<'g>> {
        Ok(Linear {
            weight: self.get(&format!("{prefix}.weight"))?,
            bias: self.get(&format!("{prefix}.bias"))?,
        })
    }

    /// Gradients of every bound parameter, by name. Missing buffers read as zero.
    pub fn grads(&self) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(name, v)| {
                let g = v.grad().unwrap_or_else(|| Tensor::zeros(&v.shape()));
                (name.clone(), g)
            })
            .collect()
    }
}

/// Affine layer `x · Wᵀ + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear<'g> {
    pub weight: Var<'g>,
    pub bias: Var<'g>,
}

impl<'g> Linear<'g> {
    pub fn forward(&self, x: Var<'g>) -> Result<Var<'g>> {
        x.affine(self.weight, self.bias)
    }
}
