//! Stand-in image and text encoders plus the per-modality projections into
//! the shared embedding space.
//!
//! Encoders operate on feature vectors: either precomputed embeddings passed
//! through unchanged (`identity`) or a small trainable MLP over raw features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamStore};
use crate::tensor::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Identity,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

impl EncoderSpec {
    pub fn identity(dim: usize) -> Self {
        Self {
            kind: EncoderKind::Identity,
            input_dim: dim,
            hidden_dims: Vec::new(),
            output_dim: dim,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Self {
        Self {
            kind: EncoderKind::Mlp,
            input_dim,
            hidden_dims,
            output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("encoder dims must be ≥ 1".into()));
        }
        if self.kind == EncoderKind::Identity && self.input_dim != self.output_dim {
            return Err(Error::Config(format!(
                "identity encoder needs input_dim == output_dim, got {} and {}",
                self.input_dim, self.output_dim
            )));
        }
        Ok(())
    }

    /// Layer widths including input and output, for the MLP kind.
    fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.hidden_dims.iter().copied())
            .chain(std::iter::once(self.output_dim))
            .collect()
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, prefix: &str, rng: &mut R) {
        if self.kind == EncoderKind::Mlp {
            for (i, w) in self.widths().windows(2).enumerate() {
                store.init_linear(&format!("{prefix}.layer{i}"), w[0], w[1], rng);
            }
        }
    }

    /// Runs the encoder over rows of `x: [B, input_dim]`. Hidden layers use
    /// relu; the final layer is affine.
    pub fn encode<'g>(&self, params: &BoundParams<'g>, prefix: &str, x: Var<'g>) -> Result<Var<'g>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.input_dim {
            return Err(Error::Dimension {
                context: format!("{prefix} input"),
                expected: self.input_dim,
                found: *shape.last().unwrap_or(&0),
            });
        }
        match self.kind {
            EncoderKind::Identity => Ok(x),
            EncoderKind::Mlp => {
                let layers = self.widths().len() - 1;
                let mut h = x;
                for i in 0..layers {
                    h = params.linear(&format!("{prefix}.layer{i}"))?.forward(h)?;
                    if i + 1 < layers {
                        h = h.relu()?;
                    }
                }
                Ok(h)
            }
        }
    }
}

pub fn init_projection<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, encoded_dim: usize, embed_dim: usize, rng: &mut R) {
    store.init_linear(prefix, encoded_dim, embed_dim, rng);
}

/// `encoded · Wᵀ + b` into the shared embedding dimension.
pub fn project<'g>(params: &BoundParams<'g>, prefix: &str, encoded: Var<'g>) -> Result<Var<'g>> {
    let proj = params.linear(prefix)?;
    let expected = proj.weight.shape()[1];
    let found = *encoded.shape().last().unwrap_or(&0);
    if expected != found {
        return Err(Error::Dimension {
            context: format!("{prefix} input"),
            expected,
            found,
        });
    }
    proj.forward(encoded)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::{grad_check_many, Graph, Tensor};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn identity_passes_through() {
        let spec = EncoderSpec::identity(8);
        let store = ParamStore::new();
        let g = Graph::new();
        let p = store.bind(&g, true);
        let x = Tensor::uniform(&[2, 8], 1.0, &mut rng());
        let out = spec.encode(&p, "enc", g.constant(x.clone())).unwrap().value();
        assert_eq!(out, x);
    }

    #[test]
    fn identity_requires_equal_dims() {
        let mut spec = EncoderSpec::identity(8);
        spec.output_dim = 4;
        assert!(spec.validate().is_err());
        assert!(EncoderSpec::mlp(8, vec![0], 4).validate().is_err());
    }

    #[test]
    fn zero_weight_mlp_outputs_final_bias() {
        let spec = EncoderSpec::mlp(4, vec![5], 3);
        let mut store = ParamStore::new();
        spec.init(&mut store, "enc", &mut rng());
        for (name, t) in store.iter_mut() {
            if name.ends_with("weight") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let bias = store.get("enc.layer1.bias").unwrap().clone();
        let g = Graph::new();
        let p = store.bind(&g, false);
        let out = spec
            .encode(&p, "enc", g.constant(Tensor::uniform(&[3, 4], 1.0, &mut rng())))
            .unwrap()
            .value();
        for r in 0..3 {
            assert_eq!(out.row(r), bias.data());
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let spec = EncoderSpec::identity(8);
        let g = Graph::new();
        let store = ParamStore::new();
        let p = store.bind(&g, false);
        let err = spec.encode(&p, "enc", g.constant(Tensor::zeros(&[2, 7]))).unwrap_err();
        assert!(matches!(err, Error::Dimension { expected: 8, found: 7, .. }));
    }

    #[test]
    fn batch_of_one_text_rows() {
        let spec = EncoderSpec::mlp(6, vec![8], 5);
        let mut store = ParamStore::new();
        spec.init(&mut store, "txt", &mut rng());
        let g = Graph::new();
        let p = store.bind(&g, false);
        let out = spec.encode(&p, "txt", g.constant(Tensor::zeros(&[1, 6]))).unwrap();
        assert_eq!(out.shape(), vec![1, 5]);
    }

    #[test]
    fn class_slot_changes_text_encoding() {
        let spec = EncoderSpec::mlp(6, vec![8], 5);
        let mut store = ParamStore::new();
        spec.init(&mut store, "txt", &mut rng());
        let a = vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut b = a.clone();
        b[0] = 0.0;
        b[1] = 1.0;
        let g = Graph::new();
        let p = store.bind(&g, false);
        let x = g.constant(Tensor::from_rows(&[a, b]).unwrap());
        let out = spec.encode(&p, "txt", x).unwrap().value();
        let diff: f64 = out.row(0).iter().zip(out.row(1)).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-6);
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let spec = EncoderSpec::mlp(8, vec![16], 8);
        let mut store = ParamStore::new();
        spec.init(&mut store, "enc", &mut rng());
        let names: Vec<String> = store.names().map(String::from).collect();
        let mut inputs: Vec<Tensor> = names.iter().map(|n| store.get(n).unwrap().clone()).collect();
        inputs.push(Tensor::uniform(&[3, 8], 1.0, &mut rng()));
        let report = grad_check_many(
            |_, vars| {
                let bound = BoundParams::from_vars(names.iter().cloned().zip(vars.iter().copied()));
                let out = spec.encode(&bound, "enc", *vars.last().unwrap())?;
                out.mul(out)?.sum()
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(report.max_error() <= 1e-4, "{report:?}");
    }

    #[test]
    fn projection_by_hand() {
        let mut store = ParamStore::new();
        store.insert("proj.weight", Tensor::new(&[2, 2], vec![1.0, 1.0, 1.0, -1.0]).unwrap());
        store.insert("proj.bias", Tensor::zeros(&[2]));
        let g = Graph::new();
        let p = store.bind(&g, false);
        let x = g.constant(Tensor::new(&[1, 2], vec![2.0, 3.0]).unwrap());
        assert_eq!(project(&p, "proj", x).unwrap().value().data(), &[5.0, -1.0]);

        let zero = g.constant(Tensor::zeros(&[3, 2]));
        let out = project(&p, "proj", zero).unwrap().value();
        assert!(out.data().iter().all(|&v| v == 0.0));

        let wrong = g.constant(Tensor::zeros(&[1, 3]));
        assert!(project(&p, "proj", wrong).is_err());
    }
}
