//! Text encoder contract and the built-in toy encoder.
//!
//! The toy encoder is an embedding table followed by a few local mixing
//! layers (each position mixes with its immediate neighbors through a tanh
//! affine map). Every layer output is exposed, so the hierarchy aggregation
//! can average the last few layers exactly as it would for a deep
//! transformer encoder plugged in behind the same trait.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::{stream, TAG_INIT};
use crate::scalar::Scalar;
use crate::tensor::{uniform_init, Tape, Tensor, Var};

use super::tokenize::TokenizedReport;

/// `L x H x D` stack of per-layer token features.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerFeatures<T> {
    pub layers: usize,
    pub tokens: usize,
    pub dim: usize,
    /// Row-major `[layer][token][dim]`.
    pub data: Vec<T>,
}

impl<T: Scalar> LayerFeatures<T> {
    pub fn layer(&self, l: usize) -> &[T] {
        let stride = self.tokens * self.dim;
        &self.data[l * stride..(l + 1) * stride]
    }
}

/// Trainable map from token ids to `L` layer outputs of shape `(H, D)`.
///
/// Implementations declare their parameters by name/shape; the trainer owns
/// the values and exposes them on the tape, so gradients flow into whatever
/// the implementation builds.
pub trait TextEncoder<T: Scalar> {
    fn layer_count(&self) -> usize;
    fn dim(&self) -> usize;
    fn vocab_size(&self) -> usize;
    fn param_shapes(&self) -> Vec<(String, Vec<usize>)>;
    fn init_params(&self, seed: u64) -> Vec<(String, Tensor<T>)>;
    /// Append the forward graph for one token sequence; returns the `L`
    /// layer outputs.
    fn build(
        &self,
        tape: &mut Tape<T>,
        params: &BTreeMap<String, Var>,
        token_ids: &[u32],
    ) -> Vec<Var>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyTextEncoder {
    pub vocab_size: usize,
    pub dim: usize,
    /// Total number of exposed layers (embedding included); >= 1.
    pub layers: usize,
}

impl ToyTextEncoder {
    pub fn new(vocab_size: usize, dim: usize, layers: usize) -> Self {
        assert!(layers >= 1, "encoder needs at least one layer");
        ToyTextEncoder {
            vocab_size,
            dim,
            layers,
        }
    }
}

impl<T: Scalar> TextEncoder<T> for ToyTextEncoder {
    fn layer_count(&self) -> usize {
        self.layers
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.dim;
        let mut out = vec![("text.embed".to_string(), vec![self.vocab_size, d])];
        for l in 0..self.layers - 1 {
            out.push((format!("text.mix{l}.w"), vec![d, d]));
            out.push((format!("text.mix{l}.u"), vec![d, d]));
            out.push((format!("text.mix{l}.b"), vec![d]));
        }
        out
    }

    fn init_params(&self, seed: u64) -> Vec<(String, Tensor<T>)> {
        let shapes = <Self as TextEncoder<T>>::param_shapes(self);
        shapes
            .into_iter()
            .enumerate()
            .map(|(i, (name, dims))| {
                let mut rng = stream(seed, &[TAG_INIT, 10, i as u64]);
                let t = if name.ends_with(".b") {
                    Tensor::zeros(&dims)
                } else {
                    let fan_in = if dims.len() == 2 { dims[1] } else { dims[0] };
                    uniform_init(&mut rng, &dims, 1.0 / (fan_in as f64).sqrt())
                };
                (name, t)
            })
            .collect()
    }

    fn build(
        &self,
        tape: &mut Tape<T>,
        params: &BTreeMap<String, Var>,
        token_ids: &[u32],
    ) -> Vec<Var> {
        let ids: Vec<usize> = token_ids.iter().map(|&i| i as usize).collect();
        let embed = params["text.embed"];
        let mut layers = vec![tape.gather(embed, &ids)];
        for l in 0..self.layers - 1 {
            let prev = *layers.last().unwrap();
            let left = tape.shift_rows(prev, 1);
            let right = tape.shift_rows(prev, -1);
            let neigh = tape.add(left, right);
            let own = tape.matmul(prev, params[&format!("text.mix{l}.w")]);
            let mixed = tape.matmul(neigh, params[&format!("text.mix{l}.u")]);
            let s = tape.add(own, mixed);
            let s = tape.add_row(s, params[&format!("text.mix{l}.b")]);
            layers.push(tape.tanh(s));
        }
        layers
    }
}

/// Run the encoder on one tokenized report and materialize all layer
/// outputs. Ids must be within the encoder's vocabulary range.
pub fn encode_text<T: Scalar>(
    tok: &TokenizedReport,
    encoder: &dyn TextEncoder<T>,
    params: &[(String, Tensor<T>)],
) -> Result<LayerFeatures<T>> {
    if let Some(&bad) = tok
        .token_ids
        .iter()
        .find(|&&id| id as usize >= encoder.vocab_size())
    {
        return Err(Error::validation(format!(
            "token id {bad} out of vocabulary range {}",
            encoder.vocab_size()
        )));
    }
    let mut tape = Tape::new();
    let vars: BTreeMap<String, Var> = params
        .iter()
        .map(|(n, t)| (n.clone(), tape.leaf(t)))
        .collect();
    let layers = encoder.build(&mut tape, &vars, &tok.token_ids);
    let h = tok.token_ids.len();
    let d = encoder.dim();
    let mut data = Vec::with_capacity(layers.len() * h * d);
    for &l in &layers {
        assert_eq!(tape.dims(l), &[h, d]);
        data.extend_from_slice(tape.value(l));
    }
    Ok(LayerFeatures {
        layers: layers.len(),
        tokens: h,
        dim: d,
        data,
    })
}
