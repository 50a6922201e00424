//! Image backbone contract and the built-in toy convolutional backbone.
//!
//! The toy backbone is four stride-2 3x3 convolution stages with tanh
//! (smooth everywhere, which keeps finite-difference gradient checks exact).
//! Shallow features are tapped at the third stage, deep features at the
//! fourth, so the shallow grid always has exactly four times the positions
//! of the deep grid, and the pooled vector is the spatial average of the
//! final map.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::{stream, TAG_INIT};
use crate::scalar::Scalar;
use crate::tensor::{uniform_init, Tape, Tensor, Var};

/// Grid geometry for a given input side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    /// Shallow grid side `G`.
    pub g: usize,
    pub c_shallow: usize,
    pub c_deep: usize,
}

/// Materialized backbone output.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneFeatures<T> {
    /// (C_s, G, G)
    pub shallow_grid: Tensor<T>,
    /// (C_d, G/2, G/2)
    pub deep_grid: Tensor<T>,
    /// (C_d,) spatial average of the final map.
    pub pooled: Vec<T>,
}

/// Graph-side backbone output: taps plus the pooled global vector.
pub struct BackboneGraph {
    pub shallow: Var,
    pub deep: Var,
    /// (1, C_d)
    pub pooled: Var,
}

/// Trainable map from a preprocessed `(C, side, side)` tensor to shallow,
/// deep, and pooled features.
pub trait ImageBackbone<T: Scalar> {
    fn grid_shape(&self, side: usize) -> Result<GridShape>;
    fn param_shapes(&self) -> Vec<(String, Vec<usize>)>;
    fn init_params(&self, seed: u64) -> Vec<(String, Tensor<T>)>;
    fn build(&self, tape: &mut Tape<T>, params: &BTreeMap<String, Var>, x: Var) -> BackboneGraph;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyBackbone {
    pub in_channels: usize,
    /// Channels after each of the four stride-2 stages; stage 3 is the
    /// shallow tap, stage 4 the deep tap.
    pub stage_channels: [usize; 4],
}

impl ToyBackbone {
    pub fn new(in_channels: usize, stage_channels: [usize; 4]) -> Self {
        ToyBackbone {
            in_channels,
            stage_channels,
        }
    }
}

impl<T: Scalar> ImageBackbone<T> for ToyBackbone {
    fn grid_shape(&self, side: usize) -> Result<GridShape> {
        if !side.is_multiple_of(16) || side < 16 {
            return Err(Error::validation(format!(
                "input side {side} must be a positive multiple of 16"
            )));
        }
        Ok(GridShape {
            g: side / 8,
            c_shallow: self.stage_channels[2],
            c_deep: self.stage_channels[3],
        })
    }

    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut c_in = self.in_channels;
        for (i, &c_out) in self.stage_channels.iter().enumerate() {
            out.push((format!("vision.s{i}.w"), vec![c_out, c_in, 3, 3]));
            out.push((format!("vision.s{i}.b"), vec![c_out]));
            c_in = c_out;
        }
        out
    }

    fn init_params(&self, seed: u64) -> Vec<(String, Tensor<T>)> {
        let shapes = <Self as ImageBackbone<T>>::param_shapes(self);
        shapes
            .into_iter()
            .enumerate()
            .map(|(i, (name, dims))| {
                let mut rng = stream(seed, &[TAG_INIT, 20, i as u64]);
                let t = if name.ends_with(".b") {
                    Tensor::zeros(&dims)
                } else {
                    let fan_in: usize = dims[1] * dims[2] * dims[3];
                    uniform_init(&mut rng, &dims, 1.0 / (fan_in as f64).sqrt())
                };
                (name, t)
            })
            .collect()
    }

    fn build(&self, tape: &mut Tape<T>, params: &BTreeMap<String, Var>, x: Var) -> BackboneGraph {
        let mut cur = x;
        let mut taps = Vec::new();
        for i in 0..4 {
            let w = params[&format!("vision.s{i}.w")];
            let b = params[&format!("vision.s{i}.b")];
            let conv = tape.conv2d(cur, w, b, 2, 1);
            cur = tape.tanh(conv);
            taps.push(cur);
        }
        let pooled = tape.spatial_mean(taps[3]);
        BackboneGraph {
            shallow: taps[2],
            deep: taps[3],
            pooled,
        }
    }
}

/// Run the backbone on one preprocessed tensor.
pub fn encode_image<T: Scalar>(
    x: &Tensor<T>,
    backbone: &dyn ImageBackbone<T>,
    params: &[(String, Tensor<T>)],
) -> Result<BackboneFeatures<T>> {
    if x.dims.len() != 3 || x.dims[1] != x.dims[2] {
        return Err(Error::validation(format!(
            "expected square (C,H,W) input, got {:?}",
            x.dims
        )));
    }
    let shape = backbone.grid_shape(x.dims[1])?;
    let mut tape = Tape::new();
    let vars: BTreeMap<String, Var> = params
        .iter()
        .map(|(n, t)| (n.clone(), tape.leaf(t)))
        .collect();
    let xv = tape.constant(x);
    let graph = backbone.build(&mut tape, &vars, xv);

    let sd = tape.dims(graph.shallow).to_vec();
    let dd = tape.dims(graph.deep).to_vec();
    if sd != [shape.c_shallow, shape.g, shape.g] {
        return Err(Error::validation(format!(
            "shallow grid shape {sd:?} mismatch"
        )));
    }
    if dd != [shape.c_deep, shape.g / 2, shape.g / 2] {
        return Err(Error::validation(format!(
            "deep grid shape {dd:?} mismatch"
        )));
    }
    Ok(BackboneFeatures {
        shallow_grid: Tensor::from_vec(&sd, tape.value(graph.shallow).to_vec()),
        deep_grid: Tensor::from_vec(&dd, tape.value(graph.deep).to_vec()),
        pooled: tape.value(graph.pooled).to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ToyBackbone {
        ToyBackbone::new(3, [8, 16, 16, 16])
    }

    fn params(seed: u64) -> Vec<(String, Tensor<f64>)> {
        ImageBackbone::<f64>::init_params(&toy(), seed)
    }

    #[test]
    fn toy_backbone_64_gives_8x8_and_4x4_grids() {
        let x = Tensor::<f64>::zeros(&[3, 64, 64]);
        let f = encode_image(&x, &toy(), &params(1)).unwrap();
        assert_eq!(f.shallow_grid.dims, vec![16, 8, 8]); // M = 64
        assert_eq!(f.deep_grid.dims, vec![16, 4, 4]); // M/4 = 16
        assert_eq!(f.pooled.len(), 16);
    }

    #[test]
    fn m_over_4_relation_holds_for_supported_sides() {
        for side in [32usize, 64, 128, 224] {
            let shape = ImageBackbone::<f64>::grid_shape(&toy(), side).unwrap();
            let m = shape.g * shape.g;
            assert_eq!(m % 4, 0);
            assert_eq!((shape.g / 2) * (shape.g / 2), m / 4, "side {side}");
        }
    }

    #[test]
    fn unsupported_side_rejected() {
        assert!(ImageBackbone::<f64>::grid_shape(&toy(), 60).is_err());
        let x = Tensor::<f64>::zeros(&[3, 60, 60]);
        assert!(encode_image(&x, &toy(), &params(1)).is_err());
    }

    #[test]
    fn identical_inputs_identical_outputs() {
        let mut x = Tensor::<f64>::zeros(&[3, 32, 32]);
        for (i, v) in x.data.iter_mut().enumerate() {
            *v = ((i * 37) % 100) as f64 / 100.0 - 0.5;
        }
        let p = params(3);
        let a = encode_image(&x, &toy(), &p).unwrap();
        let b = encode_image(&x, &toy(), &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_input_with_zero_biases_gives_zero_grids() {
        // linear-layer oracle: conv(0) + 0 bias = 0, tanh(0) = 0, stage by stage
        let x = Tensor::<f64>::zeros(&[3, 32, 32]);
        let p = params(5); // biases initialize to zero
        let f = encode_image(&x, &toy(), &p).unwrap();
        assert!(f.shallow_grid.data.iter().all(|&v| v == 0.0));
        assert!(f.deep_grid.data.iter().all(|&v| v == 0.0));
        assert!(f.pooled.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pooled_equals_spatial_average_of_deep_grid() {
        let mut x = Tensor::<f64>::zeros(&[3, 32, 32]);
        for (i, v) in x.data.iter_mut().enumerate() {
            *v = ((i * 13) % 17) as f64 / 17.0;
        }
        let f = encode_image(&x, &toy(), &params(9)).unwrap();
        let (c, g2) = (
            f.deep_grid.dims[0],
            f.deep_grid.dims[1] * f.deep_grid.dims[2],
        );
        for ch in 0..c {
            let mean: f64 =
                f.deep_grid.data[ch * g2..(ch + 1) * g2].iter().sum::<f64>() / g2 as f64;
            assert!((f.pooled[ch] - mean).abs() < 1e-12);
        }
    }
}
