//! Projection heads: per-position affine maps taking each feature level to
//! the shared dimension `D`.
//!
//! Spatial grids flatten row-major (position `p = y * G + x`); that mapping
//! is the single source of truth for position-to-pixel bookkeeping, shared
//! with heatmap upsampling.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::{stream, TAG_INIT};
use crate::scalar::Scalar;
use crate::tensor::{uniform_init, Tape, Tensor, Var};

use super::backbone::BackboneFeatures;

/// Weights of the three heads. A 1x1 convolution over a grid is exactly a
/// per-position affine map, which is how the grids are projected here.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHeads<T> {
    /// (D, C_s)
    pub shallow_w: Tensor<T>,
    pub shallow_b: Tensor<T>,
    /// (D, C_d)
    pub deep_w: Tensor<T>,
    pub deep_b: Tensor<T>,
    /// (D, C_d)
    pub global_w: Tensor<T>,
    pub global_b: Tensor<T>,
}

impl<T: Scalar> ProjectionHeads<T> {
    pub fn init(dim: usize, c_shallow: usize, c_deep: usize, seed: u64) -> Self {
        let mk = |tag: u64, rows: usize, cols: usize| {
            let mut rng = stream(seed, &[TAG_INIT, 30, tag]);
            uniform_init::<T>(&mut rng, &[rows, cols], 1.0 / (cols as f64).sqrt())
        };
        ProjectionHeads {
            shallow_w: mk(0, dim, c_shallow),
            shallow_b: Tensor::zeros(&[dim]),
            deep_w: mk(1, dim, c_deep),
            deep_b: Tensor::zeros(&[dim]),
            global_w: mk(2, dim, c_deep),
            global_b: Tensor::zeros(&[dim]),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("proj.shallow.w".into(), &self.shallow_w),
            ("proj.shallow.b".into(), &self.shallow_b),
            ("proj.deep.w".into(), &self.deep_w),
            ("proj.deep.b".into(), &self.deep_b),
            ("proj.global.w".into(), &self.global_w),
            ("proj.global.b".into(), &self.global_b),
        ]
    }
}

/// Projected image features. Local levels store one position per row.
/// For grids produced by a backbone the deep level has exactly `M/4` rows;
/// `project` itself only requires each head to match its grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePyramid<T> {
    pub dim: usize,
    /// Positions in the shallow grid, `M = G * G`.
    pub m: usize,
    /// (M, D) shallow local features, row `p` = position `p`.
    pub shallow: Tensor<T>,
    /// (M/4, D) deep local features.
    pub deep: Tensor<T>,
    /// (D,) global feature.
    pub global: Vec<T>,
}

/// Tape handles for one image's projected feature pyramid.
pub struct PyramidGraph {
    /// (M, D)
    pub shallow: Var,
    /// (M/4, D)
    pub deep: Var,
    /// (1, D)
    pub global: Var,
}

/// Append projection of a backbone graph onto the tape.
pub(crate) fn build_projection<T: Scalar>(
    tape: &mut Tape<T>,
    params: &BTreeMap<String, Var>,
    backbone: &super::backbone::BackboneGraph,
) -> PyramidGraph {
    let shallow_pos = tape.grid_to_pos(backbone.shallow);
    let s = tape.matmul_nt(shallow_pos, params["proj.shallow.w"]);
    let shallow = tape.add_row(s, params["proj.shallow.b"]);

    let deep_pos = tape.grid_to_pos(backbone.deep);
    let d = tape.matmul_nt(deep_pos, params["proj.deep.w"]);
    let deep = tape.add_row(d, params["proj.deep.b"]);

    let g = tape.matmul_nt(backbone.pooled, params["proj.global.w"]);
    let global = tape.add_row(g, params["proj.global.b"]);

    PyramidGraph {
        shallow,
        deep,
        global,
    }
}

/// Project materialized backbone features.
pub fn project<T: Scalar>(
    feats: &BackboneFeatures<T>,
    heads: &ProjectionHeads<T>,
) -> Result<ImagePyramid<T>> {
    let c_s = feats.shallow_grid.dims[0];
    let c_d = feats.deep_grid.dims[0];
    let dim = heads.shallow_w.dims[0];
    if heads.shallow_w.dims[1] != c_s {
        return Err(Error::validation(format!(
            "shallow head expects {} channels, grid has {c_s}",
            heads.shallow_w.dims[1]
        )));
    }
    if heads.deep_w.dims[1] != c_d || heads.global_w.dims[1] != c_d {
        return Err(Error::validation("deep/global head channel mismatch"));
    }
    if heads.deep_w.dims[0] != dim || heads.global_w.dims[0] != dim {
        return Err(Error::validation(
            "projection heads disagree on output dimension",
        ));
    }

    let mut tape = Tape::new();
    let vars: BTreeMap<String, Var> = heads
        .named()
        .into_iter()
        .map(|(n, t)| (n, tape.leaf(t)))
        .collect();
    let graph = super::backbone::BackboneGraph {
        shallow: tape.constant(&feats.shallow_grid),
        deep: tape.constant(&feats.deep_grid),
        pooled: {
            let t = Tensor::from_vec(&[1, feats.pooled.len()], feats.pooled.clone());
            tape.constant(&t)
        },
    };
    let p = build_projection(&mut tape, &vars, &graph);
    let m = feats.shallow_grid.dims[1] * feats.shallow_grid.dims[2];
    let m_deep = feats.deep_grid.dims[1] * feats.deep_grid.dims[2];
    Ok(ImagePyramid {
        dim,
        m,
        shallow: Tensor::from_vec(&[m, dim], tape.value(p.shallow).to_vec()),
        deep: Tensor::from_vec(&[m_deep, dim], tape.value(p.deep).to_vec()),
        global: tape.value(p.global).to_vec(),
    })
}
