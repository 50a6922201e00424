//! The trained artifact: architecture, temperatures, preprocessing
//! statistics, tokenizer and parameters, bundled with the forward builders
//! the trainer and inference share.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::checkpoint::fnv1a64;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};
use crate::text::{
    tokenize, TextEncoder, TextHierarchy, TokenizedReport, ToyTextEncoder, Vocab, WordAggregation,
};
use crate::vision::{
    preprocess_raw, project, BackboneFeatures, ChannelStats, ImageBackbone, ImagePyramid,
    ProjectionHeads, ToyBackbone,
};

use super::loss::SampleGraph;

/// Architecture description; everything needed to rebuild parameter shapes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Shared feature dimension `D`.
    pub dim: usize,
    pub image_side: usize,
    pub in_channels: usize,
    pub stage_channels: [usize; 4],
    /// Exposed text-encoder layers (embedding included).
    pub text_layers: usize,
    /// Fixed token length `H`.
    pub max_tokens: usize,
    /// Word-level subword aggregation: "sum" (default) or "mean".
    pub word_agg_mean: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            dim: 128,
            image_side: 224,
            in_channels: 3,
            stage_channels: [16, 32, 64, 64],
            text_layers: 4,
            max_tokens: 128,
            word_agg_mean: false,
        }
    }
}

impl ArchConfig {
    /// Desk-scale profile: 64x64 images, D=32.
    pub fn toy() -> Self {
        ArchConfig {
            dim: 32,
            image_side: 64,
            in_channels: 3,
            stage_channels: [8, 16, 24, 32],
            text_layers: 4,
            max_tokens: 32,
            word_agg_mean: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.max_tokens == 0 || self.text_layers == 0 {
            return Err(Error::validation(
                "dim, max_tokens, text_layers must be positive",
            ));
        }
        if !self.image_side.is_multiple_of(16) || self.image_side == 0 {
            return Err(Error::validation(
                "image_side must be a positive multiple of 16",
            ));
        }
        if self.stage_channels.contains(&0) || self.in_channels == 0 {
            return Err(Error::validation("channel counts must be positive"));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_side / 8
    }

    pub fn word_agg(&self) -> WordAggregation {
        if self.word_agg_mean {
            WordAggregation::Mean
        } else {
            WordAggregation::Sum
        }
    }
}

use super::loss::Temperatures;

#[derive(Debug, Clone)]
pub struct AlignmentModel<T: Scalar> {
    pub arch: ArchConfig,
    pub temps: Temperatures,
    pub stats: ChannelStats,
    pub vocab: Vocab,
    /// Canonically ordered named parameter tensors.
    params: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> AlignmentModel<T> {
    pub fn init(
        arch: ArchConfig,
        temps: Temperatures,
        vocab: Vocab,
        stats: ChannelStats,
        seed: u64,
    ) -> Result<Self> {
        arch.validate()?;
        temps.validate()?;
        let encoder = ToyTextEncoder::new(vocab.size(), arch.dim, arch.text_layers);
        let backbone = ToyBackbone::new(arch.in_channels, arch.stage_channels);
        let mut params: Vec<(String, Tensor<T>)> = Vec::new();
        params.extend(encoder.init_params(seed));
        params.extend(backbone.init_params(seed));
        let heads = ProjectionHeads::<T>::init(
            arch.dim,
            arch.stage_channels[2],
            arch.stage_channels[3],
            seed,
        );
        params.extend(heads.named().into_iter().map(|(n, t)| (n, t.clone())));
        Ok(AlignmentModel {
            arch,
            temps,
            stats,
            vocab,
            params,
        })
    }

    pub fn from_parts(
        arch: ArchConfig,
        temps: Temperatures,
        stats: ChannelStats,
        vocab: Vocab,
        params: Vec<(String, Tensor<T>)>,
    ) -> Result<Self> {
        arch.validate()?;
        temps.validate()?;
        let model = AlignmentModel {
            arch,
            temps,
            stats,
            vocab,
            params,
        };
        let expect = model.expected_shapes();
        if model.params.len() != expect.len() {
            return Err(Error::validation(format!(
                "expected {} parameter tensors, got {}",
                expect.len(),
                model.params.len()
            )));
        }
        for ((name, t), (ename, edims)) in model.params.iter().zip(&expect) {
            if name != ename || &t.dims != edims {
                return Err(Error::validation(format!(
                    "parameter {name:?} {:?} does not match expected {ename:?} {edims:?}",
                    t.dims
                )));
            }
        }
        Ok(model)
    }

    fn expected_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = TextEncoder::<T>::param_shapes(&self.text_encoder());
        out.extend(ImageBackbone::<T>::param_shapes(&self.backbone()));
        let d = self.arch.dim;
        let (c_s, c_d) = (self.arch.stage_channels[2], self.arch.stage_channels[3]);
        out.extend([
            ("proj.shallow.w".to_string(), vec![d, c_s]),
            ("proj.shallow.b".to_string(), vec![d]),
            ("proj.deep.w".to_string(), vec![d, c_d]),
            ("proj.deep.b".to_string(), vec![d]),
            ("proj.global.w".to_string(), vec![d, c_d]),
            ("proj.global.b".to_string(), vec![d]),
        ]);
        out
    }

    pub fn text_encoder(&self) -> ToyTextEncoder {
        ToyTextEncoder::new(self.vocab.size(), self.arch.dim, self.arch.text_layers)
    }

    pub fn backbone(&self) -> ToyBackbone {
        ToyBackbone::new(self.arch.in_channels, self.arch.stage_channels)
    }

    pub fn params(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [(String, Tensor<T>)] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn projection_heads(&self) -> ProjectionHeads<T> {
        let get = |n: &str| self.param(n).expect("projection parameter").clone();
        ProjectionHeads {
            shallow_w: get("proj.shallow.w"),
            shallow_b: get("proj.shallow.b"),
            deep_w: get("proj.deep.w"),
            deep_b: get("proj.deep.b"),
            global_w: get("proj.global.w"),
            global_b: get("proj.global.b"),
        }
    }

    /// Identity of the architecture + tokenizer + scalar type. Checkpoints
    /// refuse to load under a different fingerprint.
    pub fn fingerprint(&self) -> u64 {
        let arch = serde_json::to_string(&self.arch).expect("arch serializes");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(arch.as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(T::DTYPE.name().as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(&fnv1a64(self.vocab.render().as_bytes()).to_le_bytes());
        fnv1a64(&bytes)
    }

    /// FNV-1a over all parameter bytes in canonical order; the train-
    /// determinism checks compare these.
    pub fn param_checksum(&self) -> u64 {
        let mut bytes = Vec::new();
        for (name, t) in &self.params {
            bytes.extend_from_slice(name.as_bytes());
            for &v in &t.data {
                v.write_le_bytes(&mut bytes);
            }
        }
        fnv1a64(&bytes)
    }

    pub fn cast<U: Scalar>(&self) -> AlignmentModel<U> {
        AlignmentModel {
            arch: self.arch.clone(),
            temps: self.temps.clone(),
            stats: self.stats.clone(),
            vocab: self.vocab.clone(),
            params: self
                .params
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
        }
    }

    // --- graph building (shared by training and inference) ---

    pub(crate) fn leaf_params(&self, tape: &mut Tape<T>) -> BTreeMap<String, Var> {
        self.params
            .iter()
            .map(|(n, t)| (n.clone(), tape.leaf(t)))
            .collect()
    }

    /// Gradients per parameter after a backward pass, in canonical order.
    pub(crate) fn collect_grads(
        &self,
        tape: &Tape<T>,
        vars: &BTreeMap<String, Var>,
    ) -> Vec<Vec<T>> {
        self.params
            .iter()
            .map(|(n, _)| tape.grad(vars[n]).to_vec())
            .collect()
    }

    /// Append the image tower (backbone + projections) for one preprocessed
    /// tensor to an existing tape.
    pub fn build_image_graph(
        &self,
        tape: &mut Tape<T>,
        vars: &BTreeMap<String, Var>,
        x: &Tensor<T>,
    ) -> crate::vision::PyramidGraph {
        let xv = tape.constant(x);
        let backbone = self.backbone();
        let graph = ImageBackbone::<T>::build(&backbone, tape, vars, xv);
        crate::vision::build_projection(tape, vars, &graph)
    }

    pub(crate) fn build_text_graph(
        &self,
        tape: &mut Tape<T>,
        vars: &BTreeMap<String, Var>,
        tok: &TokenizedReport,
    ) -> Result<(Var, Var, Var)> {
        let encoder = self.text_encoder();
        let layers = TextEncoder::<T>::build(&encoder, tape, vars, &tok.token_ids);
        crate::text::build_hierarchy(tape, &layers, tok, self.arch.word_agg())
    }

    pub(crate) fn build_sample_graph(
        &self,
        tape: &mut Tape<T>,
        vars: &BTreeMap<String, Var>,
        x: &Tensor<T>,
        tok: &TokenizedReport,
    ) -> Result<SampleGraph> {
        let pyramid = self.build_image_graph(tape, vars, x);
        let (t_w, t_s, t_r) = self.build_text_graph(tape, vars, tok)?;
        Ok(SampleGraph {
            v_shallow: pyramid.shallow,
            v_deep: pyramid.deep,
            v_global: pyramid.global,
            t_word: t_w,
            t_sentence: t_s,
            t_report: t_r,
        })
    }

    /// Build the full training objective for a batch of preprocessed images
    /// and tokenized reports on an existing tape. Parameters must already be
    /// on the tape (see [`AlignmentModel::leaf_params`]); call
    /// `tape.backward(graph.total)` afterwards for gradients.
    pub fn build_batch_loss(
        &self,
        tape: &mut Tape<T>,
        vars: &BTreeMap<String, Var>,
        images: &[Tensor<T>],
        toks: &[TokenizedReport],
        temps: &super::loss::Temperatures,
        switches: &super::loss::LossSwitches,
    ) -> Result<super::loss::LossGraph> {
        if images.len() != toks.len() {
            return Err(Error::validation("batch image/text counts differ"));
        }
        let mut samples = Vec::with_capacity(images.len());
        for (x, tok) in images.iter().zip(toks) {
            samples.push(self.build_sample_graph(tape, vars, x, tok)?);
        }
        super::loss::build_total_loss(tape, &samples, temps, switches)
    }

    // --- value-level inference ---

    pub fn tokenize(&self, text: &str) -> Result<TokenizedReport> {
        tokenize(text, &self.vocab, self.arch.max_tokens)
    }

    /// Preprocess + encode + project one image.
    pub fn embed_image(&self, img: &image::RgbImage) -> Result<ImagePyramid<T>> {
        let x = preprocess_raw::<T>(img, self.arch.image_side, &self.stats);
        let feats = self.backbone_features(&x)?;
        project(&feats, &self.projection_heads())
    }

    pub fn backbone_features(&self, x: &Tensor<T>) -> Result<BackboneFeatures<T>> {
        crate::vision::encode_image(x, &self.backbone(), &self.params)
    }

    /// Tokenize + encode + aggregate one text.
    pub fn embed_text(&self, text: &str) -> Result<TextHierarchy<T>> {
        let tok = self.tokenize(text)?;
        let feats = crate::text::encode_text(&tok, &self.text_encoder(), &self.params)?;
        crate::text::aggregate_hierarchy_with(&feats, &tok, self.arch.word_agg())
    }
}
