//! The multi-level contrastive objective.
//!
//! Local alignment (shallow<->word and deep<->sentence) scores a pair
//! (image i, text k) by attending each text item over the image positions,
//! measuring cosine agreement between attended context and text item, and
//! aggregating with a stabilized log-sum-exp. The pairwise score matrix
//! feeds a symmetric InfoNCE. Global alignment applies the same InfoNCE to
//! cosine similarities of global image and report features.
//!
//! Conventions (these are deliberate and tested):
//! - word/sentence features and local image positions are L2-normalized
//!   before the similarity matrix, so attention logits and cosines stay in
//!   [-1, 1];
//! - every temperature divides inside the exponent: softmax(s/tau1),
//!   exp(phi/tau2), exp(z/tau3).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Scaling factors of the objective; all strictly positive. `tau3` may be
/// overridden per loss term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Temperatures {
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau3_shallow_word: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau3_deep_sentence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau3_global_report: Option<f64>,
}

impl Default for Temperatures {
    fn default() -> Self {
        Temperatures {
            tau1: 4.0,
            tau2: 5.0,
            tau3: 10.0,
            tau3_shallow_word: None,
            tau3_deep_sentence: None,
            tau3_global_report: None,
        }
    }
}

impl Temperatures {
    pub fn validate(&self) -> Result<()> {
        let all = [
            Some(self.tau1),
            Some(self.tau2),
            Some(self.tau3),
            self.tau3_shallow_word,
            self.tau3_deep_sentence,
            self.tau3_global_report,
        ];
        if all
            .into_iter()
            .flatten()
            .any(|t| !(t > 0.0) || !t.is_finite())
        {
            return Err(Error::validation("temperatures must be strictly positive"));
        }
        Ok(())
    }

    fn tau3_for(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::ShallowWord => self.tau3_shallow_word.unwrap_or(self.tau3),
            LossTerm::DeepSentence => self.tau3_deep_sentence.unwrap_or(self.tau3),
            LossTerm::GlobalReport => self.tau3_global_report.unwrap_or(self.tau3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LossTerm {
    ShallowWord,
    DeepSentence,
    GlobalReport,
}

/// Which loss terms participate in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossSwitches {
    pub shallow_word: bool,
    pub deep_sentence: bool,
    pub global_report: bool,
}

impl Default for LossSwitches {
    fn default() -> Self {
        LossSwitches::all()
    }
}

impl LossSwitches {
    pub fn all() -> Self {
        LossSwitches {
            shallow_word: true,
            deep_sentence: true,
            global_report: true,
        }
    }

    pub fn only_global() -> Self {
        LossSwitches {
            shallow_word: false,
            deep_sentence: false,
            global_report: true,
        }
    }

    pub fn any(&self) -> bool {
        self.shallow_word || self.deep_sentence || self.global_report
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.shallow_word {
            parts.push("SW");
        }
        if self.deep_sentence {
            parts.push("DS");
        }
        if self.global_report {
            parts.push("GR");
        }
        if parts.len() == 3 {
            "all".to_string()
        } else {
            parts.join("+")
        }
    }
}

/// Per-sample features feeding the loss: local image positions as rows,
/// local text items as rows, plus the two global vectors. Raw (unnormalized)
/// features are expected; normalization happens inside.
#[derive(Debug, Clone)]
pub struct SampleFeatures<T> {
    /// (M, D)
    pub v_shallow: Tensor<T>,
    /// (M/4, D)
    pub v_deep: Tensor<T>,
    /// (D,)
    pub v_global: Vec<T>,
    /// (Q, D)
    pub t_word: Tensor<T>,
    /// (P, D)
    pub t_sentence: Tensor<T>,
    /// (D,)
    pub t_report: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub shallow_word: Option<T>,
    pub deep_sentence: Option<T>,
    pub global_report: Option<T>,
}

/// Graph-side handles for one sample's features.
pub(crate) struct SampleGraph {
    pub v_shallow: Var,
    pub v_deep: Var,
    /// (1, D)
    pub v_global: Var,
    pub t_word: Var,
    pub t_sentence: Var,
    /// (1, D)
    pub t_report: Var,
}

/// Tape handles for the assembled objective.
pub struct LossGraph {
    pub total: Var,
    pub shallow_word: Option<Var>,
    pub deep_sentence: Option<Var>,
    pub global_report: Option<Var>,
}

/// One local level: pairwise attention scores, then symmetric InfoNCE.
fn build_local_term<T: Scalar>(
    tape: &mut Tape<T>,
    image_sides: &[Var],
    text_sides: &[Var],
    temps: &Temperatures,
    term: LossTerm,
) -> Var {
    let b = image_sides.len();
    let inv_tau1 = T::from_f64(1.0 / temps.tau1);
    let inv_tau2 = T::from_f64(1.0 / temps.tau2);
    let inv_tau3 = T::from_f64(1.0 / temps.tau3_for(term));

    let v_hat: Vec<Var> = image_sides.iter().map(|&v| tape.row_l2_norm(v)).collect();
    let t_hat: Vec<Var> = text_sides.iter().map(|&t| tape.row_l2_norm(t)).collect();

    let mut z_entries = Vec::with_capacity(b * b);
    for &v in &v_hat {
        for &t in &t_hat {
            let s = tape.matmul_nt(t, v);
            let attn = tape.row_softmax_scaled(s, inv_tau1);
            let contexts = tape.matmul(attn, v);
            let phi = tape.row_cosine(contexts, t);
            let z = tape.log_sum_exp_scaled(phi, inv_tau2);
            z_entries.push(z);
        }
    }
    let z_flat = tape.stack_rows(&z_entries);
    let z_mat = tape.reshape(z_flat, &[b, b]);
    tape.info_nce_sym(z_mat, inv_tau3)
}

fn build_global_term<T: Scalar>(
    tape: &mut Tape<T>,
    v_globals: &[Var],
    t_reports: &[Var],
    temps: &Temperatures,
) -> Var {
    let inv_tau3 = T::from_f64(1.0 / temps.tau3_for(LossTerm::GlobalReport));
    let vg = tape.stack_rows(v_globals);
    let tr = tape.stack_rows(t_reports);
    let vg_hat = tape.row_l2_norm(vg);
    let tr_hat = tape.row_l2_norm(tr);
    let cos = tape.matmul_nt(vg_hat, tr_hat);
    tape.info_nce_sym(cos, inv_tau3)
}

/// Assemble the enabled loss terms for a batch of sample graphs. Disabled
/// terms are simply not built, so no gradient can reach branches only they
/// use.
pub(crate) fn build_total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    samples: &[SampleGraph],
    temps: &Temperatures,
    switches: &LossSwitches,
) -> Result<LossGraph> {
    temps.validate()?;
    if samples.is_empty() {
        return Err(Error::validation("loss needs at least one sample"));
    }
    if !switches.any() {
        return Err(Error::validation(
            "at least one loss switch must be enabled",
        ));
    }

    let mut parts = Vec::new();
    let shallow_word = switches.shallow_word.then(|| {
        let imgs: Vec<Var> = samples.iter().map(|s| s.v_shallow).collect();
        let txts: Vec<Var> = samples.iter().map(|s| s.t_word).collect();
        build_local_term(tape, &imgs, &txts, temps, LossTerm::ShallowWord)
    });
    if let Some(v) = shallow_word {
        parts.push(v);
    }
    let deep_sentence = switches.deep_sentence.then(|| {
        let imgs: Vec<Var> = samples.iter().map(|s| s.v_deep).collect();
        let txts: Vec<Var> = samples.iter().map(|s| s.t_sentence).collect();
        build_local_term(tape, &imgs, &txts, temps, LossTerm::DeepSentence)
    });
    if let Some(v) = deep_sentence {
        parts.push(v);
    }
    let global_report = switches.global_report.then(|| {
        let vg: Vec<Var> = samples.iter().map(|s| s.v_global).collect();
        let tr: Vec<Var> = samples.iter().map(|s| s.t_report).collect();
        build_global_term(tape, &vg, &tr, temps)
    });
    if let Some(v) = global_report {
        parts.push(v);
    }

    let mut total = parts[0];
    for &p in &parts[1..] {
        total = tape.add(total, p);
    }
    Ok(LossGraph {
        total,
        shallow_word,
        deep_sentence,
        global_report,
    })
}

// ---------------------------------------------------------------------------
// Value-level operations
// ---------------------------------------------------------------------------

fn check_rows_nonzero<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<()> {
    let (rows, cols) = (t.dims[0], t.dims[1]);
    for i in 0..rows {
        let norm_sq: T = t.data[i * cols..(i + 1) * cols]
            .iter()
            .map(|&x| x * x)
            .sum();
        if norm_sq == T::zero() {
            return Err(Error::validation(format!("{what} row {i} has zero norm")));
        }
    }
    Ok(())
}

fn check_vec_nonzero<T: Scalar>(v: &[T], what: &str) -> Result<()> {
    if v.iter().map(|&x| x * x).sum::<T>() == T::zero() {
        return Err(Error::validation(format!("{what} has zero norm")));
    }
    Ok(())
}

/// Inner products between every text item (row of `t_local`) and every image
/// position (row of `v_local`): `S[i][j] = <t_i, v_j>`. Rows are expected
/// pre-normalized, which bounds entries to [-1, 1].
pub fn similarity_matrix<T: Scalar>(v_local: &Tensor<T>, t_local: &Tensor<T>) -> Result<Tensor<T>> {
    if v_local.dims.len() != 2 || t_local.dims.len() != 2 || v_local.dims[1] != t_local.dims[1] {
        return Err(Error::validation(format!(
            "similarity_matrix dims mismatch: {:?} vs {:?}",
            v_local.dims, t_local.dims
        )));
    }
    check_rows_nonzero(v_local, "image feature")?;
    check_rows_nonzero(t_local, "text feature")?;
    let mut tape = Tape::new();
    let v = tape.constant(v_local);
    let t = tape.constant(t_local);
    let s = tape.matmul_nt(t, v);
    Ok(Tensor::from_vec(
        &[t_local.dims[0], v_local.dims[0]],
        tape.value(s).to_vec(),
    ))
}

/// Attention-weighted image context for one text item: softmax over
/// positions of `s_row / tau1`, then the weighted sum of position features.
pub fn attend<T: Scalar>(v_local: &Tensor<T>, s_row: &[T], tau1: f64) -> Result<Vec<T>> {
    if !(tau1 > 0.0) {
        return Err(Error::validation("tau1 must be positive"));
    }
    if s_row.len() != v_local.dims[0] {
        return Err(Error::validation(format!(
            "attention row length {} does not match {} positions",
            s_row.len(),
            v_local.dims[0]
        )));
    }
    let mut tape = Tape::new();
    let v = tape.constant(v_local);
    let s = tape.constant(&Tensor::from_vec(&[1, s_row.len()], s_row.to_vec()));
    let a = tape.row_softmax_scaled(s, T::from_f64(1.0 / tau1));
    let c = tape.matmul(a, v);
    Ok(tape.value(c).to_vec())
}

/// Localized matching score: `Z = log sum_i exp(cos(c_i, t_i) / tau2)`.
pub fn match_score<T: Scalar>(contexts: &Tensor<T>, t_local: &Tensor<T>, tau2: f64) -> Result<T> {
    if !(tau2 > 0.0) {
        return Err(Error::validation("tau2 must be positive"));
    }
    if contexts.dims != t_local.dims || contexts.dims[0] == 0 {
        return Err(Error::validation(
            "match_score expects equal non-empty (N,D) inputs",
        ));
    }
    check_rows_nonzero(contexts, "context")?;
    check_rows_nonzero(t_local, "text feature")?;
    let mut tape = Tape::new();
    let c = tape.constant(contexts);
    let t = tape.constant(t_local);
    let phi = tape.row_cosine(c, t);
    let z = tape.log_sum_exp_scaled(phi, T::from_f64(1.0 / tau2));
    Ok(tape.value(z)[0])
}

/// Full local contrastive term over a batch: one (N_v, D) image side and
/// one (N_t, D) text side per sample. Features are normalized internally.
pub fn local_contrastive_loss<T: Scalar>(
    v_batch: &[Tensor<T>],
    t_batch: &[Tensor<T>],
    temps: &Temperatures,
) -> Result<T> {
    temps.validate()?;
    if v_batch.is_empty() || v_batch.len() != t_batch.len() {
        return Err(Error::validation(
            "batch sides must be non-empty and equal length",
        ));
    }
    for t in v_batch {
        check_rows_nonzero(t, "image feature")?;
    }
    for t in t_batch {
        check_rows_nonzero(t, "text feature")?;
    }
    let mut tape = Tape::new();
    let imgs: Vec<Var> = v_batch.iter().map(|t| tape.constant(t)).collect();
    let txts: Vec<Var> = t_batch.iter().map(|t| tape.constant(t)).collect();
    let loss = build_local_term(&mut tape, &imgs, &txts, temps, LossTerm::DeepSentence);
    let v = tape.value(loss)[0];
    if !v.is_finite() {
        return Err(Error::Numerical(
            "local contrastive loss is non-finite".into(),
        ));
    }
    Ok(v)
}

/// Symmetric InfoNCE on cosine similarities of global image and report
/// features.
pub fn global_contrastive_loss<T: Scalar>(
    v_global: &[Vec<T>],
    t_report: &[Vec<T>],
    tau3: f64,
) -> Result<T> {
    if !(tau3 > 0.0) {
        return Err(Error::validation("tau3 must be positive"));
    }
    if v_global.is_empty() || v_global.len() != t_report.len() {
        return Err(Error::validation(
            "batch sides must be non-empty and equal length",
        ));
    }
    for v in v_global.iter().chain(t_report) {
        check_vec_nonzero(v, "global feature")?;
    }
    let temps = Temperatures {
        tau3,
        ..Temperatures::default()
    };
    let mut tape = Tape::new();
    let d = v_global[0].len();
    let vg: Vec<Var> = v_global
        .iter()
        .map(|v| tape.constant(&Tensor::from_vec(&[1, d], v.clone())))
        .collect();
    let tr: Vec<Var> = t_report
        .iter()
        .map(|v| tape.constant(&Tensor::from_vec(&[1, d], v.clone())))
        .collect();
    let loss = build_global_term(&mut tape, &vg, &tr, &temps);
    let v = tape.value(loss)[0];
    if !v.is_finite() {
        return Err(Error::Numerical(
            "global contrastive loss is non-finite".into(),
        ));
    }
    Ok(v)
}

/// Sum of the enabled terms with a per-term breakdown.
pub fn total_loss<T: Scalar>(
    batch: &[SampleFeatures<T>],
    temps: &Temperatures,
    switches: &LossSwitches,
) -> Result<LossBreakdown<T>> {
    let mut tape = Tape::new();
    let samples: Vec<SampleGraph> = batch
        .iter()
        .map(|s| {
            let d = s.v_global.len();
            SampleGraph {
                v_shallow: tape.constant(&s.v_shallow),
                v_deep: tape.constant(&s.v_deep),
                v_global: tape.constant(&Tensor::from_vec(&[1, d], s.v_global.clone())),
                t_word: tape.constant(&s.t_word),
                t_sentence: tape.constant(&s.t_sentence),
                t_report: tape.constant(&Tensor::from_vec(&[1, d], s.t_report.clone())),
            }
        })
        .collect();
    let graph = build_total_loss(&mut tape, &samples, temps, switches)?;
    let read = |v: Option<Var>| v.map(|v| tape.value(v)[0]);
    let breakdown = LossBreakdown {
        total: tape.value(graph.total)[0],
        shallow_word: read(graph.shallow_word),
        deep_sentence: read(graph.deep_sentence),
        global_report: read(graph.global_report),
    };
    if !breakdown.total.is_finite() {
        return Err(Error::Numerical("total loss is non-finite".into()));
    }
    Ok(breakdown)
}
