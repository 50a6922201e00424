//! Evaluation protocols over a corpus: localization on annotated-positive
//! samples and zero-shot classification against corpus labels.
//!
//! Reports are order-invariant: samples are gathered per (id, pathology) in
//! sorted key order and every bootstrap row draws from a seed derived from
//! its own (pathology, metric) name, never from iteration position.
//! The macro `mean` row averages per-pathology points; its interval comes
//! from averaging the per-pathology bootstrap replicates index-wise.

use std::collections::BTreeMap;

use crate::align::AlignmentModel;
use crate::checkpoint::fnv1a64;
use crate::data::{Corpus, Mask, PromptSet};
use crate::error::{Error, Result};
use crate::infer::{binarize, classify, localize_image, Heatmap};
use crate::rng::derive;
use crate::scalar::Scalar;
use crate::text::split_sentences;
use crate::vision::load_image;

use super::bootstrap::{bootstrap_replicate_means, percentile};
use super::metrics::{auroc, cnr, dice, iou, multi_threshold_mean};
use super::report::{MetricReport, MetricRow};

/// The threshold list localization metrics average over by default.
pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

pub const DEFAULT_BOOTSTRAP_REPS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub enum LocalizationProtocol {
    /// IoU/Dice averaged over a threshold list.
    MultiThreshold { thresholds: Vec<f64> },
    /// IoU/Dice at one threshold (selected on a validation set upstream).
    FixedThreshold { theta: f64 },
}

impl LocalizationProtocol {
    pub fn default_multi() -> Self {
        LocalizationProtocol::MultiThreshold {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
        }
    }
}

/// Where localization prompts come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptMode {
    /// The pathology's first positive template.
    Simple,
    /// The report sentence that mentions the pathology (per-sample caption).
    PreciseCaption,
}

/// The report sentence naming a pathology, if any.
pub fn caption_sentence_for(report_text: &str, pathology: &str) -> Option<String> {
    let needle = pathology.to_lowercase();
    split_sentences(report_text)
        .into_iter()
        .find(|s| s.to_lowercase().contains(&needle))
}

/// Pick the grid threshold maximizing mean IoU on a validation set; ties
/// break toward the smaller threshold.
pub fn optimal_threshold<T: Scalar>(
    validation: &[(Heatmap<T>, Mask)],
    grid: &[f64],
) -> Result<f64> {
    if validation.is_empty() || grid.is_empty() {
        return Err(Error::validation(
            "optimal_threshold needs samples and a grid",
        ));
    }
    let mut best = (f64::NEG_INFINITY, grid[0]);
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    for &theta in &sorted {
        let mut sum = 0.0;
        for (hm, gt) in validation {
            sum += iou(&binarize(hm, theta)?, gt)?;
        }
        let mean = sum / validation.len() as f64;
        if mean > best.0 {
            best = (mean, theta);
        }
    }
    Ok(best.1)
}

fn per_sample_metrics<T: Scalar>(
    hm: &Heatmap<T>,
    gt: &Mask,
    protocol: &LocalizationProtocol,
) -> Result<(f64, f64, f64)> {
    let (iou_v, dice_v) = match protocol {
        LocalizationProtocol::MultiThreshold { thresholds } => {
            multi_threshold_mean(hm, gt, thresholds)?
        }
        LocalizationProtocol::FixedThreshold { theta } => {
            let m = binarize(hm, *theta)?;
            (iou(&m, gt)?, dice(&m, gt)?)
        }
    };
    Ok((iou_v, dice_v, cnr(hm, gt)?))
}

/// Row seed: stable in the row's identity, independent of iteration order.
fn row_seed(seed: u64, pathology: &str, metric: &str) -> u64 {
    derive(
        seed,
        &[fnv1a64(pathology.as_bytes()), fnv1a64(metric.as_bytes())],
    )
}

/// Assemble rows (and the macro mean row) from per-pathology sample vectors.
fn rows_from_samples(
    samples_by_pathology: &BTreeMap<String, Vec<f64>>,
    metric: &str,
    reps: usize,
    seed: u64,
    report: &mut MetricReport,
) -> Result<()> {
    let mut points = Vec::new();
    let mut replicate_sum: Vec<f64> = vec![0.0; reps];
    for (pathology, samples) in samples_by_pathology {
        if samples.is_empty() {
            continue;
        }
        let rs = row_seed(seed, pathology, metric);
        let point = samples.iter().sum::<f64>() / samples.len() as f64;
        let mut means = bootstrap_replicate_means(samples, reps, rs)?;
        for (acc, &m) in replicate_sum.iter_mut().zip(&means) {
            *acc += m;
        }
        means.sort_by(|a, b| a.total_cmp(b));
        report.push(MetricRow {
            pathology: pathology.clone(),
            metric: metric.to_string(),
            value: point,
            ci_low: percentile(&means, 0.025),
            ci_high: percentile(&means, 0.975),
            n: samples.len(),
        })?;
        points.push(point);
    }
    if points.len() > 1 {
        let k = points.len() as f64;
        let mut macro_reps: Vec<f64> = replicate_sum.iter().map(|v| v / k).collect();
        macro_reps.sort_by(|a, b| a.total_cmp(b));
        report.push(MetricRow {
            pathology: "mean".to_string(),
            metric: metric.to_string(),
            value: points.iter().sum::<f64>() / k,
            ci_low: percentile(&macro_reps, 0.025),
            ci_high: percentile(&macro_reps, 0.975),
            n: points.len(),
        })?;
    }
    Ok(())
}

/// Localization evaluation driven by an arbitrary heatmap source; the
/// model-backed wrapper is [`evaluate_localization`]. The source receives
/// (id, pathology, prompt).
pub fn evaluate_localization_with<T: Scalar>(
    heatmap_source: &mut dyn FnMut(&str, &str, &str) -> Result<Heatmap<T>>,
    corpus: &Corpus,
    annotations: &BTreeMap<(String, String), Mask>,
    prompts: &PromptSet,
    protocol: &LocalizationProtocol,
    mode: PromptMode,
    reps: usize,
    seed: u64,
) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    let mut iou_samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut dice_samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut cnr_samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();

    for ((id, pathology), gt) in annotations {
        let record = corpus.get(id).ok_or_else(|| {
            Error::validation(format!("annotation id {id:?} missing from corpus"))
        })?;
        let prompt = match mode {
            PromptMode::Simple => prompts.localization_prompt(pathology)?.to_string(),
            PromptMode::PreciseCaption => caption_sentence_for(&record.full_text(), pathology)
                .ok_or_else(|| {
                    Error::validation(format!(
                        "report {id:?} has no caption sentence naming {pathology:?}"
                    ))
                })?,
        };
        let hm = heatmap_source(id, pathology, &prompt)?;
        let (i, d, c) = per_sample_metrics(&hm, gt, protocol)?;
        for (v, name) in [(i, "iou"), (d, "dice"), (c, "cnr")] {
            if !v.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite {name} for ({id}, {pathology})"
                )));
            }
        }
        iou_samples.entry(pathology.clone()).or_default().push(i);
        dice_samples.entry(pathology.clone()).or_default().push(d);
        cnr_samples.entry(pathology.clone()).or_default().push(c);
    }

    for p in prompts.pathologies() {
        if !iou_samples.contains_key(p) {
            report
                .warnings
                .push(format!("pathology {p:?} has no positive samples; skipped"));
        }
    }

    rows_from_samples(&iou_samples, "iou", reps, seed, &mut report)?;
    rows_from_samples(&dice_samples, "dice", reps, seed, &mut report)?;
    rows_from_samples(&cnr_samples, "cnr", reps, seed, &mut report)?;
    Ok(report)
}

/// Evaluate prompt-driven localization on the annotated-positive samples of
/// a corpus.
pub fn evaluate_localization<T: Scalar>(
    model: &AlignmentModel<T>,
    corpus: &Corpus,
    annotations: &BTreeMap<(String, String), Mask>,
    prompts: &PromptSet,
    protocol: &LocalizationProtocol,
    mode: PromptMode,
    reps: usize,
    seed: u64,
) -> Result<MetricReport> {
    let mut image_cache: BTreeMap<String, image::RgbImage> = BTreeMap::new();
    let mut source = |id: &str, _pathology: &str, prompt: &str| -> Result<Heatmap<T>> {
        if !image_cache.contains_key(id) {
            let record = corpus
                .get(id)
                .ok_or_else(|| Error::validation(format!("id {id:?} missing from corpus")))?;
            image_cache.insert(id.to_string(), load_image(&corpus.image_path(record))?);
        }
        localize_image(model, &image_cache[id], id, prompt)
    };
    evaluate_localization_with(
        &mut source,
        corpus,
        annotations,
        prompts,
        protocol,
        mode,
        reps,
        seed,
    )
}

/// Classification rows from already-computed per-pathology scores/labels.
/// Intervals are stratified bootstrap (positives and negatives resampled
/// separately, so every replicate has both classes).
pub fn classification_report_from_scores(
    scores_by_pathology: &BTreeMap<String, Vec<(f64, bool)>>,
    reps: usize,
    seed: u64,
) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    let mut points = Vec::new();
    let mut replicate_sum: Vec<f64> = vec![0.0; reps];
    let mut used = 0usize;

    for (pathology, pairs) in scores_by_pathology {
        let pos: Vec<f64> = pairs.iter().filter(|(_, l)| *l).map(|(s, _)| *s).collect();
        let neg: Vec<f64> = pairs.iter().filter(|(_, l)| !*l).map(|(s, _)| *s).collect();
        if pos.is_empty() || neg.is_empty() {
            report.warnings.push(format!(
                "pathology {pathology:?} has a single class; skipped"
            ));
            continue;
        }
        let scores: Vec<f64> = pairs.iter().map(|(s, _)| *s).collect();
        let labels: Vec<bool> = pairs.iter().map(|(_, l)| *l).collect();
        let point = auroc(&scores, &labels)?;

        let rs = row_seed(seed, pathology, "auroc");
        let mut reps_vals = Vec::with_capacity(reps);
        for r in 0..reps {
            let mut rng = crate::rng::stream(rs, &[r as u64]);
            use rand::Rng;
            let rp: Vec<f64> = (0..pos.len())
                .map(|_| pos[rng.gen_range(0..pos.len())])
                .collect();
            let rn: Vec<f64> = (0..neg.len())
                .map(|_| neg[rng.gen_range(0..neg.len())])
                .collect();
            let mut s = rp.clone();
            s.extend_from_slice(&rn);
            let mut l = vec![true; rp.len()];
            l.extend(vec![false; rn.len()]);
            reps_vals.push(auroc(&s, &l)?);
        }
        for (acc, &m) in replicate_sum.iter_mut().zip(&reps_vals) {
            *acc += m;
        }
        used += 1;
        reps_vals.sort_by(|a, b| a.total_cmp(b));
        report.push(MetricRow {
            pathology: pathology.clone(),
            metric: "auroc".to_string(),
            value: point,
            ci_low: percentile(&reps_vals, 0.025),
            ci_high: percentile(&reps_vals, 0.975),
            n: pairs.len(),
        })?;
        points.push(point);
    }

    if points.len() > 1 {
        let k = points.len() as f64;
        let mut macro_reps: Vec<f64> = replicate_sum.iter().map(|v| v / used as f64).collect();
        macro_reps.sort_by(|a, b| a.total_cmp(b));
        report.push(MetricRow {
            pathology: "mean".to_string(),
            metric: "auroc".to_string(),
            value: points.iter().sum::<f64>() / k,
            ci_low: percentile(&macro_reps, 0.025),
            ci_high: percentile(&macro_reps, 0.975),
            n: points.len(),
        })?;
    }
    Ok(report)
}

/// Zero-shot classification AUROC per pathology over corpus labels.
pub fn evaluate_classification<T: Scalar>(
    model: &AlignmentModel<T>,
    corpus: &Corpus,
    prompts: &PromptSet,
    pathologies: &[String],
    softmax_temp: f64,
    reps: usize,
    seed: u64,
) -> Result<MetricReport> {
    if pathologies.is_empty() {
        return Err(Error::validation("pathology list is empty"));
    }
    let mut scores: BTreeMap<String, Vec<(f64, bool)>> = BTreeMap::new();
    for record in &corpus.reports {
        let Some(labels) = &record.labels else {
            continue;
        };
        let relevant: Vec<&String> = pathologies
            .iter()
            .filter(|p| labels.contains_key(*p))
            .collect();
        if relevant.is_empty() {
            continue;
        }
        let img = load_image(&corpus.image_path(record))?;
        for p in relevant {
            let prob = classify(model, &img, p, prompts, softmax_temp)?;
            scores
                .entry(p.clone())
                .or_default()
                .push((prob, labels[p] == 1));
        }
    }
    classification_report_from_scores(&scores, reps, seed)
}
