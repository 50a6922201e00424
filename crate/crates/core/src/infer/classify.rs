//! Zero-shot classification from positive/negative prompt templates.

use std::collections::BTreeMap;

use crate::align::AlignmentModel;
use crate::data::PromptSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Positive probability from the two similarities: softmax over
/// `(sim_pos / temp, sim_neg / temp)`.
pub fn two_way_softmax(sim_pos: f64, sim_neg: f64, temp: f64) -> f64 {
    let a = sim_pos / temp;
    let b = sim_neg / temp;
    let m = a.max(b);
    let ea = (a - m).exp();
    let eb = (b - m).exp();
    ea / (ea + eb)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-30);
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-30);
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Mean report-level feature over a set of templates.
fn template_feature<T: Scalar>(
    model: &AlignmentModel<T>,
    templates: &[String],
) -> Result<Vec<f64>> {
    if templates.is_empty() {
        return Err(Error::validation("template list is empty"));
    }
    let dim = model.arch.dim;
    let mut acc = vec![0.0f64; dim];
    for t in templates {
        let h = model.embed_text(t)?;
        for (a, v) in acc.iter_mut().zip(&h.t_r) {
            *a += v.as_f64();
        }
    }
    for a in acc.iter_mut() {
        *a /= templates.len() as f64;
    }
    Ok(acc)
}

/// Probability that `pathology` is present in the image: cosine of the
/// global image feature against the mean positive and mean negative
/// template features, then a two-way softmax (temperature 1.0 by default).
pub fn classify<T: Scalar>(
    model: &AlignmentModel<T>,
    img: &image::RgbImage,
    pathology: &str,
    prompts: &PromptSet,
    temp: f64,
) -> Result<f64> {
    if !(temp > 0.0) {
        return Err(Error::validation("softmax temperature must be positive"));
    }
    let templates = prompts
        .get(pathology)
        .ok_or_else(|| Error::validation(format!("unknown pathology {pathology:?}")))?;
    let pyramid = model.embed_image(img)?;
    let v_g: Vec<f64> = pyramid.global.iter().map(|v| v.as_f64()).collect();
    let pos = template_feature(model, &templates.positive)?;
    let neg = template_feature(model, &templates.negative)?;
    Ok(two_way_softmax(
        cosine(&v_g, &pos),
        cosine(&v_g, &neg),
        temp,
    ))
}

/// Independent [`classify`] per pathology; multi-label, no normalization
/// across pathologies.
pub fn classify_all<T: Scalar>(
    model: &AlignmentModel<T>,
    img: &image::RgbImage,
    pathologies: &[String],
    prompts: &PromptSet,
    temp: f64,
) -> Result<BTreeMap<String, f64>> {
    if pathologies.is_empty() {
        return Err(Error::validation("pathology list is empty"));
    }
    let mut out = BTreeMap::new();
    for p in pathologies {
        out.insert(p.clone(), classify(model, img, p, prompts, temp)?);
    }
    Ok(out)
}
