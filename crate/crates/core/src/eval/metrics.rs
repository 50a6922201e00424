//! Overlap, contrast, and ranking metrics. All accumulate in f64.

use crate::data::Mask;
use crate::error::{Error, Result};
use crate::infer::{binarize, Heatmap};
use crate::scalar::Scalar;

fn check_dims(a: &Mask, b: &Mask) -> Result<()> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::validation(format!(
            "mask dimensions differ: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

/// Intersection over union; two empty masks score 0.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    check_dims(a, b)?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Dice similarity coefficient; two empty masks score 0.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    check_dims(a, b)?;
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x && y) as usize;
        total += x as usize + y as usize;
    }
    Ok(if total == 0 {
        0.0
    } else {
        2.0 * inter as f64 / total as f64
    })
}

/// IoU and Dice of the thresholded heatmap against ground truth, averaged
/// over the threshold list (>= rule).
pub fn multi_threshold_mean<T: Scalar>(
    hm: &Heatmap<T>,
    gt: &Mask,
    thresholds: &[f64],
) -> Result<(f64, f64)> {
    if thresholds.is_empty() {
        return Err(Error::validation("threshold list is empty"));
    }
    let mut iou_sum = 0.0;
    let mut dice_sum = 0.0;
    for &t in thresholds {
        let mask = binarize(hm, t)?;
        iou_sum += iou(&mask, gt)?;
        dice_sum += dice(&mask, gt)?;
    }
    let n = thresholds.len() as f64;
    Ok((iou_sum / n, dice_sum / n))
}

/// Signed contrast-to-noise ratio of raw heatmap values inside vs outside
/// the ground-truth region:
/// `(mu_in - mu_out) / sqrt((var_in + var_out) / 2)` with population
/// variances. Both magnitudes under 1e-12 define 0; a zero denominator with
/// real contrast yields +-inf, which only degenerate synthetic rasters can
/// produce.
pub fn cnr<T: Scalar>(hm: &Heatmap<T>, gt: &Mask) -> Result<f64> {
    if hm.height != gt.height || hm.width != gt.width {
        return Err(Error::validation("heatmap and mask dimensions differ"));
    }
    let inside = gt.count();
    let outside = gt.data.len() - inside;
    if inside == 0 || outside == 0 {
        return Err(Error::validation(
            "CNR needs at least one interior and one exterior pixel",
        ));
    }
    let (mut s_in, mut s2_in, mut s_out, mut s2_out) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (&v, &m) in hm.values.iter().zip(&gt.data) {
        let v = v.as_f64();
        if m {
            s_in += v;
            s2_in += v * v;
        } else {
            s_out += v;
            s2_out += v * v;
        }
    }
    let mu_in = s_in / inside as f64;
    let mu_out = s_out / outside as f64;
    let var_in = (s2_in / inside as f64 - mu_in * mu_in).max(0.0);
    let var_out = (s2_out / outside as f64 - mu_out * mu_out).max(0.0);
    let num = mu_in - mu_out;
    let den = ((var_in + var_out) / 2.0).sqrt();
    if num.abs() < 1e-12 && den < 1e-12 {
        return Ok(0.0);
    }
    Ok(num / den)
}

/// Rank-based AUROC (Mann-Whitney) with average-rank tie correction.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::validation("scores and labels differ in length"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::validation("AUROC needs both classes present"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::validation("scores must be finite"));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // average ranks over tie groups (1-based ranks)
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }

    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}
