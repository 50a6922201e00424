//! Report augmentation: sentence shuffling and sentence sampling.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{Report, ReportText};
use crate::error::{Error, Result};

use super::vocab::split_sentences;

#[derive(Debug, Clone, Copy)]
pub struct AugmentParams {
    pub shuffle: bool,
    /// Fraction of sentences kept, in (0, 1].
    pub keep_ratio: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            shuffle: true,
            keep_ratio: 1.0,
        }
    }
}

/// Permute and subsample the report's sentences. At least one sentence is
/// always retained. The result carries the augmented text in `findings`
/// with an empty `impression`; downstream encoding only looks at the
/// combined text, so nothing is lost.
pub fn augment_report(
    report: &Report,
    rng: &mut impl Rng,
    params: &AugmentParams,
) -> Result<Report> {
    if !(params.keep_ratio > 0.0 && params.keep_ratio <= 1.0) {
        return Err(Error::validation("keep_ratio must be in (0, 1]"));
    }
    let sentences = split_sentences(&report.full_text());
    if sentences.is_empty() {
        return Err(Error::validation(format!(
            "report {} has no sentences",
            report.id
        )));
    }
    let p = sentences.len();
    let keep = ((params.keep_ratio * p as f64).round() as usize).clamp(1, p);

    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(rng);
    order.truncate(keep);
    if !params.shuffle {
        order.sort_unstable();
    }

    let findings = order
        .iter()
        .map(|&i| format!("{}.", sentences[i]))
        .collect::<Vec<_>>()
        .join(" ");

    Ok(Report {
        id: report.id.clone(),
        image: report.image.clone(),
        report: ReportText {
            findings,
            impression: String::new(),
        },
        labels: report.labels.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, TAG_AUGMENT};

    fn report(findings: &str, impression: &str) -> Report {
        Report {
            id: "r".into(),
            image: "r.png".into(),
            report: ReportText {
                findings: findings.into(),
                impression: impression.into(),
            },
            labels: None,
        }
    }

    #[test]
    fn no_shuffle_full_keep_is_identity_on_sentences() {
        let r = report(
            "a red circle in the upper left. a blue square in the lower right.",
            "",
        );
        let mut rng = stream(1, &[TAG_AUGMENT]);
        let out = augment_report(
            &r,
            &mut rng,
            &AugmentParams {
                shuffle: false,
                keep_ratio: 1.0,
            },
        )
        .unwrap();
        assert_eq!(
            split_sentences(&out.full_text()),
            split_sentences(&r.full_text())
        );
    }

    #[test]
    fn half_keep_of_four_sentences_retains_exactly_two() {
        let r = report("one a. two b. three c.", "four d.");
        let mut rng = stream(2, &[TAG_AUGMENT]);
        let out = augment_report(
            &r,
            &mut rng,
            &AugmentParams {
                shuffle: false,
                keep_ratio: 0.5,
            },
        )
        .unwrap();
        assert_eq!(split_sentences(&out.full_text()).len(), 2);
    }

    #[test]
    fn fixed_seed_reproduces() {
        let r = report("one a. two b. three c. four d.", "");
        let p = AugmentParams {
            shuffle: true,
            keep_ratio: 0.75,
        };
        let a = augment_report(&r, &mut stream(9, &[TAG_AUGMENT, 3]), &p).unwrap();
        let b = augment_report(&r, &mut stream(9, &[TAG_AUGMENT, 3]), &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn never_outputs_zero_sentences() {
        let r = report("only one.", "");
        for seed in 0..20 {
            let out = augment_report(
                &r,
                &mut stream(seed, &[TAG_AUGMENT]),
                &AugmentParams {
                    shuffle: true,
                    keep_ratio: 0.01,
                },
            )
            .unwrap();
            assert!(!split_sentences(&out.full_text()).is_empty());
        }
    }

    #[test]
    fn bad_keep_ratio_rejected() {
        let r = report("a b.", "");
        let mut rng = stream(0, &[TAG_AUGMENT]);
        assert!(augment_report(
            &r,
            &mut rng,
            &AugmentParams {
                shuffle: true,
                keep_ratio: 0.0
            }
        )
        .is_err());
        assert!(augment_report(
            &r,
            &mut rng,
            &AugmentParams {
                shuffle: true,
                keep_ratio: 1.5
            }
        )
        .is_err());
    }

    #[test]
    fn unshuffled_subset_preserves_original_order() {
        let r = report("alpha x. beta y. gamma z. delta w.", "");
        let original = split_sentences(&r.full_text());
        for seed in 0..10 {
            let out = augment_report(
                &r,
                &mut stream(seed, &[TAG_AUGMENT, 7]),
                &AugmentParams {
                    shuffle: false,
                    keep_ratio: 0.5,
                },
            )
            .unwrap();
            let kept = split_sentences(&out.full_text());
            let mut positions: Vec<usize> = kept
                .iter()
                .map(|s| original.iter().position(|o| o == s).unwrap())
                .collect();
            let sorted = {
                let mut x = positions.clone();
                x.sort_unstable();
                x
            };
            assert_eq!(positions, sorted);
            positions.dedup();
            assert_eq!(positions.len(), kept.len());
        }
    }
}
