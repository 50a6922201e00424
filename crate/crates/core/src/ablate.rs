//! Ablation harness: the seven level-combination variants and the
//! simple-vs-precise prompt comparison, both evaluated with the standard
//! localization protocol. Rows are pure functions of (switches, seed), so
//! rerunning a plan reproduces its table bit for bit.

use std::collections::BTreeMap;

use crate::align::{train, AlignmentModel, ArchConfig, LossSwitches, TrainConfig};
use crate::data::{Corpus, Mask, PromptSet};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_localization, LocalizationProtocol, MetricReport, MetricRow, PromptMode,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AblationVariant {
    pub label: String,
    pub switches: LossSwitches,
}

/// Training variants differing only in loss switches, each run over a
/// shared seed set.
#[derive(Debug, Clone)]
pub struct AblationPlan {
    pub variants: Vec<AblationVariant>,
    pub seeds: Vec<u64>,
    pub base: TrainConfig,
    pub arch: ArchConfig,
}

impl AblationPlan {
    /// The canonical plan: all seven non-empty switch combinations.
    /// Requires at least two seeds.
    pub fn level_combinations(
        base: TrainConfig,
        arch: ArchConfig,
        seeds: Vec<u64>,
    ) -> Result<Self> {
        if seeds.len() < 2 {
            return Err(Error::validation("ablation plans need at least 2 seeds"));
        }
        let combos = [
            (true, false, false),
            (false, true, false),
            (false, false, true),
            (true, true, false),
            (true, false, true),
            (false, true, true),
            (true, true, true),
        ];
        let variants = combos
            .into_iter()
            .map(|(sw, ds, gr)| {
                let switches = LossSwitches {
                    shallow_word: sw,
                    deep_sentence: ds,
                    global_report: gr,
                };
                AblationVariant {
                    label: switches.label(),
                    switches,
                }
            })
            .collect();
        Ok(AblationPlan {
            variants,
            seeds,
            base,
            arch,
        })
    }
}

/// Everything needed to score a trained model.
pub struct EvalAssets<'a> {
    pub corpus: &'a Corpus,
    pub annotations: &'a BTreeMap<(String, String), Mask>,
    pub prompts: &'a PromptSet,
    pub protocol: LocalizationProtocol,
    pub bootstrap_reps: usize,
    pub eval_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub switches: LossSwitches,
    pub per_seed_iou: Vec<f64>,
    pub mean_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Plain-text checkbox layout, one variant per row.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("word-shallow  sentence-deep  report-global  | mean IoU  (per seed)\n");
        for r in &self.rows {
            let tick = |b: bool| if b { "x" } else { " " };
            let seeds = r
                .per_seed_iou
                .iter()
                .map(|v| format!("{v:.3}"))
                .collect::<Vec<_>>()
                .join(", ");
            out.push_str(&format!(
                "     {}             {}              {}         |  {:.3}    ({seeds})\n",
                tick(r.switches.shallow_word),
                tick(r.switches.deep_sentence),
                tick(r.switches.global_report),
                r.mean_iou,
            ));
        }
        out
    }
}

/// The summary row of a localization report for one metric: the macro mean
/// when several pathologies exist, otherwise the single pathology row.
pub fn summary_row(report: &MetricReport, metric: &str) -> Result<MetricRow> {
    if let Some(r) = report.get("mean", metric) {
        return Ok(r.clone());
    }
    report
        .rows
        .iter()
        .find(|r| r.metric == metric)
        .cloned()
        .ok_or_else(|| Error::validation(format!("report has no {metric:?} rows")))
}

/// Train and evaluate one variant; pure in (switches, seed).
pub fn run_variant<T: Scalar>(
    switches: &LossSwitches,
    seed: u64,
    base: &TrainConfig,
    arch: &ArchConfig,
    train_corpus: &Corpus,
    extra_vocab: &[String],
    assets: &EvalAssets,
) -> Result<(AlignmentModel<T>, MetricReport)> {
    let cfg = TrainConfig {
        switches: *switches,
        seed,
        ..base.clone()
    };
    let out = train::<T>(
        train_corpus,
        extra_vocab,
        arch,
        &cfg,
        None,
        |_, _, _| Ok(()),
    )?;
    let report = evaluate_localization(
        &out.best_model,
        assets.corpus,
        assets.annotations,
        assets.prompts,
        &assets.protocol,
        PromptMode::Simple,
        assets.bootstrap_reps,
        assets.eval_seed,
    )?;
    Ok((out.best_model, report))
}

/// Train every (variant, seed) pair and tabulate seed-averaged mean IoU.
pub fn run_ablation<T: Scalar>(
    plan: &AblationPlan,
    train_corpus: &Corpus,
    extra_vocab: &[String],
    assets: &EvalAssets,
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(plan.variants.len());
    for variant in &plan.variants {
        let mut per_seed = Vec::with_capacity(plan.seeds.len());
        for &seed in &plan.seeds {
            let (_, report) = run_variant::<T>(
                &variant.switches,
                seed,
                &plan.base,
                &plan.arch,
                train_corpus,
                extra_vocab,
                assets,
            )?;
            per_seed.push(summary_row(&report, "iou")?.value);
        }
        let mean_iou = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        rows.push(AblationRow {
            label: variant.label.clone(),
            switches: variant.switches,
            per_seed_iou: per_seed,
            mean_iou,
        });
    }
    Ok(AblationTable { rows })
}

/// Paired rows for one metric under the two prompt modes.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptComparisonRow {
    pub metric: String,
    pub simple: MetricRow,
    pub precise: MetricRow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptComparison {
    pub rows: Vec<PromptComparisonRow>,
}

impl PromptComparison {
    /// Metric blocks with a Simple/Precise row each.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&format!("{}\n", r.metric.to_uppercase()));
            for (name, row) in [
                ("Simple description", &r.simple),
                ("Precise description", &r.precise),
            ] {
                out.push_str(&format!(
                    "  {name:<20} {:.3} ({:.3}, {:.3})\n",
                    row.value, row.ci_low, row.ci_high
                ));
            }
        }
        out
    }

    pub fn get(&self, metric: &str) -> Option<&PromptComparisonRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }
}

/// Evaluate localization under templated simple prompts and per-sample
/// caption sentences with the same model and protocol.
pub fn run_prompt_comparison<T: Scalar>(
    model: &AlignmentModel<T>,
    assets: &EvalAssets,
) -> Result<PromptComparison> {
    let mut reports = Vec::new();
    for mode in [PromptMode::Simple, PromptMode::PreciseCaption] {
        reports.push(evaluate_localization(
            model,
            assets.corpus,
            assets.annotations,
            assets.prompts,
            &assets.protocol,
            mode,
            assets.bootstrap_reps,
            assets.eval_seed,
        )?);
    }
    let mut rows = Vec::new();
    for metric in ["iou", "dice", "cnr"] {
        rows.push(PromptComparisonRow {
            metric: metric.to_string(),
            simple: summary_row(&reports[0], metric)?,
            precise: summary_row(&reports[1], metric)?,
        });
    }
    Ok(PromptComparison { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_annotations, load_prompts, write_synth_dir, SynthSpec};
    use std::path::PathBuf;

    fn micro_assets(tag: &str, count: usize, seed: u64) -> (Corpus, PathBuf) {
        let base = std::env::temp_dir().join(format!("promptloc-abl-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&base);
        std::fs::create_dir_all(&base).unwrap();
        let mut spec = SynthSpec::new(count, seed);
        spec.image_size = 32;
        spec.shapes_per_image = (1, 2);
        let corpus = write_synth_dir(&spec, &base).unwrap();
        (corpus, base)
    }

    fn micro_arch() -> ArchConfig {
        ArchConfig {
            dim: 8,
            image_side: 32,
            in_channels: 3,
            stage_channels: [4, 4, 6, 6],
            text_layers: 2,
            max_tokens: 24,
            word_agg_mean: false,
        }
    }

    fn micro_train() -> TrainConfig {
        TrainConfig {
            batch_size: 6,
            learning_rate: 1e-3,
            epochs: 1,
            val_fraction: 0.0,
            ..TrainConfig::default()
        }
    }

    fn load_assets(
        base: &PathBuf,
        corpus: &Corpus,
    ) -> (BTreeMap<(String, String), Mask>, PromptSet) {
        let sizes: BTreeMap<String, (usize, usize)> = corpus
            .reports
            .iter()
            .map(|r| (r.id.clone(), (32, 32)))
            .collect();
        let anns = load_annotations(&base.join("annotations.jsonl"), &sizes).unwrap();
        let prompts = load_prompts(&base.join("prompts.json")).unwrap();
        (anns, prompts)
    }

    #[test]
    fn canonical_plan_has_exactly_seven_rows_with_all_variant_last() {
        let plan =
            AblationPlan::level_combinations(micro_train(), micro_arch(), vec![1, 2]).unwrap();
        assert_eq!(plan.variants.len(), 7);
        assert_eq!(plan.variants.last().unwrap().label, "all");
        assert!(plan.variants.last().unwrap().switches.shallow_word);
        assert!(plan.variants.last().unwrap().switches.deep_sentence);
        assert!(plan.variants.last().unwrap().switches.global_report);
        // the seven combinations are distinct
        let mut labels: Vec<&str> = plan.variants.iter().map(|v| v.label.as_str()).collect();
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), 7);
        // fewer than two seeds is rejected
        assert!(AblationPlan::level_combinations(micro_train(), micro_arch(), vec![1]).is_err());
    }

    #[test]
    fn identical_variants_produce_identical_rows() {
        let (corpus, base) = micro_assets("dup", 10, 4);
        let (anns, prompts) = load_assets(&base, &corpus);
        let assets = EvalAssets {
            corpus: &corpus,
            annotations: &anns,
            prompts: &prompts,
            protocol: LocalizationProtocol::default_multi(),
            bootstrap_reps: 20,
            eval_seed: 0,
        };
        let all = LossSwitches::all();
        let a = run_variant::<f32>(
            &all,
            7,
            &micro_train(),
            &micro_arch(),
            &corpus,
            &[],
            &assets,
        )
        .unwrap();
        let b = run_variant::<f32>(
            &all,
            7,
            &micro_train(),
            &micro_arch(),
            &corpus,
            &[],
            &assets,
        )
        .unwrap();
        assert_eq!(a.0.param_checksum(), b.0.param_checksum());
        assert_eq!(a.1.rows, b.1.rows);
    }

    #[test]
    fn full_plan_runs_and_renders_checkbox_layout() {
        let (corpus, base) = micro_assets("plan", 8, 1);
        let (anns, prompts) = load_assets(&base, &corpus);
        let assets = EvalAssets {
            corpus: &corpus,
            annotations: &anns,
            prompts: &prompts,
            protocol: LocalizationProtocol::default_multi(),
            bootstrap_reps: 10,
            eval_seed: 0,
        };
        let plan =
            AblationPlan::level_combinations(micro_train(), micro_arch(), vec![1, 2]).unwrap();
        let table = run_ablation::<f32>(&plan, &corpus, &[], &assets).unwrap();
        assert_eq!(table.rows.len(), 7);
        for row in &table.rows {
            assert_eq!(row.per_seed_iou.len(), 2);
            assert!(row.mean_iou.is_finite());
        }
        let rendered = table.render();
        assert!(rendered.contains("word-shallow"));
        // the all-switch row renders three ticks
        let last = rendered.lines().last().unwrap();
        assert_eq!(last.matches('x').count(), 3, "last row: {last}");

        // rerunning the plan reproduces the table bit for bit
        let again = run_ablation::<f32>(&plan, &corpus, &[], &assets).unwrap();
        assert_eq!(table, again);
    }

    #[test]
    fn prompt_comparison_layout_is_paired_and_deterministic() {
        let (corpus, base) = micro_assets("pc", 8, 2);
        let (anns, prompts) = load_assets(&base, &corpus);
        let assets = EvalAssets {
            corpus: &corpus,
            annotations: &anns,
            prompts: &prompts,
            protocol: LocalizationProtocol::default_multi(),
            bootstrap_reps: 10,
            eval_seed: 3,
        };
        let all = LossSwitches::all();
        let (model, _) = run_variant::<f32>(
            &all,
            5,
            &micro_train(),
            &micro_arch(),
            &corpus,
            &[],
            &assets,
        )
        .unwrap();
        let cmp = run_prompt_comparison(&model, &assets).unwrap();
        assert_eq!(cmp.rows.len(), 3);
        let rendered = cmp.render();
        for block in [
            "IOU",
            "DICE",
            "CNR",
            "Simple description",
            "Precise description",
        ] {
            assert!(rendered.contains(block), "missing {block} in:\n{rendered}");
        }
        // deterministic across runs
        let again = run_prompt_comparison(&model, &assets).unwrap();
        assert_eq!(cmp, again);
        for r in &cmp.rows {
            assert_eq!(r.simple.n, r.precise.n);
        }
    }

    #[test]
    fn identical_simple_and_precise_prompts_give_identical_rows() {
        // a prompt set whose templates ARE the caption sentences makes the
        // two modes coincide; build it from a one-shape corpus with a single
        // fixed caption template and no location variation in the grammar
        let base = std::env::temp_dir().join(format!("promptloc-abl-same-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&base);
        std::fs::create_dir_all(&base).unwrap();
        let mut spec = SynthSpec::new(6, 9);
        spec.image_size = 32;
        spec.shapes_per_image = (1, 1);
        spec.caption_grammar.shape_templates = vec!["a {color} {shape}.".into()];
        let corpus = write_synth_dir(&spec, &base).unwrap();
        let (anns, _) = load_assets(&base, &corpus);
        // templates identical to the caption sentence "a red circle"
        let prompts = PromptSet(
            spec.shape_vocabulary
                .iter()
                .map(|k| {
                    (
                        k.label(),
                        crate::data::PromptTemplates {
                            positive: vec![format!("a {}", k.label())],
                            negative: vec![format!("no {}", k.label())],
                        },
                    )
                })
                .collect(),
        );
        let assets = EvalAssets {
            corpus: &corpus,
            annotations: &anns,
            prompts: &prompts,
            protocol: LocalizationProtocol::default_multi(),
            bootstrap_reps: 10,
            eval_seed: 1,
        };
        let (model, _) = run_variant::<f32>(
            &LossSwitches::all(),
            3,
            &micro_train(),
            &micro_arch(),
            &corpus,
            &[],
            &assets,
        )
        .unwrap();
        let cmp = run_prompt_comparison(&model, &assets).unwrap();
        for r in &cmp.rows {
            assert_eq!(
                r.simple, r.precise,
                "metric {} rows should coincide",
                r.metric
            );
        }
    }
}
