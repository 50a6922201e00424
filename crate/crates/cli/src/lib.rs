//! Command implementations behind the `promptloc` binary. Everything is a
//! plain function over parsed arguments so the test suites can drive the
//! exact code paths the binary runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use promptloc_core::ablate::{
    run_ablation, run_prompt_comparison, run_variant, AblationPlan, EvalAssets,
};
use promptloc_core::align::{train, AlignmentModel, LossSwitches, TrainState};
use promptloc_core::checkpoint::{load_model, save_model, LoadedModel};
use promptloc_core::config::RunConfig;
use promptloc_core::data::{
    load_annotations, load_corpus, load_prompts, write_synth_dir, Corpus, PromptSet, SynthSpec,
};
use promptloc_core::error::{Error, Result};
use promptloc_core::eval::{
    evaluate_classification, evaluate_localization, optimal_threshold, LocalizationProtocol,
    PromptMode, DEFAULT_BOOTSTRAP_REPS,
};
use promptloc_core::infer::{
    binarize, classify_all, localize, write_heatmap_raster, write_overlay_png,
};
use promptloc_core::scalar::Dtype;
use promptloc_core::vision::load_image;

pub const CONFIG_ENV_VAR: &str = "PROMPTLOC_CONFIG";

#[derive(Debug, Parser)]
#[command(
    name = "promptloc",
    about = "Multi-level vision-language alignment: train on image-report pairs, \
             localize text prompts as heatmaps, classify zero-shot, evaluate",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic shapes-and-captions corpus.
    Synth(SynthArgs),
    /// Train an alignment model on an image-report corpus.
    Train(TrainArgs),
    /// Localize a text prompt in an image as a heatmap.
    Locate(LocateArgs),
    /// Zero-shot pathology probabilities for images.
    Classify(ClassifyArgs),
    /// Evaluate localization (and optionally classification) on a corpus.
    Eval(EvalArgs),
    /// Run the level-combination ablation and the prompt comparison.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Configuration profile: `toy` (desk scale) or `full` (full scale).
    #[arg(long, default_value = "toy")]
    pub profile: String,
    /// Config file (key = value per line); overrides the profile.
    /// Defaults to $PROMPTLOC_CONFIG when set.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Individual key=value overrides applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::by_profile(&self.profile)?;
        let file = self
            .config
            .clone()
            .or_else(|| std::env::var(CONFIG_ENV_VAR).ok().map(PathBuf::from));
        if let Some(path) = file {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::Input {
                path: path.clone(),
                message: e.to_string(),
            })?;
            cfg.apply_file_text(&text)?;
        }
        cfg.apply_overrides(&self.overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub image_size: usize,
    #[arg(long, default_value_t = 1)]
    pub shapes_min: usize,
    #[arg(long, default_value_t = 3)]
    pub shapes_max: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus file (or a directory containing corpus.jsonl).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory for checkpoints and the training log.
    #[arg(long)]
    pub out: PathBuf,
    /// Prompt templates whose words widen the tokenizer vocabulary.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Resume from a state-bearing checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct LocateArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub prompt: String,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a 0/255 mask PNG binarized at this threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub prompts: PathBuf,
    /// Single image to classify.
    #[arg(long, conflicts_with = "corpus")]
    pub image: Option<PathBuf>,
    /// Corpus whose images are classified in record order.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Comma-separated pathologies; defaults to every prompt-set entry.
    #[arg(long, value_delimiter = ',')]
    pub pathologies: Vec<String>,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub prompts: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `multi-threshold` or `fixed` (fixed selects the threshold on --val).
    #[arg(long, default_value = "multi-threshold")]
    pub protocol: String,
    /// Validation directory (corpus.jsonl + annotations.jsonl) for the
    /// fixed protocol's threshold selection.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Prompt source: `simple` templates or `precise` caption sentences.
    #[arg(long, default_value = "simple")]
    pub mode: String,
    /// Also evaluate zero-shot classification AUROC from corpus labels.
    #[arg(long, default_value_t = false)]
    pub with_classification: bool,
    #[arg(long, default_value_t = DEFAULT_BOOTSTRAP_REPS)]
    pub bootstrap_reps: usize,
    #[arg(long, default_value_t = 0)]
    pub eval_seed: u64,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Training corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Held-out evaluation corpus directory (corpus.jsonl + annotations).
    #[arg(long)]
    pub eval_corpus: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub prompts: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Seeds shared by every variant (at least two).
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 200)]
    pub bootstrap_reps: usize,
    #[command(flatten)]
    pub config: ConfigArgs,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Locate(a) => cmd_locate(&a),
        Command::Classify(a) => cmd_classify(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Ablate(a) => cmd_ablate(&a),
    }
}

fn corpus_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("corpus.jsonl")
    } else {
        path.to_path_buf()
    }
}

/// Image dimensions (h, w) per corpus id, from the PNG headers.
fn image_sizes(corpus: &Corpus) -> Result<BTreeMap<String, (usize, usize)>> {
    let mut out = BTreeMap::new();
    for r in &corpus.reports {
        let path = corpus.image_path(r);
        let (w, h) = image::image_dimensions(&path).map_err(|e| Error::Input {
            path: path.clone(),
            message: e.to_string(),
        })?;
        out.insert(r.id.clone(), (h as usize, w as usize));
    }
    Ok(out)
}

fn prompt_texts(set: &PromptSet) -> Vec<String> {
    set.0
        .values()
        .flat_map(|t| t.positive.iter().chain(t.negative.iter()).cloned())
        .collect()
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut spec = SynthSpec::new(args.count, args.seed);
    spec.image_size = args.image_size;
    spec.shapes_per_image = (args.shapes_min, args.shapes_max);
    std::fs::create_dir_all(&args.out)?;
    let corpus = write_synth_dir(&spec, &args.out)?;
    println!(
        "wrote {} samples ({} annotated regions) to {}",
        corpus.len(),
        std::fs::read_to_string(args.out.join("annotations.jsonl"))?
            .lines()
            .count(),
        args.out.display()
    );
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let corpus = load_corpus(&corpus_file(&args.corpus))?;
    let extra_vocab = match &args.prompts {
        Some(p) => prompt_texts(&load_prompts(p)?),
        None => Vec::new(),
    };
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("config.txt"), cfg.render())?;

    match cfg.precision {
        Dtype::F32 => {
            let resume = match &args.resume {
                Some(path) => Some(resume_f32(path)?),
                None => None,
            };
            train_typed::<f32>(args, &cfg, &corpus, &extra_vocab, resume)
        }
        Dtype::F64 => {
            let resume = match &args.resume {
                Some(path) => Some(resume_f64(path)?),
                None => None,
            };
            train_typed::<f64>(args, &cfg, &corpus, &extra_vocab, resume)
        }
    }
}

fn resume_f32(path: &Path) -> Result<(AlignmentModel<f32>, TrainState<f32>)> {
    match load_model(path)? {
        LoadedModel::F32(m, Some(s)) => Ok((m, s)),
        LoadedModel::F32(_, None) => Err(Error::Checkpoint(
            "checkpoint has no training state; cannot resume".into(),
        )),
        other => Err(Error::Checkpoint(format!(
            "checkpoint is {} but the run is configured for f32",
            other.dtype().name()
        ))),
    }
}

fn resume_f64(path: &Path) -> Result<(AlignmentModel<f64>, TrainState<f64>)> {
    match load_model(path)? {
        LoadedModel::F64(m, Some(s)) => Ok((m, s)),
        LoadedModel::F64(_, None) => Err(Error::Checkpoint(
            "checkpoint has no training state; cannot resume".into(),
        )),
        other => Err(Error::Checkpoint(format!(
            "checkpoint is {} but the run is configured for f64",
            other.dtype().name()
        ))),
    }
}

fn train_typed<T: promptloc_core::Scalar>(
    args: &TrainArgs,
    cfg: &RunConfig,
    corpus: &Corpus,
    extra_vocab: &[String],
    resume: Option<(AlignmentModel<T>, TrainState<T>)>,
) -> Result<()> {
    let out_dir = args.out.clone();
    let outcome = train::<T>(
        corpus,
        extra_vocab,
        &cfg.arch,
        &cfg.train,
        resume,
        |epoch, model, state| {
            let path = out_dir.join(format!("epoch-{epoch:03}.ckpt"));
            save_model(model, Some(state), &path)
        },
    )?;

    let mut log = Vec::new();
    for record in &outcome.log {
        log.extend_from_slice(
            serde_json::to_string(record)
                .map_err(|e| Error::validation(e.to_string()))?
                .as_bytes(),
        );
        log.push(b'\n');
    }
    std::fs::write(args.out.join("train-log.jsonl"), log)?;
    save_model(&outcome.best_model, None, &args.out.join("model.ckpt"))?;

    for (epoch, val) in outcome.val_losses.iter().enumerate() {
        println!(
            "epoch {}/{}  val_loss {val:.6}  lr {:.6e}",
            epoch + 1 + (cfg.train.epochs - outcome.val_losses.len()),
            cfg.train.epochs,
            cfg.train
                .lr_at_epoch(epoch + (cfg.train.epochs - outcome.val_losses.len()))
        );
    }
    println!(
        "best epoch {} (val_loss {:.6}); model written to {}",
        outcome.state.best_epoch,
        outcome.state.best_val,
        args.out.join("model.ckpt").display()
    );
    Ok(())
}

fn slug(text: &str, max: usize) -> String {
    let mut s: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { '-' })
        .collect();
    while s.contains("--") {
        s = s.replace("--", "-");
    }
    s.truncate(max);
    s.trim_matches('-').to_string()
}

pub fn cmd_locate(args: &LocateArgs) -> Result<()> {
    let loaded = load_model(&args.checkpoint)?;
    std::fs::create_dir_all(&args.out)?;
    let stem = args
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let base = args.out.join(format!("{stem}__{}", slug(&args.prompt, 40)));

    match loaded {
        LoadedModel::F32(model, _) => locate_typed(&model, args, &base),
        LoadedModel::F64(model, _) => locate_typed(&model, args, &base),
    }
}

fn locate_typed<T: promptloc_core::Scalar>(
    model: &AlignmentModel<T>,
    args: &LocateArgs,
    base: &Path,
) -> Result<()> {
    let hm = localize(model, &args.image, &args.prompt)?;
    let raster = base.with_extension("afh");
    write_heatmap_raster(&hm, &raster)?;
    let overlay = base.with_extension("png");
    write_overlay_png(&load_image(&args.image)?, &hm, &overlay)?;
    println!("{}", raster.display());
    println!("{}", overlay.display());
    if let Some(theta) = args.threshold {
        let mask = binarize(&hm, theta)?;
        let mask_path = base.with_extension("mask.png");
        promptloc_core::data::save_mask_png(&mask, &mask_path)?;
        println!("{}", mask_path.display());
    }
    Ok(())
}

pub fn cmd_classify(args: &ClassifyArgs) -> Result<()> {
    let loaded = load_model(&args.checkpoint)?;
    let prompts = load_prompts(&args.prompts)?;
    let pathologies: Vec<String> = if args.pathologies.is_empty() {
        prompts.pathologies().map(|s| s.to_string()).collect()
    } else {
        args.pathologies.clone()
    };

    let mut targets: Vec<(String, PathBuf)> = Vec::new();
    if let Some(img) = &args.image {
        let id = img
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        targets.push((id, img.clone()));
    } else if let Some(corpus_path) = &args.corpus {
        let corpus = load_corpus(&corpus_file(corpus_path))?;
        for r in &corpus.reports {
            targets.push((r.id.clone(), corpus.image_path(r)));
        }
    } else {
        return Err(Error::validation("classify needs --image or --corpus"));
    }

    // header, then one row per image with a probability column per pathology
    println!("id\t{}", pathologies.join("\t"));
    for (id, path) in targets {
        let img = load_image(&path)?;
        let probs = match &loaded {
            LoadedModel::F32(model, _) => {
                classify_all(model, &img, &pathologies, &prompts, args.temperature)?
            }
            LoadedModel::F64(model, _) => {
                classify_all(model, &img, &pathologies, &prompts, args.temperature)?
            }
        };
        let row: Vec<String> = pathologies
            .iter()
            .map(|p| format!("{:.6}", probs[p]))
            .collect();
        println!("{id}\t{}", row.join("\t"));
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let loaded = load_model(&args.checkpoint)?;
    let corpus = load_corpus(&corpus_file(&args.corpus))?;
    let prompts = load_prompts(&args.prompts)?;
    let sizes = image_sizes(&corpus)?;
    let annotations = load_annotations(&args.annotations, &sizes)?;

    let mode = match args.mode.as_str() {
        "simple" => PromptMode::Simple,
        "precise" => PromptMode::PreciseCaption,
        other => return Err(Error::Config(format!("unknown prompt mode {other:?}"))),
    };

    std::fs::create_dir_all(&args.out)?;
    match loaded {
        LoadedModel::F32(model, _) => {
            eval_typed(&model, args, &cfg, &corpus, &annotations, &prompts, mode)
        }
        LoadedModel::F64(model, _) => {
            eval_typed(&model, args, &cfg, &corpus, &annotations, &prompts, mode)
        }
    }
}

fn eval_typed<T: promptloc_core::Scalar>(
    model: &AlignmentModel<T>,
    args: &EvalArgs,
    cfg: &RunConfig,
    corpus: &Corpus,
    annotations: &BTreeMap<(String, String), promptloc_core::data::Mask>,
    prompts: &PromptSet,
    mode: PromptMode,
) -> Result<()> {
    let protocol = match args.protocol.as_str() {
        "multi-threshold" => LocalizationProtocol::MultiThreshold {
            thresholds: cfg.thresholds.clone(),
        },
        "fixed" => {
            let val_dir = args
                .val
                .as_ref()
                .ok_or_else(|| Error::Config("--protocol fixed requires --val <dir>".into()))?;
            let val_corpus = load_corpus(&val_dir.join("corpus.jsonl"))?;
            let val_sizes = image_sizes(&val_corpus)?;
            let val_anns = load_annotations(&val_dir.join("annotations.jsonl"), &val_sizes)?;
            let mut pairs = Vec::new();
            for ((id, pathology), gt) in &val_anns {
                let record = val_corpus.get(id).ok_or_else(|| {
                    Error::validation(format!("val id {id:?} missing from corpus"))
                })?;
                let prompt = prompts.localization_prompt(pathology)?;
                let img_path = val_corpus.image_path(record);
                let hm = localize(model, &img_path, prompt)?;
                pairs.push((hm, gt.clone()));
            }
            let theta = optimal_threshold(&pairs, &cfg.thresholds)?;
            println!(
                "selected threshold {theta} on {} validation pairs",
                pairs.len()
            );
            LocalizationProtocol::FixedThreshold { theta }
        }
        other => return Err(Error::Config(format!("unknown protocol {other:?}"))),
    };

    let report = evaluate_localization(
        model,
        corpus,
        annotations,
        prompts,
        &protocol,
        mode,
        args.bootstrap_reps,
        args.eval_seed,
    )?;
    report.write_jsonl(&args.out.join("metrics.jsonl"))?;
    let table = report.render_table();
    std::fs::write(args.out.join("report.txt"), &table)?;
    print!("{table}");

    if args.with_classification {
        let pathologies: Vec<String> = prompts.pathologies().map(|s| s.to_string()).collect();
        let cls = evaluate_classification(
            model,
            corpus,
            prompts,
            &pathologies,
            cfg.cls_temperature,
            args.bootstrap_reps,
            args.eval_seed,
        )?;
        cls.write_jsonl(&args.out.join("classification.jsonl"))?;
        let cls_table = cls.render_table();
        std::fs::write(args.out.join("classification.txt"), &cls_table)?;
        print!("{cls_table}");
    }
    Ok(())
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let train_corpus = load_corpus(&corpus_file(&args.corpus))?;
    let eval_corpus = load_corpus(&corpus_file(&args.eval_corpus))?;
    let prompts = load_prompts(&args.prompts)?;
    let sizes = image_sizes(&eval_corpus)?;
    let annotations = load_annotations(&args.annotations, &sizes)?;
    let extra_vocab = prompt_texts(&prompts);
    std::fs::create_dir_all(&args.out)?;

    let assets = EvalAssets {
        corpus: &eval_corpus,
        annotations: &annotations,
        prompts: &prompts,
        protocol: LocalizationProtocol::MultiThreshold {
            thresholds: cfg.thresholds.clone(),
        },
        bootstrap_reps: args.bootstrap_reps,
        eval_seed: 0,
    };
    let plan =
        AblationPlan::level_combinations(cfg.train.clone(), cfg.arch.clone(), args.seeds.clone())?;

    match cfg.precision {
        Dtype::F32 => ablate_typed::<f32>(args, &plan, &train_corpus, &extra_vocab, &assets),
        Dtype::F64 => ablate_typed::<f64>(args, &plan, &train_corpus, &extra_vocab, &assets),
    }
}

fn ablate_typed<T: promptloc_core::Scalar>(
    args: &AblateArgs,
    plan: &AblationPlan,
    train_corpus: &Corpus,
    extra_vocab: &[String],
    assets: &EvalAssets,
) -> Result<()> {
    let table = run_ablation::<T>(plan, train_corpus, extra_vocab, assets)?;
    let rendered = table.render();
    std::fs::write(args.out.join("ablation.txt"), &rendered)?;
    print!("{rendered}");

    // prompt comparison on the all-levels model for the first seed; this is
    // the same checkpoint the ablation's all-switch row used
    let (model, _) = run_variant::<T>(
        &LossSwitches::all(),
        plan.seeds[0],
        &plan.base,
        &plan.arch,
        train_corpus,
        extra_vocab,
        assets,
    )?;
    let cmp = run_prompt_comparison(&model, assets)?;
    let rendered = cmp.render();
    std::fs::write(args.out.join("prompt-comparison.txt"), &rendered)?;
    print!("{rendered}");
    Ok(())
}
