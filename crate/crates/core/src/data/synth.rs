//! Deterministic shapes-and-captions corpus generator.
//!
//! Each sample is a black square image with a few solid colored shapes at
//! non-overlapping positions, a report with one caption sentence per shape
//! (kind, color, coarse quadrant) in shuffled order plus a summary sentence,
//! and a pixel-exact mask per shape. Captions deliberately carry only coarse
//! spatial words ("upper", "left"), which is the text regime localization
//! has to cope with.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use super::annotations::AnnotationRecord;
use super::corpus::{Corpus, Report, ReportText};
use super::mask::{save_mask_png, Mask};
use super::prompts::{save_prompts, PromptSet, PromptTemplates};
use crate::error::{Error, Result};
use crate::rng::{stream, TAG_SYNTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Cross,
}

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Cross => "cross",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ShapeKind {
    pub shape: Shape,
    pub color: Color,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

impl Color {
    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
        }
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [220, 40, 40],
            Color::Green => [40, 200, 60],
            Color::Blue => [50, 80, 220],
            Color::Yellow => [230, 210, 50],
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.color.name(), self.shape.name())
    }
}

impl ShapeKind {
    pub fn label(&self) -> String {
        self.to_string()
    }

    pub fn slug(&self) -> String {
        format!("{}-{}", self.color.name(), self.shape.name())
    }
}

/// Sentence templates. Shape templates must mention `{color}` and `{shape}`;
/// `{vert}`/`{horiz}` expand to the quadrant words. Summary templates may
/// use `{count}`.
#[derive(Debug, Clone)]
pub struct CaptionGrammar {
    pub shape_templates: Vec<String>,
    pub summary_templates: Vec<String>,
}

impl Default for CaptionGrammar {
    fn default() -> Self {
        CaptionGrammar {
            shape_templates: vec![
                "a {color} {shape} in the {vert} {horiz}.".into(),
                "there is a {color} {shape} in the {vert} {horiz}.".into(),
            ],
            summary_templates: vec!["the image shows {count}.".into()],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub image_size: usize,
    pub shape_vocabulary: Vec<ShapeKind>,
    /// Inclusive range of shapes per image.
    pub shapes_per_image: (usize, usize),
    pub caption_grammar: CaptionGrammar,
    pub count: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(count: usize, seed: u64) -> Self {
        SynthSpec {
            image_size: 64,
            shape_vocabulary: default_vocabulary(),
            shapes_per_image: (1, 3),
            caption_grammar: CaptionGrammar::default(),
            count,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.image_size < 32 {
            return Err(Error::validation("image_size must be >= 32"));
        }
        if self.count < 1 {
            return Err(Error::validation("count must be >= 1"));
        }
        let (lo, hi) = self.shapes_per_image;
        if lo < 1 || lo > hi {
            return Err(Error::validation(
                "shapes_per_image range must satisfy 1 <= lo <= hi",
            ));
        }
        if self.shape_vocabulary.is_empty() {
            return Err(Error::validation("shape vocabulary must be non-empty"));
        }
        if hi > self.shape_vocabulary.len() {
            return Err(Error::validation(
                "shapes_per_image max exceeds vocabulary size (kinds are drawn without replacement)",
            ));
        }
        for t in &self.caption_grammar.shape_templates {
            if !t.contains("{color}") || !t.contains("{shape}") {
                return Err(Error::validation(
                    "shape templates must mention {color} and {shape}",
                ));
            }
        }
        if self.caption_grammar.shape_templates.is_empty()
            || self.caption_grammar.summary_templates.is_empty()
        {
            return Err(Error::validation(
                "caption grammar templates must be non-empty",
            ));
        }
        Ok(())
    }
}

pub fn default_vocabulary() -> Vec<ShapeKind> {
    let mut v = Vec::new();
    for shape in [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Cross] {
        for color in [Color::Red, Color::Blue] {
            v.push(ShapeKind { shape, color });
        }
    }
    v
}

pub struct SynthOutput {
    pub corpus: Corpus,
    pub images: Vec<image::RgbImage>,
    pub masks: BTreeMap<(String, String), Mask>,
}

const PLACEMENT_RETRIES: usize = 100;

/// Generate `spec.count` samples. Deterministic for a fixed seed: sample `i`
/// draws only from a stream derived from `(seed, i)`.
pub fn synthesize_corpus(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let size = spec.image_size;
    let mut reports = Vec::with_capacity(spec.count);
    let mut images = Vec::with_capacity(spec.count);
    let mut masks = BTreeMap::new();

    for i in 0..spec.count {
        let mut rng = stream(spec.seed, &[TAG_SYNTH, i as u64]);
        let id = format!("synth-{i:05}");

        let n_shapes = rng.gen_range(spec.shapes_per_image.0..=spec.shapes_per_image.1);
        let mut kinds = spec.shape_vocabulary.clone();
        kinds.shuffle(&mut rng);
        kinds.truncate(n_shapes);

        // dark speckle background; a constant background would let any
        // shape-vs-void cue pass for localization
        let mut img = image::RgbImage::new(size as u32, size as u32);
        for y in 0..size {
            for x in 0..size {
                let g = rng.gen_range(0u8..=48);
                img.put_pixel(x as u32, y as u32, image::Rgb([g, g, g]));
            }
        }
        let mut placed: Vec<(ShapeKind, Mask, (usize, usize))> = Vec::new();
        for &kind in &kinds {
            let mask = place_shape(&mut rng, size, kind.shape, &placed)?;
            let center = mask_center(&mask);
            for y in 0..size {
                for x in 0..size {
                    if mask.get(y, x) {
                        img.put_pixel(x as u32, y as u32, image::Rgb(kind.color.rgb()));
                    }
                }
            }
            placed.push((kind, mask, center));
        }

        // One caption per shape, shuffled, plus a summary as the impression.
        let mut sentences: Vec<String> = placed
            .iter()
            .map(|(kind, _, center)| caption_for(&mut rng, spec, *kind, *center, size))
            .collect();
        sentences.shuffle(&mut rng);
        let findings = sentences.join(" ");
        let summary_t = spec.caption_grammar.summary_templates
            [rng.gen_range(0..spec.caption_grammar.summary_templates.len())]
        .clone();
        let impression = summary_t.replace("{count}", &count_phrase(placed.len()));

        let mut labels = BTreeMap::new();
        for kind in &spec.shape_vocabulary {
            labels.insert(kind.label(), 0u8);
        }
        for (kind, mask, _) in placed {
            labels.insert(kind.label(), 1u8);
            masks.insert((id.clone(), kind.label()), mask);
        }

        reports.push(Report {
            id: id.clone(),
            image: format!("images/{id}.png"),
            report: ReportText {
                findings,
                impression,
            },
            labels: Some(labels),
        });
        images.push(img);
    }

    let corpus = Corpus::new(reports, std::path::PathBuf::from("."))?;
    Ok(SynthOutput {
        corpus,
        images,
        masks,
    })
}

fn count_phrase(n: usize) -> String {
    const WORDS: [&str; 9] = [
        "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
    ];
    if n == 1 {
        "one shape".to_string()
    } else if n <= WORDS.len() {
        format!("{} shapes", WORDS[n - 1])
    } else {
        format!("{n} shapes")
    }
}

fn caption_for(
    rng: &mut impl Rng,
    spec: &SynthSpec,
    kind: ShapeKind,
    center: (usize, usize),
    size: usize,
) -> String {
    let (cy, cx) = center;
    let vert = if cy < size / 2 { "upper" } else { "lower" };
    let horiz = if cx < size / 2 { "left" } else { "right" };
    let t = &spec.caption_grammar.shape_templates
        [rng.gen_range(0..spec.caption_grammar.shape_templates.len())];
    t.replace("{color}", kind.color.name())
        .replace("{shape}", kind.shape.name())
        .replace("{vert}", vert)
        .replace("{horiz}", horiz)
}

fn mask_center(mask: &Mask) -> (usize, usize) {
    let (mut sy, mut sx, mut n) = (0usize, 0usize, 0usize);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(y, x) {
                sy += y;
                sx += x;
                n += 1;
            }
        }
    }
    (sy / n.max(1), sx / n.max(1))
}

fn place_shape(
    rng: &mut impl Rng,
    size: usize,
    shape: Shape,
    placed: &[(ShapeKind, Mask, (usize, usize))],
) -> Result<Mask> {
    for _ in 0..PLACEMENT_RETRIES {
        let r = rng.gen_range(size / 9..=size / 5).max(3);
        let cy = rng.gen_range(r + 2..size - r - 2);
        let cx = rng.gen_range(r + 2..size - r - 2);
        let mask = rasterize(size, shape, cy, cx, r);
        if placed.iter().all(|(_, m, _)| !mask.intersects(m)) {
            return Ok(mask);
        }
    }
    Err(Error::Generation(format!(
        "could not place a {} without overlap after {PLACEMENT_RETRIES} retries",
        shape.name()
    )))
}

fn rasterize(size: usize, shape: Shape, cy: usize, cx: usize, r: usize) -> Mask {
    let mut m = Mask::empty(size, size);
    let (cyf, cxf, rf) = (cy as f64, cx as f64, r as f64);
    for y in 0..size {
        for x in 0..size {
            let dy = y as f64 - cyf;
            let dx = x as f64 - cxf;
            let hit = match shape {
                Shape::Circle => dy * dy + dx * dx <= rf * rf,
                Shape::Square => dy.abs() <= rf && dx.abs() <= rf,
                Shape::Triangle => {
                    // upward triangle: apex at cy - r, base at cy + r
                    dy >= -rf && dy <= rf && dx.abs() <= (dy + rf) / 2.0
                }
                Shape::Cross => {
                    let arm = (rf / 3.0).max(1.0);
                    (dy.abs() <= arm && dx.abs() <= rf) || (dx.abs() <= arm && dy.abs() <= rf)
                }
            };
            if hit {
                m.set(y, x, true);
            }
        }
    }
    m
}

/// Materialize a generated corpus under `dir`:
/// `corpus.jsonl`, `images/`, `masks/`, `annotations.jsonl`, `prompts.json`.
/// Returns the corpus rooted at `dir`.
pub fn write_synth_dir(spec: &SynthSpec, dir: &Path) -> Result<Corpus> {
    let out = synthesize_corpus(spec)?;
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("masks"))?;

    for (report, img) in out.corpus.reports.iter().zip(&out.images) {
        img.save(dir.join(&report.image))
            .map_err(|e| Error::Input {
                path: dir.join(&report.image),
                message: e.to_string(),
            })?;
    }

    let slug_of: BTreeMap<String, String> = spec
        .shape_vocabulary
        .iter()
        .map(|k| (k.label(), k.slug()))
        .collect();
    let mut ann = std::fs::File::create(dir.join("annotations.jsonl"))?;
    for ((id, pathology), mask) in &out.masks {
        let slug = slug_of
            .get(pathology)
            .cloned()
            .unwrap_or_else(|| pathology.replace(' ', "-"));
        let rel = format!("masks/{id}__{slug}.png");
        save_mask_png(mask, &dir.join(&rel))?;
        let rec = AnnotationRecord {
            id: id.clone(),
            pathology: pathology.clone(),
            boxes: None,
            mask: Some(rel),
        };
        serde_json::to_writer(&mut ann, &rec).map_err(|e| Error::validation(e.to_string()))?;
        ann.write_all(b"\n")?;
    }

    // the first positive template is the canonical localization prompt; a
    // generic wording keeps it out-of-distribution relative to captions
    let prompts = PromptSet(
        spec.shape_vocabulary
            .iter()
            .map(|k| {
                let label = k.label();
                (
                    label.clone(),
                    PromptTemplates {
                        positive: vec![
                            format!("findings suggesting a {label}"),
                            format!("a {label}"),
                        ],
                        negative: vec![format!("no {label}")],
                    },
                )
            })
            .collect(),
    );
    save_prompts(&prompts, &dir.join("prompts.json"))?;

    let corpus = Corpus::new(out.corpus.reports, dir.to_path_buf())?;
    super::corpus::save_corpus(&corpus, &dir.join("corpus.jsonl"))?;
    Ok(corpus)
}
