//! Corpus ingestion, region annotations, prompt sets, and the synthetic
//! shapes-and-captions generator used for desk-scale verification.

mod annotations;
mod corpus;
mod mask;
mod prompts;
mod synth;

pub use annotations::{load_annotations, AnnotationRecord, RegionAnnotation, Regions};
pub use corpus::{load_corpus, save_corpus, Corpus, Report, ReportText};
pub use mask::{load_mask_png, save_mask_png, Mask};
pub use prompts::{load_prompts, save_prompts, PromptSet, PromptTemplates};
pub use synth::{synthesize_corpus, write_synth_dir, ShapeKind, SynthOutput, SynthSpec};
