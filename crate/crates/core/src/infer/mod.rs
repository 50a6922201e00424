//! Prompt-driven localization and zero-shot classification for a frozen
//! model. Everything here is pure: the same model, image, and prompt always
//! produce bit-identical output.

mod classify;
mod heatmap;

pub use classify::{classify, classify_all, two_way_softmax};
pub use heatmap::{
    binarize, cosine_map, localize, localize_image, read_heatmap_raster, upsample_map,
    write_heatmap_raster, write_overlay_png, Heatmap,
};
