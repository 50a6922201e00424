//! Image side of the model: preprocessing, the pluggable backbone contract
//! with its built-in toy implementation, and the projection heads that map
//! every feature level into the shared dimension `D`.

mod backbone;
mod preprocess;
mod project;
mod resize;

pub use backbone::{
    encode_image, BackboneFeatures, BackboneGraph, GridShape, ImageBackbone, ToyBackbone,
};
pub use preprocess::{channel_stats_of, load_image, preprocess, preprocess_raw, ChannelStats};
pub(crate) use project::build_projection;
pub use project::{project, ImagePyramid, ProjectionHeads, PyramidGraph};
pub use resize::resize_bilinear;
