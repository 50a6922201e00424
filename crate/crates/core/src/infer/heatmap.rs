//! Heatmap localization: prompt feature vs deep-local image positions.
//!
//! The prompt encodes to sentence-level features (averaged into one query
//! when the prompt has several sentences), cosine similarity against each
//! deep position gives a coarse map, and bilinear upsampling (align-corners
//! false) brings it to the source image size. Values are clamped to [-1, 1]
//! rather than min-max rescaled, so magnitudes stay comparable across
//! images; CNR depends on that.

use std::io::Write;
use std::path::Path;

use crate::align::AlignmentModel;
use crate::data::Mask;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vision::{load_image, resize_bilinear};

/// Per-pixel similarity raster in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap<T> {
    pub height: usize,
    pub width: usize,
    pub values: Vec<T>,
    pub prompt: String,
    pub image_id: String,
}

impl<T: Scalar> Heatmap<T> {
    pub fn get(&self, y: usize, x: usize) -> T {
        self.values[y * self.width + x]
    }
}

/// Cosine of a unit query against each row of a local feature matrix.
pub fn cosine_map<T: Scalar>(positions: &[T], n_pos: usize, dim: usize, query: &[T]) -> Vec<T> {
    assert_eq!(positions.len(), n_pos * dim);
    assert_eq!(query.len(), dim);
    let qn = query
        .iter()
        .map(|&x| x * x)
        .sum::<T>()
        .sqrt()
        .max(T::from_f64(1e-30));
    (0..n_pos)
        .map(|p| {
            let row = &positions[p * dim..(p + 1) * dim];
            let rn = row
                .iter()
                .map(|&x| x * x)
                .sum::<T>()
                .sqrt()
                .max(T::from_f64(1e-30));
            row.iter().zip(query).map(|(&a, &b)| a * b).sum::<T>() / (rn * qn)
        })
        .collect()
}

/// Bilinear upsample of a `g x g` map to `h x w`, clamped to [-1, 1].
pub fn upsample_map<T: Scalar>(map: &[T], g: usize, h: usize, w: usize) -> Vec<T> {
    let src: Vec<f64> = map.iter().map(|v| v.as_f64()).collect();
    resize_bilinear(&src, g, g, h, w)
        .into_iter()
        .map(|v| T::from_f64(v.clamp(-1.0, 1.0)))
        .collect()
}

/// Localize a text prompt in an already-decoded image.
pub fn localize_image<T: Scalar>(
    model: &AlignmentModel<T>,
    img: &image::RgbImage,
    image_id: &str,
    prompt: &str,
) -> Result<Heatmap<T>> {
    if prompt.trim().is_empty() {
        return Err(Error::validation("prompt must be non-empty"));
    }
    let hierarchy = model.embed_text(prompt)?;
    let dim = model.arch.dim;
    // several sentences reduce to one query by averaging
    let p = hierarchy.t_s.dims[0];
    let mut query = vec![T::zero(); dim];
    for i in 0..p {
        for j in 0..dim {
            query[j] += hierarchy.t_s.data[i * dim + j];
        }
    }
    let inv = T::one() / T::from_f64(p as f64);
    for q in query.iter_mut() {
        *q *= inv;
    }

    let pyramid = model.embed_image(img)?;
    let n_deep = pyramid.deep.dims[0];
    let g = (n_deep as f64).sqrt() as usize;
    debug_assert_eq!(g * g, n_deep);
    let map = cosine_map(&pyramid.deep.data, n_deep, dim, &query);
    let (h, w) = (img.height() as usize, img.width() as usize);
    Ok(Heatmap {
        height: h,
        width: w,
        values: upsample_map(&map, g, h, w),
        prompt: prompt.to_string(),
        image_id: image_id.to_string(),
    })
}

/// Localize a text prompt in an image file.
pub fn localize<T: Scalar>(
    model: &AlignmentModel<T>,
    image_path: &Path,
    prompt: &str,
) -> Result<Heatmap<T>> {
    let img = load_image(image_path)?;
    let id = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    localize_image(model, &img, &id, prompt)
}

/// Hard threshold with the `>=` rule.
pub fn binarize<T: Scalar>(hm: &Heatmap<T>, theta: f64) -> Result<Mask> {
    if !(-1.0..=1.0).contains(&theta) {
        return Err(Error::validation(format!(
            "threshold {theta} outside [-1, 1]"
        )));
    }
    let th = T::from_f64(theta);
    Ok(Mask {
        height: hm.height,
        width: hm.width,
        data: hm.values.iter().map(|&v| v >= th).collect(),
    })
}

const RASTER_MAGIC: &[u8; 4] = b"AFH1";

/// Write the raster format: magic `AFH1`, u32 height, u32 width, then
/// height*width little-endian f32 values row-major.
pub fn write_heatmap_raster<T: Scalar>(hm: &Heatmap<T>, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(12 + hm.values.len() * 4);
    out.extend_from_slice(RASTER_MAGIC);
    out.extend_from_slice(&(hm.height as u32).to_le_bytes());
    out.extend_from_slice(&(hm.width as u32).to_le_bytes());
    for &v in &hm.values {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Read an `AFH1` raster. Prompt and image id are not part of the format.
pub fn read_heatmap_raster(path: &Path) -> Result<Heatmap<f32>> {
    let buf = std::fs::read(path).map_err(|e| Error::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if buf.len() < 12 || &buf[0..4] != RASTER_MAGIC {
        return Err(Error::validation(format!(
            "{} is not an AFH1 raster",
            path.display()
        )));
    }
    let h = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    if buf.len() != 12 + h * w * 4 {
        return Err(Error::validation("AFH1 raster has wrong payload length"));
    }
    let values = buf[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Heatmap {
        height: h,
        width: w,
        values,
        prompt: String::new(),
        image_id: String::new(),
    })
}

/// Export the source image blended with a red channel proportional to
/// `max(value, 0)`.
pub fn write_overlay_png<T: Scalar>(
    img: &image::RgbImage,
    hm: &Heatmap<T>,
    path: &Path,
) -> Result<()> {
    if img.height() as usize != hm.height || img.width() as usize != hm.width {
        return Err(Error::validation(
            "overlay image and heatmap dimensions differ",
        ));
    }
    let mut out = image::RgbImage::new(img.width(), img.height());
    for y in 0..hm.height {
        for x in 0..hm.width {
            let p = img.get_pixel(x as u32, y as u32).0;
            let w = hm.get(y, x).as_f64().max(0.0).min(1.0);
            let r = (p[0] as f64 * (1.0 - w) + 255.0 * w).round() as u8;
            let g = (p[1] as f64 * (1.0 - w)).round() as u8;
            let b = (p[2] as f64 * (1.0 - w)).round() as u8;
            out.put_pixel(x as u32, y as u32, image::Rgb([r, g, b]));
        }
    }
    out.save(path).map_err(|e| Error::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
