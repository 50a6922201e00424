//! Image decoding, resizing, and channel standardization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::resize::resize_bilinear;

/// Per-channel normalization statistics in [0,1] pixel units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for ChannelStats {
    fn default() -> Self {
        ChannelStats {
            mean: [0.5; 3],
            std: [0.25; 3],
        }
    }
}

const STD_FLOOR: f64 = 1e-6;

/// Decode an 8-bit grayscale or RGB PNG into an RGB image (gray replicates
/// across channels).
pub fn load_image(path: &Path) -> Result<image::RgbImage> {
    let img = image::open(path).map_err(|e| Error::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

/// Resize to `side x side` (bilinear) and standardize each channel with the
/// given statistics. Output is a `(3, side, side)` tensor.
pub fn preprocess_raw<T: Scalar>(
    img: &image::RgbImage,
    side: usize,
    stats: &ChannelStats,
) -> Tensor<T> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut planes = vec![vec![0.0f64; h * w]; 3];
    for y in 0..h {
        for x in 0..w {
            let p = img.get_pixel(x as u32, y as u32).0;
            for c in 0..3 {
                planes[c][y * w + x] = p[c] as f64 / 255.0;
            }
        }
    }
    let mut data = Vec::with_capacity(3 * side * side);
    for c in 0..3 {
        let resized = resize_bilinear(&planes[c], h, w, side, side);
        let sd = stats.std[c].max(STD_FLOOR);
        for v in resized {
            data.push(T::from_f64((v - stats.mean[c]) / sd));
        }
    }
    Tensor::from_vec(&[3, side, side], data)
}

/// [`preprocess_raw`] from a file.
pub fn preprocess<T: Scalar>(path: &Path, side: usize, stats: &ChannelStats) -> Result<Tensor<T>> {
    Ok(preprocess_raw(&load_image(path)?, side, stats))
}

/// Population mean/std per channel over a set of images, measured after
/// resizing to the working resolution.
pub fn channel_stats_of(images: &[image::RgbImage], side: usize) -> ChannelStats {
    let mut sum = [0.0f64; 3];
    let mut sumsq = [0.0f64; 3];
    let mut n = 0usize;
    let unit = ChannelStats {
        mean: [0.0; 3],
        std: [1.0; 3],
    };
    for img in images {
        let t: Tensor<f64> = preprocess_raw(img, side, &unit);
        let plane = side * side;
        for c in 0..3 {
            for &v in &t.data[c * plane..(c + 1) * plane] {
                sum[c] += v;
                sumsq[c] += v * v;
            }
        }
        n += plane;
    }
    if n == 0 {
        return ChannelStats::default();
    }
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for c in 0..3 {
        mean[c] = sum[c] / n as f64;
        std[c] = (sumsq[c] / n as f64 - mean[c] * mean[c])
            .max(0.0)
            .sqrt()
            .max(STD_FLOOR);
    }
    ChannelStats { mean, std }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_image(w: u32, h: u32, rgb: [u8; 3]) -> image::RgbImage {
        image::RgbImage::from_pixel(w, h, image::Rgb(rgb))
    }

    #[test]
    fn constant_image_standardizes_to_zero() {
        let img = flat_image(16, 16, [100, 100, 100]);
        let v = 100.0 / 255.0;
        let stats = ChannelStats {
            mean: [v; 3],
            std: [0.2; 3],
        };
        let t: Tensor<f64> = preprocess_raw(&img, 16, &stats);
        assert!(t.data.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn resize_contract_448_to_224() {
        let img = flat_image(448, 448, [10, 20, 30]);
        let t: Tensor<f32> = preprocess_raw(&img, 224, &ChannelStats::default());
        assert_eq!(t.dims, vec![3, 224, 224]);
    }

    #[test]
    fn same_file_twice_is_identical() {
        let d = std::env::temp_dir().join(format!("promptloc-pre-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        let p = d.join("img.png");
        let mut img = flat_image(32, 32, [0, 0, 0]);
        for y in 0..32 {
            for x in 0..32 {
                img.put_pixel(x, y, image::Rgb([(x * 8) as u8, (y * 8) as u8, 128]));
            }
        }
        img.save(&p).unwrap();
        let a: Tensor<f32> = preprocess(&p, 16, &ChannelStats::default()).unwrap();
        let b: Tensor<f32> = preprocess(&p, 16, &ChannelStats::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unreadable_image_is_input_error() {
        let e = preprocess::<f32>(
            Path::new("/nonexistent/img.png"),
            16,
            &ChannelStats::default(),
        );
        assert!(matches!(e, Err(Error::Input { .. })));
    }

    #[test]
    fn corpus_stats_standardize_that_corpus_to_zero_mean_unit_std() {
        let imgs = vec![
            flat_image(8, 8, [0, 0, 0]),
            flat_image(8, 8, [255, 255, 255]),
        ];
        let stats = channel_stats_of(&imgs, 8);
        for c in 0..3 {
            assert!((stats.mean[c] - 0.5).abs() < 1e-9);
            assert!((stats.std[c] - 0.5).abs() < 1e-9);
        }
        let t0: Tensor<f64> = preprocess_raw(&imgs[0], 8, &stats);
        let t1: Tensor<f64> = preprocess_raw(&imgs[1], 8, &stats);
        assert!(t0.data.iter().all(|&v| (v + 1.0).abs() < 1e-9));
        assert!(t1.data.iter().all(|&v| (v - 1.0).abs() < 1e-9));
    }
}
