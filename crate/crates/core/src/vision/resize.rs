//! Bilinear resampling, align-corners-false, clamp-to-edge.
//!
//! Output pixel centers map to source coordinates via
//! `src = (dst + 0.5) * (in / out) - 0.5`; samples beyond the outermost
//! source pixel centers clamp to the edge. This single routine serves both
//! image preprocessing and heatmap upsampling, so the position<->pixel
//! convention cannot drift between them.

/// Resize one plane of `h_in` x `w_in` values to `h_out` x `w_out`.
pub fn resize_bilinear(
    src: &[f64],
    h_in: usize,
    w_in: usize,
    h_out: usize,
    w_out: usize,
) -> Vec<f64> {
    assert_eq!(src.len(), h_in * w_in, "plane size mismatch");
    assert!(h_in > 0 && w_in > 0 && h_out > 0 && w_out > 0);
    let mut out = vec![0.0; h_out * w_out];
    let sy = h_in as f64 / h_out as f64;
    let sx = w_in as f64 / w_out as f64;
    for oy in 0..h_out {
        let fy = (oy as f64 + 0.5) * sy - 0.5;
        let y0 = fy.floor();
        let wy = fy - y0;
        let y0i = (y0 as isize).clamp(0, h_in as isize - 1) as usize;
        let y1i = ((y0 as isize) + 1).clamp(0, h_in as isize - 1) as usize;
        for ox in 0..w_out {
            let fx = (ox as f64 + 0.5) * sx - 0.5;
            let x0 = fx.floor();
            let wx = fx - x0;
            let x0i = (x0 as isize).clamp(0, w_in as isize - 1) as usize;
            let x1i = ((x0 as isize) + 1).clamp(0, w_in as isize - 1) as usize;
            let top = src[y0i * w_in + x0i] * (1.0 - wx) + src[y0i * w_in + x1i] * wx;
            let bot = src[y1i * w_in + x0i] * (1.0 - wx) + src[y1i * w_in + x1i] * wx;
            out[oy * w_out + ox] = top * (1.0 - wy) + bot * wy;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_when_sizes_match() {
        let src = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(resize_bilinear(&src, 2, 2, 2, 2), src);
    }

    #[test]
    fn constant_plane_stays_constant() {
        let src = vec![0.7; 16];
        let out = resize_bilinear(&src, 4, 4, 9, 9);
        assert!(out.iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn corners_equal_source_corners_on_upsample() {
        // with align-corners-false + edge clamping, the four output corner
        // pixels sample inside the clamped corner region exactly
        let src = vec![1.0, 2.0, 3.0, 4.0];
        let out = resize_bilinear(&src, 2, 2, 8, 8);
        assert!((out[0] - 1.0).abs() < 1e-12);
        assert!((out[7] - 2.0).abs() < 1e-12);
        assert!((out[56] - 3.0).abs() < 1e-12);
        assert!((out[63] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn downsample_averages_neighbors() {
        // 2x downsample of a 2x2-periodic plane lands mid-pixel: mean of the 4
        let src = vec![
            0.0, 1.0, 0.0, 1.0, //
            1.0, 0.0, 1.0, 0.0, //
            0.0, 1.0, 0.0, 1.0, //
            1.0, 0.0, 1.0, 0.0,
        ];
        let out = resize_bilinear(&src, 4, 4, 2, 2);
        for v in out {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }
}
