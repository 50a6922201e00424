//! Binary raster masks and their PNG form (8-bit grayscale, 0/255).

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Fill the axis-aligned box (x, y, w, h). The box must lie inside the
    /// raster.
    pub fn fill_box(&mut self, x: usize, y: usize, w: usize, h: usize) -> Result<()> {
        if x + w > self.width || y + h > self.height {
            return Err(Error::validation(format!(
                "box ({x},{y},{w},{h}) exceeds {}x{} image bounds",
                self.width, self.height
            )));
        }
        for yy in y..y + h {
            for xx in x..x + w {
                self.set(yy, xx, true);
            }
        }
        Ok(())
    }

    pub fn union_with(&mut self, other: &Mask) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::validation("mask dimension mismatch in union"));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a || b;
        }
        Ok(())
    }

    pub fn intersects(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).any(|(&a, &b)| a && b)
    }
}

/// Read an 8-bit grayscale PNG whose pixels are exactly 0 or 255.
pub fn load_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(|e| Error::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => other.to_luma8(),
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let mut data = Vec::with_capacity(w * h);
    for p in gray.pixels() {
        match p.0[0] {
            0 => data.push(false),
            255 => data.push(true),
            v => {
                return Err(Error::validation(format!(
                    "mask {} contains pixel value {v}; masks must be 0/255",
                    path.display()
                )))
            }
        }
    }
    Ok(Mask {
        height: h,
        width: w,
        data,
    })
}

pub fn save_mask_png(mask: &Mask, path: &Path) -> Result<()> {
    let mut img = image::GrayImage::new(mask.width as u32, mask.height as u32);
    for y in 0..mask.height {
        for x in 0..mask.width {
            img.put_pixel(
                x as u32,
                y as u32,
                image::Luma([if mask.get(y, x) { 255 } else { 0 }]),
            );
        }
    }
    img.save(path).map_err(|e| Error::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_box_sets_exactly_wh_pixels() {
        // rasterization oracle: count pixels inside the box by scanning
        let mut m = Mask::empty(4, 4);
        m.fill_box(0, 0, 2, 2).unwrap();
        let mut oracle = 0;
        for y in 0..4 {
            for x in 0..4 {
                if x < 2 && y < 2 {
                    oracle += 1;
                    assert!(m.get(y, x));
                } else {
                    assert!(!m.get(y, x));
                }
            }
        }
        assert_eq!(m.count(), oracle);
        assert_eq!(m.count(), 4);
    }

    #[test]
    fn out_of_bounds_box_rejected() {
        let mut m = Mask::empty(4, 4);
        assert!(m.fill_box(3, 3, 2, 2).is_err());
    }

    #[test]
    fn mask_png_round_trips() {
        let d = std::env::temp_dir().join(format!("promptloc-mask-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        let mut m = Mask::empty(5, 7);
        m.fill_box(1, 2, 3, 2).unwrap();
        let p = d.join("m.png");
        save_mask_png(&m, &p).unwrap();
        assert_eq!(load_mask_png(&p).unwrap(), m);
    }
}
