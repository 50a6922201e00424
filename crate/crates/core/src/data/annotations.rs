//! Ground-truth region annotations: boxes or mask rasters per (id, pathology).
//!
//! Boxes rasterize to filled rectangles; multiple regions for the same
//! (id, pathology) key union into one mask, which is also the "inside"
//! region used by CNR.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mask::{load_mask_png, Mask};
use crate::error::{Error, Result};

/// On-disk record: exactly one of `boxes` / `mask` must be present.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: String,
    pub pathology: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<[u32; 4]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

/// In-memory annotation: either pixel boxes or a raster.
#[derive(Debug, Clone)]
pub struct RegionAnnotation {
    pub id: String,
    pub pathology: String,
    pub regions: Regions,
}

#[derive(Debug, Clone)]
pub enum Regions {
    Boxes(Vec<[u32; 4]>),
    Mask(Mask),
}

/// Load an annotation file and rasterize everything to per-(id, pathology)
/// union masks of the owning image's size.
pub fn load_annotations(
    path: &Path,
    image_sizes: &BTreeMap<String, (usize, usize)>,
) -> Result<BTreeMap<(String, String), Mask>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let reader = BufReader::new(file);
    let mut out: BTreeMap<(String, String), Mask> = BTreeMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let &(h, w) = image_sizes.get(&rec.id).ok_or_else(|| {
            Error::validation(format!("annotation references unknown id {:?}", rec.id))
        })?;

        let mask = match (&rec.boxes, &rec.mask) {
            (Some(boxes), None) => {
                let mut m = Mask::empty(h, w);
                for b in boxes {
                    let [x, y, bw, bh] = *b;
                    m.fill_box(x as usize, y as usize, bw as usize, bh as usize)?;
                }
                m
            }
            (None, Some(rel)) => {
                let m = load_mask_png(&dir.join(rel))?;
                if m.height != h || m.width != w {
                    return Err(Error::validation(format!(
                        "mask for id {:?} is {}x{}, image is {}x{}",
                        rec.id, m.height, m.width, h, w
                    )));
                }
                m
            }
            _ => {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: "record must have exactly one of \"boxes\" or \"mask\"".into(),
                })
            }
        };

        let key = (rec.id.clone(), rec.pathology.clone());
        match out.get_mut(&key) {
            Some(existing) => existing.union_with(&mask)?,
            None => {
                out.insert(key, mask);
            }
        }
    }
    Ok(out)
}
