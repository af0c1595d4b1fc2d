//! Seeded image augmentation: right-angle rotations, mirror flips and
//! centre scaling on a fixed canvas.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Image;
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipAxis {
    /// Mirror left-right.
    Horizontal,
    /// Mirror top-bottom.
    Vertical,
}

pub const MIN_SCALE: f64 = 0.5;
pub const MAX_SCALE: f64 = 2.0;

/// Clockwise rotation by `degrees` (0, 90, 180 or 270). A 90 degree turn
/// sends pixel `(i, j)` to `(j, H - 1 - i)`.
pub fn rotate(image: &Image, degrees: u32) -> Result<Image> {
    let (h, w) = (image.height(), image.width());
    let out = match degrees {
        0 => return Ok(image.clone()),
        90 => {
            let mut px = vec![0.0; h * w];
            for i in 0..h {
                for j in 0..w {
                    px[j * h + (h - 1 - i)] = image.get(i, j);
                }
            }
            Image::from_parts(w, h, px)
        }
        180 => Image::from_parts(h, w, image.pixels().iter().rev().copied().collect()),
        270 => {
            let mut px = vec![0.0; h * w];
            for i in 0..h {
                for j in 0..w {
                    px[(w - 1 - j) * h + i] = image.get(i, j);
                }
            }
            Image::from_parts(w, h, px)
        }
        other => {
            return Err(Error::InvalidInput(format!(
                "unsupported rotation {other}; expected 0, 90, 180 or 270"
            )))
        }
    };
    Ok(out)
}

pub fn flip(image: &Image, axis: FlipAxis) -> Image {
    let (h, w) = (image.height(), image.width());
    let px = match axis {
        FlipAxis::Horizontal => image
            .pixels()
            .chunks_exact(w)
            .flat_map(|row| row.iter().rev().copied())
            .collect(),
        FlipAxis::Vertical => image
            .pixels()
            .chunks_exact(w)
            .rev()
            .flat_map(|row| row.iter().copied())
            .collect(),
    };
    Image::from_parts(h, w, px)
}

fn check_scale(factor: f64) -> Result<()> {
    if !(MIN_SCALE..=MAX_SCALE).contains(&factor) {
        return Err(Error::InvalidInput(format!(
            "scale factor {factor} outside [{MIN_SCALE}, {MAX_SCALE}]"
        )));
    }
    Ok(())
}

/// Zooms by `factor` about the image centre with bilinear sampling, keeping
/// the canvas size. Zooming in crops; zooming out leaves a zero border
/// wherever the source position falls outside the original image.
pub fn scale(image: &Image, factor: f64) -> Result<Image> {
    check_scale(factor)?;
    let (h, w) = (image.height(), image.width());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (max_y, max_x) = ((h - 1) as f64, (w - 1) as f64);
    let eps = 1e-9;
    let mut px = Vec::with_capacity(h * w);
    for i in 0..h {
        let sy = cy + (i as f64 - cy) / factor;
        for j in 0..w {
            let sx = cx + (j as f64 - cx) / factor;
            if sy < -eps || sy > max_y + eps || sx < -eps || sx > max_x + eps {
                px.push(0.0);
                continue;
            }
            let sy = sy.clamp(0.0, max_y);
            let sx = sx.clamp(0.0, max_x);
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            let top = image.get(y0, x0) * (1.0 - fx) + image.get(y0, x1) * fx;
            let bottom = image.get(y1, x0) * (1.0 - fx) + image.get(y1, x1) * fx;
            px.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
        }
    }
    Ok(Image::from_parts(h, w, px))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPolicy {
    /// Clockwise right-angle rotations to draw from (subset of 90/180/270).
    pub rotations: Vec<u32>,
    pub flips: Vec<FlipAxis>,
    pub scales: Vec<f64>,
    pub per_image_count: usize,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            rotations: vec![90, 180, 270],
            flips: vec![FlipAxis::Horizontal, FlipAxis::Vertical],
            scales: vec![0.9, 1.1],
            per_image_count: 3,
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.rotations.iter().find(|r| ![90, 180, 270].contains(*r)) {
            return Err(Error::InvalidConfig(format!(
                "rotation {r} not in {{90, 180, 270}}"
            )));
        }
        for &s in &self.scales {
            check_scale(s).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        }
        Ok(())
    }

    /// Draws one transformed copy of `image` from `rng`.
    fn draw<R: Rng>(&self, image: &Image, rng: &mut R) -> Result<Image> {
        let degrees = if self.rotations.is_empty() {
            0
        } else {
            self.rotations[rng.random_range(0..self.rotations.len())]
        };
        // index 0 means "no flip"
        let flip_pick = rng.random_range(0..=self.flips.len());
        let factor = if self.scales.is_empty() {
            1.0
        } else {
            self.scales[rng.random_range(0..self.scales.len())]
        };
        let mut out = rotate(image, degrees)?;
        if flip_pick > 0 {
            out = flip(&out, self.flips[flip_pick - 1]);
        }
        if factor != 1.0 {
            out = scale(&out, factor)?;
        }
        Ok(out)
    }
}

/// The augmented copies of one image, drawn from substream `index` of the
/// policy seed.
pub fn augment_image(image: &Image, index: usize, policy: &AugmentPolicy) -> Result<Vec<Image>> {
    let mut rng = stream_rng(policy.seed, index as u64);
    (0..policy.per_image_count)
        .map(|_| policy.draw(image, &mut rng))
        .collect()
}

/// Originals in input order, followed by `per_image_count` copies of each
/// image (grouped by source image). Labels follow their images.
pub fn augment_dataset(
    images: &[Image],
    labels: &[usize],
    policy: &AugmentPolicy,
) -> Result<(Vec<Image>, Vec<usize>)> {
    policy.validate()?;
    if images.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            what: "labels",
            expected: images.len(),
            got: labels.len(),
        });
    }
    let total = images.len() * (policy.per_image_count + 1);
    let mut out_images = Vec::with_capacity(total);
    let mut out_labels = Vec::with_capacity(total);
    out_images.extend_from_slice(images);
    out_labels.extend_from_slice(labels);
    for (i, (image, &label)) in images.iter().zip(labels).enumerate() {
        for copy in augment_image(image, i, policy)? {
            out_images.push(copy);
            out_labels.push(label);
        }
    }
    Ok((out_images, out_labels))
}
