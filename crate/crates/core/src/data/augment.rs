use serde::{Deserialize, Serialize};

use super::{IMAGE_LEN, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::tensor::Rng;

/// Zero-pad, random crop, random horizontal flip, then (optionally) normalize.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub pad: usize,
    pub crop: usize,
    pub hflip_prob: f64,
    pub normalize: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            pad: 4,
            crop: 32,
            hflip_prob: 0.5,
            normalize: true,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop != IMAGE_SIZE || self.crop > IMAGE_SIZE + 2 * self.pad {
            return Err(Error::Config(format!("crop {} with pad {} is invalid", self.crop, self.pad)));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::Config(format!("hflip_prob {} not in [0, 1]", self.hflip_prob)));
        }
        Ok(())
    }
}

/// Mirrors each row of a 3 × 32 × 32 image.
pub fn hflip(img: &[f64]) -> Vec<f64> {
    let mut out = img.to_vec();
    for row in out.chunks_mut(IMAGE_SIZE) {
        row.reverse();
    }
    out
}

/// 32 × 32 window at `(dy, dx)` of the image zero-padded by `pad` on each side.
pub fn crop_padded(img: &[f64], pad: usize, dy: usize, dx: usize) -> Vec<f64> {
    let mut out = vec![0.0; IMAGE_LEN];
    for c in 0..3 {
        for y in 0..IMAGE_SIZE {
            let sy = (y + dy) as isize - pad as isize;
            if !(0..IMAGE_SIZE as isize).contains(&sy) {
                continue;
            }
            for x in 0..IMAGE_SIZE {
                let sx = (x + dx) as isize - pad as isize;
                if (0..IMAGE_SIZE as isize).contains(&sx) {
                    out[(c * IMAGE_SIZE + y) * IMAGE_SIZE + x] =
                        img[(c * IMAGE_SIZE + sy as usize) * IMAGE_SIZE + sx as usize];
                }
            }
        }
    }
    out
}

/// Crop and flip every image of a flat batch. Offsets are uniform over all
/// `(2 pad + 1)^2` positions. Normalization is left to the caller.
pub fn augment(images: &[f64], cfg: &AugmentConfig, rng: &mut Rng) -> Result<Vec<f64>> {
    cfg.validate()?;
    let span = 2 * cfg.pad + 1;
    let mut out = Vec::with_capacity(images.len());
    for img in images.chunks(IMAGE_LEN) {
        let (dy, dx) = (rng.below(span), rng.below(span));
        let mut v = crop_padded(img, cfg.pad, dy, dx);
        if rng.bernoulli(cfg.hflip_prob) {
            v = hflip(&v);
        }
        out.extend(v);
    }
    Ok(out)
}
