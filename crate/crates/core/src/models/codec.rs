//! Shallow encoder / heavier decoder pair that carries the split-point
//! feature map over the channel.
//!
//! Encoder: conv 3×3 stride 2 → GDN → PReLU.
//! Decoder: conv 3×3 → IGDN → PReLU → nearest 2× upsample → conv 3×3 → BN → PReLU.
//!
//! A 1×1 feature map (after the fifth pool) cannot be downsampled, so there
//! the encoder conv uses stride 1 and the decoder skips the upsample.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{gdn, igdn, prelu, upsample_nearest2x, BatchNorm2d, Conv2d, GdnParams, Mode, PreluParams};
use crate::tensor::{Rng, Tensor};

pub const DEFAULT_MAX_C_ENC: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecConfig {
    /// Encoder output channels.
    pub c_enc: usize,
    #[serde(default = "default_max_c_enc")]
    pub max_c_enc: usize,
}

fn default_max_c_enc() -> usize {
    DEFAULT_MAX_C_ENC
}

impl CodecConfig {
    pub fn new(c_enc: usize) -> Self {
        CodecConfig {
            c_enc,
            max_c_enc: DEFAULT_MAX_C_ENC,
        }
    }
}

/// Channel symbols per image for a split feature of shape (C, H, W):
/// `(H/2)·(W/2)·c_enc`, or `c_enc` for a 1×1 map.
pub fn bandwidth(feature: (usize, usize, usize), c_enc: usize) -> Result<usize> {
    let (_, h, w) = feature;
    let (lh, lw) = latent_hw(h, w)?;
    Ok(lh * lw * c_enc)
}

fn latent_hw(h: usize, w: usize) -> Result<(usize, usize)> {
    if h == 1 && w == 1 {
        Ok((1, 1))
    } else if h.is_multiple_of(2) && w.is_multiple_of(2) && h > 0 && w > 0 {
        Ok((h / 2, w / 2))
    } else {
        Err(Error::dim("codec", format!("split feature {h}x{w} is neither even nor 1x1")))
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub conv: Conv2d,
    pub gdn: GdnParams,
    pub prelu: PreluParams,
}

impl Encoder {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        prelu(&gdn(&self.conv.forward(x)?, &self.gdn)?, &self.prelu)
    }

    pub fn deep_clone(&self) -> Self {
        Encoder {
            conv: self.conv.deep_clone(),
            gdn: self.gdn.deep_clone(),
            prelu: self.prelu.deep_clone(),
        }
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        vec![
            ("encoder.conv.weight".into(), self.conv.weight.clone()),
            ("encoder.conv.bias".into(), self.conv.bias.clone()),
            ("encoder.gdn.beta_raw".into(), self.gdn.beta_raw.clone()),
            ("encoder.gdn.gamma_raw".into(), self.gdn.gamma_raw.clone()),
            ("encoder.prelu.slope".into(), self.prelu.slope.clone()),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub conv1: Conv2d,
    pub igdn: GdnParams,
    pub prelu1: PreluParams,
    pub upsample: bool,
    pub conv2: Conv2d,
    pub bn: BatchNorm2d,
    pub prelu2: PreluParams,
}

impl Decoder {
    pub fn forward(&self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = prelu(&igdn(&self.conv1.forward(z)?, &self.igdn)?, &self.prelu1)?;
        if self.upsample {
            h = upsample_nearest2x(&h)?;
        }
        prelu(&self.bn.forward(&self.conv2.forward(&h)?, mode)?, &self.prelu2)
    }

    pub fn deep_clone(&self) -> Self {
        Decoder {
            conv1: self.conv1.deep_clone(),
            igdn: self.igdn.deep_clone(),
            prelu1: self.prelu1.deep_clone(),
            upsample: self.upsample,
            conv2: self.conv2.deep_clone(),
            bn: self.bn.deep_clone(),
            prelu2: self.prelu2.deep_clone(),
        }
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        vec![
            ("decoder.conv1.weight".into(), self.conv1.weight.clone()),
            ("decoder.conv1.bias".into(), self.conv1.bias.clone()),
            ("decoder.igdn.beta_raw".into(), self.igdn.beta_raw.clone()),
            ("decoder.igdn.gamma_raw".into(), self.igdn.gamma_raw.clone()),
            ("decoder.prelu1.slope".into(), self.prelu1.slope.clone()),
            ("decoder.conv2.weight".into(), self.conv2.weight.clone()),
            ("decoder.conv2.bias".into(), self.conv2.bias.clone()),
            ("decoder.bn.gamma".into(), self.bn.gamma.clone()),
            ("decoder.bn.beta".into(), self.bn.beta.clone()),
            ("decoder.prelu2.slope".into(), self.prelu2.slope.clone()),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct Codec {
    pub encoder: Encoder,
    pub decoder: Decoder,
    /// (C, H, W) of the feature map being carried.
    pub feature_shape: (usize, usize, usize),
    pub c_enc: usize,
}

pub fn build_codec(feature_shape: (usize, usize, usize), cc: &CodecConfig, rng: &mut Rng) -> Result<Codec> {
    let (c, h, w) = feature_shape;
    if cc.c_enc == 0 || cc.c_enc > cc.max_c_enc {
        return Err(Error::Config(format!("c_enc {} not in [1, {}]", cc.c_enc, cc.max_c_enc)));
    }
    let (lh, _) = latent_hw(h, w)?;
    let downsample = lh != h;
    let stride = if downsample { 2 } else { 1 };
    let k = cc.c_enc;
    Ok(Codec {
        encoder: Encoder {
            conv: Conv2d::new(c, k, 3, stride, 1, rng)?,
            gdn: GdnParams::new(k),
            prelu: PreluParams::new(k),
        },
        decoder: Decoder {
            conv1: Conv2d::new(k, k, 3, 1, 1, rng)?,
            igdn: GdnParams::new(k),
            prelu1: PreluParams::new(k),
            upsample: downsample,
            conv2: Conv2d::new(k, c, 3, 1, 1, rng)?,
            bn: BatchNorm2d::new(c),
            prelu2: PreluParams::new(c),
        },
        feature_shape,
        c_enc: k,
    })
}

impl Codec {
    /// (c_enc, H', W') of the encoder output.
    pub fn latent_shape(&self) -> (usize, usize, usize) {
        let (_, h, w) = self.feature_shape;
        let (lh, lw) = latent_hw(h, w).expect("validated at build");
        (self.c_enc, lh, lw)
    }

    pub fn bandwidth(&self) -> usize {
        let (k, h, w) = self.latent_shape();
        k * h * w
    }

    pub fn deep_clone(&self) -> Self {
        Codec {
            encoder: self.encoder.deep_clone(),
            decoder: self.decoder.deep_clone(),
            feature_shape: self.feature_shape,
            c_enc: self.c_enc,
        }
    }

    /// Decoder batch-norm running statistics.
    pub fn named_buffers(&self) -> Vec<(String, Tensor)> {
        vec![
            ("decoder.bn.running_mean".into(), self.decoder.bn.running_mean.clone()),
            ("decoder.bn.running_var".into(), self.decoder.bn.running_var.clone()),
        ]
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut v = self.encoder.named_params();
        v.extend(self.decoder.named_params());
        v
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }
}
