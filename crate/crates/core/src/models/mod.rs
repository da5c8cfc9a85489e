//! VGG-BN backbone, split into device and server halves, with the codec in between.

mod backbone;
mod codec;
mod split;

pub use backbone::{build_backbone, BackboneConfig, Classifier, ConvUnit, Probe, Stage, Vgg, INPUT_CHANNELS, INPUT_HW};
pub use codec::{bandwidth, build_codec, Codec, CodecConfig, Decoder, Encoder, DEFAULT_MAX_C_ENC};
pub use split::{split_at, DevicePrefix, Phase, ServerSuffix, SplitModel, SplitPoint};
