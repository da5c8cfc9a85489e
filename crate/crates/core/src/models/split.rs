use serde::{Deserialize, Serialize};

use super::backbone::{build_backbone, run_stages, BackboneConfig, Classifier, ConvUnit, Probe, Stage, Vgg, INPUT_HW};
use super::codec::{build_codec, Codec, CodecConfig};
use crate::channel::{power_normalize, AwgnChannel, Channel, POWER};
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::{Rng, Tensor};

/// Cut immediately after the `k`-th pooling layer, `k` in 1..=5.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct SplitPoint(usize);

impl SplitPoint {
    pub fn new(pool_index: usize) -> Result<Self> {
        if (1..=5).contains(&pool_index) {
            Ok(SplitPoint(pool_index))
        } else {
            Err(Error::Config(format!("split point {pool_index} not in 1..=5")))
        }
    }

    pub fn pool_index(self) -> usize {
        self.0
    }
}

impl TryFrom<usize> for SplitPoint {
    type Error = Error;
    fn try_from(v: usize) -> Result<Self> {
        SplitPoint::new(v)
    }
}

impl From<SplitPoint> for usize {
    fn from(s: SplitPoint) -> usize {
        s.0
    }
}

/// Blocks 1..=k, executed on the device.
#[derive(Clone, Debug)]
pub struct DevicePrefix {
    pub stages: Vec<Stage>,
}

impl DevicePrefix {
    pub fn units(&self) -> impl Iterator<Item = &ConvUnit> {
        self.stages.iter().flat_map(|s| s.units.iter())
    }

    pub fn units_mut(&mut self) -> impl Iterator<Item = &mut ConvUnit> {
        self.stages.iter_mut().flat_map(|s| s.units.iter_mut())
    }

    pub fn conv_count(&self) -> usize {
        self.units().count()
    }

    pub fn out_channels(&self) -> usize {
        self.stages.last().map(Stage::out_channels).unwrap_or(0)
    }
}

/// Remaining blocks and the classifier head, executed on the server.
#[derive(Clone, Debug)]
pub struct ServerSuffix {
    pub stages: Vec<Stage>,
    pub classifier: Classifier,
}

/// Splits the backbone without copying: both halves share the backbone's tensors.
pub fn split_at(vgg: &Vgg, sp: SplitPoint) -> (DevicePrefix, ServerSuffix) {
    let k = sp.pool_index();
    (
        DevicePrefix {
            stages: vgg.stages[..k].to_vec(),
        },
        ServerSuffix {
            stages: vgg.stages[k..].to_vec(),
            classifier: vgg.classifier.clone(),
        },
    )
}

/// How far the training pipeline has progressed for a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initialized,
    Pretrained,
    Pruned,
    CodecTrained,
    EndToEnd,
}

/// Device prefix → encoder → channel → decoder → server suffix.
#[derive(Debug)]
pub struct SplitModel {
    pub backbone: BackboneConfig,
    pub split: SplitPoint,
    pub device: DevicePrefix,
    pub server: ServerSuffix,
    pub codec: Option<Codec>,
    pub channel: AwgnChannel,
    pub phase: Phase,
    /// Original indices of the surviving filters of every device conv.
    pub kept_filters: Vec<Vec<usize>>,
}

impl SplitModel {
    pub fn new(cfg: &BackboneConfig, split: SplitPoint, rng: &mut Rng) -> Result<Self> {
        Ok(SplitModel::from_backbone(&build_backbone(cfg, rng)?, split))
    }

    /// Shares the backbone's tensors.
    pub fn from_backbone(vgg: &Vgg, split: SplitPoint) -> Self {
        let (device, server) = split_at(vgg, split);
        let kept_filters = device.units().map(|u| (0..u.conv.out_channels()).collect()).collect();
        SplitModel {
            backbone: vgg.cfg.clone(),
            split,
            device,
            server,
            codec: None,
            channel: AwgnChannel::noiseless(),
            phase: Phase::Initialized,
            kept_filters,
        }
    }

    /// Unpruned widths of the device convs.
    pub fn original_device_widths(&self) -> Vec<usize> {
        self.backbone.stage_widths()[..self.split.pool_index()].concat()
    }

    pub fn device_widths(&self) -> Vec<usize> {
        self.device.units().map(|u| u.conv.out_channels()).collect()
    }

    /// Removed / original device filters.
    pub fn pruning_ratio(&self) -> f64 {
        let orig: usize = self.original_device_widths().iter().sum();
        let now: usize = self.device_widths().iter().sum();
        (orig - now) as f64 / orig as f64
    }

    /// (C, H, W) leaving the device prefix.
    pub fn feature_shape(&self) -> (usize, usize, usize) {
        let hw = INPUT_HW >> self.split.pool_index();
        (self.device.out_channels(), hw, hw)
    }

    pub fn bandwidth(&self) -> Option<usize> {
        self.codec.as_ref().map(Codec::bandwidth)
    }

    pub fn attach_codec(&mut self, cc: &CodecConfig, rng: &mut Rng) -> Result<()> {
        self.codec = Some(build_codec(self.feature_shape(), cc, rng)?);
        Ok(())
    }

    pub fn forward_prefix(&self, x: &Tensor, mode: Mode, probe: Option<&mut Probe>) -> Result<Tensor> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 || s[2] != INPUT_HW || s[3] != INPUT_HW {
            return Err(Error::dim("forward_prefix", format!("expected (N, 3, 32, 32), got {s:?}")));
        }
        run_stages(&self.device.stages, x, mode, probe)
    }

    pub fn forward_suffix(&self, features: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = run_stages(&self.server.stages, features, mode, None)?;
        self.server.classifier.forward(&h)
    }

    /// Prefix straight into suffix, no codec or channel.
    pub fn forward_plain(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.forward_suffix(&self.forward_prefix(x, mode, None)?, mode)
    }

    fn codec(&self) -> Result<&Codec> {
        self.codec.as_ref().ok_or_else(|| Error::State("model has no codec attached".into()))
    }

    /// Images → power-normalized channel symbols (N, B).
    pub fn forward_device(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.forward_device_probed(x, mode, None)
    }

    fn forward_device_probed(&self, x: &Tensor, mode: Mode, probe: Option<&mut Probe>) -> Result<Tensor> {
        let codec = self.codec()?;
        let f = self.forward_prefix(x, mode, probe)?;
        let z = codec.encoder.forward(&f)?;
        let n = z.shape()[0];
        let out = power_normalize(&z.reshape(&[n, codec.bandwidth()])?, POWER)?;
        if !out.zero_rows.is_empty() {
            log::debug!("{} all-zero symbol rows sent unnormalized", out.zero_rows.len());
        }
        Ok(out.symbols)
    }

    /// Received symbols (N, B) → logits.
    pub fn forward_server(&self, y: &Tensor, mode: Mode) -> Result<Tensor> {
        let codec = self.codec()?;
        let (k, h, w) = codec.latent_shape();
        let s = y.shape();
        if s.len() != 2 || s[1] != k * h * w {
            return Err(Error::dim("forward_server", format!("expected (N, {}), got {s:?}", k * h * w)));
        }
        let z = y.reshape(&[s[0], k, h, w])?;
        let f = codec.decoder.forward(&z, mode)?;
        self.forward_suffix(&f, mode)
    }

    /// Device → the model's own channel → server.
    pub fn end_to_end(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.end_to_end_with(x, mode, &self.channel, None)
    }

    pub fn end_to_end_with(
        &self,
        x: &Tensor,
        mode: Mode,
        channel: &dyn Channel,
        probe: Option<&mut Probe>,
    ) -> Result<Tensor> {
        let sym = self.forward_device_probed(x, mode, probe)?;
        self.forward_server(&channel.transmit(&sym)?, mode)
    }

    /// End to end if a codec is attached, plain otherwise.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.forward_probed(x, mode, None)
    }

    pub fn forward_probed(&self, x: &Tensor, mode: Mode, probe: Option<&mut Probe>) -> Result<Tensor> {
        if self.codec.is_some() {
            self.end_to_end_with(x, mode, &self.channel, probe)
        } else {
            let f = self.forward_prefix(x, mode, probe)?;
            self.forward_suffix(&f, mode)
        }
    }

    fn unit_entries(prefix: &str, units: &[&ConvUnit], params: bool) -> Vec<(String, Tensor)> {
        let mut v = Vec::new();
        for (i, u) in units.iter().enumerate() {
            if params {
                v.push((format!("{prefix}.{i}.conv.weight"), u.conv.weight.clone()));
                v.push((format!("{prefix}.{i}.conv.bias"), u.conv.bias.clone()));
                v.push((format!("{prefix}.{i}.bn.gamma"), u.bn.gamma.clone()));
                v.push((format!("{prefix}.{i}.bn.beta"), u.bn.beta.clone()));
            } else {
                v.push((format!("{prefix}.{i}.bn.running_mean"), u.bn.running_mean.clone()));
                v.push((format!("{prefix}.{i}.bn.running_var"), u.bn.running_var.clone()));
            }
        }
        v
    }

    fn server_units(&self) -> Vec<&ConvUnit> {
        self.server.stages.iter().flat_map(|s| s.units.iter()).collect()
    }

    pub fn device_named_params(&self) -> Vec<(String, Tensor)> {
        Self::unit_entries("device", &self.device.units().collect::<Vec<_>>(), true)
    }

    pub fn server_named_params(&self) -> Vec<(String, Tensor)> {
        let mut v = Self::unit_entries("server", &self.server_units(), true);
        for (j, l) in self.server.classifier.layers.iter().enumerate() {
            v.push((format!("classifier.{j}.weight"), l.weight.clone()));
            v.push((format!("classifier.{j}.bias"), l.bias.clone()));
        }
        v
    }

    /// Every learnable tensor with a stable name.
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut v = self.device_named_params();
        if let Some(c) = &self.codec {
            v.extend(c.named_params());
        }
        v.extend(self.server_named_params());
        v
    }

    /// Batch-norm running statistics.
    pub fn named_buffers(&self) -> Vec<(String, Tensor)> {
        let mut v = Self::unit_entries("device", &self.device.units().collect::<Vec<_>>(), false);
        if let Some(c) = &self.codec {
            v.extend(c.named_buffers());
        }
        v.extend(Self::unit_entries("server", &self.server_units(), false));
        v
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(Tensor::numel).sum()
    }

    /// Moves the cut of an unpruned, codec-free model; tensors are shared.
    pub fn resplit(&self, split: SplitPoint) -> Result<SplitModel> {
        if self.codec.is_some() || self.device_widths() != self.original_device_widths() {
            return Err(Error::State("only an unpruned model without codec can be re-split".into()));
        }
        let vgg = Vgg {
            cfg: self.backbone.clone(),
            stages: self.device.stages.iter().chain(&self.server.stages).cloned().collect(),
            classifier: self.server.classifier.clone(),
        };
        let mut m = SplitModel::from_backbone(&vgg, split);
        m.phase = self.phase;
        Ok(m)
    }

    /// Independent copy (weights, statistics, channel state).
    pub fn deep_clone(&self) -> Self {
        let channel = AwgnChannel::new(self.channel.snr_db(), 0);
        channel.restore_rng(self.channel.rng_state());
        SplitModel {
            backbone: self.backbone.clone(),
            split: self.split,
            device: DevicePrefix {
                stages: self.device.stages.iter().map(Stage::deep_clone).collect(),
            },
            server: ServerSuffix {
                stages: self.server.stages.iter().map(Stage::deep_clone).collect(),
                classifier: self.server.classifier.deep_clone(),
            },
            codec: self.codec.as_ref().map(Codec::deep_clone),
            channel,
            phase: self.phase,
            kept_filters: self.kept_filters.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::FrozenNoise;
    use crate::tensor::{init, InitScheme};

    fn toy(split: usize) -> SplitModel {
        let cfg = BackboneConfig::vgg16(4).with_width_scale(1.0 / 16.0);
        SplitModel::new(&cfg, SplitPoint::new(split).unwrap(), &mut Rng::new(3)).unwrap()
    }

    fn images(n: usize, seed: u64) -> Tensor {
        init(&[n, 3, 32, 32], InitScheme::Normal { mean: 0.0, std: 1.0 }, &mut Rng::new(seed))
            .unwrap()
            .detach()
    }

    #[test]
    fn split_point_range() {
        assert!(SplitPoint::new(0).is_err());
        assert!(SplitPoint::new(6).is_err());
        assert_eq!(SplitPoint::new(5).unwrap().pool_index(), 5);
    }

    #[test]
    fn split_at_five_leaves_only_head() {
        let m = toy(5);
        assert!(m.server.stages.is_empty());
        assert_eq!(m.device.conv_count(), 13);
    }

    #[test]
    fn split_matches_unsplit_in_eval() {
        let cfg = BackboneConfig::vgg16(4).with_width_scale(1.0 / 16.0);
        let vgg = build_backbone(&cfg, &mut Rng::new(5)).unwrap();
        let x = images(2, 1);
        let full = vgg.forward(&x, Mode::Eval).unwrap().to_vec();
        for k in 1..=5 {
            let m = SplitModel::from_backbone(&vgg, SplitPoint::new(k).unwrap());
            assert_eq!(m.forward_plain(&x, Mode::Eval).unwrap().to_vec(), full);
        }
    }

    #[test]
    fn resplit_preserves_outputs() {
        let m = toy(5);
        let x = images(2, 4);
        let want = m.forward_plain(&x, Mode::Eval).unwrap().to_vec();
        for k in 1..=4 {
            let r = m.resplit(SplitPoint::new(k).unwrap()).unwrap();
            assert_eq!(r.device.stages.len(), k);
            assert_eq!(r.forward_plain(&x, Mode::Eval).unwrap().to_vec(), want);
        }
        let mut c = toy(2);
        c.attach_codec(&CodecConfig::new(2), &mut Rng::new(0)).unwrap();
        assert!(matches!(c.resplit(SplitPoint::new(3).unwrap()), Err(Error::State(_))));
    }

    #[test]
    fn device_symbols_have_unit_power() {
        let mut m = toy(2);
        m.attach_codec(&CodecConfig::new(4), &mut Rng::new(1)).unwrap();
        let s = m.forward_device(&images(3, 2), Mode::Train).unwrap();
        assert_eq!(s.shape(), &[3, 4 * 4 * 4]);
        for row in s.to_vec().chunks(64) {
            let p: f64 = row.iter().map(|v| v * v).sum::<f64>() / 64.0;
            assert!((p - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn noiseless_end_to_end_is_server_of_device() {
        let mut m = toy(3);
        m.attach_codec(&CodecConfig::new(5), &mut Rng::new(1)).unwrap();
        let x = images(2, 4);
        let a = m.end_to_end(&x, Mode::BatchStats).unwrap().to_vec();
        let b = m
            .forward_server(&m.forward_device(&x, Mode::BatchStats).unwrap(), Mode::BatchStats)
            .unwrap()
            .to_vec();
        assert_eq!(a, b);
    }

    #[test]
    fn server_rejects_wrong_bandwidth() {
        let mut m = toy(5);
        m.attach_codec(&CodecConfig::new(3), &mut Rng::new(1)).unwrap();
        assert!(m.forward_server(&Tensor::zeros(&[1, 4]), Mode::Eval).is_err());
        let logits = m.forward_server(&Tensor::zeros(&[2, 3]), Mode::BatchStats).unwrap();
        assert_eq!(logits.shape(), &[2, 4]);
    }

    #[test]
    fn frozen_noise_is_deterministic() {
        let mut m = toy(4);
        m.attach_codec(&CodecConfig::new(2), &mut Rng::new(1)).unwrap();
        let b = m.bandwidth().unwrap();
        let noise = FrozenNoise(Tensor::full(&[2, b], 0.1));
        let x = images(2, 9);
        let a = m.end_to_end_with(&x, Mode::BatchStats, &noise, None).unwrap().to_vec();
        let c = m.end_to_end_with(&x, Mode::BatchStats, &noise, None).unwrap().to_vec();
        assert_eq!(a, c);
    }

    #[test]
    fn deep_clone_is_independent() {
        let m = toy(2);
        let c = m.deep_clone();
        let x = images(1, 3);
        c.device.stages[0].units[0].conv.weight.update_data(|w| w.iter_mut().for_each(|v| *v = 0.0));
        assert_ne!(
            m.forward_plain(&x, Mode::Eval).unwrap().to_vec(),
            c.forward_plain(&x, Mode::Eval).unwrap().to_vec()
        );
        assert_eq!(m.named_params().len(), c.named_params().len());
    }
}
