use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{flatten, maxpool2d, scale_channels, BatchNorm2d, Conv2d, Linear, Mode};
use crate::tensor::{Rng, Tensor};

pub const INPUT_HW: usize = 32;
pub const INPUT_CHANNELS: usize = 3;
const MIN_WIDTH: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// (filters, convs) per block, before width scaling.
    pub block_widths: Vec<(usize, usize)>,
    /// Output size of each fully connected layer; the last equals `num_classes`.
    pub classifier_dims: Vec<usize>,
    pub num_classes: usize,
    /// Uniform width multiplier in (0, 1]; scaled widths never drop below 8.
    pub width_scale: f64,
}

impl BackboneConfig {
    /// VGG16 with batch norm: 13 convs in 5 blocks, 512-512-K head.
    pub fn vgg16(num_classes: usize) -> Self {
        BackboneConfig {
            block_widths: vec![(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)],
            classifier_dims: vec![512, 512, num_classes],
            num_classes,
            width_scale: 1.0,
        }
    }

    pub fn with_width_scale(mut self, width_scale: f64) -> Self {
        self.width_scale = width_scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_widths.len() != 5 {
            return Err(Error::Config(format!("expected 5 blocks, got {}", self.block_widths.len())));
        }
        if self.block_widths.iter().any(|&(f, n)| f == 0 || n == 0) {
            return Err(Error::Config("block widths and conv counts must be positive".into()));
        }
        if !(self.width_scale > 0.0 && self.width_scale <= 1.0) {
            return Err(Error::Config(format!("width_scale {} not in (0, 1]", self.width_scale)));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.classifier_dims.last() != Some(&self.num_classes) || self.classifier_dims.contains(&0) {
            return Err(Error::Config(format!(
                "classifier dims {:?} must be positive and end in num_classes {}",
                self.classifier_dims, self.num_classes
            )));
        }
        Ok(())
    }

    pub fn scale(&self, width: usize) -> usize {
        ((width as f64 * self.width_scale).round() as usize).max(MIN_WIDTH)
    }

    /// Conv widths per block after scaling.
    pub fn stage_widths(&self) -> Vec<Vec<usize>> {
        self.block_widths
            .iter()
            .map(|&(f, n)| vec![self.scale(f); n])
            .collect()
    }

    /// Fully connected output sizes after scaling the hidden layers.
    pub fn head_dims(&self) -> Vec<usize> {
        let last = self.classifier_dims.len() - 1;
        self.classifier_dims
            .iter()
            .enumerate()
            .map(|(i, &d)| if i == last { d } else { self.scale(d) })
            .collect()
    }

    /// (C, H, W) after pool `k` of the unpruned network.
    pub fn feature_shape(&self, pool_index: usize) -> (usize, usize, usize) {
        let c = self.scale(self.block_widths[pool_index - 1].0);
        let hw = INPUT_HW >> pool_index;
        (c, hw, hw)
    }
}

/// conv → batch norm → ReLU.
#[derive(Clone, Debug)]
pub struct ConvUnit {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvUnit {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut Rng) -> Result<Self> {
        Ok(ConvUnit {
            conv: Conv2d::new(in_ch, out_ch, 3, 1, 1, rng)?,
            bn: BatchNorm2d::new(out_ch),
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.bn.forward(&self.conv.forward(x)?, mode)?.relu())
    }

    pub fn deep_clone(&self) -> Self {
        ConvUnit {
            conv: self.conv.deep_clone(),
            bn: self.bn.deep_clone(),
        }
    }
}

/// Hook into device-side conv outputs: records post-activation tensors and
/// optionally multiplies them by per-filter gates.
#[derive(Default)]
pub struct Probe {
    pub capture: bool,
    pub activations: Vec<Tensor>,
    /// Indexed by global device conv position.
    pub gates: Vec<Option<Tensor>>,
}

impl Probe {
    pub fn capturing() -> Self {
        Probe {
            capture: true,
            ..Probe::default()
        }
    }

    pub fn with_gate(layer: usize, gate: Tensor) -> Self {
        let mut gates = vec![None; layer + 1];
        gates[layer] = Some(gate);
        Probe {
            capture: false,
            activations: Vec::new(),
            gates,
        }
    }

    fn visit(&mut self, layer: usize, act: Tensor) -> Result<Tensor> {
        let act = match self.gates.get(layer).and_then(Option::as_ref) {
            Some(g) => scale_channels(&act, g)?,
            None => act,
        };
        if self.capture {
            self.activations.push(act.clone());
        }
        Ok(act)
    }
}

/// A block of conv units followed by 2×2 max pooling.
#[derive(Clone, Debug)]
pub struct Stage {
    pub units: Vec<ConvUnit>,
}

impl Stage {
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = x.clone();
        for u in &self.units {
            h = u.forward(&h, mode)?;
        }
        maxpool2d(&h)
    }

    pub fn out_channels(&self) -> usize {
        self.units.last().map(|u| u.conv.out_channels()).unwrap_or(0)
    }

    pub fn deep_clone(&self) -> Self {
        Stage {
            units: self.units.iter().map(ConvUnit::deep_clone).collect(),
        }
    }
}

/// Runs stages, routing every conv unit's activation through `probe`.
pub(crate) fn run_stages(
    stages: &[Stage],
    x: &Tensor,
    mode: Mode,
    mut probe: Option<&mut Probe>,
) -> Result<Tensor> {
    let mut h = x.clone();
    let mut idx = 0;
    for stage in stages {
        for u in &stage.units {
            h = u.forward(&h, mode)?;
            if let Some(p) = probe.as_deref_mut() {
                h = p.visit(idx, h)?;
            }
            idx += 1;
        }
        h = maxpool2d(&h)?;
    }
    Ok(h)
}

/// Flatten → Linear/ReLU → ... → Linear.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub layers: Vec<Linear>,
}

impl Classifier {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = flatten(x)?;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h)?;
            if i != last {
                h = h.relu();
            }
        }
        Ok(h)
    }

    pub fn deep_clone(&self) -> Self {
        Classifier {
            layers: self.layers.iter().map(Linear::deep_clone).collect(),
        }
    }
}

/// The unsplit classifier.
#[derive(Clone, Debug)]
pub struct Vgg {
    pub cfg: BackboneConfig,
    pub stages: Vec<Stage>,
    pub classifier: Classifier,
}

/// VGG-BN stacks with a pooled 32×32 input and a fully connected head.
pub fn build_backbone(cfg: &BackboneConfig, rng: &mut Rng) -> Result<Vgg> {
    cfg.validate()?;
    let mut in_ch = INPUT_CHANNELS;
    let mut stages = Vec::with_capacity(5);
    for widths in cfg.stage_widths() {
        let mut units = Vec::with_capacity(widths.len());
        for w in widths {
            units.push(ConvUnit::new(in_ch, w, rng)?);
            in_ch = w;
        }
        stages.push(Stage { units });
    }
    // 32 / 2^5 = 1, so the head sees the last block's channels.
    let mut din = in_ch * (INPUT_HW >> 5) * (INPUT_HW >> 5);
    let mut layers = Vec::new();
    for dout in cfg.head_dims() {
        layers.push(Linear::new(din, dout, rng)?);
        din = dout;
    }
    Ok(Vgg {
        cfg: cfg.clone(),
        stages,
        classifier: Classifier { layers },
    })
}

impl Vgg {
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = run_stages(&self.stages, x, mode, None)?;
        self.classifier.forward(&h)
    }

    /// Output of pool `k` (1-based).
    pub fn features(&self, x: &Tensor, pool_index: usize, mode: Mode) -> Result<Tensor> {
        run_stages(&self.stages[..pool_index], x, mode, None)
    }
}
