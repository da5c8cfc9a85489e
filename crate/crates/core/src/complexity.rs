//! Device-side operation counts. One FLOP is one multiply-accumulate.
//!
//! Convolutions and linear layers count their MACs (bias folded in);
//! batch norm, GDN and activations count 2 per output element; pooling is free.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::models::{BackboneConfig, SplitModel, INPUT_CHANNELS, INPUT_HW};
use crate::report::ResultRow;

/// Cost per element of normalization and activation layers.
pub const ELEMENTWISE_OPS: u64 = 2;

pub fn conv_macs(in_ch: usize, out_ch: usize, kh: usize, kw: usize, out_h: usize, out_w: usize) -> u64 {
    (in_ch * out_ch * kh * kw * out_h * out_w) as u64
}

pub fn linear_macs(din: usize, dout: usize) -> u64 {
    (din * dout) as u64
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FlopReport {
    pub layers: Vec<(String, u64)>,
    pub device_total: u64,
    /// Prefix cost (no encoder) through each pool reached.
    pub cumulative_by_split: BTreeMap<usize, u64>,
}

impl FlopReport {
    fn push(&mut self, name: String, macs: u64) {
        self.device_total += macs;
        self.layers.push((name, macs));
    }
}

/// Cost of conv/BN/ReLU stacks with the given per-block widths on a 32×32
/// input, followed by an optional encoder with `c_enc` output channels.
pub fn stack_flops(stage_widths: &[Vec<usize>], c_enc: Option<usize>) -> FlopReport {
    let mut r = FlopReport::default();
    let mut in_ch = INPUT_CHANNELS;
    let mut hw = INPUT_HW;
    let mut idx = 0;
    for (b, widths) in stage_widths.iter().enumerate() {
        for &w in widths {
            let elems = (w * hw * hw) as u64;
            r.push(format!("conv{}_{idx}", b + 1), conv_macs(in_ch, w, 3, 3, hw, hw));
            r.push(format!("bn{}_{idx}", b + 1), ELEMENTWISE_OPS * elems);
            r.push(format!("relu{}_{idx}", b + 1), ELEMENTWISE_OPS * elems);
            in_ch = w;
            idx += 1;
        }
        r.push(format!("pool{}", b + 1), 0);
        hw /= 2;
        r.cumulative_by_split.insert(b + 1, r.device_total);
    }
    if let Some(k) = c_enc {
        let out = if hw == 1 { 1 } else { hw / 2 };
        let elems = (k * out * out) as u64;
        r.push("encoder.conv".into(), conv_macs(in_ch, k, 3, 3, out, out));
        r.push("encoder.gdn".into(), ELEMENTWISE_OPS * elems);
        r.push("encoder.prelu".into(), ELEMENTWISE_OPS * elems);
    }
    r
}

/// Conv MACs alone for the whole unpruned backbone.
pub fn backbone_conv_macs(cfg: &BackboneConfig) -> u64 {
    stack_flops(&cfg.stage_widths(), None)
        .layers
        .iter()
        .filter(|(n, _)| n.starts_with("conv"))
        .map(|(_, m)| m)
        .sum()
}

/// Pruned prefix plus encoder of an assembled model.
pub fn device_flops(model: &SplitModel) -> FlopReport {
    let widths: Vec<Vec<usize>> = model
        .device
        .stages
        .iter()
        .map(|s| s.units.iter().map(|u| u.conv.out_channels()).collect())
        .collect();
    stack_flops(&widths, model.codec.as_ref().map(|c| c.c_enc))
}

/// Rows within `accuracy_floor` of their baseline that no other such row
/// beats on both flops and bandwidth, sorted by flops.
pub fn flops_vs_bandwidth_frontier(rows: &[ResultRow], accuracy_floor: f64) -> Vec<ResultRow> {
    let ok: Vec<&ResultRow> = rows
        .iter()
        .filter(|r| r.accuracy >= r.baseline_accuracy - accuracy_floor)
        .collect();
    let mut front: Vec<ResultRow> = Vec::new();
    for (i, r) in ok.iter().enumerate() {
        let dominated = ok.iter().enumerate().any(|(j, o)| {
            let le = o.device_flops <= r.device_flops && o.bandwidth <= r.bandwidth;
            let lt = o.device_flops < r.device_flops || o.bandwidth < r.bandwidth;
            // equal points: keep the first
            le && (lt || j < i)
        });
        if !dominated {
            front.push((*r).clone());
        }
    }
    if front.is_empty() {
        log::warn!("no rows within {accuracy_floor} of baseline; frontier is empty");
    }
    front.sort_by(|a, b| a.device_flops.cmp(&b.device_flops).then(a.bandwidth.cmp(&b.bandwidth)));
    front
}
