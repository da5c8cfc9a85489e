//! Taylor-criterion filter pruning of the device-side convolutions.
//!
//! The importance of filter `f` is the magnitude of the first-order loss
//! change from removing its activation map `a`:
//! `|mean over (n, h, w) of a · dL/da|`, summed over saliency batches and
//! L2-normalized within each layer.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::models::{Codec, ConvUnit, Probe, SplitModel, Stage};
use crate::nn::{cross_entropy, BatchNorm2d, Conv2d, Linear, Mode, PreluParams};
use crate::tensor::{streams, Rng, Tensor};
use crate::training::{tags, train_classifier_epoch, EpochRecord, PhaseLog, PipelineConfig, SgdState};

/// Largest model `oracle_loss_delta` will run on.
pub const ORACLE_MAX_PARAMS: usize = 5_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSaliency {
    /// `[layer][filter]`, non-negative.
    pub raw: Vec<Vec<f64>>,
    /// `raw` divided by each layer's L2 norm (zeros for an all-zero layer).
    pub normalized: Vec<Vec<f64>>,
}

impl FilterSaliency {
    pub fn from_raw(raw: Vec<Vec<f64>>) -> Self {
        let normalized = raw
            .iter()
            .map(|layer| {
                let norm = layer.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    layer.iter().map(|v| v / norm).collect()
                } else {
                    vec![0.0; layer.len()]
                }
            })
            .collect();
        FilterSaliency { raw, normalized }
    }
}

/// Keep flags for the output filters of every device conv.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneMask {
    pub keep: Vec<Vec<bool>>,
}

impl PruneMask {
    pub fn all_keep(widths: &[usize]) -> Self {
        PruneMask {
            keep: widths.iter().map(|&w| vec![true; w]).collect(),
        }
    }

    /// Keeps the first `round(w · (1 − ratio))` filters of each layer (at least one).
    pub fn uniform(widths: &[usize], ratio: f64) -> Self {
        PruneMask {
            keep: widths
                .iter()
                .map(|&w| {
                    let k = ((w as f64 * (1.0 - ratio)).round() as usize).clamp(1, w);
                    (0..w).map(|i| i < k).collect()
                })
                .collect(),
        }
    }

    pub fn removed(&self) -> usize {
        self.keep.iter().flatten().filter(|k| !**k).count()
    }

    pub fn kept_widths(&self) -> Vec<usize> {
        self.keep.iter().map(|l| l.iter().filter(|k| **k).count()).collect()
    }

    fn kept_indices(layer: &[bool]) -> Vec<usize> {
        layer.iter().enumerate().filter(|(_, k)| **k).map(|(i, _)| i).collect()
    }
}

/// Batches used for saliency: the first `count` batches of a seeded shuffle.
pub fn saliency_batches(n: usize, batch_size: usize, count: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut b = batches(n, batch_size, Some(seed))?;
    b.truncate(count);
    Ok(b)
}

/// Taylor scores for every device conv filter. Each batch runs the full
/// model with batch statistics (running estimates untouched); the scores are
/// read off the gradient of per-filter unit gates, which equals the sum of
/// `a · dL/da` over the filter's activation map.
pub fn taylor_saliency(model: &SplitModel, data: &Dataset, batch_indices: &[Vec<usize>]) -> Result<FilterSaliency> {
    let widths = model.device_widths();
    if widths.is_empty() {
        return Err(Error::Config("no prunable layers before the split".into()));
    }
    if batch_indices.is_empty() {
        return Err(Error::Input("saliency needs at least one batch".into()));
    }
    let mut raw: Vec<Vec<f64>> = widths.iter().map(|&w| vec![0.0; w]).collect();
    for idx in batch_indices {
        let b = data.batch(idx, None)?;
        let gates: Vec<Tensor> = widths
            .iter()
            .map(|&w| Tensor::param(&[w], vec![1.0; w]))
            .collect::<Result<_>>()?;
        let mut probe = Probe {
            capture: true,
            activations: Vec::new(),
            gates: gates.iter().cloned().map(Some).collect(),
        };
        let logits = model.forward_probed(&b.images, Mode::BatchStats, Some(&mut probe))?;
        cross_entropy(&logits, &b.labels)?.backward()?;
        for (l, (g, a)) in gates.iter().zip(&probe.activations).enumerate() {
            let s = a.shape();
            let count = (s[0] * s[2] * s[3]) as f64;
            for (r, v) in raw[l].iter_mut().zip(g.grad()) {
                *r += (v / count).abs();
            }
        }
    }
    Ok(FilterSaliency::from_raw(raw))
}

/// Removes the `n_remove` globally lowest normalized scores, ties going to
/// the earlier `(layer, filter)`, never leaving a layer with fewer than
/// `min_filters` filters.
pub fn select_filters(s: &FilterSaliency, n_remove: usize, min_filters: usize) -> Result<PruneMask> {
    let widths: Vec<usize> = s.normalized.iter().map(Vec::len).collect();
    let floor: usize = widths.iter().map(|&w| w.min(min_filters)).sum();
    let total: usize = widths.iter().sum();
    if n_remove > total - floor {
        return Err(Error::Config(format!(
            "cannot remove {n_remove} of {total} filters with a floor of {min_filters} per layer"
        )));
    }
    let mut order: Vec<(f64, usize, usize)> = s
        .normalized
        .iter()
        .enumerate()
        .flat_map(|(l, layer)| layer.iter().enumerate().map(move |(f, &v)| (v, l, f)))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut mask = PruneMask::all_keep(&widths);
    let mut left = widths.clone();
    let mut removed = 0;
    for (_, l, f) in order {
        if removed == n_remove {
            break;
        }
        if left[l] > min_filters {
            mask.keep[l][f] = false;
            left[l] -= 1;
            removed += 1;
        }
    }
    Ok(mask)
}

fn select_rows(t: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let s = t.shape();
    let inner: usize = s[1..].iter().product();
    let d = t.data();
    let mut out = Vec::with_capacity(rows.len() * inner);
    for &r in rows {
        out.extend_from_slice(&d[r * inner..(r + 1) * inner]);
    }
    let mut shape = s.to_vec();
    shape[0] = rows.len();
    let fresh = Tensor::from_vec(&shape, out)?;
    Ok(if t.requires_grad() { fresh.clone_param() } else { fresh })
}

/// Keeps input channels `cols` of a (out, in, ...) tensor.
fn select_cols(t: &Tensor, cols: &[usize]) -> Result<Tensor> {
    let s = t.shape();
    let (out_n, in_n) = (s[0], s[1]);
    let inner: usize = s[2..].iter().product();
    let d = t.data();
    let mut v = Vec::with_capacity(out_n * cols.len() * inner);
    for o in 0..out_n {
        for &c in cols {
            let off = (o * in_n + c) * inner;
            v.extend_from_slice(&d[off..off + inner]);
        }
    }
    let mut shape = s.to_vec();
    shape[1] = cols.len();
    let fresh = Tensor::from_vec(&shape, v)?;
    Ok(if t.requires_grad() { fresh.clone_param() } else { fresh })
}

fn prune_bn(bn: &BatchNorm2d, keep: &[usize]) -> Result<BatchNorm2d> {
    let mut out = BatchNorm2d::from_parts(
        select_rows(&bn.gamma, keep)?,
        select_rows(&bn.beta, keep)?,
        select_rows(&bn.running_mean, keep)?,
        select_rows(&bn.running_var, keep)?,
    )?;
    out.momentum = bn.momentum;
    out.eps = bn.eps;
    Ok(out)
}

fn conv_with(conv: &Conv2d, rows: Option<&[usize]>, cols: Option<&[usize]>) -> Result<Conv2d> {
    let mut w = conv.weight.deep_copy();
    let mut b = conv.bias.deep_copy();
    if let Some(r) = rows {
        w = select_rows(&w, r)?;
        b = select_rows(&b, r)?;
    }
    if let Some(c) = cols {
        w = select_cols(&w, c)?;
    }
    Conv2d::from_params(w, b, conv.stride, conv.padding)
}

/// Rebuilds the model without the masked filters. Surviving weights and
/// batch-norm statistics are copied verbatim; the layer consuming the last
/// device conv (server conv or first linear, and the codec when attached)
/// loses the matching input channels. Everything is a fresh copy.
pub fn apply_prune(model: &SplitModel, mask: &PruneMask) -> Result<SplitModel> {
    let widths = model.device_widths();
    if mask.keep.len() != widths.len() || mask.keep.iter().zip(&widths).any(|(k, &w)| k.len() != w) {
        return Err(Error::dim(
            "apply_prune",
            format!("mask layers {:?} vs model widths {widths:?}", mask.kept_widths()),
        ));
    }
    if mask.kept_widths().contains(&0) {
        return Err(Error::Input("mask empties a layer".into()));
    }
    let keeps: Vec<Vec<usize>> = mask.keep.iter().map(|l| PruneMask::kept_indices(l)).collect();
    let mut out = model.deep_clone();

    let mut li = 0;
    let mut prev: Option<&[usize]> = None;
    for stage in out.device.stages.iter_mut() {
        for unit in stage.units.iter_mut() {
            let k = &keeps[li];
            *unit = ConvUnit {
                conv: conv_with(&unit.conv, Some(k), prev)?,
                bn: prune_bn(&unit.bn, k)?,
            };
            prev = Some(k);
            li += 1;
        }
    }
    let last = keeps.last().expect("at least one device layer");

    if let Some(codec) = out.codec.as_mut() {
        prune_codec(codec, last)?;
    }
    if let Some(first) = out.server.stages.first_mut().and_then(|s: &mut Stage| s.units.first_mut()) {
        first.conv = conv_with(&first.conv, None, Some(last))?;
    } else {
        let l0 = &out.server.classifier.layers[0];
        let hw = l0.in_features() / widths[widths.len() - 1];
        let cols: Vec<usize> = last.iter().flat_map(|&c| c * hw..(c + 1) * hw).collect();
        let w = select_cols(&l0.weight, &cols)?;
        out.server.classifier.layers[0] = Linear::from_params(w, l0.bias.deep_copy())?;
    }

    out.kept_filters = out
        .kept_filters
        .iter()
        .zip(&keeps)
        .map(|(orig, k)| k.iter().map(|&i| orig[i]).collect())
        .collect();
    Ok(out)
}

fn prune_codec(codec: &mut Codec, keep: &[usize]) -> Result<()> {
    codec.encoder.conv = conv_with(&codec.encoder.conv, None, Some(keep))?;
    let d = &mut codec.decoder;
    d.conv2 = conv_with(&d.conv2, Some(keep), None)?;
    d.bn = prune_bn(&d.bn, keep)?;
    d.prelu2 = PreluParams {
        slope: select_rows(&d.prelu2.slope, keep)?,
    };
    let (_, h, w) = codec.feature_shape;
    codec.feature_shape = (keep.len(), h, w);
    Ok(())
}

/// Mean over batches of the loss change caused by zeroing one filter's
/// activation map (batch statistics, running estimates untouched).
pub fn oracle_loss_delta(
    model: &SplitModel,
    layer: usize,
    filter: usize,
    data: &Dataset,
    batch_indices: &[Vec<usize>],
) -> Result<f64> {
    let pc = model.param_count();
    if pc > ORACLE_MAX_PARAMS {
        return Err(Error::Config(format!(
            "oracle limited to {ORACLE_MAX_PARAMS} parameters, model has {pc}"
        )));
    }
    let widths = model.device_widths();
    if layer >= widths.len() || filter >= widths[layer] {
        return Err(Error::Input(format!("no filter ({layer}, {filter}) in widths {widths:?}")));
    }
    if batch_indices.is_empty() {
        return Err(Error::Input("oracle needs at least one batch".into()));
    }
    let mut gate = vec![1.0; widths[layer]];
    gate[filter] = 0.0;
    let gate = Tensor::from_vec(&[widths[layer]], gate)?;
    let mut total = 0.0;
    crate::tensor::no_grad(|| -> Result<()> {
        for idx in batch_indices {
            let b = data.batch(idx, None)?;
            let base = cross_entropy(&model.forward_probed(&b.images, Mode::BatchStats, None)?, &b.labels)?.item();
            let mut probe = Probe::with_gate(layer, gate.clone());
            let cut =
                cross_entropy(&model.forward_probed(&b.images, Mode::BatchStats, Some(&mut probe))?, &b.labels)?.item();
            total += cut - base;
        }
        Ok(())
    })?;
    Ok(total / batch_indices.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub n_remove: usize,
    pub min_filters: usize,
    pub saliency_batches: usize,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
}

impl PruneConfig {
    /// Filters to remove this iteration. `n_remove` is used as given when
    /// the original device side has at least that many filters; otherwise
    /// `max(1, 10%)` of the original count. Capped at `remaining`.
    pub fn iteration_size(&self, model: &SplitModel, remaining: usize) -> Result<usize> {
        let original: usize = model.original_device_widths().iter().sum();
        let granule = if self.n_remove <= original {
            self.n_remove
        } else {
            (original / 10).max(1)
        };
        let n = granule.min(remaining);
        let capacity: usize = model.device_widths().iter().map(|&w| w - w.min(self.min_filters)).sum();
        if n > capacity {
            return Err(Error::Config(format!(
                "pruning ratio infeasible: {n} more filters requested, {capacity} removable"
            )));
        }
        Ok(n)
    }
}

/// Saliency → selection → rebuild → fine-tuning, replacing `model`.
pub fn prune_iteration(
    model: &mut SplitModel,
    train: &Dataset,
    n_remove: usize,
    pc: &PruneConfig,
    cfg: &PipelineConfig,
    iteration: usize,
) -> Result<PhaseLog> {
    let seed = Rng::derive(cfg.seed, streams::SALIENCY).fork(iteration as u64).next_u64();
    let idx = saliency_batches(train.len(), cfg.batch_size, pc.saliency_batches, seed)?;
    let s = taylor_saliency(model, train, &idx)?;
    let mask = select_filters(&s, n_remove, pc.min_filters)?;
    let mut pruned = apply_prune(model, &mask)?;
    pruned.phase = model.phase;
    *model = pruned;

    let params = model.named_params();
    let mut opt = SgdState::default();
    let sgd = cfg.sgd(pc.finetune_lr);
    let mut log = PhaseLog::default();
    for e in 0..pc.finetune_epochs {
        let epoch = iteration * 1000 + e;
        let (loss, acc) = train_classifier_epoch(model, &params, &mut opt, &sgd, train, cfg, tags::FINETUNE, epoch, &mut log)?;
        log.records.push(EpochRecord {
            phase: "finetune".into(),
            epoch: e,
            lr: pc.finetune_lr,
            loss: Some(loss),
            train_accuracy: Some(acc),
            test_accuracy: None,
            flops: crate::complexity::device_flops(model).device_total,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_remove_keeps_all() {
        let s = FilterSaliency::from_raw(vec![vec![0.3, 0.1], vec![0.5, 0.2, 0.9]]);
        assert_eq!(select_filters(&s, 0, 1).unwrap(), PruneMask::all_keep(&[2, 3]));
    }

    #[test]
    fn ties_go_to_earlier_layer() {
        let s = FilterSaliency::from_raw(vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        let m = select_filters(&s, 1, 1).unwrap();
        assert_eq!(m.keep, vec![vec![false, true], vec![true, true]]);
    }

    #[test]
    fn floor_respected() {
        let s = FilterSaliency::from_raw(vec![vec![0.0, 0.0, 0.0], vec![1.0, 2.0]]);
        let m = select_filters(&s, 3, 1).unwrap();
        assert_eq!(m.kept_widths(), vec![1, 1]);
        assert!(select_filters(&s, 4, 1).is_err());
    }

    #[test]
    fn uniform_mask_widths() {
        let m = PruneMask::uniform(&[64, 64, 128, 128], 0.5);
        assert_eq!(m.kept_widths(), vec![32, 32, 64, 64]);
        assert_eq!(m.removed(), 192);
    }

    #[test]
    fn normalized_unit_norm() {
        let s = FilterSaliency::from_raw(vec![vec![3.0, 4.0], vec![0.0, 0.0]]);
        assert_eq!(s.normalized[0], vec![0.6, 0.8]);
        assert_eq!(s.normalized[1], vec![0.0, 0.0]);
    }
}
