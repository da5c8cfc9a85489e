//! SGD with momentum and weight decay, and the four training phases:
//! pretraining, pruning, codec pretraining, end-to-end fine-tuning.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::channel::{power_normalize, AwgnChannel, Channel, POWER};
use crate::complexity::device_flops;
use crate::data::{batches, AugmentConfig, Batch, Dataset};
use crate::error::{Error, Result};
use crate::models::{Phase, SplitModel};
use crate::nn::{cross_entropy, l1_loss, Mode};
use crate::pruning::{prune_iteration, PruneConfig};
use crate::tensor::{no_grad, streams, Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "sgd needs lr > 0, momentum in [0, 1), weight_decay >= 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// One velocity buffer per parameter, in parameter order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SgdState {
    pub velocity: Vec<Vec<f64>>,
}

/// `g' = g + wd·w; v = momentum·v + g'; w = w − lr·v`, reading each
/// parameter's accumulated gradient.
pub fn sgd_step(params: &[(String, Tensor)], state: &mut SgdState, cfg: &SgdConfig) -> Result<()> {
    if state.velocity.is_empty() {
        state.velocity = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
    }
    if state.velocity.len() != params.len() {
        return Err(Error::State(format!(
            "optimizer holds {} buffers for {} parameters",
            state.velocity.len(),
            params.len()
        )));
    }
    for ((name, p), v) in params.iter().zip(&state.velocity) {
        if v.len() != p.numel() {
            return Err(Error::State(format!("velocity size mismatch for {name}")));
        }
        if p.grad().iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric {
                context: format!("gradient of {name}"),
            });
        }
    }
    for ((_, p), v) in params.iter().zip(state.velocity.iter_mut()) {
        let g = p.grad();
        p.update_data(|w| {
            for i in 0..w.len() {
                let gi = g[i] + cfg.weight_decay * w[i];
                v[i] = cfg.momentum * v[i] + gi;
                w[i] -= cfg.lr * v[i];
            }
        });
    }
    Ok(())
}

/// Piecewise-constant learning rate: `base · gamma^(milestones passed)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    /// The rate drops once `epoch >= m` for each milestone `m`.
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule {
            base: lr,
            milestones: Vec::new(),
            gamma: 1.0,
        }
    }
}

pub fn lr_at(s: &LrSchedule, epoch: usize) -> f64 {
    let k = s.milestones.iter().filter(|&&m| epoch >= m).count();
    s.base * s.gamma.powi(k as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase1Config {
    pub epochs: usize,
    pub schedule: LrSchedule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase2Config {
    pub target_ratio: f64,
    pub n_remove: usize,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    pub saliency_batches: usize,
    pub min_filters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase3Config {
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase4Config {
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub phase1: Phase1Config,
    pub phase2: Phase2Config,
    pub phase3: Phase3Config,
    pub phase4: Phase4Config,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Training SNR for phases 3 and 4.
    pub snr_db: f64,
    pub seed: u64,
    pub augment: Option<AugmentConfig>,
    /// Evaluate on the test set after every epoch.
    pub eval_each_epoch: bool,
    pub eval_batch_size: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            phase1: Phase1Config {
                epochs: 60,
                schedule: LrSchedule {
                    base: 0.01,
                    milestones: vec![20, 40],
                    gamma: 0.1,
                },
            },
            phase2: Phase2Config {
                target_ratio: 0.0,
                n_remove: 512,
                finetune_epochs: 10,
                finetune_lr: 1e-4,
                saliency_batches: 10,
                min_filters: 1,
            },
            phase3: Phase3Config { epochs: 40, lr: 0.1 },
            phase4: Phase4Config { epochs: 30, lr: 1e-4 },
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 128,
            snr_db: 20.0,
            seed: 0,
            augment: Some(AugmentConfig::default()),
            eval_each_epoch: true,
            eval_batch_size: 256,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let p2 = &self.phase2;
        let bad = |m: String| Err(Error::Config(m));
        if self.phase1.epochs == 0 || self.phase3.epochs == 0 || self.phase4.epochs == 0 {
            return bad("phase epoch counts must be positive".into());
        }
        if !(self.phase1.schedule.base > 0.0 && self.phase1.schedule.gamma > 0.0) {
            return bad("phase1 schedule must be positive".into());
        }
        if !(0.0..1.0).contains(&p2.target_ratio) {
            return bad(format!("target_ratio {} not in [0, 1)", p2.target_ratio));
        }
        if p2.n_remove == 0 || p2.saliency_batches == 0 || p2.min_filters == 0 || !(p2.finetune_lr > 0.0) {
            return bad("phase2 parameters must be positive".into());
        }
        if !(self.phase3.lr > 0.0 && self.phase4.lr > 0.0) {
            return bad("phase learning rates must be positive".into());
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.snr_db.is_nan() {
            return bad("snr_db is NaN".into());
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        self.sgd(1.0).validate()
    }

    pub fn sgd(&self, lr: f64) -> SgdConfig {
        SgdConfig {
            lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

/// One per-epoch metric line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: String,
    pub epoch: usize,
    pub lr: f64,
    /// Absent for a prune iteration without fine-tuning.
    pub loss: Option<f64>,
    /// Running train accuracy; absent for reconstruction epochs.
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub flops: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseLog {
    pub records: Vec<EpochRecord>,
    /// Every minibatch loss in order.
    pub losses: Vec<f64>,
}

impl PhaseLog {
    pub fn extend(&mut self, other: PhaseLog) {
        self.records.extend(other.records);
        self.losses.extend(other.losses);
    }
}

/// Per-(phase, epoch) seed for one random stream.
pub fn epoch_seed(seed: u64, stream: u64, tag: u64, epoch: usize) -> u64 {
    Rng::derive(seed, stream).fork(tag * 100_000 + epoch as u64).next_u64()
}

pub(crate) mod tags {
    pub const PRETRAIN: u64 = 1;
    pub const FINETUNE: u64 = 2;
    pub const CODEC: u64 = 3;
    pub const E2E: u64 = 4;
}

fn correct(logits: &Tensor, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// One shuffled, augmented pass of cross-entropy training.
#[allow(clippy::too_many_arguments)]
pub(crate) fn train_classifier_epoch(
    model: &SplitModel,
    params: &[(String, Tensor)],
    opt: &mut SgdState,
    sgd: &SgdConfig,
    data: &Dataset,
    cfg: &PipelineConfig,
    tag: u64,
    epoch: usize,
    log: &mut PhaseLog,
) -> Result<(f64, f64)> {
    let order = batches(data.len(), cfg.batch_size, Some(epoch_seed(cfg.seed, streams::SHUFFLE, tag, epoch)))?;
    let mut aug_rng = Rng::new(epoch_seed(cfg.seed, streams::AUGMENT, tag, epoch));
    model.channel.reseed(epoch_seed(cfg.seed, streams::CHANNEL_TRAIN, tag, epoch));
    let (mut loss_sum, mut hits) = (0.0, 0);
    for idx in &order {
        let Batch { images, labels } = data.batch(idx, cfg.augment.as_ref().map(|a| (a, &mut aug_rng)))?;
        let logits = model.forward(&images, Mode::Train)?;
        let loss = cross_entropy(&logits, &labels)?;
        let l = loss.item();
        if !l.is_finite() {
            return Err(Error::Numeric {
                context: format!("loss at epoch {epoch}"),
            });
        }
        params.iter().for_each(|(_, p)| p.zero_grad());
        loss.backward()?;
        sgd_step(params, opt, sgd)?;
        log.losses.push(l);
        loss_sum += l * labels.len() as f64;
        hits += correct(&logits, &labels);
    }
    let n = data.len() as f64;
    Ok((loss_sum / n, hits as f64 / n))
}

fn maybe_eval(model: &SplitModel, test: &Dataset, cfg: &PipelineConfig) -> Result<Option<f64>> {
    if cfg.eval_each_epoch && !test.is_empty() {
        Ok(Some(evaluate(model, test, model.channel.snr_db(), 1, cfg.seed, cfg.eval_batch_size)?))
    } else {
        Ok(None)
    }
}

/// Supervised training of the plain (codec-free) split model.
pub fn phase1_pretrain(model: &mut SplitModel, train: &Dataset, test: &Dataset, cfg: &PipelineConfig) -> Result<PhaseLog> {
    cfg.validate()?;
    if model.codec.is_some() {
        return Err(Error::State("pretraining expects a model without codec".into()));
    }
    let params = model.named_params();
    let mut opt = SgdState::default();
    let mut log = PhaseLog::default();
    let flops = device_flops(model).device_total;
    for epoch in 0..cfg.phase1.epochs {
        let lr = lr_at(&cfg.phase1.schedule, epoch);
        let (loss, acc) =
            train_classifier_epoch(model, &params, &mut opt, &cfg.sgd(lr), train, cfg, tags::PRETRAIN, epoch, &mut log)?;
        let test_accuracy = maybe_eval(model, test, cfg)?;
        log::info!("pretrain epoch {epoch}: loss {loss:.4} train acc {acc:.4} test acc {test_accuracy:?}");
        log.records.push(EpochRecord {
            phase: "pretrain".into(),
            epoch,
            lr,
            loss: Some(loss),
            train_accuracy: Some(acc),
            test_accuracy,
            flops,
        });
    }
    model.phase = Phase::Pretrained;
    Ok(log)
}

/// Prunes device filters until the target ratio is reached.
pub fn phase2_prune(model: &mut SplitModel, train: &Dataset, test: &Dataset, cfg: &PipelineConfig) -> Result<PhaseLog> {
    cfg.validate()?;
    if model.phase < Phase::Pretrained {
        return Err(Error::State("pruning requires a pretrained model".into()));
    }
    if model.codec.is_some() {
        return Err(Error::State("pruning runs before the codec is attached".into()));
    }
    let p2 = &cfg.phase2;
    let original: usize = model.original_device_widths().iter().sum();
    let target = (p2.target_ratio * original as f64).round() as usize;
    let mut log = PhaseLog::default();
    let mut iteration = 0;
    loop {
        let removed = original - model.device_widths().iter().sum::<usize>();
        if removed >= target {
            break;
        }
        let pc = PruneConfig {
            n_remove: p2.n_remove,
            min_filters: p2.min_filters,
            saliency_batches: p2.saliency_batches,
            finetune_epochs: p2.finetune_epochs,
            finetune_lr: p2.finetune_lr,
        };
        let n = pc.iteration_size(model, target - removed)?;
        let before = device_flops(model).device_total;
        let it_log = prune_iteration(model, train, n, &pc, cfg, iteration)?;
        let flops = device_flops(model).device_total;
        debug_assert!(flops < before);
        let test_accuracy = maybe_eval(model, test, cfg)?;
        log::info!(
            "prune iteration {iteration}: removed {n}, ratio {:.3}, flops {flops}, test acc {test_accuracy:?}",
            model.pruning_ratio()
        );
        log.losses.extend(it_log.losses);
        log.records.push(EpochRecord {
            phase: "prune".into(),
            epoch: iteration,
            lr: p2.finetune_lr,
            loss: it_log.records.last().and_then(|r| r.loss),
            train_accuracy: it_log.records.last().and_then(|r| r.train_accuracy),
            test_accuracy,
            flops,
        });
        iteration += 1;
    }
    model.phase = Phase::Pruned;
    Ok(log)
}

/// Trains the codec alone to reconstruct the frozen prefix's features
/// through the channel under an L1 objective.
pub fn phase3_codec_pretrain(
    model: &mut SplitModel,
    train: &Dataset,
    cfg: &PipelineConfig,
    target_ratio: f64,
) -> Result<PhaseLog> {
    cfg.validate()?;
    if model.phase < Phase::Pretrained {
        return Err(Error::State("codec pretraining requires a pretrained model".into()));
    }
    if target_ratio > 0.0 && model.phase < Phase::Pruned {
        return Err(Error::State(format!(
            "pruning ratio {target_ratio} requested but the model has not been pruned"
        )));
    }
    let codec = model
        .codec
        .as_ref()
        .ok_or_else(|| Error::State("codec pretraining needs an attached codec".into()))?;
    let params = codec.named_params();
    let sgd = cfg.sgd(cfg.phase3.lr);
    let mut opt = SgdState::default();
    let mut log = PhaseLog::default();
    let flops = device_flops(model).device_total;
    for epoch in 0..cfg.phase3.epochs {
        let order = batches(
            train.len(),
            cfg.batch_size,
            Some(epoch_seed(cfg.seed, streams::SHUFFLE, tags::CODEC, epoch)),
        )?;
        let mut aug_rng = Rng::new(epoch_seed(cfg.seed, streams::AUGMENT, tags::CODEC, epoch));
        model.channel.reseed(epoch_seed(cfg.seed, streams::CHANNEL_TRAIN, tags::CODEC, epoch));
        let mut loss_sum = 0.0;
        for idx in &order {
            let b = train.batch(idx, cfg.augment.as_ref().map(|a| (a, &mut aug_rng)))?;
            let l = codec_step(model, &b.images, Mode::Train, &model.channel)?;
            let v = l.item();
            if !v.is_finite() {
                return Err(Error::Numeric {
                    context: format!("reconstruction loss at epoch {epoch}"),
                });
            }
            params.iter().for_each(|(_, p)| p.zero_grad());
            l.backward()?;
            sgd_step(&params, &mut opt, &sgd)?;
            log.losses.push(v);
            loss_sum += v * idx.len() as f64;
        }
        let loss = loss_sum / train.len() as f64;
        log::info!("codec epoch {epoch}: L1 {loss:.5}");
        log.records.push(EpochRecord {
            phase: "codec".into(),
            epoch,
            lr: cfg.phase3.lr,
            loss: Some(loss),
            train_accuracy: None,
            test_accuracy: None,
            flops,
        });
    }
    model.phase = Phase::CodecTrained;
    Ok(log)
}

/// L1 between the frozen prefix's features and their reconstruction after
/// encoder, power normalization, `channel` and decoder.
pub fn codec_step(model: &SplitModel, images: &Tensor, mode: Mode, channel: &dyn Channel) -> Result<Tensor> {
    let codec = model
        .codec
        .as_ref()
        .ok_or_else(|| Error::State("no codec attached".into()))?;
    let f = no_grad(|| model.forward_prefix(images, Mode::Eval, None))?.detach();
    let z = codec.encoder.forward(&f)?;
    let n = z.shape()[0];
    let sym = power_normalize(&z.reshape(&[n, codec.bandwidth()])?, POWER)?.symbols;
    let (k, h, w) = codec.latent_shape();
    let rec = codec.decoder.forward(&channel.transmit(&sym)?.reshape(&[n, k, h, w])?, mode)?;
    l1_loss(&rec, &f)
}

/// Mean L1 reconstruction error over a dataset, decoder in eval mode.
pub fn reconstruction_error(model: &SplitModel, data: &Dataset, channel: &dyn Channel, batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    for idx in batches(data.len(), batch_size, None)? {
        let b = data.batch(&idx, None)?;
        total += no_grad(|| codec_step(model, &b.images, Mode::Eval, channel))?.item() * idx.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Joint cross-entropy training of every parameter with channel noise.
pub fn phase4_end_to_end(model: &mut SplitModel, train: &Dataset, test: &Dataset, cfg: &PipelineConfig) -> Result<PhaseLog> {
    cfg.validate()?;
    if model.phase < Phase::CodecTrained || model.codec.is_none() {
        return Err(Error::State("end-to-end training requires a pretrained codec".into()));
    }
    let params = model.named_params();
    let sgd = cfg.sgd(cfg.phase4.lr);
    let mut opt = SgdState::default();
    let mut log = PhaseLog::default();
    let flops = device_flops(model).device_total;
    for epoch in 0..cfg.phase4.epochs {
        let (loss, acc) = train_classifier_epoch(model, &params, &mut opt, &sgd, train, cfg, tags::E2E, epoch, &mut log)?;
        let test_accuracy = maybe_eval(model, test, cfg)?;
        log::info!("end-to-end epoch {epoch}: loss {loss:.4} train acc {acc:.4} test acc {test_accuracy:?}");
        log.records.push(EpochRecord {
            phase: "e2e".into(),
            epoch,
            lr: cfg.phase4.lr,
            loss: Some(loss),
            train_accuracy: Some(acc),
            test_accuracy,
            flops,
        });
    }
    model.phase = Phase::EndToEnd;
    Ok(log)
}

/// Top-1 accuracy in eval mode, averaged over `n_noise_draws` channel
/// realizations at `snr_db`. Draw `d` uses a noise stream derived from
/// `(seed, d)`, so the result is deterministic. A model without codec
/// ignores the channel.
pub fn evaluate(
    model: &SplitModel,
    data: &Dataset,
    snr_db: f64,
    n_noise_draws: usize,
    seed: u64,
    batch_size: usize,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty dataset".into()));
    }
    if n_noise_draws == 0 {
        return Err(Error::Config("n_noise_draws must be at least 1".into()));
    }
    let order = batches(data.len(), batch_size, None)?;
    let mut hits = 0;
    for d in 0..n_noise_draws {
        let ch = AwgnChannel::new(snr_db, Rng::derive(seed, streams::CHANNEL_EVAL).fork(d as u64).next_u64());
        for idx in &order {
            let b = data.batch(idx, None)?;
            let logits = no_grad(|| match model.codec {
                Some(_) => model.end_to_end_with(&b.images, Mode::Eval, &ch, None),
                None => model.forward_plain(&b.images, Mode::Eval),
            })?;
            hits += correct(&logits, &b.labels);
        }
    }
    Ok(hits as f64 / (data.len() * n_noise_draws) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: f64) -> Vec<(String, Tensor)> {
        vec![("w".into(), Tensor::param(&[1], vec![v]).unwrap())]
    }

    fn set_grad(t: &Tensor, g: f64) {
        t.zero_grad();
        t.accumulate_grad(&[g]);
    }

    #[test]
    fn plain_sgd() {
        let ps = p(1.0);
        set_grad(&ps[0].1, 2.0);
        let cfg = SgdConfig { lr: 0.1, momentum: 0.0, weight_decay: 0.0 };
        sgd_step(&ps, &mut SgdState::default(), &cfg).unwrap();
        assert!((ps[0].1.item() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_two_steps() {
        let ps = p(0.0);
        let cfg = SgdConfig { lr: 0.1, momentum: 0.9, weight_decay: 0.0 };
        let mut st = SgdState::default();
        set_grad(&ps[0].1, 1.0);
        sgd_step(&ps, &mut st, &cfg).unwrap();
        assert!((ps[0].1.item() + 0.1).abs() < 1e-15);
        set_grad(&ps[0].1, 1.0);
        sgd_step(&ps, &mut st, &cfg).unwrap();
        assert!((ps[0].1.item() + 0.29).abs() < 1e-15);
    }

    #[test]
    fn decay_only() {
        let ps = p(1.0);
        set_grad(&ps[0].1, 0.0);
        let cfg = SgdConfig { lr: 0.01, momentum: 0.0, weight_decay: 5e-4 };
        sgd_step(&ps, &mut SgdState::default(), &cfg).unwrap();
        assert!((ps[0].1.item() - (1.0 - 5e-6)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let ps = p(1.0);
        set_grad(&ps[0].1, f64::NAN);
        let cfg = SgdConfig { lr: 0.1, momentum: 0.0, weight_decay: 0.0 };
        match sgd_step(&ps, &mut SgdState::default(), &cfg) {
            Err(Error::Numeric { context }) => assert!(context.contains('w')),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn default_schedule() {
        let s = PipelineConfig::default().phase1.schedule;
        assert_eq!(lr_at(&s, 0), 0.01);
        assert!((lr_at(&s, 25) - 0.001).abs() < 1e-15);
        assert!((lr_at(&s, 50) - 0.0001).abs() < 1e-15);
        assert_eq!(lr_at(&s, 19), 0.01);
    }

    #[test]
    fn invalid_sgd() {
        assert!(SgdConfig { lr: 0.0, momentum: 0.0, weight_decay: 0.0 }.validate().is_err());
        assert!(SgdConfig { lr: 0.1, momentum: 1.0, weight_decay: 0.0 }.validate().is_err());
    }
}
