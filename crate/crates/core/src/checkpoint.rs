//! Single-file model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "SPJCKPT\0"
//! version    u32
//! manifest   u64 length, JSON bytes, u32 CRC32 of the JSON bytes
//! blocks     for every tensor listed in the manifest, in order:
//!            numel × f64, then u32 CRC32 of those bytes
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{BackboneConfig, CodecConfig, Phase, SplitModel, SplitPoint};
use crate::pruning::{apply_prune, PruneMask};
use crate::tensor::{Rng, RngState};
use crate::training::{PhaseLog, SgdState};

pub const MAGIC: &[u8; 8] = b"SPJCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub phase: Phase,
    pub backbone: BackboneConfig,
    pub split: SplitPoint,
    pub kept_filters: Vec<Vec<usize>>,
    pub codec: Option<CodecConfig>,
    /// `None` for a noiseless channel.
    pub snr_db: Option<f64>,
    pub channel_rng: RngState,
    pub optimizer: SgdState,
    pub rng: Option<RngState>,
    pub metrics: PhaseLog,
    /// Caller-defined data (accuracies, timings).
    pub extra: serde_json::Value,
    pub params: Vec<TensorEntry>,
    pub buffers: Vec<TensorEntry>,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub model: SplitModel,
    pub manifest: Manifest,
}

/// Extra state saved next to the model.
#[derive(Clone, Debug, Default)]
pub struct SaveOptions {
    pub optimizer: SgdState,
    pub rng: Option<RngState>,
    pub metrics: PhaseLog,
    pub extra: serde_json::Value,
}

fn entries(list: &[(String, crate::tensor::Tensor)]) -> Vec<TensorEntry> {
    list.iter()
        .map(|(n, t)| TensorEntry {
            name: n.clone(),
            shape: t.shape().to_vec(),
        })
        .collect()
}

pub fn to_bytes(model: &SplitModel, opts: &SaveOptions) -> Result<Vec<u8>> {
    let params = model.named_params();
    let buffers = model.named_buffers();
    let manifest = Manifest {
        version: VERSION,
        phase: model.phase,
        backbone: model.backbone.clone(),
        split: model.split,
        kept_filters: model.kept_filters.clone(),
        codec: model.codec.as_ref().map(|c| CodecConfig {
            c_enc: c.c_enc,
            max_c_enc: c.c_enc.max(crate::models::DEFAULT_MAX_C_ENC),
        }),
        snr_db: Some(model.channel.snr_db()).filter(|s| s.is_finite()),
        channel_rng: model.channel.rng_state(),
        optimizer: opts.optimizer.clone(),
        rng: opts.rng,
        metrics: opts.metrics.clone(),
        extra: opts.extra.clone(),
        params: entries(&params),
        buffers: entries(&buffers),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&crc32fast::hash(&json).to_le_bytes());
    for (_, t) in params.iter().chain(&buffers) {
        let start = out.len();
        for v in t.data().iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }
    Ok(out)
}

pub fn save(path: &Path, model: &SplitModel, opts: &SaveOptions) -> Result<()> {
    let bytes = to_bytes(model, opts)?;
    // write-then-rename so an interrupted save never leaves a torn file
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {} reading {what}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Rebuilds a model skeleton with the manifest's structure, then fills in
/// every tensor.
pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("version {version}, expected {VERSION}")));
    }
    let len = c.u64("manifest length")? as usize;
    let json = c.take(len, "manifest")?;
    if c.u32("manifest checksum")? != crc32fast::hash(json) {
        return Err(Error::Checkpoint("manifest checksum mismatch".into()));
    }
    let manifest: Manifest = serde_json::from_slice(json)?;
    let model = skeleton(&manifest)?;

    let params = model.named_params();
    let buffers = model.named_buffers();
    if entries(&params) != manifest.params || entries(&buffers) != manifest.buffers {
        return Err(Error::Checkpoint("tensor layout does not match the manifest's configuration".into()));
    }
    for (name, t) in params.iter().chain(&buffers) {
        let raw = c.take(t.numel() * 8, name)?;
        if c.u32("block checksum")? != crc32fast::hash(raw) {
            return Err(Error::Checkpoint(format!("checksum mismatch in block {name}")));
        }
        let vals = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        t.set_data(vals)?;
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(Checkpoint { model, manifest })
}

fn skeleton(m: &Manifest) -> Result<SplitModel> {
    m.backbone.validate()?;
    let mut model = SplitModel::new(&m.backbone, m.split, &mut Rng::new(0))?;
    let widths = model.device_widths();
    if m.kept_filters.len() != widths.len()
        || m.kept_filters.iter().zip(&widths).any(|(k, &w)| k.is_empty() || k.len() > w || k.iter().any(|&i| i >= w))
    {
        return Err(Error::Checkpoint("prune record does not fit the backbone".into()));
    }
    let kept: Vec<usize> = m.kept_filters.iter().map(Vec::len).collect();
    if kept != widths {
        let mask = PruneMask {
            keep: widths
                .iter()
                .zip(&kept)
                .map(|(&w, &k)| (0..w).map(|i| i < k).collect())
                .collect(),
        };
        model = apply_prune(&model, &mask)?;
    }
    model.kept_filters = m.kept_filters.clone();
    if let Some(cc) = &m.codec {
        model.attach_codec(cc, &mut Rng::new(0))?;
    }
    model.channel.set_snr_db(m.snr_db.unwrap_or(f64::INFINITY));
    model.channel.restore_rng(m.channel_rng);
    model.phase = m.phase;
    Ok(model)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Loads and checks that the model has reached at least `phase`.
pub fn load_at_least(path: &Path, phase: Phase) -> Result<Checkpoint> {
    let ck = load(path)?;
    if ck.model.phase < phase {
        return Err(Error::State(format!(
            "{} holds a {:?} model, {phase:?} required",
            path.display(),
            ck.model.phase
        )));
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use crate::tensor::{init, InitScheme};

    fn model() -> SplitModel {
        let cfg = BackboneConfig::vgg16(3).with_width_scale(1.0 / 16.0);
        let mut m = SplitModel::new(&cfg, SplitPoint::new(2).unwrap(), &mut Rng::new(1)).unwrap();
        m.attach_codec(&CodecConfig::new(2), &mut Rng::new(2)).unwrap();
        m
    }

    #[test]
    fn round_trip_bit_exact() {
        let m = model();
        let x = init(&[2, 3, 32, 32], InitScheme::Normal { mean: 0.0, std: 1.0 }, &mut Rng::new(3))
            .unwrap()
            .detach();
        // move the BN statistics away from their defaults
        m.forward(&x, Mode::Train).unwrap();
        let bytes = to_bytes(&m, &SaveOptions::default()).unwrap();
        let back = from_bytes(&bytes).unwrap().model;
        let a = m.end_to_end_with(&x, Mode::Eval, &crate::channel::AwgnChannel::noiseless(), None).unwrap();
        let b = back.end_to_end_with(&x, Mode::Eval, &crate::channel::AwgnChannel::noiseless(), None).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn tampered_byte_fails_checksum() {
        let mut bytes = to_bytes(&model(), &SaveOptions::default()).unwrap();
        let n = bytes.len();
        bytes[n - 20] ^= 0x40;
        assert!(matches!(from_bytes(&bytes), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = to_bytes(&model(), &SaveOptions::default()).unwrap();
        bytes[8] = 99;
        let err = from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn phase_guard() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let mut m = model();
        m.phase = Phase::Pruned;
        save(&p, &m, &SaveOptions::default()).unwrap();
        assert!(matches!(load_at_least(&p, Phase::CodecTrained), Err(Error::State(_))));
        assert!(load_at_least(&p, Phase::Pruned).is_ok());
    }
}
