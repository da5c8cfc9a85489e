//! Class-conditional Gaussian-blob images.
//!
//! Every class owns a few coloured blobs at fixed centres. A sample shifts
//! the whole pattern by up to ±3 pixels, jitters each blob's brightness,
//! adds one distractor blob of random colour and position, and adds pixel
//! noise. The result is clipped to [0, 1].
//!
//! Cache format (SPWD1): the 5 magic bytes `SPWD1`, `class_count: u32 LE`,
//! `n: u32 LE`, then `n` records of `label: u32 LE` followed by 3072 `f64 LE`.

use std::path::Path;

use super::{Dataset, SplitTag, IMAGE_LEN, IMAGE_SIZE, PIXELS};
use crate::error::{Error, Result};
use crate::tensor::{streams, Rng};

pub const SPWD1_MAGIC: &[u8; 5] = b"SPWD1";

const BLOBS_PER_CLASS: usize = 3;
const MAX_SHIFT: i64 = 3;
const BACKGROUND: f64 = 0.2;
const PIXEL_NOISE: f64 = 0.1;

#[derive(Clone, Copy, Debug)]
struct Blob {
    cy: f64,
    cx: f64,
    radius: f64,
    color: [f64; 3],
}

impl Blob {
    fn random(rng: &mut Rng, lo: f64, hi: f64) -> Self {
        Blob {
            cy: lo + (hi - lo) * rng.uniform(),
            cx: lo + (hi - lo) * rng.uniform(),
            radius: 2.5 + 3.0 * rng.uniform(),
            color: [rng.uniform(), rng.uniform(), rng.uniform()],
        }
    }

    fn paint(&self, img: &mut [f64], dy: f64, dx: f64, gain: f64) {
        let inv = 1.0 / (2.0 * self.radius * self.radius);
        for y in 0..IMAGE_SIZE {
            for x in 0..IMAGE_SIZE {
                let d2 = (y as f64 - self.cy - dy).powi(2) + (x as f64 - self.cx - dx).powi(2);
                let w = gain * (-d2 * inv).exp();
                for c in 0..3 {
                    img[c * PIXELS + y * IMAGE_SIZE + x] += w * self.color[c];
                }
            }
        }
    }
}

/// Per-class blob prototypes.
#[derive(Clone, Debug)]
pub struct SyntheticClasses {
    classes: Vec<Vec<Blob>>,
}

impl SyntheticClasses {
    pub fn new(class_count: usize, rng: &mut Rng) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::Config("synthetic dataset needs at least 2 classes".into()));
        }
        let classes = (0..class_count)
            .map(|_| (0..BLOBS_PER_CLASS).map(|_| Blob::random(rng, 7.0, 25.0)).collect())
            .collect();
        Ok(SyntheticClasses { classes })
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    fn draw(&self, label: usize, rng: &mut Rng) -> Vec<f64> {
        let mut img = vec![BACKGROUND; IMAGE_LEN];
        let dy = (rng.below(2 * MAX_SHIFT as usize + 1) as i64 - MAX_SHIFT) as f64;
        let dx = (rng.below(2 * MAX_SHIFT as usize + 1) as i64 - MAX_SHIFT) as f64;
        for b in &self.classes[label] {
            b.paint(&mut img, dy, dx, 0.6 + 0.5 * rng.uniform());
        }
        Blob::random(rng, 4.0, 28.0).paint(&mut img, 0.0, 0.0, 0.5 * rng.uniform());
        for v in img.iter_mut() {
            *v = (*v + PIXEL_NOISE * rng.normal()).clamp(0.0, 1.0);
        }
        img
    }

    /// `n_per_class` images of each class, interleaved by class.
    pub fn sample(&self, n_per_class: usize, tag: SplitTag, rng: &mut Rng) -> Result<Dataset> {
        let k = self.class_count();
        let mut images = Vec::with_capacity(k * n_per_class * IMAGE_LEN);
        let mut labels = Vec::with_capacity(k * n_per_class);
        for _ in 0..n_per_class {
            for l in 0..k {
                images.extend(self.draw(l, rng));
                labels.push(l);
            }
        }
        Dataset::new(images, labels, k, tag)
    }
}

/// Prototypes and samples both drawn from `rng`.
pub fn synthetic_dataset(class_count: usize, n_per_class: usize, rng: &mut Rng) -> Result<Dataset> {
    SyntheticClasses::new(class_count, rng)?.sample(n_per_class, SplitTag::Train, rng)
}

/// Train and test splits sharing prototypes but drawn from separate streams;
/// the test split carries the train split's normalization statistics.
pub fn synthetic_train_test(
    class_count: usize,
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let classes = SyntheticClasses::new(class_count, &mut Rng::derive(seed, streams::DATA))?;
    let train = classes.sample(train_per_class, SplitTag::Train, &mut Rng::derive(seed, streams::DATA + 100))?;
    let test = classes
        .sample(test_per_class, SplitTag::Test, &mut Rng::derive(seed, streams::DATA + 200))?
        .with_stats(train.channel_stats);
    Ok((train, test))
}

pub fn save_spwd1(path: &Path, ds: &Dataset) -> Result<()> {
    let mut out = Vec::with_capacity(13 + ds.len() * (4 + 8 * IMAGE_LEN));
    out.extend_from_slice(SPWD1_MAGIC);
    out.extend_from_slice(&(ds.class_count as u32).to_le_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    for i in 0..ds.len() {
        out.extend_from_slice(&(ds.labels[i] as u32).to_le_bytes());
        for v in ds.image(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_spwd1(path: &Path, tag: SplitTag) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |offset: usize, reason: &str| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason: reason.into(),
    };
    if bytes.len() < 13 || &bytes[..5] != SPWD1_MAGIC {
        return Err(bad(0, "missing SPWD1 header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let (class_count, n) = (u32_at(5), u32_at(9));
    let rec = 4 + 8 * IMAGE_LEN;
    if bytes.len() != 13 + n * rec {
        let offset = 13 + (bytes.len().saturating_sub(13) / rec) * rec;
        return Err(bad(offset, &format!("expected {n} records")));
    }
    let mut images = Vec::with_capacity(n * IMAGE_LEN);
    let mut labels = Vec::with_capacity(n);
    for r in 0..n {
        let o = 13 + r * rec;
        labels.push(u32_at(o));
        images.extend(
            bytes[o + 4..o + rec]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))),
        );
    }
    Dataset::new(images, labels, class_count, tag)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let a = synthetic_dataset(4, 5, &mut Rng::new(9)).unwrap();
        assert_eq!(a.len(), 20);
        assert_eq!(a.images.len(), 20 * IMAGE_LEN);
        assert_eq!(a, synthetic_dataset(4, 5, &mut Rng::new(9)).unwrap());
        assert!(a.images.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn spwd1_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.spwd");
        let ds = synthetic_dataset(3, 2, &mut Rng::new(1)).unwrap();
        save_spwd1(&p, &ds).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..5], b"SPWD1");
        assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), 6);
        assert_eq!(load_spwd1(&p, SplitTag::Train).unwrap(), ds);
    }

    #[test]
    fn spwd1_truncation_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.spwd");
        save_spwd1(&p, &synthetic_dataset(2, 1, &mut Rng::new(1)).unwrap()).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(load_spwd1(&p, SplitTag::Train), Err(Error::Format { .. })));
    }
}
