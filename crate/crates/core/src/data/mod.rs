//! Image datasets, augmentation and deterministic batching.
//!
//! Images are stored as `N × 3 × 32 × 32` floats in [0, 1]; normalization is
//! applied when a batch is assembled.

mod augment;
mod cifar;
mod synthetic;

pub use augment::{augment, crop_padded, hflip, AugmentConfig};
pub use cifar::{encode_cifar100, load_cifar100, parse_cifar100, RECORD_BYTES};
pub use synthetic::{load_spwd1, save_spwd1, synthetic_dataset, synthetic_train_test, SyntheticClasses, SPWD1_MAGIC};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

pub const IMAGE_SIZE: usize = 32;
pub const PIXELS: usize = IMAGE_SIZE * IMAGE_SIZE;
pub const IMAGE_LEN: usize = 3 * PIXELS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

/// Per-channel mean and standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ChannelStats {
    pub const IDENTITY: ChannelStats = ChannelStats {
        mean: [0.0; 3],
        std: [1.0; 3],
    };

    /// Population statistics over every pixel of every image.
    pub fn compute(images: &[f64]) -> Self {
        let n = (images.len() / IMAGE_LEN) as f64 * PIXELS as f64;
        let mut mean = [0.0; 3];
        let mut var = [0.0; 3];
        for img in images.chunks(IMAGE_LEN) {
            for c in 0..3 {
                mean[c] += img[c * PIXELS..(c + 1) * PIXELS].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for img in images.chunks(IMAGE_LEN) {
            for c in 0..3 {
                var[c] += img[c * PIXELS..(c + 1) * PIXELS]
                    .iter()
                    .map(|v| (v - mean[c]).powi(2))
                    .sum::<f64>();
            }
        }
        let std = var.map(|v| (v / n).sqrt().max(1e-12));
        ChannelStats { mean, std }
    }

    pub fn apply(&self, img: &mut [f64]) {
        for (i, v) in img.iter_mut().enumerate() {
            let c = (i / PIXELS) % 3;
            *v = (*v - self.mean[c]) / self.std[c];
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// N × 3 × 32 × 32, values in [0, 1].
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
    /// Only filled for CIFAR-100 (kept for byte-exact re-serialization).
    pub coarse_labels: Vec<u8>,
    pub class_count: usize,
    pub split_tag: SplitTag,
    /// Normalization used at batch time; the train split's statistics.
    pub channel_stats: ChannelStats,
}

impl Dataset {
    pub fn new(images: Vec<f64>, labels: Vec<usize>, class_count: usize, split_tag: SplitTag) -> Result<Self> {
        if images.len() != labels.len() * IMAGE_LEN {
            return Err(Error::Input(format!(
                "{} image values for {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Input(format!("label {l} >= class_count {class_count}")));
        }
        let channel_stats = if labels.is_empty() {
            ChannelStats::IDENTITY
        } else {
            ChannelStats::compute(&images)
        };
        Ok(Dataset {
            images,
            labels,
            coarse_labels: Vec::new(),
            class_count,
            split_tag,
            channel_stats,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.images[i * IMAGE_LEN..(i + 1) * IMAGE_LEN]
    }

    /// Adopts another split's statistics (test sets use the train split's).
    pub fn with_stats(mut self, stats: ChannelStats) -> Self {
        self.channel_stats = stats;
        self
    }

    /// First `n` images of every class, in original order.
    pub fn take_per_class(&self, n: usize) -> Dataset {
        let mut counts = vec![0; self.class_count];
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for (i, &l) in self.labels.iter().enumerate() {
            if counts[l] < n {
                counts[l] += 1;
                images.extend_from_slice(self.image(i));
                labels.push(l);
            }
        }
        Dataset {
            images,
            labels,
            coarse_labels: Vec::new(),
            class_count: self.class_count,
            split_tag: self.split_tag,
            channel_stats: self.channel_stats,
        }
    }

    /// Normalized (and optionally augmented) images for the given indices.
    pub fn batch(&self, indices: &[usize], aug: Option<(&AugmentConfig, &mut Rng)>) -> Result<Batch> {
        let mut data = Vec::with_capacity(indices.len() * IMAGE_LEN);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Input(format!("index {i} out of range for {} images", self.len())));
            }
            data.extend_from_slice(self.image(i));
        }
        let normalize = match aug {
            Some((cfg, rng)) => {
                data = augment(&data, cfg, rng)?;
                cfg.normalize
            }
            None => true,
        };
        if normalize {
            data.chunks_mut(IMAGE_LEN).for_each(|img| self.channel_stats.apply(img));
        }
        Ok(Batch {
            images: Tensor::from_vec(&[indices.len(), 3, IMAGE_SIZE, IMAGE_SIZE], data)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

/// Index batches over `0..n`: a seeded permutation (or identity order when
/// `shuffle_seed` is `None`), last partial batch kept.
pub fn batches(n: usize, batch_size: usize, shuffle_seed: Option<u64>) -> Result<Vec<Vec<usize>>> {
    if batch_size < 1 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let order = match shuffle_seed {
        Some(s) => Rng::new(s).permutation(n),
        None => (0..n).collect(),
    };
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_sizes() {
        let b = batches(10, 4, Some(1)).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert_eq!(b, batches(10, 4, Some(1)).unwrap());
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(batches(10, 0, None).is_err());
    }

    #[test]
    fn normalized_stats() {
        let ds = synthetic_dataset(3, 20, &mut Rng::new(4)).unwrap();
        let b = ds.batch(&(0..ds.len()).collect::<Vec<_>>(), None).unwrap();
        let s = ChannelStats::compute(&b.images.to_vec());
        for c in 0..3 {
            assert!(s.mean[c].abs() < 0.02 && (s.std[c] - 1.0).abs() < 0.02, "{s:?}");
        }
    }

    #[test]
    fn rejects_bad_labels() {
        assert!(Dataset::new(vec![0.0; IMAGE_LEN], vec![2], 2, SplitTag::Train).is_err());
    }
}
