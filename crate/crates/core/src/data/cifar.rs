//! CIFAR-100 binary format: 3074-byte records of coarse label, fine label,
//! then 1024 red, 1024 green and 1024 blue bytes.

use std::path::Path;

use super::{Dataset, SplitTag, IMAGE_LEN};
use crate::error::{Error, Result};

pub const RECORD_BYTES: usize = 2 + IMAGE_LEN;
const CLASSES: usize = 100;

pub fn parse_cifar100(bytes: &[u8], tag: SplitTag, path: &Path) -> Result<Dataset> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        let offset = (bytes.len() / RECORD_BYTES * RECORD_BYTES) as u64;
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset,
            reason: format!("truncated record ({} bytes is not a multiple of {RECORD_BYTES})", bytes.len()),
        });
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut images = Vec::with_capacity(n * IMAGE_LEN);
    let mut labels = Vec::with_capacity(n);
    let mut coarse = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks(RECORD_BYTES).enumerate() {
        if rec[1] as usize >= CLASSES {
            return Err(Error::Format {
                path: path.to_path_buf(),
                offset: (i * RECORD_BYTES + 1) as u64,
                reason: format!("fine label {} out of range", rec[1]),
            });
        }
        coarse.push(rec[0]);
        labels.push(rec[1] as usize);
        images.extend(rec[2..].iter().map(|&b| b as f64 / 255.0));
    }
    let mut ds = Dataset::new(images, labels, CLASSES, tag)?;
    ds.coarse_labels = coarse;
    Ok(ds)
}

/// Inverse of [`parse_cifar100`] for data that came from it.
pub fn encode_cifar100(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(ds.len() * RECORD_BYTES);
    for i in 0..ds.len() {
        out.push(ds.coarse_labels.get(i).copied().unwrap_or(0));
        out.push(ds.labels[i] as u8);
        out.extend(ds.image(i).iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    out
}

/// Reads `train.bin` and `test.bin` from `dir`; the test split adopts the
/// train split's normalization statistics.
pub fn load_cifar100(dir: &Path) -> Result<(Dataset, Dataset)> {
    let read = |name: &str, tag| -> Result<Dataset> {
        let p = dir.join(name);
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        parse_cifar100(&bytes, tag, &p)
    };
    let train = read("train.bin", SplitTag::Train)?;
    let test = read("test.bin", SplitTag::Test)?.with_stats(train.channel_stats);
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake(n: usize) -> Vec<u8> {
        (0..n * RECORD_BYTES)
            .map(|i| match i % RECORD_BYTES {
                0 => 7,
                1 => (i / RECORD_BYTES * 13 % 100) as u8,
                k => (k * 31 % 256) as u8,
            })
            .collect()
    }

    #[test]
    fn parse_and_reencode() {
        let bytes = fake(3);
        let ds = parse_cifar100(&bytes, SplitTag::Train, Path::new("x")).unwrap();
        assert_eq!(ds.len(), 3);
        assert!(ds.labels.iter().all(|&l| l < 100));
        assert!(ds.images.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(encode_cifar100(&ds), bytes);
    }

    #[test]
    fn truncated_reports_offset() {
        let mut bytes = fake(2);
        bytes.pop();
        match parse_cifar100(&bytes, SplitTag::Test, Path::new("t")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, RECORD_BYTES as u64),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_files_are_io_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_cifar100(dir.path()), Err(Error::Io { .. })));
    }
}
