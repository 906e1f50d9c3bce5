use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::{LabeledImageSet, Split};

/// One label byte followed by a 3×32×32 channel-major image.
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
const CLASSES: usize = 10;

/// Parses CIFAR-10 binary records.
pub fn parse_cifar10_binary(bytes: &[u8]) -> std::result::Result<LabeledImageSet, String> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(format!(
            "size {} is not a multiple of the {CIFAR_RECORD}-byte record",
            bytes.len()
        ));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut images = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = usize::from(rec[0]);
        if label >= CLASSES {
            return Err(format!("record {i}: label {label} out of range for {CLASSES} classes"));
        }
        labels.push(label);
        images.extend_from_slice(&rec[1..]);
    }
    LabeledImageSet::new(images, labels, 3, 32, 32, CLASSES, Split::Train).map_err(|e| e.to_string())
}

/// Loads and concatenates CIFAR-10 binary batch files. An empty file adds
/// no records and logs a warning.
pub fn load_cifar10_binary(paths: &[PathBuf]) -> Result<LabeledImageSet> {
    let mut out = LabeledImageSet::new(Vec::new(), Vec::new(), 3, 32, 32, CLASSES, Split::Train)?;
    for path in paths {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.is_empty() {
            log::warn!("{}: empty CIFAR-10 file", path.display());
            continue;
        }
        let part = parse_cifar10_binary(&bytes).map_err(|m| Error::format(Path::new(path), m))?;
        out.images.extend(part.images);
        out.labels.extend(part.labels);
    }
    Ok(out)
}
