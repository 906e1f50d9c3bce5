use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{LabeledImageSet, Split};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;
const MNIST_CLASSES: usize = 10;

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
}

/// Dimensions and payload of one IDX `u8` file with the expected magic.
fn parse_header<'a>(bytes: &'a [u8], magic: u32) -> std::result::Result<(Vec<usize>, &'a [u8]), String> {
    let read = be_u32(bytes, 0).ok_or("truncated header")?;
    if read != magic {
        return Err(format!("bad magic 0x{read:08x}, expected 0x{magic:08x}"));
    }
    let rank = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        dims.push(be_u32(bytes, 4 + 4 * i).ok_or("truncated header")? as usize);
    }
    let start = 4 + 4 * rank;
    let need = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("dimensions overflow")?;
    let payload = &bytes[start..];
    if payload.len() < need {
        return Err(format!(
            "truncated: dims {dims:?} need {need} bytes, file holds {}",
            payload.len()
        ));
    }
    Ok((dims, &payload[..need]))
}

/// Parses in-memory IDX image and label files.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> std::result::Result<LabeledImageSet, String> {
    let (idims, pixels) = parse_header(images, IMAGES_MAGIC).map_err(|e| format!("images: {e}"))?;
    let (ldims, raw_labels) = parse_header(labels, LABELS_MAGIC).map_err(|e| format!("labels: {e}"))?;
    if idims[0] != ldims[0] {
        return Err(format!(
            "count mismatch: {} images but {} labels",
            idims[0], ldims[0]
        ));
    }
    if let Some(&bad) = raw_labels.iter().find(|&&l| usize::from(l) >= MNIST_CLASSES) {
        return Err(format!("label {bad} out of range for {MNIST_CLASSES} classes"));
    }
    LabeledImageSet::new(
        pixels.to_vec(),
        raw_labels.iter().map(|&l| usize::from(l)).collect(),
        1,
        idims[1],
        idims[2],
        MNIST_CLASSES,
        Split::Train,
    )
    .map_err(|e| e.to_string())
}

/// Loads an MNIST-family IDX image/label file pair as single-channel images
/// over ten classes.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledImageSet> {
    let images = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    parse_idx(&images, &labels).map_err(|m| Error::format(images_path, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn idx_images(n: u32, h: u32, w: u32) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        for d in [n, h, w] {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend((0..n * h * w).map(|i| (i % 251) as u8));
        b
    }

    pub(crate) fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn four_image_fixture() {
        let s = parse_idx(&idx_images(4, 28, 28), &idx_labels(&[3, 1, 4, 1])).unwrap();
        assert_eq!((s.len(), s.channels, s.height, s.width), (4, 1, 28, 28));
        assert_eq!(s.labels, [3, 1, 4, 1]);
        assert_eq!(s.image(1)[0], (784 % 251) as u8);
    }

    #[test]
    fn wrong_magic_names_value() {
        let mut img = idx_images(1, 2, 2);
        img[3] = 0x01;
        let err = parse_idx(&img, &idx_labels(&[0])).unwrap_err();
        assert!(err.contains("0x00000801"), "{err}");
    }

    #[test]
    fn count_mismatch() {
        let err = parse_idx(&idx_images(4, 2, 2), &idx_labels(&[0, 1, 2])).unwrap_err();
        assert!(err.contains("count mismatch"), "{err}");
    }

    #[test]
    fn truncated_files_error() {
        let img = idx_images(2, 3, 3);
        for cut in [0, 2, 10, img.len() - 1] {
            assert!(parse_idx(&img[..cut], &idx_labels(&[0, 1])).is_err());
        }
        assert!(parse_idx(&img, &idx_labels(&[0, 11])).is_err());
    }
}
