//! IDX (MNIST-style) image/label files: big-endian magic `0x00000803` for
//! `u8` image tensors and `0x00000801` for `u8` label vectors.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format("truncated IDX header".into()))
}

/// Parses an IDX image tensor; returns `(n_images, pixels_per_image, data)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!("bad IDX image magic {magic:#010x}")));
    }
    let n = read_u32_be(bytes, 4)? as usize;
    let rows = read_u32_be(bytes, 8)? as usize;
    let cols = read_u32_be(bytes, 12)? as usize;
    let body = &bytes[16..];
    let per = rows * cols;
    if body.len() != n * per {
        return Err(Error::Format(format!(
            "IDX image body has {} bytes, header implies {}",
            body.len(),
            n * per
        )));
    }
    Ok((n, per, body.to_vec()))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!("bad IDX label magic {magic:#010x}")));
    }
    let n = read_u32_be(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Format(format!(
            "IDX label body has {} bytes, header implies {n}",
            body.len()
        )));
    }
    Ok(body.to_vec())
}

/// Builds a dataset from IDX bytes, scaling pixels to `[0, 1]`.
pub fn dataset_from_bytes(images: &[u8], labels: &[u8], n_classes: usize) -> Result<Dataset> {
    let (n, per, pixels) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if labels.len() != n {
        return Err(Error::Format(format!("{n} images but {} labels", labels.len())));
    }
    let features = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    Dataset::new(per, n_classes, features, labels.into_iter().map(u32::from).collect())
}

pub fn load(images: &Path, labels: &Path, n_classes: usize) -> Result<Dataset> {
    dataset_from_bytes(&fs::read(images)?, &fs::read(labels)?, n_classes)
}

/// Encodes images/labels as IDX; used for fixtures and round-trips.
pub fn encode(images: &[Vec<u8>], rows: u32, cols: u32, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::new();
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&rows.to_be_bytes());
    img.extend_from_slice(&cols.to_be_bytes());
    for im in images {
        img.extend_from_slice(im);
    }
    let mut lab = Vec::new();
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_encoded_fixture() {
        let (img, lab) = encode(&[vec![0, 255, 51, 102], vec![255, 0, 0, 0]], 2, 2, &[3, 1]);
        let d = dataset_from_bytes(&img, &lab, 10).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.input_dim(), 4);
        assert_eq!(d.row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(d.labels(), &[3, 1]);
    }

    #[test]
    fn rejects_swapped_magic_and_truncation() {
        let (img, lab) = encode(&[vec![1, 2]], 1, 2, &[0]);
        assert!(dataset_from_bytes(&lab, &img, 10).is_err());
        assert!(dataset_from_bytes(&img[..img.len() - 1], &lab, 10).is_err());
        assert!(dataset_from_bytes(&img, &lab[..3], 10).is_err());
    }
}
