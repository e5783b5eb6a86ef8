//! IDX reader for MNIST-style image/label files.
//!
//! Headers are big-endian: a magic number (0x00000803 for 3-D unsigned-byte
//! images, 0x00000801 for 1-D unsigned-byte labels), then one u32 per
//! dimension, then the raw bytes.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::problem::{Dataset, TrainingProblem};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize, field: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(field, "truncated header"))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32(bytes, 0, "images.magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format("images.magic", format!("bad magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}")));
    }
    let count = read_u32(bytes, 4, "images.count")? as usize;
    let rows = read_u32(bytes, 8, "images.rows")? as usize;
    let cols = read_u32(bytes, 12, "images.cols")? as usize;
    let expected = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < expected {
        return Err(Error::format(
            "images.data",
            format!("truncated: expected {expected} pixel bytes, found {}", body.len()),
        ));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body[..expected].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, "labels.magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::format("labels.magic", format!("bad magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}")));
    }
    let count = read_u32(bytes, 4, "labels.count")? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::format(
            "labels.data",
            format!("truncated: expected {count} labels, found {}", body.len()),
        ));
    }
    Ok(body[..count].to_vec())
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Normalizes pixels to [0, 1] and keeps at most `max_per_class` images of
/// each digit, in file order.
fn to_dataset(images: &IdxImages, labels: &[u8], max_per_class: usize) -> Result<Dataset> {
    if images.count != labels.len() {
        return Err(Error::format(
            "labels.count",
            format!("count mismatch: {} images but {} labels", images.count, labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&y| usize::from(y) >= MNIST_CLASSES) {
        return Err(Error::format("labels.data", format!("label {bad} is not a digit")));
    }
    let pixels = images.rows * images.cols;
    let mut kept = [0usize; MNIST_CLASSES];
    let mut features = Vec::new();
    let mut ys = Vec::new();
    for (i, &y) in labels.iter().enumerate() {
        let slot = &mut kept[usize::from(y)];
        if *slot >= max_per_class {
            continue;
        }
        *slot += 1;
        features.extend(images.pixels[i * pixels..(i + 1) * pixels].iter().map(|&b| f64::from(b) / 255.0));
        ys.push(y);
    }
    Dataset::new(features, ys, pixels)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Loads `train-*-ubyte` files from `dir` (and `t10k-*-ubyte` for evaluation
/// when present, else evaluates on the training subset) as a multinomial
/// linear classification problem.
pub fn load_mnist_subset(dir: &Path, max_per_class: usize, l2: f64) -> Result<TrainingProblem> {
    let load = |images: &str, labels: &str| -> Result<Dataset> {
        let imgs = parse_idx_images(&read(&dir.join(images))?)?;
        let lbls = parse_idx_labels(&read(&dir.join(labels))?)?;
        to_dataset(&imgs, &lbls, max_per_class)
    };
    let train = load(TRAIN_IMAGES, TRAIN_LABELS)?;
    let test_present = [TEST_IMAGES, TEST_LABELS].iter().all(|f| dir.join(f).exists());
    let eval = if test_present { load(TEST_IMAGES, TEST_LABELS)? } else { train.clone() };
    let problem = TrainingProblem::LinearMnistSubset {
        train,
        eval,
        classes: MNIST_CLASSES,
        l2,
    };
    problem.validate()?;
    Ok(problem)
}

/// Writes a train image/label pair in IDX format; used to build fixtures.
pub fn write_mnist_pair(dir: &Path, images: &IdxImages, labels: &[u8]) -> Result<(PathBuf, PathBuf)> {
    let img_path = dir.join(TRAIN_IMAGES);
    let lbl_path = dir.join(TRAIN_LABELS);
    fs::write(&img_path, encode_idx_images(images))?;
    fs::write(&lbl_path, encode_idx_labels(labels))?;
    Ok((img_path, lbl_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(count: usize) -> IdxImages {
        IdxImages {
            count,
            rows: 28,
            cols: 28,
            pixels: (0..count * 784).map(|k| (k % 256) as u8).collect(),
        }
    }

    #[test]
    fn parses_what_it_writes() {
        let imgs = images(3);
        assert_eq!(parse_idx_images(&encode_idx_images(&imgs)).unwrap(), imgs);
        assert_eq!(parse_idx_labels(&encode_idx_labels(&[1, 2, 3])).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_idx_images(&images(1));
        bytes[..4].copy_from_slice(&0u32.to_be_bytes());
        let err = parse_idx_images(&bytes).unwrap_err().to_string();
        assert!(err.contains("bad magic") && err.contains("images.magic"), "{err}");
        let err = parse_idx_labels(&encode_idx_images(&images(1))).unwrap_err().to_string();
        assert!(err.contains("bad magic"), "{err}");
    }

    #[test]
    fn truncated() {
        let bytes = encode_idx_images(&images(2));
        let err = parse_idx_images(&bytes[..bytes.len() - 1]).unwrap_err().to_string();
        assert!(err.contains("truncated") && err.contains("images.data"), "{err}");
        assert!(parse_idx_labels(&[0, 0, 8]).is_err());
    }

    #[test]
    fn count_mismatch() {
        let err = to_dataset(&images(100), &[0; 99], 100).unwrap_err().to_string();
        assert!(err.contains("count mismatch") && err.contains("labels.count"), "{err}");
    }

    #[test]
    fn per_class_cap() {
        let labels: Vec<u8> = (0..30).map(|i| (i % 3) as u8).collect();
        let data = to_dataset(&images(30), &labels, 4).unwrap();
        assert_eq!(data.len(), 12);
        assert!(data.sample(0).0.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
