//! IDX (MNIST) file format: big-endian header, unsigned byte payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::Dataset;
use crate::error::{FedError, Result};
use crate::numerics::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| FedError::Format(format!("{what}: header truncated at byte {at}")))
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let magic = be_u32(bytes, 0, what)?;
    if magic != expected {
        return Err(FedError::Format(format!(
            "{what}: magic {magic:#010x}, expected {expected:#010x}"
        )));
    }
    Ok(())
}

/// Parses an image file already in memory. Returns `(count, rows, cols, pixels)`.
pub fn read_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    check_magic(bytes, IMAGE_MAGIC, "images")?;
    let n = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let need = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| FedError::Format("images: dimensions overflow".into()))?;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(FedError::Format(format!(
            "images: truncated, {} of {need} pixel bytes present",
            payload.len()
        )));
    }
    Ok((n, rows, cols, payload[..need].to_vec()))
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC, "labels")?;
    let n = be_u32(bytes, 4, "labels")? as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(FedError::Format(format!(
            "labels: truncated, {} of {n} label bytes present",
            payload.len()
        )));
    }
    Ok(payload[..n].to_vec())
}

/// Loads an image/label file pair. Pixels are scaled to `[0, 1]`; the class
/// count is `max(label) + 1` but at least 10.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_bytes = fs::read(images_path).map_err(|e| FedError::io(images_path, e))?;
    let lbl_bytes = fs::read(labels_path).map_err(|e| FedError::io(labels_path, e))?;
    idx_dataset(&img_bytes, &lbl_bytes)
}

/// [`load_idx`] on in-memory file contents.
pub fn idx_dataset(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Dataset> {
    let (n, rows, cols, pixels) = read_idx_images(image_bytes)?;
    let labels = read_idx_labels(label_bytes)?;
    if labels.len() != n {
        return Err(FedError::Format(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    let features = Tensor::new(
        vec![n, rows * cols],
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )?;
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let classes = labels.iter().max().map_or(10, |&m| (m + 1).max(10));
    Dataset::new(features, labels, classes, Some((rows, cols)))
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, images: &[Vec<u8>]) -> Result<()> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        if img.len() != rows * cols {
            return Err(FedError::Shape(format!(
                "image of {} bytes, expected {}",
                img.len(),
                rows * cols
            )));
        }
        out.extend_from_slice(img);
    }
    write_all(path, &out)
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    write_all(path, &out)
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| FedError::io(path, e))?;
    f.write_all(bytes).map_err(|e| FedError::io(path, e))
}

/// The bundled 2000-image MNIST subset (200 images per digit).
pub fn mnist_2k() -> Result<Dataset> {
    idx_dataset(
        include_bytes!("../../data/mnist-2k/images.idx3-ubyte"),
        include_bytes!("../../data/mnist-2k/labels.idx1-ubyte"),
    )
}
