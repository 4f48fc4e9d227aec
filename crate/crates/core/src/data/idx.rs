//! IDX container format: big-endian `u32` magic, `u32` extents, then raw
//! `u8` payload. Images use magic `0x00000803` (count, rows, cols), labels
//! `0x00000801` (count).

use std::path::Path;

use thiserror::Error;

use super::{byte_to_unit, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdxError {
    #[error("wrong IDX magic: expected {expected:#010x}, found {found:#010x}")]
    WrongMagic { expected: u32, found: u32 },
    #[error("truncated IDX file: header declares {declared} payload bytes, found {found}")]
    Truncated { declared: usize, found: usize },
    #[error("IDX payload has {extra} bytes beyond the declared size")]
    TrailingBytes { extra: usize },
    #[error("IDX count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("cannot box-downscale {from}x{from} images to {to}x{to}")]
    BadTargetSize { from: usize, to: usize },
}

fn read_u32(bytes: &[u8], at: usize) -> std::result::Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Truncated {
            declared: at + 4,
            found: bytes.len(),
        })
}

fn check_payload(payload: &[u8], declared: usize) -> std::result::Result<(), IdxError> {
    match payload.len().cmp(&declared) {
        std::cmp::Ordering::Less => Err(IdxError::Truncated {
            declared,
            found: payload.len(),
        }),
        std::cmp::Ordering::Greater => Err(IdxError::TrailingBytes {
            extra: payload.len() - declared,
        }),
        std::cmp::Ordering::Equal => Ok(()),
    }
}

/// Returns `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> std::result::Result<(usize, usize, usize, &[u8]), IdxError> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(IdxError::WrongMagic {
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let payload = &bytes[16..];
    check_payload(payload, n * rows * cols)?;
    Ok((n, rows, cols, payload))
}

pub fn parse_idx_labels(bytes: &[u8]) -> std::result::Result<&[u8], IdxError> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(IdxError::WrongMagic {
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let n = read_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    check_payload(payload, n)?;
    Ok(payload)
}

pub fn write_idx_images(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Load grayscale IDX images as `[n, 1, s, s]` items in `[-1, 1]`, with
/// optional labels. With `target_size`, images are first reduced by repeated
/// 2x2 box averaging; sums stay integral so the result is exact.
pub fn load_idx_images(images_path: &Path, labels_path: Option<&Path>, target_size: Option<usize>) -> Result<Dataset> {
    let image_bytes = read_file(images_path)?;
    let (n, rows, cols, pixels) = parse_idx_images(&image_bytes)?;
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::Data(format!("{} holds no images", images_path.display())));
    }
    let labels = match labels_path {
        Some(p) => {
            let label_bytes = read_file(p)?;
            let labels = parse_idx_labels(&label_bytes)?;
            if labels.len() != n {
                return Err(IdxError::CountMismatch {
                    images: n,
                    labels: labels.len(),
                }
                .into());
            }
            Some(labels.iter().map(|&l| u32::from(l)).collect())
        }
        None => None,
    };

    let target = target_size.unwrap_or(rows);
    let factor = rows / target.max(1);
    if rows != cols || target == 0 || rows % target != 0 || !factor.is_power_of_two() {
        return Err(IdxError::BadTargetSize { from: rows, to: target }.into());
    }
    let mut data = Vec::with_capacity(n * target * target);
    let cells = (factor * factor) as f64;
    for img in pixels.chunks_exact(rows * cols) {
        for ti in 0..target {
            for tj in 0..target {
                let mut sum = 0u32;
                for i in 0..factor {
                    for j in 0..factor {
                        sum += u32::from(img[(ti * factor + i) * cols + tj * factor + j]);
                    }
                }
                data.push(byte_to_unit(f64::from(sum) / cells));
            }
        }
    }
    let items = Tensor::from_vec(vec![n, 1, target, target], data)?;
    Dataset::new(items, labels)
}
