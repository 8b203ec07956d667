//! Reader and writer for the big-endian IDX digit corpus files.

use std::path::Path;

use crate::engine::{Real, Shape4, Tensor4};
use crate::error::{Error, Result};

use super::video::ImageDataset;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::format(offset as u64, format!("file truncated while reading {what}")))
}

/// Parses an images file into (count, rows, cols, pixel bytes).
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(
            0,
            format!("bad image magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}"),
        ));
    }
    let n = be_u32(bytes, 4, "image count")? as usize;
    let rows = be_u32(bytes, 8, "row count")? as usize;
    let cols = be_u32(bytes, 12, "column count")? as usize;
    let need = n * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::format(
            (16 + body.len()) as u64,
            format!("image data truncated: expected {need} pixel bytes, found {}", body.len()),
        ));
    }
    Ok((n, rows, cols, &body[..need]))
}

pub fn parse_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(
            0,
            format!("bad label magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}"),
        ));
    }
    let n = be_u32(bytes, 4, "label count")? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::format(
            (8 + body.len()) as u64,
            format!("label data truncated: expected {n} labels, found {}", body.len()),
        ));
    }
    Ok(&body[..n])
}

/// Builds a dataset from in-memory IDX files; pixels are scaled to `[0, 1]`.
pub fn images_from_idx<T: Real>(images: &[u8], labels: &[u8]) -> Result<ImageDataset<T>> {
    let (n, rows, cols, pixels) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if labels.len() != n {
        return Err(Error::format(
            4,
            format!("image file holds {n} images but label file holds {} labels", labels.len()),
        ));
    }
    let scale = T::lit(1.0 / 255.0);
    let data = pixels.iter().map(|&p| T::lit(p as f64) * scale).collect();
    let tensor = Tensor4::from_vec(Shape4::new(n, 1, rows, cols), data)?;
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1).max(10);
    ImageDataset::new(tensor, labels, classes)
}

/// Reads an images file and its labels file.
pub fn load_idx<T: Real>(images_path: &Path, labels_path: &Path) -> Result<ImageDataset<T>> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    images_from_idx(&images, &labels)
}

/// Encodes (N, 1, H, W) images in `[0, 1]` and their labels as IDX bytes.
pub fn encode_idx<T: Real>(ds: &ImageDataset<T>) -> Result<(Vec<u8>, Vec<u8>)> {
    let s = ds.images.shape();
    if s.c() != 1 {
        return Err(Error::shape(format!(
            "IDX images are single-channel, got {s}"
        )));
    }
    let mut img = Vec::with_capacity(16 + s.numel());
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [s.n(), s.h(), s.w()] {
        img.extend_from_slice(&(d as u32).to_be_bytes());
    }
    img.extend(
        ds.images
            .data()
            .iter()
            .map(|&v| (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    let mut lab = Vec::with_capacity(8 + ds.len());
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    for &l in &ds.labels {
        let byte = u8::try_from(l)
            .map_err(|_| Error::Data(format!("label {l} does not fit in a byte")))?;
        lab.push(byte);
    }
    Ok((img, lab))
}

pub fn save_idx<T: Real>(ds: &ImageDataset<T>, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (img, lab) = encode_idx(ds)?;
    std::fs::write(images_path, img)?;
    std::fs::write(labels_path, lab)?;
    Ok(())
}
