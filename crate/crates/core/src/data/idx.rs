//! IDX reader/writer: big-endian `u32` magic and dimensions, then raw
//! unsigned bytes.

use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::InputShape;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &'static str) -> Result<u32> {
    let word = bytes.get(at..at + 4).ok_or(Error::Truncated {
        what,
        needed: at + 4,
        available: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(word.try_into().expect("4-byte slice")))
}

fn check_magic(bytes: &[u8], expected: u32, what: &'static str) -> Result<()> {
    let found = be_u32(bytes, 0, what)?;
    if found != expected {
        return Err(Error::BadMagic {
            what,
            expected,
            found,
        });
    }
    Ok(())
}

fn body<'a>(bytes: &'a [u8], header: usize, len: usize, what: &'static str) -> Result<&'a [u8]> {
    let needed = header + len;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            what,
            needed,
            available: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(Error::Invalid(format!(
            "{what}: {} trailing bytes after declared payload",
            bytes.len() - needed
        )));
    }
    Ok(&bytes[header..])
}

/// Returns `(rows, cols, pixels)` with one byte per pixel.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    const WHAT: &str = "image file";
    check_magic(bytes, IMAGE_MAGIC, WHAT)?;
    let count = be_u32(bytes, 4, WHAT)? as usize;
    let rows = be_u32(bytes, 8, WHAT)? as usize;
    let cols = be_u32(bytes, 12, WHAT)? as usize;
    let pixels = body(bytes, 16, count * rows * cols, WHAT)?;
    Ok((rows, cols, pixels.to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    const WHAT: &str = "label file";
    check_magic(bytes, LABEL_MAGIC, WHAT)?;
    let count = be_u32(bytes, 4, WHAT)? as usize;
    Ok(body(bytes, 8, count, WHAT)?.to_vec())
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for word in [IMAGE_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Loads an image/label file pair; pixels are scaled by 1/255.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledDataset> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::io(p, e));
    let (rows, cols, pixels) = parse_idx_images(&read(images_path.as_ref())?)?;
    let labels = parse_idx_labels(&read(labels_path.as_ref())?)?;
    from_bytes(rows, cols, &pixels, &labels)
}

pub(crate) fn from_bytes(
    rows: usize,
    cols: usize,
    pixels: &[u8],
    labels: &[u8],
) -> Result<LabeledDataset> {
    let count = pixels.len().checked_div(rows * cols).unwrap_or(0);
    if count != labels.len() {
        return Err(Error::Invalid(format!(
            "count mismatch: {count} images but {} labels",
            labels.len()
        )));
    }
    let classes = labels.iter().copied().max().map_or(1, |m| m as usize + 1);
    LabeledDataset::new(
        InputShape::image(1, rows, cols),
        classes,
        pixels.iter().map(|&b| b as f64 / 255.0).collect(),
        labels.iter().map(|&l| l as usize).collect(),
    )
}
