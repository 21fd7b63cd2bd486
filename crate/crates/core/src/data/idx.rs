use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::data::{DatasetBundle, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;

/// File bytes, transparently gunzipped when they start with the gzip magic.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("corrupt gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, "truncated header"))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != expected {
        return Err(Error::format(path, format!("bad magic {magic}, expected {expected}")));
    }
    Ok(())
}

/// `(count, rows, cols, pixels)` of an IDX image file.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read_maybe_gz(path)?;
    check_magic(&bytes, IMAGES_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let body = &bytes[16..];
    let expected = n * rows * cols;
    if body.len() < expected {
        return Err(Error::format(
            path,
            format!("truncated file: {} pixel bytes, expected {expected}", body.len()),
        ));
    }
    Ok((n, rows, cols, body[..expected].to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_maybe_gz(path)?;
    check_magic(&bytes, LABELS_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::format(
            path,
            format!("truncated file: {} labels, expected {n}", body.len()),
        ));
    }
    Ok(body[..n].to_vec())
}

/// Loads an IDX image/label pair (plain or gzip), scaling pixels by 1/255.
pub fn load_idx(images: &Path, labels: &Path, split: Split) -> Result<DatasetBundle> {
    let (n, rows, cols, pixels) = read_idx_images(images)?;
    let raw_labels = read_idx_labels(labels)?;
    if raw_labels.len() != n {
        return Err(Error::format(
            labels,
            format!("{} labels for {n} images in {}", raw_labels.len(), images.display()),
        ));
    }
    let data = pixels.iter().map(|&p| f32::from(p) / 255.0).collect();
    let bundle = DatasetBundle {
        images: Tensor::from_vec((n, 1, rows, cols), data)?,
        labels: raw_labels.into_iter().map(usize::from).collect(),
        split,
        provenance: format!("idx:{}", images.display()),
    };
    Ok(bundle)
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out)?;
    Ok(())
}
