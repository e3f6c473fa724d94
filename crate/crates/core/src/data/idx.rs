use std::io::Read;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder};
use flate2::read::GzDecoder;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

/// Reads a file, transparently inflating gzip content.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn header(bytes: &[u8], path: &Path, words: usize) -> Result<Vec<u32>> {
    if bytes.len() < 4 * words {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: 4 * words,
            found: bytes.len(),
        });
    }
    Ok((0..words).map(|i| BigEndian::read_u32(&bytes[4 * i..])).collect())
}

/// Parses an IDX image file (magic 2051) and label file (magic 2049).
/// Either file may be gzip-compressed. Pixels are scaled by 1/255 and
/// images get shape `[1, rows, cols]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();

    let img = read_maybe_gz(images_path)?;
    let magic = header(&img, images_path, 1)?[0];
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            path: images_path.to_path_buf(),
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let h = header(&img, images_path, 4)?;
    let (n, rows, cols) = (h[1] as usize, h[2] as usize, h[3] as usize);
    let payload = &img[16..];
    if payload.len() < n * rows * cols {
        return Err(Error::Truncated {
            path: images_path.to_path_buf(),
            expected: n * rows * cols,
            found: payload.len(),
        });
    }

    let lab = read_maybe_gz(labels_path)?;
    let magic = header(&lab, labels_path, 1)?[0];
    if magic != LABEL_MAGIC {
        return Err(Error::BadMagic {
            path: labels_path.to_path_buf(),
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let m = header(&lab, labels_path, 2)?[1] as usize;
    let label_bytes = &lab[8..];
    if label_bytes.len() < m {
        return Err(Error::Truncated {
            path: labels_path.to_path_buf(),
            expected: m,
            found: label_bytes.len(),
        });
    }
    if m != n {
        return Err(Error::CountMismatch { images: n, labels: m });
    }

    let pixels: Vec<f64> = payload[..n * rows * cols].iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = label_bytes[..m].iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(0, |&l| l + 1);
    let images = Tensor::new(vec![n, 1, rows, cols], pixels)?;
    Dataset::new(images, labels, classes, "all", &images_path.display().to_string())
}
