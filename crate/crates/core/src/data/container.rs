use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CONTAINER_MAGIC: &[u8; 4] = b"APDS";
const CONTAINER_VERSION: u32 = 1;

/// Writes `dataset` in the internal binary layout:
/// magic, version, classes, ndim, dims (u64), labels (u32), f64 payload,
/// then length-prefixed split and source strings. All little-endian.
pub fn write_container(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf: Vec<u8> = Vec::with_capacity(dataset.images.len() * 8 + 64);
    let io = |e| Error::io(path, e);
    buf.extend_from_slice(CONTAINER_MAGIC);
    buf.write_u32::<LittleEndian>(CONTAINER_VERSION).map_err(io)?;
    buf.write_u32::<LittleEndian>(dataset.num_classes as u32).map_err(io)?;
    let shape = dataset.images.shape();
    buf.write_u32::<LittleEndian>(shape.len() as u32).map_err(io)?;
    for &d in shape {
        buf.write_u64::<LittleEndian>(d as u64).map_err(io)?;
    }
    for &l in &dataset.labels {
        buf.write_u32::<LittleEndian>(l as u32).map_err(io)?;
    }
    for &v in dataset.images.data() {
        buf.write_f64::<LittleEndian>(v).map_err(io)?;
    }
    for s in [&dataset.split, &dataset.source] {
        buf.write_u32::<LittleEndian>(s.len() as u32).map_err(io)?;
        buf.extend_from_slice(s.as_bytes());
    }
    std::fs::write(path, buf).map_err(io)
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 || &bytes[..4] != CONTAINER_MAGIC {
        return Err(Error::Format(format!("{} is not a dataset container", path.display())));
    }
    let mut cur = &bytes[4..];
    let truncated = |_| Error::Truncated {
        path: path.to_path_buf(),
        expected: 0,
        found: bytes.len(),
    };
    let version = cur.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != CONTAINER_VERSION {
        return Err(Error::Format(format!("container version {version} unsupported")));
    }
    let classes = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let ndim = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(cur.read_u64::<LittleEndian>().map_err(truncated)? as usize);
    }
    let n = shape.first().copied().unwrap_or(0);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(cur.read_u32::<LittleEndian>().map_err(truncated)? as usize);
    }
    let len: usize = shape.iter().product();
    let mut data = vec![0.0; len];
    cur.read_f64_into::<LittleEndian>(&mut data).map_err(truncated)?;
    let mut strings = Vec::with_capacity(2);
    for _ in 0..2 {
        let l = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        if cur.len() < l {
            return Err(truncated(std::io::ErrorKind::UnexpectedEof.into()));
        }
        strings.push(String::from_utf8_lossy(&cur[..l]).into_owned());
        cur = &cur[l..];
    }
    let images = Tensor::new(shape, data)?;
    Dataset::new(images, labels, classes, &strings[0], &strings[1])
}

pub fn file_checksum(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub sha256: String,
}

/// JSON manifest recording where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub format: String,
    pub sources: Vec<ManifestEntry>,
    pub samples: usize,
    pub image_shape: Vec<usize>,
    pub num_classes: usize,
}

impl DataManifest {
    pub fn describe(dataset: &Dataset, sources: &[&Path]) -> Result<Self> {
        let sources = sources
            .iter()
            .map(|p| {
                Ok(ManifestEntry {
                    path: p.to_path_buf(),
                    sha256: file_checksum(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            format: "advpocket-data/v1".into(),
            sources,
            samples: dataset.len(),
            image_shape: dataset.image_shape().to_vec(),
            num_classes: dataset.num_classes,
        })
    }
}
