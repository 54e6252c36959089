//! File formats and datasets: IDX (classification data), binary PGM
//! (denoise images), the model file and the flat JSON run configuration.

pub mod config;
pub mod idx;
pub mod model;
pub mod pgm;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::Targets;
use crate::tensor::{Dims, Scalar, Tensor};

pub use config::RunConfig;
pub use idx::{encode_idx, load_idx, load_idx_dataset, parse_idx, read_idx, write_idx, IdxArray};
pub use model::{load_model, save_model, ModelFile, ParamBlob};
pub use pgm::{encode_pgm, parse_pgm, read_pgm, write_pgm};

/// Writes through a temporary file in the destination directory and renames
/// it into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Per-sample labels of a [`Dataset`].
#[derive(Clone, Debug, PartialEq)]
pub enum Labels<T> {
    Classes(Vec<usize>),
    /// Target images, `dims.batch` of them, stored back to back.
    Images { dims: Dims, data: Vec<T> },
}

impl<T> Labels<T> {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(c) => c.len(),
            Labels::Images { dims, .. } => dims.batch,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Images with one label each; pixel values lie in `[0, 1]`.
///
/// Storage is flat so that an empty dataset is representable.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    /// Extents of one image (batch 1).
    pub sample: Dims,
    pub pixels: Vec<T>,
    pub labels: Labels<T>,
    pub split: String,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(sample: Dims, pixels: Vec<T>, labels: Labels<T>, split: impl Into<String>) -> Result<Self> {
        let sample = sample.with_batch(1);
        let n = labels.len();
        if pixels.len() != sample.len() * n {
            return Err(Error::shape("dataset images", &[pixels.len()], &[sample.len() * n]));
        }
        if let Labels::Images { dims, data } = &labels {
            if data.len() != dims.len() {
                return Err(Error::shape("dataset target images", &[data.len()], &[dims.len()]));
            }
        }
        if let Some(v) = pixels.iter().find(|v| !(v.as_f64() >= 0.0 && v.as_f64() <= 1.0)) {
            return Err(Error::Config(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Dataset {
            sample,
            pixels,
            labels,
            split: split.into(),
        })
    }

    /// From a batch tensor and matching targets.
    pub fn from_tensors(images: &Tensor<T>, targets: &Targets<T>, split: impl Into<String>) -> Result<Self> {
        let labels = match targets {
            Targets::Classes(c) => Labels::Classes(c.clone()),
            Targets::Values(t) => Labels::Images {
                dims: t.dims(),
                data: t.data().to_vec(),
            },
        };
        if labels.len() != images.dims().batch {
            return Err(Error::shape("dataset labels", &[labels.len()], &[images.dims().batch]));
        }
        Dataset::new(images.dims().with_batch(1), images.data().to_vec(), labels, split)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All images as one batch tensor. Errors on an empty dataset.
    pub fn images(&self) -> Result<Tensor<T>> {
        if self.is_empty() {
            return Err(Error::Config(format!("dataset {:?} is empty", self.split)));
        }
        Tensor::from_dims(self.sample.with_batch(self.len()), self.pixels.clone())
    }

    pub fn targets(&self) -> Result<Targets<T>> {
        Ok(match &self.labels {
            Labels::Classes(c) => Targets::Classes(c.clone()),
            Labels::Images { dims, data } => {
                if self.is_empty() {
                    return Err(Error::Config(format!("dataset {:?} is empty", self.split)));
                }
                Targets::Values(Tensor::from_dims(*dims, data.clone())?)
            }
        })
    }

    /// The first `n` samples.
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let labels = match &self.labels {
            Labels::Classes(c) => Labels::Classes(c[..n].to_vec()),
            Labels::Images { dims, data } => Labels::Images {
                dims: dims.with_batch(n),
                data: data[..dims.sample_len() * n].to_vec(),
            },
        };
        Dataset {
            sample: self.sample,
            pixels: self.pixels[..self.sample.len() * n].to_vec(),
            labels,
            split: self.split.clone(),
        }
    }
}
