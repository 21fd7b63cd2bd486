//! Datasets: MNIST in IDX format, rotated test sets, synthetic fixtures, and
//! the CSV/JSON result files.

mod fixtures;
mod idx;
mod results;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polar::{rotate_image, RotationSpec};
use crate::tensor::Tensor;

pub use fixtures::{synth_fixture, synth_fixture_sized, FixtureKind};
pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};
pub use results::{
    checkpoint_hashes, git_blob_hash, read_epoch_log, read_sweep_csv, write_epoch_log, write_sidecar, write_sweep_csv,
    EpochRecord, Sidecar, SweepRecord, SweepResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Single-channel images in `[0, 1]` with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub split: Split,
    pub provenance: String,
}

impl DatasetBundle {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        self.images.item(i)
    }

    /// Checks the bundle invariants against `classes` labels.
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.images.shape().n != self.labels.len() {
            return Err(Error::shape(
                format!("{} images", self.labels.len()),
                format!("{} images", self.images.shape().n),
            ));
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        if self.images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig("pixel values must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// The items at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<DatasetBundle> {
        let s = self.images.shape();
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut data = Vec::with_capacity(indices.len() * s.item());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange {
                    index: [i, 0, 0, 0],
                    shape: s.dims(),
                });
            }
            data.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Ok(DatasetBundle {
            images: Tensor::from_vec((indices.len(), s.c, s.h, s.w), data)?,
            labels,
            split: self.split,
            provenance: self.provenance.clone(),
        })
    }

    /// The first `n` items (all of them if `n >= len`).
    pub fn take(&self, n: usize) -> Result<DatasetBundle> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

/// Standard MNIST file names inside `dir`, preferring gzip-compressed copies.
pub fn mnist_paths(dir: &Path, split: Split) -> (PathBuf, PathBuf) {
    let stem = match split {
        Split::Test => "t10k",
        _ => "train",
    };
    let pick = |name: String| {
        let gz = dir.join(format!("{name}.gz"));
        if gz.exists() {
            gz
        } else {
            dir.join(name)
        }
    };
    (
        pick(format!("{stem}-images-idx3-ubyte")),
        pick(format!("{stem}-labels-idx1-ubyte")),
    )
}

/// The MNIST training (`Train`) or test (`Test`) files from `dir`.
pub fn load_mnist(dir: &Path, split: Split) -> Result<DatasetBundle> {
    let (images, labels) = mnist_paths(dir, split);
    load_idx(&images, &labels, split)
}

/// Seeded disjoint split holding out `val` items (at least one); both parts
/// keep the original order.
pub fn split_train_val(bundle: &DatasetBundle, val: usize, seed: u64) -> Result<(DatasetBundle, DatasetBundle)> {
    if val == 0 || val >= bundle.len() {
        return Err(Error::InvalidConfig(format!(
            "validation size {val} must lie in 1..{}",
            bundle.len()
        )));
    }
    let mut order: Vec<usize> = (0..bundle.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (held, kept) = order.split_at_mut(val);
    held.sort_unstable();
    kept.sort_unstable();
    let mut train = bundle.subset(kept)?;
    train.split = Split::Train;
    let mut valid = bundle.subset(held)?;
    valid.split = Split::Val;
    Ok((train, valid))
}

/// `{0, 10, ..., 350}`.
pub fn default_angles() -> Vec<f64> {
    (0..36).map(|i| f64::from(i * 10)).collect()
}

/// Every image rotated by `degrees`; labels copied.
pub fn rotate_bundle(bundle: &DatasetBundle, degrees: f64) -> Result<DatasetBundle> {
    let s = bundle.images.shape();
    let spec = RotationSpec::new(degrees);
    let mut data = Vec::with_capacity(bundle.images.len());
    for b in 0..s.n {
        for ch in 0..s.c {
            data.extend(rotate_image(bundle.images.plane(b, ch), s.h, s.w, spec)?);
        }
    }
    Ok(DatasetBundle {
        images: Tensor::from_vec(s, data)?,
        labels: bundle.labels.clone(),
        split: bundle.split,
        provenance: format!("{} rotated {degrees} deg", bundle.provenance),
    })
}

/// One rotated copy of `test` per angle.
pub fn build_mnist_rot(test: &DatasetBundle, angles: &[f64]) -> Result<Vec<(f64, DatasetBundle)>> {
    check_angles(angles)?;
    angles.iter().map(|&a| Ok((a, rotate_bundle(test, a)?))).collect()
}

pub(crate) fn check_angles(angles: &[f64]) -> Result<()> {
    let mut seen = HashSet::new();
    for &a in angles {
        if !(0.0..360.0).contains(&a) {
            return Err(Error::InvalidConfig(format!("angle {a} outside [0, 360)")));
        }
        if !seen.insert(a.to_bits()) {
            return Err(Error::DuplicateAngle(a));
        }
    }
    Ok(())
}
