//! Adam, the step schedule, the training loop, evaluation and rotation
//! sweeps.
//!
//! Gradients of a mini-batch are computed per sample in fixed chunks of
//! [`GRAD_CHUNK`] samples and summed in chunk order, so a run is bit-for-bit
//! reproducible whatever the number of worker threads.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::CalibratorKind;
use crate::data::{check_angles, rotate_bundle, DatasetBundle, EpochRecord, SweepRecord, SweepResult};
use crate::error::{Error, Result};
use crate::nn::{Architecture, Gradients, Network};
use crate::polar::{rotate_image, RotationSpec};
use crate::tensor::{argmax, Precision, Scalar, Tensor};

/// Samples per gradient work unit.
pub const GRAD_CHUNK: usize = 10;
/// Images per evaluation work unit.
const EVAL_CHUNK: usize = 50;

const SHUFFLE_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_interval: usize,
    pub seed: u64,
    pub precision: Precision,
    pub calibrator: CalibratorKind,
    pub arch: Architecture,
    /// Cap on the number of training images (the first ones are used).
    pub train_size: Option<usize>,
    /// Rotate every training image by a fresh uniform angle each epoch.
    pub augment_rotate: bool,
    pub data_dir: PathBuf,
    pub out: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch: 100,
            lr: 1e-4,
            lr_decay: 0.8,
            lr_interval: 10,
            seed: 0,
            precision: Precision::F32,
            calibrator: CalibratorKind::None,
            arch: Architecture::Desk,
            train_size: Some(10_000),
            augment_rotate: false,
            data_dir: PathBuf::from("data/mnist"),
            out: PathBuf::from("runs/train"),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("decay factor must lie in (0, 1], got {}", self.lr_decay));
        }
        if self.lr_interval == 0 {
            return bad("decay interval must be at least 1".into());
        }
        if self.train_size == Some(0) {
            return bad("train size must be at least 1".into());
        }
        Ok(())
    }
}

/// `lr0 * factor^floor(epoch / interval)`.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    config.lr * config.lr_decay.powi((epoch / config.lr_interval.max(1)) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments shaped like `params`.
    pub fn new(params: &[&[T]]) -> Self {
        let zeros: Vec<Vec<T>> = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    let shapes_agree = params.len() == grads.tensors.len()
        && params.len() == state.m.len()
        && params
            .iter()
            .zip(&grads.tensors)
            .zip(&state.m)
            .all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
    if !shapes_agree {
        return Err(Error::shape(
            format!("{} parameter tensors", params.len()),
            format!("{} gradient tensors", grads.tensors.len()),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let (c1, c2) = (T::of(1.0 - state.beta1.powi(t)), T::of(1.0 - state.beta2.powi(t)));
    let (lr, eps) = (T::of(lr), T::of(state.eps));
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(&grads.tensors)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let (mh, vh) = (m[i] / c1, v[i] / c2);
            p[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

fn to_tensor<T: Scalar>(data: &DatasetBundle, indices: &[usize], angles: Option<&[f64]>) -> Result<Tensor<T>> {
    let s = data.images.shape();
    let mut out = Vec::with_capacity(indices.len() * s.item());
    for &i in indices {
        let img = data.image(i);
        match angles {
            Some(a) => {
                for ch in 0..s.c {
                    let plane = &img[ch * s.plane()..(ch + 1) * s.plane()];
                    let rotated = rotate_image(plane, s.h, s.w, RotationSpec::new(a[i]))?;
                    out.extend(rotated.into_iter().map(|v| T::of(f64::from(v))));
                }
            }
            None => out.extend(img.iter().map(|&v| T::of(f64::from(v)))),
        }
    }
    Tensor::from_vec((indices.len(), s.c, s.h, s.w), out)
}

/// Mean loss, correct count and mean gradients over one mini-batch.
fn batch_gradients<T: Scalar>(
    net: &Network<T>,
    images: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, usize, Gradients<T>)> {
    let n = labels.len();
    let prep = net.prepare();
    let chunks: Vec<Vec<usize>> = (0..n)
        .collect::<Vec<_>>()
        .chunks(GRAD_CHUNK)
        .map(<[usize]>::to_vec)
        .collect();
    let parts: Vec<Result<(f64, usize, Gradients<T>)>> = chunks
        .par_iter()
        .map(|idx| net.accumulate(&prep, images, labels, idx))
        .collect();
    let mut total = net.zero_gradients();
    let (mut loss, mut correct) = (0.0, 0);
    for part in parts {
        let (l, c, g) = part?;
        loss += l;
        correct += c;
        total.add_assign(&g);
    }
    net.finish(&mut total);
    total.scale(T::one() / T::of(n as f64));
    Ok((loss / n as f64, correct, total))
}

/// Mini-batch Adam over shuffled data; returns one record per epoch.
///
/// The shuffle and the augmentation angles come from their own streams of
/// the configured seed, so enabling augmentation leaves the batch order
/// untouched.
pub fn train<T: Scalar>(net: &mut Network<T>, data: &DatasetBundle, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    data.validate(net.classes())?;
    let n = config.train_size.map_or(data.len(), |cap| cap.min(data.len()));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut augment_rng = ChaCha8Rng::seed_from_u64(config.seed);
    augment_rng.set_stream(AUGMENT_STREAM);
    let mut adam = AdamState::new(&net.params());
    let mut order: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let lr = lr_at(epoch, config);
        order.shuffle(&mut shuffle_rng);
        // Uniform in (0, 360].
        let angles: Option<Vec<f64>> = config
            .augment_rotate
            .then(|| (0..n).map(|_| 360.0 * (1.0 - augment_rng.gen::<f64>())).collect());
        let (mut loss_sum, mut correct) = (0.0, 0);
        for (b, idx) in order.chunks(config.batch).enumerate() {
            let images = to_tensor::<T>(data, idx, angles.as_deref())?;
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let (loss, c, grads) = batch_gradients(net, &images, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { loss, epoch, batch: b });
            }
            loss_sum += loss * idx.len() as f64;
            correct += c;
            adam_step(&mut net.params_mut(), &grads, &mut adam, lr)?;
        }
        records.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainReport { epochs: records })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Accuracy per class; `None` for classes absent from the data.
    pub per_class: Vec<Option<f64>>,
    pub n_samples: usize,
}

/// Top-1 accuracy over the whole bundle.
pub fn evaluate<T: Scalar>(net: &Network<T>, data: &DatasetBundle) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = net.classes();
    data.validate(classes)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let predictions: Vec<Result<Vec<usize>>> = all
        .par_chunks(EVAL_CHUNK)
        .map(|idx| net.predict(&to_tensor::<T>(data, idx, None)?))
        .collect();
    let mut hits = vec![0usize; classes];
    let mut totals = vec![0usize; classes];
    let mut i = 0;
    for chunk in predictions {
        for p in chunk? {
            let label = data.labels[i];
            totals[label] += 1;
            hits[label] += usize::from(p == label);
            i += 1;
        }
    }
    Ok(Evaluation {
        accuracy: hits.iter().sum::<usize>() as f64 / data.len() as f64,
        per_class: hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
            .collect(),
        n_samples: data.len(),
    })
}

/// Accuracy on the test images rotated by each angle (strictly increasing,
/// within `[0, 360)`).
pub fn rotation_sweep<T: Scalar>(
    net: &Network<T>,
    test: &DatasetBundle,
    angles: &[f64],
    model: &str,
    seed: u64,
) -> Result<SweepResult> {
    if angles.is_empty() {
        return Err(Error::InvalidConfig("the angle list is empty".into()));
    }
    check_angles(angles)?;
    let mut records = Vec::with_capacity(angles.len());
    for &a in angles {
        let eval = if a == 0.0 {
            evaluate(net, test)?
        } else {
            evaluate(net, &rotate_bundle(test, a)?)?
        };
        records.push(SweepRecord {
            angle_deg: a,
            n_samples: eval.n_samples,
            accuracy: eval.accuracy,
        });
    }
    let result = SweepResult {
        records,
        model: model.to_string(),
        seed,
    };
    result.validate()?;
    Ok(result)
}

/// Index of the largest logit for every image of `data`.
pub fn predictions<T: Scalar>(net: &Network<T>, data: &DatasetBundle) -> Result<Vec<usize>> {
    let logits = net.forward(&to_tensor::<T>(data, &(0..data.len()).collect::<Vec<_>>(), None)?)?;
    (0..data.len()).map(|b| argmax(logits.item(b))).collect()
}
