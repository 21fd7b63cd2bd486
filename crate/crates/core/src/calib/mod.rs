//! Non-learnable calibrators: each maps a polar patch to a realigned patch
//! whose orientation dependence is removed.
//!
//! A calibrator looks only at the channel-mean *key* of a patch, decides an
//! [`Alignment`], and the alignment is applied identically to every channel.
//! Every alignment is a fixed linear resampling of the patch (see [`Route`]),
//! which is what the layers differentiate through.

mod discrete;
mod gradient;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polar::{blend, PolarLattice, PolarPatch, SamplingMode};
use crate::tensor::Scalar;

pub use discrete::{lbp_code, lbp_min_rotation, LbpMode, MaxMode};
pub use gradient::{gaussian_polar_weights, sobel_polar_weights, GradientKernelPair, KernelSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum CalibratorKind {
    None,
    Sb,
    Gd,
    St,
    Lbp,
    LbpAdj,
    Max,
    MaxAdj,
}

impl CalibratorKind {
    pub const ALL: [CalibratorKind; 8] = [
        CalibratorKind::None,
        CalibratorKind::Sb,
        CalibratorKind::Gd,
        CalibratorKind::St,
        CalibratorKind::Lbp,
        CalibratorKind::LbpAdj,
        CalibratorKind::Max,
        CalibratorKind::MaxAdj,
    ];

    /// The seven calibrators proper (everything but `none`).
    pub const CALIBRATED: [CalibratorKind; 7] = [
        CalibratorKind::Sb,
        CalibratorKind::Gd,
        CalibratorKind::St,
        CalibratorKind::Lbp,
        CalibratorKind::LbpAdj,
        CalibratorKind::Max,
        CalibratorKind::MaxAdj,
    ];

    pub fn id(self) -> &'static str {
        match self {
            CalibratorKind::None => "none",
            CalibratorKind::Sb => "sb",
            CalibratorKind::Gd => "gd",
            CalibratorKind::St => "st",
            CalibratorKind::Lbp => "lbp",
            CalibratorKind::LbpAdj => "lbp-adj",
            CalibratorKind::Max => "max",
            CalibratorKind::MaxAdj => "max-adj",
        }
    }

    /// `none` reads the Cartesian grid so that it reduces to a plain
    /// convolution; every calibrator samples the polar lattice bilinearly.
    pub fn sampling(self) -> SamplingMode {
        match self {
            CalibratorKind::None => SamplingMode::Grid,
            _ => SamplingMode::Bilinear,
        }
    }
}

impl fmt::Display for CalibratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for CalibratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CalibratorKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::UnknownCalibrator(s.to_string()))
    }
}

impl From<CalibratorKind> for String {
    fn from(k: CalibratorKind) -> String {
        k.id().to_string()
    }
}

impl TryFrom<String> for CalibratorKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// The decision a calibrator takes for one patch.
#[derive(Debug, Clone, PartialEq)]
pub enum Alignment {
    Identity,
    /// Gradient orientation `45 * steps + residual_deg` degrees; ring `j` is
    /// shifted by `j * steps + j * residual_deg / 45` positions. `gx`, `gy`
    /// is the gradient of the patch pre-rotated by `steps`, whose angle is
    /// `residual_deg`.
    Orientation {
        steps: usize,
        residual_deg: f64,
        gx: f64,
        gy: f64,
    },
    /// LBP: `rotations` moves of the leading bit turn `code` into `min_code`;
    /// ring `j` is shifted by `-rotations * j` positions.
    BitRotation {
        code: u8,
        min_code: u8,
        rotations: usize,
    },
    /// MAX: inner-ring sample `index` is moved to sample 1; ring `j` is
    /// shifted by `index * j` positions.
    MaxAlign {
        index: usize,
    },
    /// ST: `calibrated[s] = patch[perm[s]]`, rings sorted independently.
    Sorted {
        perm: Vec<usize>,
    },
}

impl Alignment {
    /// Gradient orientation in degrees, for the gradient calibrators.
    pub fn degrees(&self) -> Option<f64> {
        match *self {
            Alignment::Orientation {
                steps, residual_deg, ..
            } => Some((45.0 * steps as f64 + residual_deg).rem_euclid(360.0)),
            _ => None,
        }
    }

    /// Shift of ring `j` as whole positions plus an interpolation fraction.
    fn ring_offset(&self, j: usize) -> (isize, f64) {
        let ji = j as isize;
        match *self {
            Alignment::Identity | Alignment::Sorted { .. } => (0, 0.0),
            Alignment::Orientation {
                steps, residual_deg, ..
            } => {
                let t = j as f64 * residual_deg / 45.0;
                let whole = t.floor();
                (ji * steps as isize + whole as isize, t - whole)
            }
            Alignment::BitRotation { rotations, .. } => (-ji * rotations as isize, 0.0),
            Alignment::MaxAlign { index } => (ji * index as isize, 0.0),
        }
    }

    /// Writes the resampling of a `K x K` patch into `routes` (length `K^2`).
    pub fn write_routes<T: Scalar>(&self, k: usize, routes: &mut [Route<T>]) {
        routes[0] = Route::copy(0);
        if let Alignment::Sorted { perm } = self {
            for (r, &p) in routes.iter_mut().zip(perm) {
                *r = Route::copy(p);
            }
            return;
        }
        for j in 1..=(k - 1) / 2 {
            let range = PolarLattice::ring_range(j);
            let n = range.len() as isize;
            let (whole, frac) = self.ring_offset(j);
            let frac = T::of(frac);
            for i in 0..n {
                let a = range.start + (i + whole).rem_euclid(n) as usize;
                let b = range.start + (i + whole + 1).rem_euclid(n) as usize;
                routes[range.start + i as usize] = Route { a, b, frac };
            }
        }
    }

    pub fn routes<T: Scalar>(&self, k: usize) -> Vec<Route<T>> {
        let mut routes = vec![Route::copy(0); k * k];
        self.write_routes(k, &mut routes);
        routes
    }

    /// Applies the alignment to every channel of `patch`.
    pub fn apply<T: Scalar>(&self, patch: &PolarPatch<T>) -> PolarPatch<T> {
        let n = patch.samples();
        let routes = self.routes::<T>(patch.k());
        let mut values = Vec::with_capacity(patch.values().len());
        for ch in 0..patch.channels() {
            let v = patch.channel(ch);
            values.extend(routes.iter().map(|r| r.eval(v)));
        }
        debug_assert_eq!(values.len(), n * patch.channels());
        PolarPatch::new(patch.k(), patch.channels(), values).expect("same geometry as the input")
    }
}

/// One calibrated sample: `(1 - frac) * v[a] + frac * v[b]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Route<T> {
    pub a: usize,
    pub b: usize,
    pub frac: T,
}

impl<T: Scalar> Route<T> {
    pub fn copy(a: usize) -> Self {
        Route {
            a,
            b: a,
            frac: T::zero(),
        }
    }

    #[inline(always)]
    pub fn eval(&self, v: &[T]) -> T {
        blend(v[self.a], v[self.b], self.frac)
    }
}

/// A calibrator's decision together with the realigned patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration<T> {
    pub kind: CalibratorKind,
    pub alignment: Alignment,
    pub calibrated: PolarPatch<T>,
}

/// Per-sample mean over channels, the single-channel patch every calibrator
/// decides on.
pub fn multi_channel_key<T: Scalar>(patch: &PolarPatch<T>) -> PolarPatch<T> {
    let mut key = vec![T::zero(); patch.samples()];
    channel_mean(patch.values(), patch.channels(), &mut key);
    PolarPatch::new(patch.k(), 1, key).expect("single channel of the same K")
}

/// `key[s] = sum_ch values[ch * n + s] / channels` with `n = key.len()`.
pub(crate) fn channel_mean<T: Scalar>(values: &[T], channels: usize, key: &mut [T]) {
    let n = key.len();
    key.fill(T::zero());
    for ch in 0..channels {
        for (k, &v) in key.iter_mut().zip(&values[ch * n..(ch + 1) * n]) {
            *k += v;
        }
    }
    let c = T::of(channels as f64);
    key.iter_mut().for_each(|k| *k = *k / c);
}

/// A configured calibrator for one kernel size. Gradient calibrators carry
/// their kernel pair, which can be swapped out (e.g. to test that a corrupted
/// Sobel table breaks equivariance).
#[derive(Debug, Clone)]
pub struct Calibrator<T> {
    kind: CalibratorKind,
    k: usize,
    gradient: Option<gradient::Steering<T>>,
}

impl<T: Scalar> Calibrator<T> {
    pub fn new(kind: CalibratorKind, k: usize) -> Result<Self> {
        PolarLattice::new(k)?;
        let pair = match kind {
            CalibratorKind::Sb => Some(GradientKernelPair::sobel_embedded(k)?),
            CalibratorKind::Gd => Some(gaussian_polar_weights(k)?),
            _ => None,
        };
        Ok(Calibrator {
            kind,
            k,
            gradient: pair.map(|p| gradient::Steering::new(&p)),
        })
    }

    /// A gradient calibrator (`sb` or `gd`) using the given kernels.
    pub fn with_gradient_kernels(kind: CalibratorKind, pair: &GradientKernelPair) -> Result<Self> {
        if !matches!(kind, CalibratorKind::Sb | CalibratorKind::Gd) {
            return Err(Error::InvalidConfig(format!(
                "calibrator `{kind}` does not use gradient kernels"
            )));
        }
        Ok(Calibrator {
            kind,
            k: pair.k,
            gradient: Some(gradient::Steering::new(pair)),
        })
    }

    pub fn kind(&self) -> CalibratorKind {
        self.kind
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Decides the alignment from a single-channel key of `K^2` samples.
    pub fn decide(&self, key: &[T]) -> Alignment {
        self.decide_with(key, key, 1)
    }

    /// Decides from the channel-mean `key`; `samples` (`channels` planes of
    /// `K^2` values) only order ST's ties.
    pub fn decide_with(&self, key: &[T], samples: &[T], channels: usize) -> Alignment {
        debug_assert_eq!(key.len(), self.k * self.k);
        match self.kind {
            CalibratorKind::None => Alignment::Identity,
            CalibratorKind::Sb | CalibratorKind::Gd => self
                .gradient
                .as_ref()
                .expect("gradient calibrators carry kernels")
                .decide(key),
            CalibratorKind::St => discrete::decide_sort(key, self.k, samples, channels),
            CalibratorKind::Lbp => discrete::decide_lbp(key, self.k, LbpMode::Center),
            CalibratorKind::LbpAdj => discrete::decide_lbp(key, self.k, LbpMode::Adjacent),
            CalibratorKind::Max => discrete::decide_max(key, self.k, MaxMode::Value),
            CalibratorKind::MaxAdj => discrete::decide_max(key, self.k, MaxMode::Adjacent),
        }
    }

    pub fn calibrate(&self, patch: &PolarPatch<T>) -> Result<Calibration<T>> {
        if patch.k() != self.k {
            return Err(Error::shape(format!("K={}", self.k), format!("K={}", patch.k())));
        }
        let key = multi_channel_key(patch);
        let alignment = self.decide_with(key.values(), patch.values(), patch.channels());
        let calibrated = alignment.apply(patch);
        Ok(Calibration {
            kind: self.kind,
            alignment,
            calibrated,
        })
    }

    /// Accumulates `d residual_deg / d key * grad_residual` into `key_grad`
    /// for an [`Alignment::Orientation`] decided by this calibrator.
    pub(crate) fn orientation_backward(&self, steps: usize, gx: f64, gy: f64, grad_residual: f64, key_grad: &mut [T]) {
        if let Some(steer) = &self.gradient {
            steer.backward(steps, gx, gy, grad_residual, key_grad);
        }
    }

    pub(crate) fn is_gradient(&self) -> bool {
        self.gradient.is_some()
    }
}

/// Among tied candidate alignments, the one whose aligned key is
/// lexicographically largest; remaining ties go to the first candidate.
/// The aligned keys of a rotated patch are the same vectors, so the choice
/// commutes with rotations of the input.
fn break_tie<T: Scalar>(key: &[T], k: usize, candidates: &[Alignment]) -> Alignment {
    let mut best = 0;
    let mut best_key = aligned(key, k, &candidates[0]);
    for (idx, cand) in candidates.iter().enumerate().skip(1) {
        let v = aligned(key, k, cand);
        if lexicographic(&v, &best_key) == Ordering::Greater {
            best = idx;
            best_key = v;
        }
    }
    candidates[best].clone()
}

fn aligned<T: Scalar>(key: &[T], k: usize, a: &Alignment) -> Vec<T> {
    a.routes::<T>(k).iter().map(|r| r.eval(key)).collect()
}

fn lexicographic<T: Scalar>(a: &[T], b: &[T]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.as_f64().total_cmp(&y.as_f64()))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// SB and GD (`calibrate_gradient`).
pub fn calibrate_gradient<T: Scalar>(patch: &PolarPatch<T>, kernels: &GradientKernelPair) -> Result<Calibration<T>> {
    let kind = match kernels.source {
        KernelSource::Sobel => CalibratorKind::Sb,
        KernelSource::Gaussian => CalibratorKind::Gd,
    };
    Calibrator::with_gradient_kernels(kind, kernels)?.calibrate(patch)
}

/// ST.
pub fn calibrate_sort<T: Scalar>(patch: &PolarPatch<T>) -> Result<Calibration<T>> {
    Calibrator::new(CalibratorKind::St, patch.k())?.calibrate(patch)
}

/// LBP (`Center`) and LBP-adj (`Adjacent`).
pub fn calibrate_lbp<T: Scalar>(patch: &PolarPatch<T>, mode: LbpMode) -> Result<Calibration<T>> {
    let kind = match mode {
        LbpMode::Center => CalibratorKind::Lbp,
        LbpMode::Adjacent => CalibratorKind::LbpAdj,
    };
    Calibrator::new(kind, patch.k())?.calibrate(patch)
}

/// MAX (`Value`) and MAX-adj (`Adjacent`).
pub fn calibrate_max<T: Scalar>(patch: &PolarPatch<T>, mode: MaxMode) -> Result<Calibration<T>> {
    let kind = match mode {
        MaxMode::Value => CalibratorKind::Max,
        MaxMode::Adjacent => CalibratorKind::MaxAdj,
    };
    Calibrator::new(kind, patch.k())?.calibrate(patch)
}
