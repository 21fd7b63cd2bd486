use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetBundle, Split};
use crate::error::{Error, Result};
use crate::polar::rot90;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureKind {
    /// Centred bars, label `orientation + 2 * thick`: horizontal/vertical are
    /// exact quarter turns of each other, thin/thick differ in width.
    OrientedBars,
    /// Two classes told apart by mean brightness of a centred disc.
    TwoClassLinear,
    /// Uniform pixels with uniform labels over ten classes.
    RandomNoise,
}

impl FixtureKind {
    pub fn id(self) -> &'static str {
        match self {
            FixtureKind::OrientedBars => "oriented-bars",
            FixtureKind::TwoClassLinear => "two-class-linear",
            FixtureKind::RandomNoise => "random-noise",
        }
    }
}

impl fmt::Display for FixtureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for FixtureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            FixtureKind::OrientedBars,
            FixtureKind::TwoClassLinear,
            FixtureKind::RandomNoise,
        ]
        .into_iter()
        .find(|k| k.id() == s)
        .ok_or_else(|| Error::UnknownFixture(s.to_string()))
    }
}

/// `n` deterministic 28x28 images of the given kind.
pub fn synth_fixture(kind: FixtureKind, n: usize, seed: u64) -> Result<DatasetBundle> {
    synth_fixture_sized(kind, n, 28, seed)
}

pub fn synth_fixture_sized(kind: FixtureKind, n: usize, side: usize, seed: u64) -> Result<DatasetBundle> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = side * side;
    let mut data = Vec::with_capacity(n * plane);
    let mut labels = Vec::with_capacity(n);
    let c = (side as f64 - 1.0) / 2.0;
    for i in 0..n {
        let (img, label) = match kind {
            FixtureKind::OrientedBars => {
                let label = i % 4;
                let (vertical, thick) = (label % 2 == 1, label >= 2);
                let half_len = rng.gen_range(0.25..0.4) * side as f64;
                let half_width = if thick { 2.5 } else { 0.5 };
                let level: f32 = rng.gen_range(0.6..1.0);
                let mut img = vec![0.0f32; plane];
                for r in 0..side {
                    for col in 0..side {
                        let (dy, dx) = ((r as f64 - c).abs(), (col as f64 - c).abs());
                        if dy <= half_width && dx <= half_len {
                            img[r * side + col] = level;
                        }
                    }
                }
                (if vertical { rot90(&img, side, 1) } else { img }, label)
            }
            FixtureKind::TwoClassLinear => {
                let label = i % 2;
                let level = if label == 1 { 0.7 } else { 0.3 };
                let radius = side as f64 / 4.0;
                let img = (0..plane)
                    .map(|p| {
                        let (dy, dx) = ((p / side) as f64 - c, (p % side) as f64 - c);
                        let base: f32 = rng.gen_range(0.0..0.1);
                        if dy * dy + dx * dx <= radius * radius {
                            base + level
                        } else {
                            base
                        }
                    })
                    .collect();
                (img, label)
            }
            FixtureKind::RandomNoise => {
                let img = (0..plane).map(|_| rng.gen_range(0.0f32..1.0)).collect();
                (img, rng.gen_range(0..10))
            }
        };
        data.extend(img);
        labels.push(label);
    }
    Ok(DatasetBundle {
        images: Tensor::from_vec((n, 1, side, side), data)?,
        labels,
        split: Split::Train,
        provenance: format!("fixture:{}:seed={seed}", kind.id()),
    })
}
