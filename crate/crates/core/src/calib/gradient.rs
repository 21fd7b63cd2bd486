use std::f64::consts::PI;

use crate::calib::Alignment;
use crate::error::{Error, Result};
use crate::polar::PolarLattice;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelSource {
    /// The 3x3 Sobel pair mapped onto the polar samples by nearest cell.
    Sobel,
    /// First derivatives of a Gaussian evaluated at the sample offsets.
    Gaussian,
}

impl KernelSource {
    /// Ring positions (of the inner ring) between orientations the kernels
    /// are exactly steerable to: Sobel only at 90 degrees, the Gaussian pair
    /// at every 45.
    fn steer_step(self) -> usize {
        match self {
            KernelSource::Sobel => 2,
            KernelSource::Gaussian => 1,
        }
    }

    /// Sobel tables are applied as correlation; the Gaussian derivatives are
    /// convolution kernels, i.e. correlation with the mirrored (negated)
    /// table. Either way the gradient points towards brighter values.
    fn orientation_sign(self) -> f64 {
        match self {
            KernelSource::Sobel => 1.0,
            KernelSource::Gaussian => -1.0,
        }
    }
}

/// Weights over the canonical polar samples estimating `d/dx` (along
/// columns) and `d/dy` (along rows).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientKernelPair {
    pub k: usize,
    pub wx: Vec<f64>,
    pub wy: Vec<f64>,
    pub source: KernelSource,
    pub sigma: Option<f64>,
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// The Sobel pair on the `K = 3` lattice: every polar sample takes the
/// weight of its nearest grid cell.
pub fn sobel_polar_weights(k: usize) -> Result<GradientKernelPair> {
    if k != 3 {
        return Err(Error::UnsupportedKernel(k));
    }
    GradientKernelPair::sobel_embedded(3)
}

/// `GD_x = -x exp(-(x^2 + y^2) / 2 sigma^2) / (2 pi sigma^4)` (and `GD_y`
/// likewise) at every sample offset, with `sigma = K / 6`.
pub fn gaussian_polar_weights(k: usize) -> Result<GradientKernelPair> {
    let lattice = PolarLattice::new(k)?;
    let sigma = k as f64 / 6.0;
    let norm = 2.0 * PI * sigma.powi(4);
    let (mut wx, mut wy) = (Vec::new(), Vec::new());
    for &(y, x) in lattice.offsets() {
        let e = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
        wx.push(-x * e / norm);
        wy.push(-y * e / norm);
    }
    Ok(GradientKernelPair {
        k,
        wx,
        wy,
        source: KernelSource::Gaussian,
        sigma: Some(sigma),
    })
}

impl GradientKernelPair {
    /// The 3x3 Sobel pair on the inner ring of a `K x K` lattice, zero on
    /// every outer ring. Sobel is only defined at 3x3, so larger SB kernels
    /// estimate the orientation from their inner ring.
    pub fn sobel_embedded(k: usize) -> Result<Self> {
        let lattice = PolarLattice::new(k)?;
        let (mut wx, mut wy) = (vec![0.0; k * k], vec![0.0; k * k]);
        for s in PolarLattice::ring_range(1) {
            let (r, c) = lattice.grid_cell(s);
            wx[s] = SOBEL_X[(r + 1) as usize][(c + 1) as usize];
            wy[s] = SOBEL_Y[(r + 1) as usize][(c + 1) as usize];
        }
        Ok(GradientKernelPair {
            k,
            wx,
            wy,
            source: KernelSource::Sobel,
            sigma: None,
        })
    }
}

/// Kernel pair prepared for one precision, with the ring-shift index tables
/// used to re-measure the gradient on pre-rotated patches.
#[derive(Debug, Clone)]
pub(crate) struct Steering<T> {
    taps: Vec<(usize, T, T)>,
    shifted: Vec<Vec<usize>>,
    step: usize,
}

impl<T: Scalar> Steering<T> {
    pub(crate) fn new(pair: &GradientKernelPair) -> Self {
        let sign = pair.source.orientation_sign();
        let taps = (0..pair.k * pair.k)
            .filter(|&s| pair.wx[s] != 0.0 || pair.wy[s] != 0.0)
            .map(|s| (s, T::of(sign * pair.wx[s]), T::of(sign * pair.wy[s])))
            .collect();
        let shifted = (0..8)
            .map(|r| {
                (0..pair.k * pair.k)
                    .map(|s| PolarLattice::shifted_index(s, r as isize))
                    .collect()
            })
            .collect();
        Steering {
            taps,
            shifted,
            step: pair.source.steer_step(),
        }
    }

    /// Gradient of the patch whose ring `j` is read `steps * j` positions
    /// ahead, i.e. the patch turned back by `45 * steps` degrees.
    #[inline]
    fn response(&self, key: &[T], steps: usize) -> (T, T) {
        let idx = &self.shifted[steps];
        let (mut gx, mut gy) = (T::zero(), T::zero());
        for &(s, wx, wy) in &self.taps {
            let v = key[idx[s]];
            gx += wx * v;
            gy += wy * v;
        }
        (gx, gy)
    }

    /// The orientation is `phi = atan2(G_y, G_x)`, clockwise from `+column`.
    /// Its coarse part (whole multiples of the steerable step) is decided on
    /// the patch as given; the residual is then re-measured on the patch
    /// turned back by that coarse part. A ring shift of the input by a
    /// multiple of the step reproduces the same residual bit for bit, so the
    /// calibrated patch is exactly invariant.
    pub(crate) fn decide(&self, key: &[T]) -> Alignment {
        let (g0x, g0y) = self.response(key, 0);
        let (x0, y0) = (g0x.as_f64(), g0y.as_f64());
        // Also catches NaN responses.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(x0.hypot(y0) >= T::GRAD_EPS.as_f64()) {
            return Alignment::Identity;
        }
        let phi = y0.atan2(x0).to_degrees().rem_euclid(360.0);
        let unit = 45.0 * self.step as f64;
        let steps = ((phi / unit).floor() as usize % (8 / self.step)) * self.step;
        let (gx, gy) = if steps == 0 {
            (x0, y0)
        } else {
            let (gx, gy) = self.response(key, steps);
            (gx.as_f64(), gy.as_f64())
        };
        Alignment::Orientation {
            steps,
            residual_deg: gy.atan2(gx).to_degrees(),
            gx,
            gy,
        }
    }

    /// Accumulates `d residual_deg / d key * grad_residual` into `key_grad`.
    pub(crate) fn backward(&self, steps: usize, gx: f64, gy: f64, grad_residual: f64, key_grad: &mut [T]) {
        let n2 = gx * gx + gy * gy;
        if n2 == 0.0 {
            return;
        }
        let scale = grad_residual * 180.0 / PI / n2;
        // `taps` already carry the orientation sign.
        let (dgx, dgy) = (T::of(-gy * scale), T::of(gx * scale));
        let idx = &self.shifted[steps];
        for &(s, wx, wy) in &self.taps {
            key_grad[idx[s]] += dgx * wx + dgy * wy;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::{calibrate_gradient, Calibrator, CalibratorKind};
    use crate::polar::PolarPatch;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inner(w: &[f64]) -> Vec<f64> {
        w[PolarLattice::ring_range(1)].to_vec()
    }

    #[test]
    fn sobel_table_by_nearest_cell() {
        let p = sobel_polar_weights(3).unwrap();
        assert_eq!(inner(&p.wx), [2., 1., 0., -1., -2., -1., 0., 1.]);
        assert_eq!(inner(&p.wy), [0., 1., 2., 1., 0., -1., -2., -1.]);
        assert_eq!((p.wx[0], p.wy[0]), (0.0, 0.0));
        assert_eq!(p.wx.iter().sum::<f64>(), 0.0);
        assert_eq!(p.wy.iter().sum::<f64>(), 0.0);
        let wx = inner(&p.wx);
        for i in 0..8 {
            assert_eq!(p.wy[1 + i], wx[(i + 6) % 8]);
        }
    }

    #[test]
    fn sobel_only_at_three() {
        assert!(matches!(sobel_polar_weights(5), Err(Error::UnsupportedKernel(5))));
        let e = GradientKernelPair::sobel_embedded(7).unwrap();
        assert_eq!(inner(&e.wx), inner(&sobel_polar_weights(3).unwrap().wx));
        assert!(e.wx[9..].iter().chain(&e.wy[9..]).all(|&w| w == 0.0));
    }

    #[test]
    fn gaussian_values() {
        let g = gaussian_polar_weights(3).unwrap();
        assert_eq!(g.sigma, Some(0.5));
        let expect = -(1.0 / (2.0 * PI * 0.0625)) * (-2.0f64).exp();
        assert!((g.wx[1] - expect).abs() < 1e-15);
        // The quoted figure -0.34465 is a loose rounding of -0.3446285.
        assert!((g.wx[1] + 0.34465).abs() < 5e-5);
        for k in [3, 5, 7] {
            let g = gaussian_polar_weights(k).unwrap();
            assert_eq!((g.wx[0], g.wy[0]), (0.0, 0.0));
            for j in 1..=(k - 1) / 2 {
                let mags: Vec<f64> = PolarLattice::ring_range(j).map(|s| g.wx[s].hypot(g.wy[s])).collect();
                for m in &mags {
                    assert!((m - mags[0]).abs() < 1e-12, "K={k} ring {j}");
                }
            }
        }
        assert!(gaussian_polar_weights(9).is_err());
    }

    fn cosine_ring(shift: isize) -> PolarPatch<f64> {
        let lattice = PolarLattice::new(3).unwrap();
        let mut ring = [0.0; 8];
        for i in 0..8 {
            // cos of the sample angle is its column offset on the unit ring.
            ring[(i as isize + shift).rem_euclid(8) as usize] = lattice.offsets()[1 + i].1;
        }
        PolarPatch::from_rings(0.0, &[&ring]).unwrap()
    }

    #[test]
    fn cosine_ring_is_already_aligned() {
        let g = gaussian_polar_weights(3).unwrap();
        let cal = calibrate_gradient(&cosine_ring(0), &g).unwrap();
        match cal.alignment {
            Alignment::Orientation {
                steps,
                residual_deg,
                gx,
                gy,
            } => {
                // sin 45 and cos 45 differ by one ulp, so G_y is only zero
                // to rounding.
                assert_eq!(steps, 0);
                assert!(residual_deg.abs() < 1e-12 && gy.abs() < 1e-12);
                assert!(gx > 0.0);
            }
            ref other => panic!("{other:?}"),
        }
        for (a, b) in cal.calibrated.values().iter().zip(cosine_ring(0).values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn quarter_turned_cosine_ring_aligns_back() {
        let g = gaussian_polar_weights(3).unwrap();
        let cal = calibrate_gradient(&cosine_ring(2), &g).unwrap();
        assert!((cal.alignment.degrees().unwrap() - 90.0).abs() < 1e-12);
        for (a, b) in cal.calibrated.values().iter().zip(cosine_ring(0).values()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn flat_patch_is_identity() {
        let p = PolarPatch::new(5, 1, vec![0.7; 25]).unwrap();
        for kind in [CalibratorKind::Sb, CalibratorKind::Gd] {
            let cal = Calibrator::new(kind, 5).unwrap().calibrate(&p).unwrap();
            assert_eq!(cal.alignment, Alignment::Identity);
        }
    }

    #[test]
    fn orientation_tracks_fractional_rotation_of_band_limited_rings() {
        // Rings carrying only the first angular harmonic: rotating them by
        // any delta rotates the Gaussian gradient by exactly delta.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for k in [3, 5, 7] {
            let g = gaussian_polar_weights(k).unwrap();
            for _ in 0..50 {
                let delta: f64 = rng.gen_range(0.0..360.0);
                let values: Vec<f64> = (0..k * k)
                    .map(|s| {
                        let (j, _) = PolarLattice::ring_of(s);
                        let theta = PolarLattice::angle_degrees(s);
                        0.3 + 0.1 * j as f64 + (theta - delta).to_radians().cos() / (1.0 + j as f64)
                    })
                    .collect();
                let p = PolarPatch::new(k, 1, values).unwrap();
                let phi = calibrate_gradient(&p, &g).unwrap().alignment.degrees().unwrap();
                let diff = (phi - delta + 180.0).rem_euclid(360.0) - 180.0;
                assert!(diff.abs() < 1e-5, "K={k}: {phi} vs {delta}");
            }
        }
    }

    #[test]
    fn residual_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for kind in [CalibratorKind::Sb, CalibratorKind::Gd] {
            let cal = Calibrator::<f64>::new(kind, 5).unwrap();
            let key: Vec<f64> = (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = cal.decide(&key);
            let residual = |key: &[f64]| match cal.decide(key) {
                Alignment::Orientation {
                    residual_deg, steps, ..
                } => residual_deg + 45.0 * steps as f64,
                _ => unreachable!(),
            };
            let mut grad = vec![0.0; 25];
            let Alignment::Orientation { steps, gx, gy, .. } = a else {
                unreachable!()
            };
            cal.orientation_backward(steps, gx, gy, 1.0, &mut grad);
            for s in 0..25 {
                let h = 1e-6;
                let (mut up, mut dn) = (key.clone(), key.clone());
                up[s] += h;
                dn[s] -= h;
                let fd = (residual(&up) - residual(&dn)) / (2.0 * h);
                assert!(
                    (fd - grad[s]).abs() < 1e-5 * (1.0 + fd.abs()),
                    "{kind} s={s}: {fd} vs {}",
                    grad[s]
                );
            }
        }
    }
}
