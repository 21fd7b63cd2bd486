use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polar::sample::bilinear_sample;
use crate::tensor::{Scalar, Tensor};

/// Rotation of a square plane about its geometric centre.
///
/// Content turns clockwise on screen by `degrees` (the `R_{-theta}` inverse
/// map in `(col, row)` coordinates), matching the clockwise angle convention
/// of the polar lattice. Resampling is bilinear with zero fill.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationSpec {
    pub degrees: f64,
}

impl RotationSpec {
    pub fn new(degrees: f64) -> Self {
        RotationSpec { degrees }
    }

    /// Number of clockwise quarter turns if the angle is a multiple of 90.
    pub fn quarter_turns(&self) -> Option<usize> {
        let d = self.degrees.rem_euclid(360.0);
        (d.rem_euclid(90.0) == 0.0).then(|| (d / 90.0) as usize % 4)
    }
}

/// Exact clockwise rotation by `turns` quarter turns:
/// pixel `(r, c)` moves to `(c, side - 1 - r)` per turn.
pub fn rot90<T: Copy>(plane: &[T], side: usize, turns: usize) -> Vec<T> {
    let mut cur = plane.to_vec();
    for _ in 0..turns % 4 {
        let mut next = cur.clone();
        for r in 0..side {
            for c in 0..side {
                next[c * side + (side - 1 - r)] = cur[r * side + c];
            }
        }
        cur = next;
    }
    cur
}

pub fn rotate_image<T: Scalar>(plane: &[T], h: usize, w: usize, spec: RotationSpec) -> Result<Vec<T>> {
    if h != w {
        return Err(Error::NonSquare { height: h, width: w });
    }
    if plane.len() != h * w {
        return Err(Error::shape(h * w, plane.len()));
    }
    if let Some(turns) = spec.quarter_turns() {
        return Ok(rot90(plane, h, turns));
    }
    let theta = spec.degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let center = (h as f64 - 1.0) / 2.0;
    let mut out = vec![T::zero(); h * w];
    for r in 0..h {
        let dy = r as f64 - center;
        for c in 0..w {
            let dx = c as f64 - center;
            let src_c = center + cos * dx + sin * dy;
            let src_r = center - sin * dx + cos * dy;
            out[r * w + c] = bilinear_sample(plane, h, w, src_r, src_c);
        }
    }
    Ok(out)
}

/// Rotates every plane of every batch item.
pub fn rotate_tensor<T: Scalar>(t: &Tensor<T>, spec: RotationSpec) -> Result<Tensor<T>> {
    let s = t.shape();
    let mut data = Vec::with_capacity(t.len());
    for b in 0..s.n {
        for ch in 0..s.c {
            data.extend(rotate_image(t.plane(b, ch), s.h, s.w, spec)?);
        }
    }
    Tensor::from_vec(s, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob_at(side: usize, r: f64, col: f64) -> f64 {
        let c = (side as f64 - 1.0) / 2.0;
        let (r, col) = (r - c - 2.0, col - c + 1.0);
        (-(r * r + 0.5 * col * col) / 18.0).exp()
    }

    fn blob(side: usize) -> Vec<f64> {
        (0..side * side)
            .map(|i| blob_at(side, (i / side) as f64, (i % side) as f64))
            .collect()
    }

    #[test]
    fn zero_rotation_is_identity() {
        let p = blob(9);
        assert_eq!(rotate_image(&p, 9, 9, RotationSpec::new(0.0)).unwrap(), p);
        assert_eq!(rotate_image(&p, 9, 9, RotationSpec::new(360.0)).unwrap(), p);
    }

    #[test]
    fn quarter_turn_is_a_permutation() {
        let p: Vec<f64> = (0..9).map(f64::from).collect();
        let r = rotate_image(&p, 3, 3, RotationSpec::new(90.0)).unwrap();
        // Clockwise: the left column becomes the top row.
        assert_eq!(r, vec![6., 3., 0., 7., 4., 1., 8., 5., 2.]);
        let mut sorted = r.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, p);
        assert_eq!(rot90(&r, 3, 3), p);
        assert_eq!(
            rotate_image(&p, 3, 3, RotationSpec::new(-90.0)).unwrap(),
            rot90(&p, 3, 3)
        );
    }

    #[test]
    fn general_formula_agrees_with_quarter_turn() {
        // Evaluate the bilinear path at 90 degrees (bypassing the exact branch).
        let side = 10;
        let p = blob(side);
        let theta = 90f64.to_radians();
        let (sin, cos) = theta.sin_cos();
        let center = (side as f64 - 1.0) / 2.0;
        let exact = rot90(&p, side, 1);
        for r in 0..side {
            for c in 0..side {
                let (dx, dy) = (c as f64 - center, r as f64 - center);
                let v = bilinear_sample(
                    &p,
                    side,
                    side,
                    center - sin * dx + cos * dy,
                    center + cos * dx + sin * dy,
                );
                assert!((v - exact[r * side + c]).abs() < 1e-12);
            }
        }
    }

    fn interior_mae(a: &[f64], b: &[f64], side: usize) -> f64 {
        let c = (side as f64 - 1.0) / 2.0;
        let (mut err, mut count) = (0.0, 0);
        for r in 0..side {
            for col in 0..side {
                if ((r as f64 - c).powi(2) + (col as f64 - c).powi(2)).sqrt() < 9.0 {
                    err += (a[r * side + col] - b[r * side + col]).abs();
                    count += 1;
                }
            }
        }
        err / count as f64
    }

    #[test]
    fn forty_five_round_trip_stays_within_two_interpolation_passes() {
        let side = 28;
        let p = blob(side);
        let there = rotate_image(&p, side, side, RotationSpec::new(45.0)).unwrap();

        // Noise floor: one bilinear pass against the analytically rotated blob.
        let c = (side as f64 - 1.0) / 2.0;
        let (sin, cos) = 45f64.to_radians().sin_cos();
        let exact: Vec<f64> = (0..side * side)
            .map(|i| {
                let (dx, dy) = ((i % side) as f64 - c, (i / side) as f64 - c);
                blob_at(side, c - sin * dx + cos * dy, c + cos * dx + sin * dy)
            })
            .collect();
        let floor = interior_mae(&there, &exact, side);
        assert!(floor > 0.0);

        let back = rotate_image(&there, side, side, RotationSpec::new(-45.0)).unwrap();
        let mae = interior_mae(&back, &p, side);
        assert!(mae > 0.0 && mae <= 2.0 * floor, "{mae} vs floor {floor}");
    }

    #[test]
    fn non_square_is_rejected() {
        let p = vec![0.0f64; 6];
        assert!(matches!(
            rotate_image(&p, 2, 3, RotationSpec::new(10.0)),
            Err(Error::NonSquare { .. })
        ));
    }
}
